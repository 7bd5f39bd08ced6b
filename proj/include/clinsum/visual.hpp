#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "clinsum/common.hpp"
#include "clinsum/tensor.hpp"

namespace clinsum {

// Precomputed per-image feature vectors; replaces any in-process CNN.
// Immutable after load, width fixed by the first record.
class VisualFeatureStore {
 public:
  VisualFeatureStore() = default;
  explicit VisualFeatureStore(int width) : width_(width) {}

  // Line format: image_id<TAB>v1,v2,...,vd
  static VisualFeatureStore load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  void add(const std::string& id, std::vector<double> feature);
  bool contains(const std::string& id) const { return features_.count(id) > 0; }
  const std::vector<double>& feature(const std::string& id) const;
  int width() const { return width_; }
  size_t size() const { return features_.size(); }

 private:
  std::map<std::string, std::vector<double>> features_;
  int width_ = 0;
};

// Mean of the feature vectors of all ids; empty id list yields the zero
// vector; an unknown id is an error naming the id.
Tensor pool_dialogue_visuals(const std::vector<std::string>& image_ids, const VisualFeatureStore& store);

}  // namespace clinsum
