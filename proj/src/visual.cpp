#include "clinsum/visual.hpp"

#include <fstream>
#include <sstream>

namespace clinsum {

VisualFeatureStore VisualFeatureStore::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open visual feature file: " + path.string());
  VisualFeatureStore store;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected image_id<TAB>values");
    }
    std::string id = line.substr(0, tab);
    std::vector<double> values;
    std::istringstream vs(line.substr(tab + 1));
    std::string field;
    while (std::getline(vs, field, ',')) {
      try {
        values.push_back(std::stod(field));
      } catch (const std::exception&) {
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": bad value '" + field + "'");
      }
    }
    if (values.empty()) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": record '" + id + "' has no values");
    }
    try {
      store.add(id, std::move(values));
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return store;
}

void VisualFeatureStore::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write visual feature file: " + path.string());
  out.precision(17);
  for (const auto& [id, feature] : features_) {
    out << id << '\t';
    for (size_t i = 0; i < feature.size(); ++i) {
      if (i) out << ',';
      out << feature[i];
    }
    out << "\n";
  }
}

void VisualFeatureStore::add(const std::string& id, std::vector<double> feature) {
  if (width_ == 0) {
    width_ = static_cast<int>(feature.size());
  } else if (static_cast<int>(feature.size()) != width_) {
    throw DataError("feature width mismatch for image '" + id + "': got " + std::to_string(feature.size()) +
                    ", store width is " + std::to_string(width_));
  }
  if (!features_.emplace(id, std::move(feature)).second) {
    throw DataError("duplicate image id '" + id + "'");
  }
}

const std::vector<double>& VisualFeatureStore::feature(const std::string& id) const {
  auto it = features_.find(id);
  if (it == features_.end()) throw DataError("unknown image id '" + id + "'");
  return it->second;
}

Tensor pool_dialogue_visuals(const std::vector<std::string>& image_ids, const VisualFeatureStore& store) {
  Tensor out(1, store.width());
  if (image_ids.empty()) return out;
  for (const std::string& id : image_ids) {
    const std::vector<double>& f = store.feature(id);
    for (int j = 0; j < store.width(); ++j) out.at(0, j) += f[static_cast<size_t>(j)];
  }
  for (int j = 0; j < store.width(); ++j) out.at(0, j) /= static_cast<double>(image_ids.size());
  return out;
}

}  // namespace clinsum
