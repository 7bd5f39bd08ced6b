#pragma once

#include "clinsum/corpus.hpp"
#include "clinsum/dkd.hpp"
#include "clinsum/model.hpp"
#include "clinsum/visual.hpp"

namespace clinsum {

// Per-dialogue evidence assembly: pooled image features (zero vector when a
// dialogue has no images) and the pooled embedding of the distilled
// knowledge tokens.
class EvidenceBuilder {
 public:
  EvidenceBuilder(const VisualFeatureStore* visuals, const TripleStore* store, DkdConfig dkd, int d_v, int d_kn,
                  uint64_t seed);

  Tensor visual_evidence(const Dialogue& d) const;
  Tensor knowledge_evidence(const Dialogue& d) const;
  DistilledContext distilled(const Dialogue& d) const;
  const DkdConfig& dkd() const { return dkd_; }

 private:
  const VisualFeatureStore* visuals_;
  const TripleStore* store_;
  DkdConfig dkd_;
  int d_v_;
  KnowledgeEmbedder embedder_;
};

std::vector<std::string> dialogue_context(const Dialogue& d);

std::vector<TrainingExample> prepare_examples(const Corpus& corpus, const Vocabulary& vocab,
                                              const std::vector<std::string>& departments,
                                              const EvidenceBuilder& evidence, const ModelConfig& config);

}  // namespace clinsum
