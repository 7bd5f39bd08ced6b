#include "clinsum/pipeline.hpp"

namespace clinsum {

EvidenceBuilder::EvidenceBuilder(const VisualFeatureStore* visuals, const TripleStore* store, DkdConfig dkd,
                                 int d_v, int d_kn, uint64_t seed)
    : visuals_(visuals), store_(store), dkd_(dkd), d_v_(d_v), embedder_(*store, d_kn, seed) {
  dkd_.validate();
  if (visuals_->size() > 0 && visuals_->width() != d_v_) {
    throw DataError("visual store width " + std::to_string(visuals_->width()) + " != configured d_v " +
                    std::to_string(d_v_));
  }
}

std::vector<std::string> dialogue_context(const Dialogue& d) {
  std::vector<std::string> context;
  for (const Utterance& u : d.utterances) context.push_back(u.text);
  return context;
}

Tensor EvidenceBuilder::visual_evidence(const Dialogue& d) const {
  std::vector<std::string> ids;
  for (const Utterance& u : d.utterances) ids.insert(ids.end(), u.image_ids.begin(), u.image_ids.end());
  if (ids.empty()) return Tensor(1, d_v_);
  return pool_dialogue_visuals(ids, *visuals_);
}

DistilledContext EvidenceBuilder::distilled(const Dialogue& d) const {
  return distill(dialogue_context(d), *store_, dkd_);
}

Tensor EvidenceBuilder::knowledge_evidence(const Dialogue& d) const {
  return embedder_.encode(linearize_triples(distilled(d)));
}

std::vector<TrainingExample> prepare_examples(const Corpus& corpus, const Vocabulary& vocab,
                                              const std::vector<std::string>& departments,
                                              const EvidenceBuilder& evidence, const ModelConfig& config) {
  std::vector<TrainingExample> out;
  out.reserve(corpus.size());
  for (const Dialogue& d : corpus) {
    EncodedDialogue enc =
        encode_dialogue(d, vocab, departments, config.max_src_len, config.max_tgt_len, config.target_field);
    TrainingExample ex;
    ex.id = enc.id;
    ex.src = std::move(enc.src);
    ex.tgt = std::move(enc.tgt);
    ex.department = enc.department;
    ex.e_v = evidence.visual_evidence(d);
    ex.e_kn = evidence.knowledge_evidence(d);
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace clinsum
