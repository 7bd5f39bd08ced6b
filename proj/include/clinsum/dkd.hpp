#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "clinsum/common.hpp"
#include "clinsum/tensor.hpp"

namespace clinsum {

struct KnowledgeTriple {
  std::string head;
  std::string relation;
  std::string tail;
  double weight = 0.0;

  friend bool operator==(const KnowledgeTriple&, const KnowledgeTriple&) = default;
};

// Head-keyed local triple store, the offline stand-in for a public knowledge
// graph. Lookup is case-insensitive on head; per-head lists are kept in
// canonical order (weight desc, then relation, then tail lexicographic).
class TripleStore {
 public:
  TripleStore() = default;
  explicit TripleStore(std::vector<KnowledgeTriple> triples);

  // Line format: head<TAB>relation<TAB>tail<TAB>weight, '#' starts a comment.
  static TripleStore load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  const std::vector<KnowledgeTriple>& lookup(const std::string& head) const;
  size_t triple_count() const { return count_; }
  // sorted distinct whitespace-split tokens over head/relation/tail fields
  std::vector<std::string> vocabulary() const;

 private:
  void insert(KnowledgeTriple triple);
  std::map<std::string, std::vector<KnowledgeTriple>> entries_;  // key: lowercased head
  size_t count_ = 0;
};

struct DkdConfig {
  int n_k = 7;  // keyword budget per conversation
  int n_r = 5;  // triples per keyword

  void validate() const {
    if (n_k < 1 || n_r < 1) throw ConfigError("dkd: n_k and n_r must be >= 1");
  }
};

struct DistilledContext {
  std::vector<std::string> keywords;
  std::vector<KnowledgeTriple> triples;
};

// Statistical keyword scoring over lowercased non-stopword tokens:
// score(t) = tf(t) * (1 + 1/(1 + first_position(t))), ties lexicographic.
std::vector<std::string> extract_keywords(const std::vector<std::string>& context, int n_k);

// Up to n_r triples per keyword, store canonical order, duplicates skipped.
DistilledContext retrieve_concepts(const std::vector<std::string>& keywords, const TripleStore& store, int n_r);

DistilledContext distill(const std::vector<std::string>& context, const TripleStore& store,
                         const DkdConfig& config);

// "head relation tail" tokens per triple, in order; fields are
// whitespace-split so multiword tails keep every token.
std::vector<std::string> linearize_triples(const DistilledContext& ctx);

bool is_stopword(const std::string& token);

// Fixed random token embeddings derived from the store vocabulary; rows are
// seeded per token, so the table is independent of insertion order.
class KnowledgeEmbedder {
 public:
  KnowledgeEmbedder(const TripleStore& store, int width, uint64_t seed);

  int width() const { return width_; }
  // 1 x width mean of token rows; zero vector for an empty token list
  Tensor encode(const std::vector<std::string>& tokens) const;

 private:
  const Tensor& row_for(const std::string& token) const;
  std::unordered_map<std::string, Tensor> rows_;
  Tensor unk_row_;
  int width_ = 0;
};

inline Tensor encode_knowledge(const std::vector<std::string>& tokens, const KnowledgeEmbedder& embedder) {
  return embedder.encode(tokens);
}

}  // namespace clinsum
