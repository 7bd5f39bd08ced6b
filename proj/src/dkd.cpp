#include "clinsum/dkd.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "clinsum/corpus.hpp"

namespace clinsum {

namespace {

// 100 common English function words; single source of truth for keyword
// filtering.
const std::set<std::string>& stopwords() {
  static const std::set<std::string> kStopwords{
      "a",     "about",   "above", "after", "again",  "all",   "am",    "an",    "and",   "any",
      "are",   "as",      "at",    "be",    "because", "been",  "before", "being", "below", "between",
      "both",  "but",     "by",    "could", "did",    "do",    "does",  "doing", "down",  "during",
      "each",  "few",     "for",   "from",  "further", "had",   "has",   "have",  "having", "he",
      "her",   "here",    "him",   "his",   "how",    "i",     "if",    "in",    "into",  "is",
      "it",    "its",     "just",  "me",    "more",   "most",  "my",    "no",    "not",   "of",
      "off",   "on",      "only",  "or",    "other",  "our",   "out",   "over",  "same",  "she",
      "so",    "some",    "such",  "than",  "that",   "the",   "their", "them",  "then",  "there",
      "these", "they",    "this",  "those", "through", "to",    "too",   "under", "until", "up",
      "very",  "was",     "we",    "were",  "what",   "when",  "will",  "with",  "you",   "your"};
  return kStopwords;
}

std::string lowercased(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

bool has_alnum(const std::string& s) {
  return std::any_of(s.begin(), s.end(), [](unsigned char c) { return std::isalnum(c) != 0; });
}

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

bool canonical_less(const KnowledgeTriple& a, const KnowledgeTriple& b) {
  if (a.weight != b.weight) return a.weight > b.weight;
  if (a.relation != b.relation) return a.relation < b.relation;
  return a.tail < b.tail;
}

}  // namespace

bool is_stopword(const std::string& token) { return stopwords().count(token) > 0; }

void TripleStore::insert(KnowledgeTriple triple) {
  if (triple.head.empty() || triple.tail.empty()) throw DataError("triple with empty head or tail");
  if (triple.weight < 0.0) throw DataError("triple weight must be nonnegative: " + triple.head);
  entries_[lowercased(triple.head)].push_back(std::move(triple));
  ++count_;
}

TripleStore::TripleStore(std::vector<KnowledgeTriple> triples) {
  for (auto& t : triples) insert(std::move(t));
  for (auto& [head, list] : entries_) std::stable_sort(list.begin(), list.end(), canonical_less);
}

TripleStore TripleStore::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open triple store: " + path.string());
  std::vector<KnowledgeTriple> triples;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    size_t start = 0;
    while (true) {
      size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 4) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected 4 tab-separated fields, got " +
                      std::to_string(fields.size()));
    }
    KnowledgeTriple t;
    t.head = fields[0];
    t.relation = fields[1];
    t.tail = fields[2];
    try {
      t.weight = std::stod(fields[3]);
    } catch (const std::exception&) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": bad weight '" + fields[3] + "'");
    }
    if (t.head.empty() || t.tail.empty() || t.weight < 0.0) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": invalid triple");
    }
    triples.push_back(std::move(t));
  }
  return TripleStore(std::move(triples));
}

void TripleStore::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write triple store: " + path.string());
  out << "# head\trelation\ttail\tweight\n";
  for (const auto& [head, list] : entries_) {
    for (const KnowledgeTriple& t : list) {
      out << t.head << '\t' << t.relation << '\t' << t.tail << '\t' << t.weight << "\n";
    }
  }
}

const std::vector<KnowledgeTriple>& TripleStore::lookup(const std::string& head) const {
  static const std::vector<KnowledgeTriple> kEmpty;
  auto it = entries_.find(lowercased(head));
  return it == entries_.end() ? kEmpty : it->second;
}

std::vector<std::string> TripleStore::vocabulary() const {
  std::set<std::string> tokens;
  for (const auto& [head, list] : entries_) {
    for (const KnowledgeTriple& t : list) {
      for (const auto& field : {t.head, t.relation, t.tail}) {
        for (auto& tok : split_ws(field)) tokens.insert(std::move(tok));
      }
    }
  }
  return {tokens.begin(), tokens.end()};
}

std::vector<std::string> extract_keywords(const std::vector<std::string>& context, int n_k) {
  if (n_k < 1) throw ConfigError("extract_keywords: n_k must be >= 1");
  struct Stat {
    long tf = 0;
    long first = 0;
  };
  std::map<std::string, Stat> stats;
  long pos = 0;
  for (const std::string& text : context) {
    for (const std::string& tok : tokenize(text)) {
      if (has_alnum(tok) && !is_stopword(tok)) {
        auto [it, fresh] = stats.try_emplace(tok);
        if (fresh) it->second.first = pos;
        ++it->second.tf;
      }
      ++pos;
    }
  }
  std::vector<std::pair<std::string, double>> scored;
  scored.reserve(stats.size());
  for (const auto& [tok, st] : stats) {
    scored.emplace_back(tok, static_cast<double>(st.tf) * (1.0 + 1.0 / (1.0 + static_cast<double>(st.first))));
  }
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> out;
  for (const auto& [tok, score] : scored) {
    if (static_cast<int>(out.size()) >= n_k) break;
    out.push_back(tok);
  }
  return out;
}

DistilledContext retrieve_concepts(const std::vector<std::string>& keywords, const TripleStore& store, int n_r) {
  if (n_r < 1) throw ConfigError("retrieve_concepts: n_r must be >= 1");
  DistilledContext ctx;
  ctx.keywords = keywords;
  std::set<std::array<std::string, 3>> seen;
  for (const std::string& keyword : keywords) {
    int taken = 0;
    for (const KnowledgeTriple& t : store.lookup(keyword)) {
      if (taken >= n_r) break;
      if (!seen.insert({t.head, t.relation, t.tail}).second) continue;
      ctx.triples.push_back(t);
      ++taken;
    }
  }
  return ctx;
}

DistilledContext distill(const std::vector<std::string>& context, const TripleStore& store,
                         const DkdConfig& config) {
  config.validate();
  return retrieve_concepts(extract_keywords(context, config.n_k), store, config.n_r);
}

std::vector<std::string> linearize_triples(const DistilledContext& ctx) {
  std::vector<std::string> out;
  for (const KnowledgeTriple& t : ctx.triples) {
    for (const auto& field : {t.head, t.relation, t.tail}) {
      for (auto& tok : split_ws(field)) out.push_back(std::move(tok));
    }
  }
  return out;
}

KnowledgeEmbedder::KnowledgeEmbedder(const TripleStore& store, int width, uint64_t seed) : width_(width) {
  if (width < 1) throw ConfigError("knowledge embedder width must be >= 1");
  double bound = 1.0 / std::sqrt(static_cast<double>(width));
  Rng base(seed);
  for (const std::string& token : store.vocabulary()) {
    rows_.emplace(token, Tensor::uniform(1, width, -bound, bound, base.named("kn_embed/" + token)));
  }
  unk_row_ = Tensor::uniform(1, width, -bound, bound, base.named("kn_embed/<unk>"));
}

const Tensor& KnowledgeEmbedder::row_for(const std::string& token) const {
  auto it = rows_.find(token);
  return it == rows_.end() ? unk_row_ : it->second;
}

Tensor KnowledgeEmbedder::encode(const std::vector<std::string>& tokens) const {
  Tensor out(1, width_);
  if (tokens.empty()) return out;
  for (const std::string& tok : tokens) {
    const Tensor& row = row_for(tok);
    for (int j = 0; j < width_; ++j) out.at(0, j) += row.at(0, j);
  }
  for (int j = 0; j < width_; ++j) out.at(0, j) /= static_cast<double>(tokens.size());
  return out;
}

}  // namespace clinsum
