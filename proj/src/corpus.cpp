#include "clinsum/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace clinsum {

std::string speaker_name(Speaker s) { return s == Speaker::patient ? "patient" : "doctor"; }

Speaker speaker_from(const std::string& name) {
  if (name == "patient") return Speaker::patient;
  if (name == "doctor") return Speaker::doctor;
  throw DataError("unknown speaker: '" + name + "'");
}

std::string speaker_tag(Speaker s) { return "<" + speaker_name(s) + ">"; }

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string chunk;
  auto is_punct = [](char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; };
  while (is >> chunk) {
    std::transform(chunk.begin(), chunk.end(), chunk.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    size_t begin = 0, end = chunk.size();
    while (begin < end && is_punct(chunk[begin])) ++begin;
    while (end > begin && is_punct(chunk[end - 1])) --end;
    for (size_t i = 0; i < begin; ++i) out.push_back(std::string(1, chunk[i]));
    if (begin < end) out.push_back(chunk.substr(begin, end - begin));
    for (size_t i = end; i < chunk.size(); ++i) out.push_back(std::string(1, chunk[i]));
  }
  return out;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

Vocabulary::Vocabulary(std::vector<std::string> tokens_in_id_order) : tokens_(std::move(tokens_in_id_order)) {
  for (size_t i = 0; i < tokens_.size(); ++i) {
    auto [it, fresh] = ids_.emplace(tokens_[i], reserved + static_cast<int>(i));
    if (!fresh) throw DataError("vocabulary: duplicate token '" + tokens_[i] + "'");
  }
}

int Vocabulary::id_of(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? unk_id : it->second;
}

const std::string& Vocabulary::token_of(int id) const {
  static const std::vector<std::string> kReserved{"<pad>", "<bos>", "<eos>", "<unk>"};
  if (id >= 0 && id < reserved) return kReserved[static_cast<size_t>(id)];
  int idx = id - reserved;
  if (idx < 0 || idx >= static_cast<int>(tokens_.size())) {
    throw DataError("vocabulary: id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<size_t>(idx)];
}

bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

Vocabulary build_vocab(const Corpus& corpus, int min_count) {
  if (corpus.empty()) throw DataError("build_vocab: empty corpus");
  std::map<std::string, long> counts;
  auto bump = [&](const std::vector<std::string>& toks) {
    for (const auto& t : toks) ++counts[t];
  };
  for (const Dialogue& d : corpus) {
    for (const Utterance& u : d.utterances) {
      ++counts[speaker_tag(u.speaker)];
      bump(tokenize(u.text));
    }
    bump(tokenize(d.summary));
    bump(tokenize(d.mcs));
    bump(tokenize(d.doctor_impression));
  }
  std::vector<std::pair<std::string, long>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> kept;
  for (const auto& [tok, count] : ranked) {
    if (count >= min_count) kept.push_back(tok);
  }
  return Vocabulary(std::move(kept));
}

std::vector<std::string> department_labels(const Corpus& corpus) {
  std::set<std::string> labels;
  for (const Dialogue& d : corpus) labels.insert(d.department);
  return {labels.begin(), labels.end()};
}

std::string target_field_name(TargetField f) {
  switch (f) {
    case TargetField::summary: return "summary";
    case TargetField::mcs: return "mcs";
    case TargetField::doctor_impression: return "doctor_impression";
  }
  throw ConfigError("bad target field");
}

TargetField target_field_from(const std::string& name) {
  if (name == "summary") return TargetField::summary;
  if (name == "mcs") return TargetField::mcs;
  if (name == "doctor_impression") return TargetField::doctor_impression;
  throw ConfigError("unknown target field: '" + name + "'");
}

const std::string& target_text(const Dialogue& d, TargetField f) {
  switch (f) {
    case TargetField::summary: return d.summary;
    case TargetField::mcs: return d.mcs;
    case TargetField::doctor_impression: return d.doctor_impression;
  }
  throw ConfigError("bad target field");
}

std::vector<int> encode_source(const Dialogue& d, const Vocabulary& vocab, int max_src_len) {
  if (max_src_len < 1) throw ConfigError("max_src_len must be >= 1");
  std::vector<int> src;
  for (const Utterance& u : d.utterances) {
    src.push_back(vocab.id_of(speaker_tag(u.speaker)));
    for (const auto& tok : tokenize(u.text)) src.push_back(vocab.id_of(tok));
  }
  if (static_cast<int>(src.size()) > max_src_len) src.resize(static_cast<size_t>(max_src_len));
  return src;
}

EncodedDialogue encode_dialogue(const Dialogue& d, const Vocabulary& vocab,
                                const std::vector<std::string>& departments, int max_src_len, int max_tgt_len,
                                TargetField target_field) {
  EncodedDialogue out;
  out.id = d.id;
  out.src = encode_source(d, vocab, max_src_len);
  auto dept = std::find(departments.begin(), departments.end(), d.department);
  if (dept == departments.end()) {
    throw DataError("dialogue " + d.id + ": unknown department '" + d.department + "'");
  }
  out.department = static_cast<int>(dept - departments.begin());

  auto toks = tokenize(target_text(d, target_field));
  if (max_tgt_len < 2) throw ConfigError("max_tgt_len must be >= 2");
  if (static_cast<int>(toks.size()) > max_tgt_len - 2) toks.resize(static_cast<size_t>(max_tgt_len - 2));
  out.tgt.push_back(Vocabulary::bos_id);
  for (const auto& tok : toks) out.tgt.push_back(vocab.id_of(tok));
  out.tgt.push_back(Vocabulary::eos_id);

  for (const Utterance& u : d.utterances) {
    out.image_ids.insert(out.image_ids.end(), u.image_ids.begin(), u.image_ids.end());
  }
  return out;
}

SplitCorpus split_corpus(const Corpus& corpus, std::array<double, 3> fractions, uint64_t seed) {
  double sum = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(sum - 1.0) > 1e-9 || fractions[0] < 0 || fractions[1] < 0 || fractions[2] < 0) {
    throw ConfigError("split fractions must be nonnegative and sum to 1");
  }
  std::vector<size_t> order(corpus.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng = Rng(seed).named("split");
  rng.shuffle(order);

  long n = static_cast<long>(corpus.size());
  long n_train = std::llround(n * fractions[0]);
  long n_val = std::llround(n * fractions[1]);
  if (n_train + n_val > n) n_val = n - n_train;

  SplitCorpus out;
  for (long i = 0; i < n; ++i) {
    const Dialogue& d = corpus[order[static_cast<size_t>(i)]];
    if (i < n_train) {
      out.train.push_back(d);
    } else if (i < n_train + n_val) {
      out.val.push_back(d);
    } else {
      out.test.push_back(d);
    }
  }
  return out;
}

namespace {

const char* kKnownDialogueKeys[] = {"id", "utterances", "department", "disease", "summary", "mcs",
                                    "doctor_impression"};
const char* kKnownUtteranceKeys[] = {"speaker", "text", "image_ids"};

template <size_t N>
nlohmann::json collect_extra(const nlohmann::json& j, const char* const (&known)[N]) {
  nlohmann::json extra = nlohmann::json::object();
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool is_known = false;
    for (const char* k : known) is_known = is_known || it.key() == k;
    if (!is_known) extra[it.key()] = it.value();
  }
  return extra;
}

void validate(const Dialogue& d) {
  if (d.utterances.empty()) throw DataError("dialogue " + d.id + ": needs at least one utterance");
  for (const Utterance& u : d.utterances) {
    if (u.text.empty() && u.image_ids.empty()) {
      throw DataError("dialogue " + d.id + ": utterance with neither text nor images");
    }
  }
  if (d.summary.empty() || d.mcs.empty() || d.doctor_impression.empty()) {
    throw DataError("dialogue " + d.id + ": summary, mcs and doctor_impression must be nonempty");
  }
}

}  // namespace

nlohmann::json dialogue_to_json(const Dialogue& d) {
  nlohmann::json j = d.extra;
  j["id"] = d.id;
  j["utterances"] = nlohmann::json::array();
  for (const Utterance& u : d.utterances) {
    nlohmann::json ju = u.extra;
    ju["speaker"] = speaker_name(u.speaker);
    ju["text"] = u.text;
    ju["image_ids"] = u.image_ids;
    j["utterances"].push_back(std::move(ju));
  }
  j["department"] = d.department;
  if (d.disease) j["disease"] = *d.disease;
  j["summary"] = d.summary;
  j["mcs"] = d.mcs;
  j["doctor_impression"] = d.doctor_impression;
  return j;
}

Dialogue dialogue_from_json(const nlohmann::json& j) {
  Dialogue d;
  d.id = j.at("id").get<std::string>();
  for (const auto& ju : j.at("utterances")) {
    Utterance u;
    u.speaker = speaker_from(ju.at("speaker").get<std::string>());
    u.text = ju.value("text", std::string());
    if (ju.contains("image_ids")) u.image_ids = ju.at("image_ids").get<std::vector<std::string>>();
    u.extra = collect_extra(ju, kKnownUtteranceKeys);
    d.utterances.push_back(std::move(u));
  }
  d.department = j.at("department").get<std::string>();
  if (j.contains("disease") && !j.at("disease").is_null()) d.disease = j.at("disease").get<std::string>();
  d.summary = j.at("summary").get<std::string>();
  d.mcs = j.at("mcs").get<std::string>();
  d.doctor_impression = j.at("doctor_impression").get<std::string>();
  d.extra = collect_extra(j, kKnownDialogueKeys);
  validate(d);
  return d;
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus file: " + path.string());
  Corpus corpus;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      corpus.push_back(dialogue_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write corpus file: " + path.string());
  for (const Dialogue& d : corpus) out << dialogue_to_json(d).dump() << "\n";
}

}  // namespace clinsum
