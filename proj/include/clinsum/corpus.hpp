#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "clinsum/common.hpp"

namespace clinsum {

enum class Speaker { patient, doctor };

std::string speaker_name(Speaker s);
Speaker speaker_from(const std::string& name);
// turn-boundary token, e.g. "<patient>"
std::string speaker_tag(Speaker s);

struct Utterance {
  Speaker speaker = Speaker::patient;
  std::string text;
  std::vector<std::string> image_ids;
  nlohmann::json extra = nlohmann::json::object();  // opaque annotations, round-tripped untouched

  friend bool operator==(const Utterance&, const Utterance&) = default;
};

struct Dialogue {
  std::string id;
  std::vector<Utterance> utterances;
  std::string department;
  std::optional<std::string> disease;
  std::string summary;
  std::string mcs;
  std::string doctor_impression;
  nlohmann::json extra = nlohmann::json::object();

  friend bool operator==(const Dialogue&, const Dialogue&) = default;
};

using Corpus = std::vector<Dialogue>;

// lowercase, whitespace split, leading/trailing punctuation peeled into
// their own tokens ("Skin rash!" -> skin, rash, !)
std::vector<std::string> tokenize(const std::string& text);
std::string join_tokens(const std::vector<std::string>& tokens);

// Token ids with 4 reserved slots; construction order is deterministic
// (count desc, then lexicographic).
class Vocabulary {
 public:
  static constexpr int pad_id = 0;
  static constexpr int bos_id = 1;
  static constexpr int eos_id = 2;
  static constexpr int unk_id = 3;
  static constexpr int reserved = 4;

  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens_in_id_order);

  int id_of(const std::string& token) const;
  const std::string& token_of(int id) const;
  int size() const { return reserved + static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  friend bool operator==(const Vocabulary&, const Vocabulary&);

 private:
  std::vector<std::string> tokens_;  // id = reserved + index
  std::unordered_map<std::string, int> ids_;
};

// Counts tokens from every utterance (speaker tag + text) and the three
// summary targets; keeps those with count >= min_count.
Vocabulary build_vocab(const Corpus& corpus, int min_count = 1);

// Sorted unique department labels.
std::vector<std::string> department_labels(const Corpus& corpus);

enum class TargetField { summary, mcs, doctor_impression };
std::string target_field_name(TargetField f);
TargetField target_field_from(const std::string& name);
const std::string& target_text(const Dialogue& d, TargetField f);

struct EncodedDialogue {
  std::string id;
  std::vector<int> src;
  std::vector<int> tgt;  // BOS ... EOS
  int department = -1;
  std::vector<std::string> image_ids;
};

// Source token ids only (speaker tags + utterance tokens, prefix-truncated);
// usable without a department label.
std::vector<int> encode_source(const Dialogue& d, const Vocabulary& vocab, int max_src_len);

EncodedDialogue encode_dialogue(const Dialogue& d, const Vocabulary& vocab,
                                const std::vector<std::string>& departments, int max_src_len, int max_tgt_len,
                                TargetField target_field);

struct SplitCorpus {
  Corpus train, val, test;
};

// Seeded shuffle then contiguous slices; sizes are round(n * fraction) for
// train/val, remainder to test.
SplitCorpus split_corpus(const Corpus& corpus, std::array<double, 3> fractions, uint64_t seed);

Corpus load_corpus(const std::filesystem::path& path);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);

nlohmann::json dialogue_to_json(const Dialogue& d);
Dialogue dialogue_from_json(const nlohmann::json& j);

}  // namespace clinsum
