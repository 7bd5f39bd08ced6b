#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "clinsum/dkd.hpp"
#include "clinsum/metrics.hpp"
#include "clinsum/model.hpp"

namespace clinsum {

// distinct exit codes per failure class
inline constexpr int kExitOk = 0;
inline constexpr int kExitUnexpected = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitVerify = 4;

struct RunConfig {
  ModelConfig model;
  DkdConfig dkd;

  std::filesystem::path corpus;
  std::filesystem::path triples;
  std::filesystem::path visual;
  std::filesystem::path checkpoint_dir = "checkpoints";
  std::filesystem::path checkpoint;  // explicit file for summarize; default: checkpoint_dir/best.ckpt

  // fields the commands may derive from data when the config leaves them out
  bool n_departments_explicit = false;
  bool d_v_explicit = false;
};

// JSON config file with "model", "dkd" and "paths" sections, all optional.
RunConfig load_run_config(const std::filesystem::path& path);

struct SynthArgs {
  std::filesystem::path out_dir;
  int n_dialogues = 20;
  int n_departments = 4;
  int vocab_size_hint = 100;
  int d_v = 16;
  uint64_t seed = 7;
};
// writes corpus.jsonl, triples.tsv, visual.tsv
void cmd_synth(const SynthArgs& args);

// one DistilledContext JSON record per dialogue
void cmd_distill(const RunConfig& config, const std::filesystem::path& out);

struct TrainReport {
  std::filesystem::path best_checkpoint;
  std::filesystem::path log_path;
  int epochs_run = 0;
};
// 80/5/15 split, per-epoch checkpoints and JSONL log, best kept by
// validation ROUGE-L
TrainReport cmd_train(const RunConfig& config);

void cmd_summarize(const RunConfig& config, const std::filesystem::path& input, const std::filesystem::path& out,
                   const GenerationStrategy& strategy = GenerationStrategy::greedy());

EvalReport cmd_evaluate(const RunConfig& config, const std::filesystem::path& predictions,
                        const std::filesystem::path& gold, const std::optional<std::filesystem::path>& report_out);

// prints one line per check; returns false when any invariant fails
bool cmd_verify(uint64_t seed);

}  // namespace clinsum
