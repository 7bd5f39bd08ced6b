#include <CLI11.hpp>
#include <iostream>
#include <optional>

#include "clinsum/commands.hpp"

using namespace clinsum;

namespace {

struct CommonFlags {
  std::string config_path;
  std::optional<uint64_t> seed;
};

RunConfig resolve_config(const CommonFlags& flags) {
  RunConfig config;
  if (!flags.config_path.empty()) config = load_run_config(flags.config_path);
  if (flags.seed) config.model.seed = *flags.seed;  // flags win over the file
  return config;
}

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "JSON config file");
  cmd->add_option("--seed", flags.seed, "override the configured seed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multimodal clinical conversation summarizer"};
  app.require_subcommand(1);

  // synth
  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus with matching stores");
  synth->add_option("--out", synth_args.out_dir, "output directory")->required();
  synth->add_option("--n", synth_args.n_dialogues, "number of dialogues");
  synth->add_option("--departments", synth_args.n_departments, "number of departments");
  synth->add_option("--vocab-hint", synth_args.vocab_size_hint, "vocabulary size bound");
  synth->add_option("--dv", synth_args.d_v, "visual feature width");
  synth->add_option("--seed", synth_args.seed, "generator seed");

  // distill
  CommonFlags distill_flags;
  std::string distill_corpus, distill_triples, distill_out = "distilled.jsonl";
  auto* distill = app.add_subcommand("distill", "extract per-dialogue knowledge subgraphs");
  add_common(distill, distill_flags);
  distill->add_option("--corpus", distill_corpus, "corpus JSONL");
  distill->add_option("--triples", distill_triples, "triple store TSV");
  distill->add_option("--out", distill_out, "output JSONL");

  // train
  CommonFlags train_flags;
  std::string train_corpus, train_triples, train_visual, train_ckpt_dir;
  std::optional<int> train_epochs;
  auto* train = app.add_subcommand("train", "train the summarizer");
  add_common(train, train_flags);
  train->add_option("--corpus", train_corpus, "corpus JSONL");
  train->add_option("--triples", train_triples, "triple store TSV");
  train->add_option("--visual", train_visual, "visual feature TSV");
  train->add_option("--checkpoint-dir", train_ckpt_dir, "checkpoint directory");
  train->add_option("--epochs", train_epochs, "override epoch count");

  // summarize
  CommonFlags sum_flags;
  std::string sum_input, sum_out = "predictions.jsonl", sum_ckpt, sum_triples, sum_visual;
  int beam_width = 0;
  auto* summarize = app.add_subcommand("summarize", "generate summaries and department predictions");
  add_common(summarize, sum_flags);
  summarize->add_option("--input", sum_input, "dialogue JSONL")->required();
  summarize->add_option("--out", sum_out, "predictions JSONL");
  summarize->add_option("--checkpoint", sum_ckpt, "checkpoint file");
  summarize->add_option("--triples", sum_triples, "triple store TSV");
  summarize->add_option("--visual", sum_visual, "visual feature TSV");
  summarize->add_option("--beam", beam_width, "beam width (default greedy)");

  // evaluate
  CommonFlags eval_flags;
  std::string eval_pred, eval_gold, eval_out, eval_target;
  auto* evaluate = app.add_subcommand("evaluate", "score predictions against gold summaries");
  add_common(evaluate, eval_flags);
  evaluate->add_option("--predictions", eval_pred, "predictions JSONL")->required();
  evaluate->add_option("--gold", eval_gold, "gold corpus JSONL")->required();
  evaluate->add_option("--out", eval_out, "report JSON");
  evaluate->add_option("--target-field", eval_target, "summary | mcs | doctor_impression");

  // verify
  uint64_t verify_seed = 1;
  auto* verify = app.add_subcommand("verify", "run the invariant suites");
  verify->add_option("--seed", verify_seed, "verification seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      cmd_synth(synth_args);
    } else if (distill->parsed()) {
      RunConfig config = resolve_config(distill_flags);
      if (!distill_corpus.empty()) config.corpus = distill_corpus;
      if (!distill_triples.empty()) config.triples = distill_triples;
      cmd_distill(config, distill_out);
    } else if (train->parsed()) {
      RunConfig config = resolve_config(train_flags);
      if (!train_corpus.empty()) config.corpus = train_corpus;
      if (!train_triples.empty()) config.triples = train_triples;
      if (!train_visual.empty()) config.visual = train_visual;
      if (!train_ckpt_dir.empty()) config.checkpoint_dir = train_ckpt_dir;
      if (train_epochs) config.model.epochs = *train_epochs;
      TrainReport report = cmd_train(config);
      std::cout << "best checkpoint: " << report.best_checkpoint.string() << "\n";
    } else if (summarize->parsed()) {
      RunConfig config = resolve_config(sum_flags);
      if (!sum_ckpt.empty()) config.checkpoint = sum_ckpt;
      if (!sum_triples.empty()) config.triples = sum_triples;
      if (!sum_visual.empty()) config.visual = sum_visual;
      GenerationStrategy strategy =
          beam_width > 0 ? GenerationStrategy::beam(beam_width) : GenerationStrategy::greedy();
      cmd_summarize(config, sum_input, sum_out, strategy);
    } else if (evaluate->parsed()) {
      RunConfig config = resolve_config(eval_flags);
      if (!eval_target.empty()) config.model.target_field = target_field_from(eval_target);
      std::optional<std::filesystem::path> out;
      if (!eval_out.empty()) out = eval_out;
      cmd_evaluate(config, eval_pred, eval_gold, out);
    } else if (verify->parsed()) {
      if (!cmd_verify(verify_seed)) return kExitVerify;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUnexpected;
  }
  return kExitOk;
}
