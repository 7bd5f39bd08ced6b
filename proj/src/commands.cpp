#include "clinsum/commands.hpp"

#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "clinsum/pipeline.hpp"
#include "clinsum/synthetic.hpp"
#include "clinsum/verify.hpp"

namespace clinsum {

namespace {

nlohmann::json parse_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file: " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void require_file(const std::filesystem::path& path, const std::string& what) {
  if (path.empty()) throw ConfigError("no " + what + " path configured");
  if (!std::filesystem::exists(path)) throw DataError(what + " file not found: " + path.string());
}

struct LoadedData {
  Corpus corpus;
  TripleStore store;
  VisualFeatureStore visuals;
};

LoadedData load_data(const RunConfig& config, bool need_corpus = true) {
  LoadedData data;
  if (need_corpus) {
    require_file(config.corpus, "corpus");
    data.corpus = load_corpus(config.corpus);
    if (data.corpus.empty()) throw DataError("corpus is empty: " + config.corpus.string());
  }
  require_file(config.triples, "triple store");
  data.store = TripleStore::load(config.triples);
  require_file(config.visual, "visual feature");
  data.visuals = VisualFeatureStore::load(config.visual);
  return data;
}

// derive widths/label count the config left unspecified
ModelConfig resolve_model_config(const RunConfig& config, const std::vector<std::string>& departments,
                                 const VisualFeatureStore& visuals) {
  ModelConfig mc = config.model;
  if (!config.n_departments_explicit) mc.n_departments = static_cast<int>(departments.size());
  if (!config.d_v_explicit && visuals.size() > 0) mc.d_v = visuals.width();
  return mc;
}

nlohmann::json context_record(const Dialogue& d, const DistilledContext& ctx) {
  nlohmann::json triples = nlohmann::json::array();
  for (const KnowledgeTriple& t : ctx.triples) {
    triples.push_back({{"head", t.head}, {"relation", t.relation}, {"tail", t.tail}, {"weight", t.weight}});
  }
  return nlohmann::json{{"id", d.id}, {"keywords", ctx.keywords}, {"triples", triples}};
}

}  // namespace

RunConfig load_run_config(const std::filesystem::path& path) {
  RunConfig config;
  nlohmann::json j = parse_json_file(path);
  try {
    if (j.contains("model")) {
      config.model = j.at("model").get<ModelConfig>();
      config.n_departments_explicit = j.at("model").contains("n_departments");
      config.d_v_explicit = j.at("model").contains("d_v");
    }
    if (j.contains("dkd")) {
      config.dkd.n_k = j.at("dkd").value("n_k", config.dkd.n_k);
      config.dkd.n_r = j.at("dkd").value("n_r", config.dkd.n_r);
      config.dkd.validate();
    }
    if (j.contains("paths")) {
      const auto& p = j.at("paths");
      auto base = path.parent_path();
      auto resolve = [&](const std::string& key) -> std::filesystem::path {
        if (!p.contains(key)) return {};
        std::filesystem::path raw = p.at(key).get<std::string>();
        return raw.is_absolute() ? raw : base / raw;
      };
      if (p.contains("corpus")) config.corpus = resolve("corpus");
      if (p.contains("triples")) config.triples = resolve("triples");
      if (p.contains("visual")) config.visual = resolve("visual");
      if (p.contains("checkpoint_dir")) config.checkpoint_dir = resolve("checkpoint_dir");
      if (p.contains("checkpoint")) config.checkpoint = resolve("checkpoint");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config;
}

void cmd_synth(const SynthArgs& args) {
  SyntheticBundle bundle = generate_synthetic({.n_dialogues = args.n_dialogues,
                                               .n_departments = args.n_departments,
                                               .vocab_size_hint = args.vocab_size_hint,
                                               .seed = args.seed,
                                               .d_v = args.d_v});
  std::filesystem::create_directories(args.out_dir);
  save_corpus(bundle.corpus, args.out_dir / "corpus.jsonl");
  bundle.store.save(args.out_dir / "triples.tsv");
  bundle.visuals.save(args.out_dir / "visual.tsv");
  std::cout << "wrote " << bundle.corpus.size() << " dialogues, " << bundle.store.triple_count()
            << " triples, " << bundle.visuals.size() << " image features to " << args.out_dir.string() << "\n";
}

void cmd_distill(const RunConfig& config, const std::filesystem::path& out) {
  require_file(config.corpus, "corpus");
  require_file(config.triples, "triple store");
  Corpus corpus = load_corpus(config.corpus);
  TripleStore store = TripleStore::load(config.triples);

  std::ofstream os(out);
  if (!os) throw DataError("cannot write distilled output: " + out.string());
  for (const Dialogue& d : corpus) {
    DistilledContext ctx = distill(dialogue_context(d), store, config.dkd);
    os << context_record(d, ctx).dump() << "\n";
  }
  std::cout << "distilled " << corpus.size() << " dialogues to " << out.string() << "\n";
}

namespace {

double validation_rouge_l(SummarizerModel& model, const Corpus& val, const EvidenceBuilder& evidence) {
  if (val.empty()) return -1.0;
  const ModelConfig& c = model.config();
  double sum = 0.0;
  for (const Dialogue& d : val) {
    std::vector<int> src = encode_source(d, model.vocab(), c.max_src_len);
    std::vector<int> generated =
        model.generate(src, evidence.visual_evidence(d), evidence.knowledge_evidence(d),
                       GenerationStrategy::greedy());
    TokenList candidate;
    for (int id : generated) candidate.push_back(model.vocab().token_of(id));
    sum += rouge_l(candidate, tokenize(target_text(d, c.target_field))).f1;
  }
  return sum / static_cast<double>(val.size());
}

}  // namespace

TrainReport cmd_train(const RunConfig& config) {
  LoadedData data = load_data(config);
  std::vector<std::string> departments = department_labels(data.corpus);
  ModelConfig mc = resolve_model_config(config, departments, data.visuals);

  Vocabulary vocab = build_vocab(data.corpus, 1);
  SplitCorpus split = split_corpus(data.corpus, {0.8, 0.05, 0.15}, mc.seed);
  if (split.train.empty()) throw DataError("training split is empty");

  EvidenceBuilder evidence(&data.visuals, &data.store, config.dkd, mc.d_v, mc.d_kn, mc.seed);
  SummarizerModel model(mc, vocab, departments);
  std::vector<TrainingExample> examples = prepare_examples(split.train, vocab, departments, evidence, mc);

  std::filesystem::create_directories(config.checkpoint_dir);
  std::filesystem::path log_path = config.checkpoint_dir / "train_log.jsonl";
  std::ofstream log(log_path);
  if (!log) throw DataError("cannot write training log: " + log_path.string());

  TrainOptions opts;
  opts.checkpoint_dir = config.checkpoint_dir;
  opts.val_metric = [&](SummarizerModel& m, int) { return validation_rouge_l(m, split.val, evidence); };
  opts.on_epoch = [&](const EpochStats& s) {
    nlohmann::json row{{"epoch", s.epoch},          {"loss", s.loss}, {"cl", s.cl}, {"gl", s.gl},
                       {"dept_accuracy", s.dept_accuracy}};
    if (s.val_rouge_l >= 0.0) row["val_rouge_l"] = s.val_rouge_l;
    log << row.dump() << "\n";
    log.flush();
    std::cout << "epoch " << s.epoch << " loss " << s.loss << " cl " << s.cl << " gl " << s.gl
              << " dept_acc " << s.dept_accuracy;
    if (s.val_rouge_l >= 0.0) std::cout << " val_rouge_l " << s.val_rouge_l;
    std::cout << "\n";
  };

  TrainResult result = train_model(model, examples, opts);
  TrainReport report;
  report.best_checkpoint = config.checkpoint_dir / "best.ckpt";
  report.log_path = log_path;
  report.epochs_run = static_cast<int>(result.log.size());
  return report;
}

void cmd_summarize(const RunConfig& config, const std::filesystem::path& input, const std::filesystem::path& out,
                   const GenerationStrategy& strategy) {
  std::filesystem::path ckpt = config.checkpoint.empty() ? config.checkpoint_dir / "best.ckpt" : config.checkpoint;
  require_file(ckpt, "checkpoint");
  SummarizerModel model = SummarizerModel::load(ckpt);
  const ModelConfig& mc = model.config();

  require_file(input, "input corpus");
  Corpus corpus = load_corpus(input);

  RunConfig effective = config;
  effective.corpus = input;
  LoadedData data = load_data(effective, /*need_corpus=*/false);
  EvidenceBuilder evidence(&data.visuals, &data.store, config.dkd, mc.d_v, mc.d_kn, mc.seed);

  std::ofstream os(out);
  if (!os) throw DataError("cannot write predictions: " + out.string());
  for (const Dialogue& d : corpus) {
    std::vector<int> src = encode_source(d, model.vocab(), mc.max_src_len);
    Tensor e_v = evidence.visual_evidence(d);
    Tensor e_kn = evidence.knowledge_evidence(d);
    std::vector<int> generated = model.generate(src, e_v, e_kn, strategy);
    TokenList tokens;
    for (int id : generated) tokens.push_back(model.vocab().token_of(id));
    int dept = model.predict_department(src, e_v, e_kn);
    nlohmann::json row{{"id", d.id},
                       {"predicted_department", model.departments()[static_cast<size_t>(dept)]},
                       {"generated_text", join_tokens(tokens)}};
    os << row.dump() << "\n";
  }
  std::cout << "summarized " << corpus.size() << " dialogues to " << out.string() << "\n";
}

EvalReport cmd_evaluate(const RunConfig& config, const std::filesystem::path& predictions,
                        const std::filesystem::path& gold,
                        const std::optional<std::filesystem::path>& report_out) {
  require_file(predictions, "predictions");
  require_file(gold, "gold corpus");

  std::map<std::string, nlohmann::json> predicted;
  {
    std::ifstream in(predictions);
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      try {
        nlohmann::json j = nlohmann::json::parse(line);
        std::string id = j.at("id").get<std::string>();
        predicted[id] = std::move(j);
      } catch (const nlohmann::json::exception& e) {
        throw DataError(predictions.string() + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
  }
  Corpus gold_corpus = load_corpus(gold);

  std::set<std::string> gold_ids;
  for (const Dialogue& d : gold_corpus) gold_ids.insert(d.id);
  std::string missing;
  for (const Dialogue& d : gold_corpus) {
    if (!predicted.count(d.id)) missing += (missing.empty() ? "" : ", ") + d.id;
  }
  for (const auto& [id, row] : predicted) {
    if (!gold_ids.count(id)) missing += (missing.empty() ? "" : ", ") + id;
  }
  if (!missing.empty()) throw DataError("prediction/gold id mismatch: " + missing);

  std::vector<TokenList> candidates, references;
  std::vector<std::string> pred_depts, gold_depts;
  bool have_depts = true;
  for (const Dialogue& d : gold_corpus) {
    const nlohmann::json& row = predicted.at(d.id);
    candidates.push_back(tokenize(row.at("generated_text").get<std::string>()));
    references.push_back(tokenize(target_text(d, config.model.target_field)));
    if (row.contains("predicted_department")) {
      pred_depts.push_back(row.at("predicted_department").get<std::string>());
      gold_depts.push_back(d.department);
    } else {
      have_depts = false;
    }
  }

  EvalReport report = evaluate_corpus(candidates, references);
  if (have_depts && !pred_depts.empty()) {
    auto scores = classification_metrics(pred_depts, gold_depts, department_labels(gold_corpus));
    report.dept_accuracy = scores.accuracy;
    report.dept_macro_f1 = scores.macro_f1;
  }

  std::cout << render_report(report);
  if (report_out) {
    nlohmann::json j{{"n_samples", report.n_samples},
                     {"b1", report.b1},
                     {"b2", report.b2},
                     {"b3", report.b3},
                     {"b4", report.b4},
                     {"bleu", report.bleu},
                     {"rouge1", report.rouge1},
                     {"rouge2", report.rouge2},
                     {"rougeL", report.rougeL},
                     {"meteor", report.meteor},
                     {"jaccard", report.jaccard}};
    if (report.dept_accuracy) j["dept_accuracy"] = *report.dept_accuracy;
    if (report.dept_macro_f1) j["dept_macro_f1"] = *report.dept_macro_f1;
    std::ofstream os(*report_out);
    if (!os) throw DataError("cannot write report: " + report_out->string());
    os << j.dump(2) << "\n";
  }
  return report;
}

bool cmd_verify(uint64_t seed) {
  std::vector<VerifyCheck> checks = run_verification(seed);
  for (const VerifyCheck& c : checks) {
    std::cout << (c.ok ? "[ok]   " : "[FAIL] ") << c.name;
    if (!c.detail.empty()) std::cout << "  (" << c.detail << ")";
    std::cout << "\n";
  }
  bool ok = all_passed(checks);
  std::cout << (ok ? "verification passed" : "verification FAILED") << "\n";
  return ok;
}

}  // namespace clinsum
