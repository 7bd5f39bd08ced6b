#include "clinsum/verify.hpp"

#include <array>
#include <cmath>
#include <set>
#include <sstream>

#include "clinsum/dkd.hpp"
#include "clinsum/fusion.hpp"
#include "clinsum/metrics.hpp"
#include "clinsum/model.hpp"
#include "clinsum/pipeline.hpp"
#include "clinsum/synthetic.hpp"
#include "clinsum/tensor.hpp"

namespace clinsum {

namespace {

Tensor random_tensor(int r, int c, Rng& rng) { return Tensor::uniform(r, c, -1.0, 1.0, rng); }

VerifyCheck check(const std::string& name, bool ok, const std::string& detail = "") {
  return {name, ok, detail};
}

SummarizerModel micro_model(uint64_t seed, bool with_fusion) {
  ModelConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_encoder_layers = 2;
  c.n_decoder_layers = 1;
  c.d_ff = 16;
  c.vocab_size = 12;
  c.n_departments = 2;
  if (with_fusion) {
    c.fusion_placement = {{2, {Modality::visual, Modality::knowledge}}};
  } else {
    c.fusion_placement.clear();
  }
  c.max_src_len = 16;
  c.max_tgt_len = 8;
  c.d_v = 3;
  c.d_kn = 4;
  c.seed = seed;
  return SummarizerModel(c, Vocabulary({"a", "b", "c", "d", "e", "f", "g", "h"}), {"one", "two"});
}

}  // namespace

std::vector<VerifyCheck> run_verification(uint64_t seed) {
  std::vector<VerifyCheck> out;
  Rng rng(seed);

  {  // reverse-mode gradients on a composite expression
    Rng init = rng.named("gradcheck");
    Param w = make_weight("w", 4, 3, init);
    Param b = make_weight("b", 1, 3, init);
    Tensor input = random_tensor(5, 4, init);
    std::vector<Param*> params{&w, &b};
    auto build = [&](Tape& t) {
      auto h = t.matmul(t.constant(input), t.param(w));
      h = t.add(h, t.broadcast_row(t.param(b), h.rows));
      h = t.hadamard(t.sigmoid(h), t.relu(h));
      h = t.matmul(t.softmax_rows(t.matmul(h, t.transpose(h))), h);
      return t.sum_all(t.hadamard(h, h));
    };
    auto report = check_gradients(build, params, {.eps = 1e-5, .tol = 1e-4});
    std::ostringstream os;
    os << "max_rel_err " << report.max_rel_err;
    out.push_back(check("tensor.gradients.composite", report.pass, os.str()));

    auto corrupted = [&](Tape& t) {
      t.corrupt_adjoint_for_testing(OpKind::matmul, 1.02);
      return build(t);
    };
    auto negative = check_gradients(corrupted, params, {.eps = 1e-5, .tol = 1e-4});
    out.push_back(check("tensor.gradients.negative_control", !negative.pass,
                        "corrupted adjoint must be caught"));
  }

  {  // softmax rows sum to one
    Rng r = rng.named("softmax");
    bool ok = true;
    Tape t;
    const Tensor& y = t.value(t.softmax_rows(t.constant(random_tensor(6, 9, r))));
    for (int i = 0; i < y.rows(); ++i) {
      double sum = 0.0;
      for (int j = 0; j < y.cols(); ++j) sum += y.at(i, j);
      ok = ok && std::abs(sum - 1.0) < 1e-9;
    }
    out.push_back(check("tensor.softmax.row_sums", ok));
  }

  {  // fusion identities over random instances
    Rng r = rng.named("fusion");
    bool identity_ok = true, lambda_ok = true, attn_ok = true;
    for (int rep = 0; rep < 20; ++rep) {
      FusionSiteParams params("v", 6, {{Modality::visual, 3}, {Modality::knowledge, 4}},
                              rng.named("fusion_params/" + std::to_string(rep)));
      Tensor h = random_tensor(4, 6, r);
      Tape t;
      std::vector<std::pair<Modality, Tape::Var>> ev{{Modality::visual, t.constant(random_tensor(1, 3, r))},
                                                     {Modality::knowledge, t.constant(random_tensor(1, 4, r))}};
      for (const auto& [m, e] : ev) {
        auto& mp = params.modalities.at(m);
        auto qkv = project_qkv(t, t.constant(h), params);
        MixWeights mix = modality_lambdas(t, qkv.key, qkv.value, e, mp);
        for (size_t i = 0; i < t.value(mix.key_mix).size(); ++i) {
          double v = t.value(mix.key_mix)[i];
          lambda_ok = lambda_ok && v > 0.0 && v < 1.0;
        }
        auto kv = conditioned_kv(t, qkv.key, qkv.value, e, mix, mp);
        auto scores = t.softmax_rows(t.matmul(qkv.query, t.transpose(kv.key)));
        for (int i = 0; i < scores.rows; ++i) {
          double sum = 0.0;
          for (int j = 0; j < scores.cols; ++j) sum += t.value(scores).at(i, j);
          attn_ok = attn_ok && std::abs(sum - 1.0) < 1e-9;
        }
      }
      params.zero_gates();
      auto fused = fusion_forward(t, t.constant(h), ev, params);
      for (size_t i = 0; i < h.size(); ++i) {
        identity_ok = identity_ok && std::abs(t.value(fused)[i] - h[i]) <= 1e-12;
      }
    }
    out.push_back(check("fusion.zero_gate_identity", identity_ok));
    out.push_back(check("fusion.lambda_open_interval", lambda_ok));
    out.push_back(check("fusion.attention_row_sums", attn_ok));
  }

  {  // fusion gradient fidelity
    FusionSiteParams params("g", 8, {{Modality::visual, 6}, {Modality::knowledge, 7}}, rng.named("fgrad"));
    Rng r = rng.named("fgrad_data");
    Tensor h = random_tensor(5, 8, r), e_v = random_tensor(1, 6, r), e_kn = random_tensor(1, 7, r);
    auto build = [&](Tape& t) {
      std::vector<std::pair<Modality, Tape::Var>> ev{{Modality::visual, t.constant(e_v)},
                                                     {Modality::knowledge, t.constant(e_kn)}};
      auto o = fusion_forward(t, t.constant(h), ev, params);
      return t.sum_all(t.hadamard(o, o));
    };
    auto ptrs = params.parameters();
    auto report = check_gradients(build, ptrs, {.eps = 1e-5, .tol = 1e-4});
    std::ostringstream os;
    os << "max_rel_err " << report.max_rel_err;
    out.push_back(check("fusion.gradients", report.pass, os.str()));
  }

  {  // metric oracles
    auto toks = [](std::initializer_list<const char*> list) {
      TokenList t;
      for (const char* s : list) t.emplace_back(s);
      return t;
    };
    bool ok = true;
    auto b = bleu({toks({"the", "cat"})}, {toks({"the", "cat", "sat", "on", "the", "mat"})});
    ok = ok && b.b1 == 1.0 && b.b2 == 1.0;
    double expected = std::exp(1.0 - 3.0) * std::exp((2.0 * std::log(1e-9)) / 4.0);
    ok = ok && std::abs(b.bleu - expected) < 1e-12;
    ok = ok && std::abs(rouge_l(toks({"a", "c", "b"}), toks({"a", "b", "c"})).f1 - 2.0 / 3.0) < 1e-12;
    ok = ok && std::abs(meteor_lite(toks({"the", "cat", "sat"}), toks({"the", "cat", "sat"})) -
                        (1.0 - 0.5 / 27.0)) < 1e-12;
    ok = ok && std::abs(jaccard(toks({"a", "b", "c"}), toks({"a", "b", "d"})) - 0.5) < 1e-12;
    ok = ok && bleu({toks({"x", "y", "z", "w"})}, {toks({"x", "y", "z", "w"})}).bleu == 1.0;
    out.push_back(check("metrics.oracles", ok));
  }

  {  // dkd bounds and determinism
    SyntheticBundle bundle = generate_synthetic({.n_dialogues = 12, .n_departments = 4, .seed = seed});
    bool ok = true;
    for (const Dialogue& d : bundle.corpus) {
      auto ctx = distill(dialogue_context(d), bundle.store, {});
      auto again = distill(dialogue_context(d), bundle.store, {});
      ok = ok && ctx.triples.size() <= 35 && ctx.keywords.size() <= 7;
      ok = ok && ctx.keywords == again.keywords && ctx.triples == again.triples;
      std::set<std::array<std::string, 3>> seen;
      for (const auto& t : ctx.triples) ok = ok && seen.insert({t.head, t.relation, t.tail}).second;
    }
    out.push_back(check("dkd.bounds_and_determinism", ok));
  }

  {  // split partition
    Corpus corpus;
    for (int i = 0; i < 100; ++i) {
      Dialogue d;
      d.id = "s" + std::to_string(i);
      d.utterances.push_back({Speaker::patient, "tok", {}});
      d.department = "x";
      d.summary = d.mcs = d.doctor_impression = "t";
      corpus.push_back(std::move(d));
    }
    auto split = split_corpus(corpus, {0.8, 0.05, 0.15}, seed);
    bool ok = split.train.size() == 80 && split.val.size() == 5 && split.test.size() == 15;
    std::set<std::string> ids;
    for (const Corpus* part : {&split.train, &split.val, &split.test}) {
      for (const Dialogue& d : *part) ok = ok && ids.insert(d.id).second;
    }
    ok = ok && ids.size() == 100;
    out.push_back(check("corpus.split_partition", ok));
  }

  {  // ablation identity at micro scale
    SummarizerModel placed = micro_model(seed, true);
    SummarizerModel plain = micro_model(seed, false);
    for (Param* p : placed.parameters()) {
      if (p->name.find("gate_weight") != std::string::npos || p->name.find("gate_bias") != std::string::npos) {
        p->value.fill(0.0);
      }
    }
    Rng r = rng.named("ablation");
    Tensor e_v = random_tensor(1, 3, r), e_kn = random_tensor(1, 4, r);
    std::vector<int> src{4, 5, 6, 7};
    Tape t1, t2;
    bool ok = t1.value(placed.encode(t1, src, e_v, e_kn)) == t2.value(plain.encode(t2, src, e_v, e_kn));
    out.push_back(check("model.ablation_identity", ok));
  }

  {  // training determinism, two fresh runs
    SyntheticBundle bundle = generate_synthetic({.n_dialogues = 6, .n_departments = 2, .seed = seed, .d_v = 4});
    Vocabulary vocab = build_vocab(bundle.corpus, 1);
    auto departments = department_labels(bundle.corpus);
    ModelConfig c;
    c.d_model = 16;
    c.n_heads = 2;
    c.n_encoder_layers = 2;
    c.n_decoder_layers = 1;
    c.d_ff = 32;
    c.n_departments = 2;
    c.fusion_placement = {{2, {Modality::knowledge}}};
    c.max_src_len = 64;
    c.max_tgt_len = 24;
    c.d_v = 4;
    c.d_kn = 6;
    c.learning_rate = 1e-3;
    c.epochs = 2;
    c.batch_size = 3;
    c.seed = seed;
    EvidenceBuilder evidence(&bundle.visuals, &bundle.store, {}, c.d_v, c.d_kn, c.seed);
    auto examples = prepare_examples(bundle.corpus, vocab, departments, evidence, c);
    auto run = [&]() {
      SummarizerModel model(c, vocab, departments);
      return train_model(model, examples);
    };
    TrainResult a = run(), b = run();
    bool ok = a.log.size() == 2 && a.log[0].loss == b.log[0].loss && a.log[1].loss == b.log[1].loss;
    for (const EpochStats& s : a.log) ok = ok && s.loss == c.alpha_cl * s.cl + c.alpha_gl * s.gl;
    out.push_back(check("model.training_determinism", ok));
  }

  return out;
}

bool all_passed(const std::vector<VerifyCheck>& checks) {
  for (const VerifyCheck& c : checks) {
    if (!c.ok) return false;
  }
  return true;
}

}  // namespace clinsum
