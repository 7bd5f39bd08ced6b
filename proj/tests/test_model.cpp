#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "clinsum/model.hpp"
#include "clinsum/pipeline.hpp"
#include "clinsum/synthetic.hpp"

using namespace clinsum;

namespace {

Vocabulary micro_vocab() {
  return Vocabulary({"alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta"});  // size 12
}

ModelConfig micro_config() {
  ModelConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_encoder_layers = 2;
  c.n_decoder_layers = 1;
  c.d_ff = 16;
  c.vocab_size = 12;
  c.n_departments = 2;
  c.fusion_placement = {{2, {Modality::visual, Modality::knowledge}}};
  c.max_src_len = 16;
  c.max_tgt_len = 8;
  c.d_v = 3;
  c.d_kn = 4;
  c.seed = 17;
  return c;
}

SummarizerModel micro_model(ModelConfig c = micro_config()) {
  return SummarizerModel(c, micro_vocab(), {"cardio", "derma"});
}

Tensor random_row(int c, uint64_t seed) {
  Rng rng(seed);
  return Tensor::uniform(1, c, -1.0, 1.0, rng);
}

const std::vector<int> kSrc{4, 5, 6, 7, 8};
const std::vector<int> kTgt{Vocabulary::bos_id, 6, 7, 8, Vocabulary::eos_id};

}  // namespace

TEST_SUITE("model") {

TEST_CASE("encode shape contract and length guard") {
  SummarizerModel model = micro_model();
  Tape t;
  auto h = model.encode(t, kSrc, random_row(3, 1), random_row(4, 2));
  CHECK(h.rows == 5);
  CHECK(h.cols == 8);

  std::vector<int> too_long(17, 4);
  CHECK_THROWS_AS(model.encode(t, too_long, random_row(3, 1), random_row(4, 2)), DataError);

  // out-of-range ids fall back to the unknown token rather than failing
  Tape t2;
  auto with_unknown = model.encode(t2, {4, 99, -3}, random_row(3, 1), random_row(4, 2));
  Tape t3;
  auto with_unk = model.encode(t3, {4, Vocabulary::unk_id, Vocabulary::unk_id}, random_row(3, 1), random_row(4, 2));
  CHECK(t2.value(with_unknown) == t3.value(with_unk));
}

TEST_CASE("department head: width, determinism, pooling symmetry") {
  SummarizerModel model = micro_model();
  Rng rng(3);
  Tensor h = Tensor::uniform(6, 8, -1.0, 1.0, rng);
  Tape t;
  auto logits = model.classify_department(t, t.constant(h));
  CHECK(logits.rows == 1);
  CHECK(logits.cols == 2);

  Tape t2;
  SummarizerModel same = micro_model();
  auto logits2 = same.classify_department(t2, t2.constant(h));
  CHECK(t.value(logits) == t2.value(logits2));

  // row permutation leaves the mean pool unchanged
  Tensor shuffled(6, 8);
  std::vector<int> perm{5, 3, 0, 1, 4, 2};
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 8; ++j) shuffled.at(i, j) = h.at(perm[static_cast<size_t>(i)], j);
  Tape t3;
  auto logits3 = model.classify_department(t3, t3.constant(shuffled));
  for (int j = 0; j < 2; ++j) {
    CHECK(t3.value(logits3).at(0, j) == doctest::Approx(t.value(logits).at(0, j)).epsilon(1e-12));
  }
}

TEST_CASE("decoder causality: future target edits cannot reach earlier logits") {
  SummarizerModel model = micro_model();
  Tensor e_v = random_row(3, 4), e_kn = random_row(4, 5);

  Tape t1;
  auto logits1 = model.decode_train(t1, kTgt, model.encode(t1, kSrc, e_v, e_kn));

  std::vector<int> altered = kTgt;
  altered[3] = 4;  // change a late token
  Tape t2;
  auto logits2 = model.decode_train(t2, altered, model.encode(t2, kSrc, e_v, e_kn));

  // positions strictly before the edit see identical logits
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 12; ++j) {
      CHECK(t1.value(logits1).at(i, j) == t2.value(logits2).at(i, j));
    }
  }

  Tape t3;
  auto one = model.decode_train(t3, {Vocabulary::bos_id, Vocabulary::eos_id}, model.encode(t3, kSrc, e_v, e_kn));
  CHECK(one.rows == 1);
}

TEST_CASE("joint loss composition") {
  SummarizerModel model = micro_model();
  Tensor e_v = random_row(3, 6), e_kn = random_row(4, 7);
  Tape t;
  auto encoded = model.encode(t, kSrc, e_v, e_kn);
  auto dept = model.classify_department(t, encoded);
  auto dec = model.decode_train(t, kTgt, encoded);
  auto loss = model.joint_loss(t, dec, kTgt, dept, 1);

  double cl = t.value(loss.classification)[0];
  double gl = t.value(loss.generation)[0];
  double total = t.value(loss.total)[0];
  CHECK(total == 0.2 * cl + 0.8 * gl);  // bitwise: same expression
  CHECK(total >= std::min(cl, gl));
  CHECK(total <= std::max(cl, gl));

  CHECK_THROWS_AS(model.joint_loss(t, dec, kTgt, dept, 5), DataError);
}

TEST_CASE("joint loss boundary weights") {
  ModelConfig c = micro_config();
  c.alpha_cl = 0.0;
  c.alpha_gl = 1.0;
  SummarizerModel model(c, micro_vocab(), {"cardio", "derma"});
  Tape t;
  auto encoded = model.encode(t, kSrc, random_row(3, 8), random_row(4, 9));
  auto loss = model.joint_loss(t, model.decode_train(t, kTgt, encoded), kTgt,
                               model.classify_department(t, encoded), 0);
  CHECK(t.value(loss.total)[0] == t.value(loss.generation)[0]);

  CHECK(0.2 * 1.0 + 0.8 * 2.0 == doctest::Approx(1.8).epsilon(1e-15));
}

TEST_CASE("alpha weights must sum to one") {
  ModelConfig c = micro_config();
  c.alpha_cl = 0.3;
  CHECK_THROWS_AS(micro_model(c), ConfigError);
}

TEST_CASE("generation: cap, determinism, beam(1) equals greedy, no PAD") {
  for (uint64_t seed : {21ull, 22ull, 23ull}) {
    ModelConfig c = micro_config();
    c.seed = seed;
    SummarizerModel model(c, micro_vocab(), {"cardio", "derma"});
    Tensor e_v = random_row(3, seed), e_kn = random_row(4, seed + 1);

    auto greedy = model.generate(kSrc, e_v, e_kn, GenerationStrategy::greedy());
    CHECK(static_cast<int>(greedy.size()) <= c.max_tgt_len);
    for (int tok : greedy) CHECK(tok != Vocabulary::pad_id);

    auto again = model.generate(kSrc, e_v, e_kn, GenerationStrategy::greedy());
    CHECK(greedy == again);

    auto beam1 = model.generate(kSrc, e_v, e_kn, GenerationStrategy::beam(1));
    CHECK(beam1 == greedy);

    auto beam3 = model.generate(kSrc, e_v, e_kn, GenerationStrategy::beam(3));
    CHECK(static_cast<int>(beam3.size()) <= c.max_tgt_len);
  }
}

TEST_CASE("ablation identity: no placement matches zero-gated placement bitwise") {
  ModelConfig with = micro_config();
  ModelConfig without = micro_config();
  without.fusion_placement.clear();

  SummarizerModel placed(with, micro_vocab(), {"cardio", "derma"});
  SummarizerModel plain(without, micro_vocab(), {"cardio", "derma"});

  // shared seed, named init: every non-fusion parameter must coincide
  CHECK(placed.parameter_count() > plain.parameter_count());

  // zero the gates so each fusion site becomes the exact identity
  for (Param* p : placed.parameters()) {
    if (p->name.find("gate_weight") != std::string::npos || p->name.find("gate_bias") != std::string::npos) {
      p->value.fill(0.0);
    }
  }
  Tensor e_v = random_row(3, 31), e_kn = random_row(4, 32);
  Tape t1, t2;
  auto a = placed.encode(t1, kSrc, e_v, e_kn);
  auto b = plain.encode(t2, kSrc, e_v, e_kn);
  CHECK(t1.value(a) == t2.value(b));
}

TEST_CASE("fusion position switch changes the forward pass") {
  ModelConfig a = micro_config();
  ModelConfig b = micro_config();
  b.fusion_position = FusionPosition::after_attention;
  SummarizerModel ma(a, micro_vocab(), {"cardio", "derma"});
  SummarizerModel mb(b, micro_vocab(), {"cardio", "derma"});
  Tensor e_v = random_row(3, 41), e_kn = random_row(4, 42);
  Tape t1, t2;
  CHECK_FALSE(t1.value(ma.encode(t1, kSrc, e_v, e_kn)) == t2.value(mb.encode(t2, kSrc, e_v, e_kn)));
}

TEST_CASE("parameter count is a pure function of the config") {
  CHECK(micro_model().parameter_count() == micro_model().parameter_count());
  ModelConfig moved = micro_config();
  moved.fusion_placement = {{1, {Modality::visual, Modality::knowledge}}};
  CHECK(SummarizerModel(moved, micro_vocab(), {"cardio", "derma"}).parameter_count() ==
        micro_model().parameter_count());
}

TEST_CASE("gradient flows from the generation loss into fusion parameters") {
  SummarizerModel model = micro_model();
  Tensor e_v = random_row(3, 51), e_kn = random_row(4, 52);
  for (Param* p : model.parameters()) p->zero_grad();
  Tape t;
  auto encoded = model.encode(t, kSrc, e_v, e_kn);
  auto dec = model.decode_train(t, kTgt, encoded);
  t.backward(t.cross_entropy(dec, {6, 7, 8, Vocabulary::eos_id}));

  double fusion_grad_norm = 0.0;
  for (Param* p : model.parameters()) {
    if (p->name.find(".fusion.") == std::string::npos) continue;
    for (size_t i = 0; i < p->grad.size(); ++i) fusion_grad_norm += std::abs(p->grad[i]);
  }
  CHECK(fusion_grad_norm > 0.0);
}

TEST_CASE("end-to-end gradient fidelity on the micro config") {
  SummarizerModel model = micro_model();
  Tensor e_v = random_row(3, 61), e_kn = random_row(4, 62);
  auto build = [&](Tape& t) {
    auto encoded = model.encode(t, kSrc, e_v, e_kn);
    auto loss = model.joint_loss(t, model.decode_train(t, kTgt, encoded), kTgt,
                                 model.classify_department(t, encoded), 1);
    return loss.total;
  };
  // eps sits above the double-precision noise floor of this deep composition;
  // the shallow fusion-block check keeps the tighter 1e-5/1e-4 pairing
  auto report =
      check_gradients(build, model.parameters(), {.eps = 1e-4, .tol = 1e-3, .sample_fraction = 0.02, .sample_seed = 5});
  CHECK(report.pass);
  CHECK(report.entries_checked > 50);
}

TEST_CASE("checkpoint round trip is bit-exact and reproduces forwards") {
  SummarizerModel model = micro_model();
  auto path = std::filesystem::temp_directory_path() / "clinsum_test_model.ckpt";
  model.save(path);
  SummarizerModel loaded = SummarizerModel::load(path);
  std::filesystem::remove(path);

  REQUIRE(loaded.parameters().size() == model.parameters().size());
  for (size_t i = 0; i < model.parameters().size(); ++i) {
    CHECK(loaded.parameters()[i]->value == model.parameters()[i]->value);
  }
  CHECK(loaded.vocab() == model.vocab());
  CHECK(loaded.departments() == model.departments());

  Tensor e_v = random_row(3, 71), e_kn = random_row(4, 72);
  Tape t1, t2;
  CHECK(t1.value(model.encode(t1, kSrc, e_v, e_kn)) == t2.value(loaded.encode(t2, kSrc, e_v, e_kn)));
}

TEST_CASE("training on synthetic data reduces loss deterministically") {
  SyntheticBundle bundle = generate_synthetic({.n_dialogues = 8, .n_departments = 2, .seed = 3, .d_v = 4});
  Vocabulary vocab = build_vocab(bundle.corpus, 1);
  auto departments = department_labels(bundle.corpus);

  ModelConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_encoder_layers = 2;
  c.n_decoder_layers = 1;
  c.d_ff = 32;
  c.vocab_size = 0;
  c.n_departments = 2;
  c.fusion_placement = {{1, {Modality::knowledge}}, {2, {Modality::visual}}};
  c.max_src_len = 64;
  c.max_tgt_len = 24;
  c.d_v = 4;
  c.d_kn = 6;
  c.learning_rate = 3e-3;
  c.epochs = 4;
  c.batch_size = 4;
  c.seed = 9;

  EvidenceBuilder evidence(&bundle.visuals, &bundle.store, {}, c.d_v, c.d_kn, c.seed);
  auto run = [&]() {
    SummarizerModel model(c, vocab, departments);
    auto examples = prepare_examples(bundle.corpus, vocab, departments, evidence, c);
    return train_model(model, examples);
  };
  TrainResult first = run();
  REQUIRE(first.log.size() == 4);
  CHECK(first.log.back().loss < first.log.front().loss);

  TrainResult second = run();
  CHECK(first.log[0].loss == second.log[0].loss);  // same seed, machine-identical
  for (const EpochStats& s : first.log) {
    CHECK(s.loss == c.alpha_cl * s.cl + c.alpha_gl * s.gl);
  }
}

TEST_CASE("text-only training converges without fusion") {
  SyntheticBundle bundle = generate_synthetic({.n_dialogues = 6, .n_departments = 2, .seed = 13, .d_v = 4});
  Vocabulary vocab = build_vocab(bundle.corpus, 1);
  auto departments = department_labels(bundle.corpus);

  ModelConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_encoder_layers = 2;
  c.n_decoder_layers = 1;
  c.d_ff = 32;
  c.n_departments = 2;
  c.fusion_placement.clear();
  c.max_src_len = 64;
  c.max_tgt_len = 24;
  c.d_v = 4;
  c.d_kn = 6;
  c.learning_rate = 3e-3;
  c.epochs = 6;
  c.batch_size = 3;
  c.seed = 11;

  EvidenceBuilder evidence(&bundle.visuals, &bundle.store, {}, c.d_v, c.d_kn, c.seed);
  SummarizerModel model(c, vocab, departments);
  auto examples = prepare_examples(bundle.corpus, vocab, departments, evidence, c);
  TrainResult result = train_model(model, examples);
  CHECK(result.log.back().loss < result.log.front().loss);
}

TEST_CASE("train rejects an empty corpus") {
  SummarizerModel model = micro_model();
  CHECK_THROWS_AS(train_model(model, {}), DataError);
}

}  // TEST_SUITE
