#include <doctest.h>

#include <cmath>
#include <vector>

#include "clinsum/fusion.hpp"

using namespace clinsum;

namespace {

Tensor random_tensor(int r, int c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(r, c);
  for (size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// --- independent recomputation oracle: plain loops, no tape -----------------

Tensor mm(const Tensor& a, const Tensor& b) {
  Tensor out(a.rows(), b.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (int k = 0; k < a.cols(); ++k) acc += a.at(i, k) * b.at(k, j);
      out.at(i, j) = acc;
    }
  return out;
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct OracleModality {
  Tensor evidence;  // 1 x d_m
  const ModalityAdapterParams* p = nullptr;
};

// full Eq. 1-6 chain recomputed from raw parameter values
Tensor oracle_fusion(const Tensor& h, FusionSiteParams& params,
                     const std::vector<std::pair<Modality, Tensor>>& evidence) {
  int l = h.rows(), d = h.cols();
  Tensor q = mm(h, params.query_proj.value);
  Tensor k = mm(h, params.key_proj.value);
  Tensor v = mm(h, params.value_proj.value);
  Tensor out = h;
  for (const auto& [modality, e] : evidence) {
    const ModalityAdapterParams& mp = params.modalities.at(modality);
    Tensor eu_k = mm(e, mp.evidence_to_key.value);    // 1 x d
    Tensor eu_v = mm(e, mp.evidence_to_value.value);  // 1 x d
    double ek_term = mm(eu_k, mp.key_gate_evidence.value).at(0, 0);
    double ev_term = mm(eu_v, mp.value_gate_evidence.value).at(0, 0);
    Tensor k_hat(l, d), v_hat(l, d);
    for (int i = 0; i < l; ++i) {
      double lam_k = sig(mm(k, mp.key_gate_state.value).at(i, 0) + ek_term);
      double lam_v = sig(mm(v, mp.value_gate_state.value).at(i, 0) + ev_term);
      for (int j = 0; j < d; ++j) {
        k_hat.at(i, j) = (1.0 - lam_k) * k.at(i, j) + lam_k * eu_k.at(0, j);
        v_hat.at(i, j) = (1.0 - lam_v) * v.at(i, j) + lam_v * eu_v.at(0, j);
      }
    }
    Tensor h_m(l, d);
    double scale = 1.0 / std::sqrt(static_cast<double>(d));
    for (int i = 0; i < l; ++i) {
      std::vector<double> row(static_cast<size_t>(l));
      double mx = -1e300;
      for (int j = 0; j < l; ++j) {
        double s = 0.0;
        for (int c = 0; c < d; ++c) s += q.at(i, c) * k_hat.at(j, c);
        row[static_cast<size_t>(j)] = s * scale;
        mx = std::max(mx, row[static_cast<size_t>(j)]);
      }
      double sum = 0.0;
      for (double& s : row) {
        s = std::exp(s - mx);
        sum += s;
      }
      for (int j = 0; j < l; ++j) {
        for (int c = 0; c < d; ++c) h_m.at(i, c) += row[static_cast<size_t>(j)] / sum * v_hat.at(j, c);
      }
    }
    for (int i = 0; i < l; ++i) {
      for (int j = 0; j < d; ++j) {
        double gate = mp.gate_bias.value.at(0, j);
        for (int c = 0; c < d; ++c) gate += h.at(i, c) * mp.gate_weight.value.at(c, j);
        for (int c = 0; c < d; ++c) gate += h_m.at(i, c) * mp.gate_weight.value.at(d + c, j);
        out.at(i, j) += gate * h_m.at(i, j);
      }
    }
  }
  return out;
}

FusionSiteParams make_params(int d, int d_v, int d_kn, uint64_t seed) {
  return FusionSiteParams("fusion", d, {{Modality::visual, d_v}, {Modality::knowledge, d_kn}}, Rng(seed));
}

}  // namespace

TEST_SUITE("fusion") {

TEST_CASE("project_qkv identity and zero cases") {
  FusionSiteParams params = make_params(3, 2, 2, 1);
  params.query_proj.value = Tensor::identity(3);
  params.key_proj.value = Tensor::identity(3);
  params.value_proj.value = Tensor::identity(3);
  Tape t;
  Rng rng(4);
  auto h = t.constant(random_tensor(4, 3, rng));
  auto qkv = project_qkv(t, h, params);
  CHECK(t.value(qkv.query) == t.value(h));
  CHECK(t.value(qkv.key) == t.value(h));
  CHECK(t.value(qkv.value) == t.value(h));

  auto zero = t.constant(Tensor(2, 3));
  auto z = project_qkv(t, zero, params);
  CHECK(t.value(z.query) == Tensor(2, 3));

  CHECK_THROWS_AS(project_qkv(t, t.constant(Tensor(2, 5)), params), ShapeError);
}

TEST_CASE("project_qkv random instance vs direct matmul") {
  FusionSiteParams params = make_params(4, 2, 2, 9);
  Rng rng(10);
  Tensor h = random_tensor(3, 4, rng);
  Tape t;
  auto qkv = project_qkv(t, t.constant(h), params);
  Tensor expect = mm(h, params.query_proj.value);
  for (size_t i = 0; i < expect.size(); ++i) {
    CHECK(t.value(qkv.query)[i] == doctest::Approx(expect[i]).epsilon(1e-12));
  }
}

TEST_CASE("modality_lambdas zero-weight cases give 0.5") {
  FusionSiteParams params = make_params(4, 3, 3, 2);
  ModalityAdapterParams& mp = params.modalities.at(Modality::visual);

  Rng rng(3);
  Tape t;
  auto key = t.constant(random_tensor(5, 4, rng));
  auto value = t.constant(random_tensor(5, 4, rng));

  SUBCASE("all gate weights zero") {
    mp.key_gate_state.value.fill(0.0);
    mp.value_gate_state.value.fill(0.0);
    mp.key_gate_evidence.value.fill(0.0);
    mp.value_gate_evidence.value.fill(0.0);
    auto mix = modality_lambdas(t, key, value, t.constant(random_tensor(1, 3, rng)), mp);
    for (size_t i = 0; i < t.value(mix.key_mix).size(); ++i) {
      CHECK(t.value(mix.key_mix)[i] == 0.5);
      CHECK(t.value(mix.value_mix)[i] == 0.5);
    }
  }

  SUBCASE("zero evidence and zero state gate") {
    mp.key_gate_state.value.fill(0.0);
    auto mix = modality_lambdas(t, key, value, t.constant(Tensor(1, 3)), mp);
    for (size_t i = 0; i < t.value(mix.key_mix).size(); ++i) CHECK(t.value(mix.key_mix)[i] == 0.5);
  }
}

TEST_CASE("modality_lambdas random instance: open interval and recomputation") {
  FusionSiteParams params = make_params(4, 3, 3, 6);
  ModalityAdapterParams& mp = params.modalities.at(Modality::knowledge);
  Rng rng(7);
  Tensor key = random_tensor(5, 4, rng), value = random_tensor(5, 4, rng), e = random_tensor(1, 3, rng);
  Tape t;
  auto mix = modality_lambdas(t, t.constant(key), t.constant(value), t.constant(e), mp);
  double ek = mm(mm(e, mp.evidence_to_key.value), mp.key_gate_evidence.value).at(0, 0);
  for (int i = 0; i < 5; ++i) {
    double lam = t.value(mix.key_mix).at(i, 0);
    CHECK(lam > 0.0);
    CHECK(lam < 1.0);
    double expect = sig(mm(key, mp.key_gate_state.value).at(i, 0) + ek);
    CHECK(lam == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("conditioned_kv at forced mixing weights") {
  FusionSiteParams params = make_params(4, 3, 3, 11);
  ModalityAdapterParams& mp = params.modalities.at(Modality::visual);
  Rng rng(12);
  Tensor key = random_tensor(5, 4, rng), value = random_tensor(5, 4, rng), e = random_tensor(1, 3, rng);
  Tensor eu_k = mm(e, mp.evidence_to_key.value);

  Tape t;
  auto kv = [&](double lam) {
    MixWeights mix{t.constant(Tensor::full(5, 1, lam)), t.constant(Tensor::full(5, 1, lam))};
    return conditioned_kv(t, t.constant(key), t.constant(value), t.constant(e), mix, mp);
  };

  CHECK(t.value(kv(0.0).key) == key);

  auto all_evidence = kv(1.0);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 4; ++j) CHECK(t.value(all_evidence.key).at(i, j) == doctest::Approx(eu_k.at(0, j)));

  MixWeights half{t.constant(Tensor::full(5, 1, 0.5)), t.constant(Tensor::full(5, 1, 0.5))};
  auto from_zero = conditioned_kv(t, t.constant(Tensor(5, 4)), t.constant(Tensor(5, 4)), t.constant(e), half, mp);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 4; ++j) {
      CHECK(t.value(from_zero.key).at(i, j) == doctest::Approx(0.5 * eu_k.at(0, j)).epsilon(1e-12));
    }
}

TEST_CASE("modality_attention degenerate and uniform cases") {
  Rng rng(14);
  Tape t;

  // single row: the only attention weight is 1
  Tensor v1 = random_tensor(1, 4, rng);
  auto single = modality_attention(t, t.constant(random_tensor(1, 4, rng)), t.constant(random_tensor(1, 4, rng)),
                                   t.constant(v1));
  CHECK(t.value(single) == v1);

  // zero query: uniform weights, each output row is the column mean of V
  Tensor v = random_tensor(3, 4, rng);
  auto uniform = modality_attention(t, t.constant(Tensor(3, 4)), t.constant(random_tensor(3, 4, rng)),
                                    t.constant(v));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) {
      double mean = (v.at(0, j) + v.at(1, j) + v.at(2, j)) / 3.0;
      CHECK(t.value(uniform).at(i, j) == doctest::Approx(mean).epsilon(1e-12));
    }
}

TEST_CASE("fuse identities") {
  FusionSiteParams params = make_params(4, 3, 3, 21);
  Rng rng(22);
  Tensor h = random_tensor(5, 4, rng);
  Tape t;
  auto hv = t.constant(h);

  auto empty = fuse(t, hv, {}, params);
  CHECK(t.value(empty) == h);

  params.zero_gates();
  auto attended = t.constant(random_tensor(5, 4, rng));
  auto gated = fuse(t, hv, {{Modality::visual, attended}, {Modality::knowledge, attended}}, params);
  CHECK(t.value(gated) == h);
}

TEST_CASE("fusion_forward matches the independent oracle") {
  Rng rng(31);
  for (int rep = 0; rep < 5; ++rep) {
    FusionSiteParams params = make_params(8, 6, 7, 100 + static_cast<uint64_t>(rep));
    Tensor h = random_tensor(5, 8, rng);
    std::vector<std::pair<Modality, Tensor>> evidence{{Modality::visual, random_tensor(1, 6, rng)},
                                                      {Modality::knowledge, random_tensor(1, 7, rng)}};
    Tape t;
    std::vector<std::pair<Modality, Tape::Var>> ev;
    for (const auto& [m, e] : evidence) ev.emplace_back(m, t.constant(e));
    const Tensor& got = t.value(fusion_forward(t, t.constant(h), ev, params));
    Tensor expect = oracle_fusion(h, params, evidence);
    REQUIRE(got.rows() == expect.rows());
    for (size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(expect[i]).epsilon(1e-10));
  }
}

TEST_CASE("fusion_forward shape contract and degenerate identity") {
  Rng rng(41);
  for (int l : {1, 5}) {
    for (int d : {4, 8}) {
      FusionSiteParams params("f", d, {{Modality::visual, 3}, {Modality::knowledge, 5}}, Rng(5));
      Tape t;
      std::vector<std::pair<Modality, Tape::Var>> ev{{Modality::visual, t.constant(random_tensor(1, 3, rng))},
                                                     {Modality::knowledge, t.constant(random_tensor(1, 5, rng))}};
      auto out = fusion_forward(t, t.constant(random_tensor(l, d, rng)), ev, params);
      CHECK(out.rows == l);
      CHECK(out.cols == d);
    }
  }

  FusionSiteParams params = make_params(4, 3, 3, 55);
  params.zero_gates();
  Tensor h = random_tensor(3, 4, rng);
  Tape t;
  auto out = fusion_forward(t, t.constant(h), {}, params);
  CHECK(t.value(out) == h);
}

TEST_CASE("sigmoid gate option changes the merge") {
  FusionSiteParams params = make_params(4, 3, 3, 77);
  Rng rng(78);
  Tensor h = random_tensor(4, 4, rng);
  Tensor e = random_tensor(1, 3, rng);
  auto run = [&](GateActivation g) {
    Tape t;
    std::vector<std::pair<Modality, Tape::Var>> ev{{Modality::visual, t.constant(e)}};
    return t.value(fusion_forward(t, t.constant(h), ev, params, {.gate_activation = g}));
  };
  CHECK_FALSE(run(GateActivation::linear) == run(GateActivation::sigmoid));
}

TEST_CASE("permutation equivariance: permuting rows of H permutes the output") {
  FusionSiteParams params = make_params(6, 4, 5, 91);
  Rng rng(92);
  Tensor h = random_tensor(5, 6, rng);
  Tensor e_v = random_tensor(1, 4, rng), e_k = random_tensor(1, 5, rng);
  std::vector<int> perm{3, 0, 4, 1, 2};
  Tensor h_perm(5, 6);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 6; ++j) h_perm.at(i, j) = h.at(perm[static_cast<size_t>(i)], j);

  auto run = [&](const Tensor& input) {
    Tape t;
    std::vector<std::pair<Modality, Tape::Var>> ev{{Modality::visual, t.constant(e_v)},
                                                   {Modality::knowledge, t.constant(e_k)}};
    return t.value(fusion_forward(t, t.constant(input), ev, params));
  };
  Tensor base = run(h);
  Tensor moved = run(h_perm);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 6; ++j) {
      CHECK(moved.at(i, j) == doctest::Approx(base.at(perm[static_cast<size_t>(i)], j)).epsilon(1e-12));
    }
}

TEST_CASE("gradient fidelity across every fusion parameter") {
  FusionSiteParams params = make_params(8, 6, 7, 123);
  Rng rng(124);
  Tensor h = random_tensor(5, 8, rng);
  Tensor e_v = random_tensor(1, 6, rng), e_k = random_tensor(1, 7, rng);
  auto build = [&](Tape& t) {
    std::vector<std::pair<Modality, Tape::Var>> ev{{Modality::visual, t.constant(e_v)},
                                                   {Modality::knowledge, t.constant(e_k)}};
    auto out = fusion_forward(t, t.constant(h), ev, params);
    return t.sum_all(t.hadamard(out, out));
  };
  auto param_ptrs = params.parameters();
  auto report = check_gradients(build, param_ptrs, {.eps = 1e-5, .tol = 1e-4});
  CHECK(report.pass);
  CHECK(report.entries_checked > 500);
}

}  // TEST_SUITE
