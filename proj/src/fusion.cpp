#include "clinsum/fusion.hpp"

#include <cmath>

namespace clinsum {

std::string modality_name(Modality m) { return m == Modality::visual ? "visual" : "knowledge"; }

Modality modality_from(const std::string& name) {
  if (name == "visual") return Modality::visual;
  if (name == "knowledge") return Modality::knowledge;
  throw ConfigError("unknown modality: '" + name + "'");
}

std::vector<Param*> ModalityAdapterParams::parameters() {
  return {&evidence_to_key, &evidence_to_value, &key_gate_state,    &value_gate_state,
          &key_gate_evidence, &value_gate_evidence, &gate_weight,   &gate_bias};
}

FusionSiteParams::FusionSiteParams(const std::string& name_prefix, int dim,
                                   const std::map<Modality, int>& evidence_widths, const Rng& base)
    : d(dim) {
  if (dim < 1) throw ConfigError("fusion: d must be >= 1");
  query_proj = make_weight(name_prefix + ".query_proj", d, d, base);
  key_proj = make_weight(name_prefix + ".key_proj", d, d, base);
  value_proj = make_weight(name_prefix + ".value_proj", d, d, base);
  for (const auto& [modality, width] : evidence_widths) {
    if (width < 1) throw ConfigError("fusion: evidence width must be >= 1");
    std::string p = name_prefix + "." + modality_name(modality);
    ModalityAdapterParams mp;
    mp.evidence_to_key = make_weight(p + ".evidence_to_key", width, d, base);
    mp.evidence_to_value = make_weight(p + ".evidence_to_value", width, d, base);
    mp.key_gate_state = make_weight(p + ".key_gate_state", d, 1, base);
    mp.value_gate_state = make_weight(p + ".value_gate_state", d, 1, base);
    mp.key_gate_evidence = make_weight(p + ".key_gate_evidence", d, 1, base);
    mp.value_gate_evidence = make_weight(p + ".value_gate_evidence", d, 1, base);
    mp.gate_weight = make_weight(p + ".gate_weight", 2 * d, d, base);
    mp.gate_bias = make_zeros(p + ".gate_bias", 1, d);
    modalities.emplace(modality, std::move(mp));
  }
}

std::vector<Param*> FusionSiteParams::parameters() {
  std::vector<Param*> out{&query_proj, &key_proj, &value_proj};
  for (auto& [modality, mp] : modalities) {
    for (Param* p : mp.parameters()) out.push_back(p);
  }
  return out;
}

void FusionSiteParams::zero_gates() {
  for (auto& [modality, mp] : modalities) {
    mp.gate_weight.value.fill(0.0);
    mp.gate_bias.value.fill(0.0);
  }
}

QkvProjection project_qkv(Tape& t, Tape::Var hidden, FusionSiteParams& params) {
  if (hidden.cols != params.d) {
    throw ShapeError("project_qkv: hidden is " + shape_str(hidden.rows, hidden.cols) + ", params expect d=" +
                     std::to_string(params.d));
  }
  return {t.matmul(hidden, t.param(params.query_proj)), t.matmul(hidden, t.param(params.key_proj)),
          t.matmul(hidden, t.param(params.value_proj))};
}

MixWeights modality_lambdas(Tape& t, Tape::Var key, Tape::Var value, Tape::Var evidence,
                            ModalityAdapterParams& params) {
  auto mix_for = [&](Tape::Var state, Param& state_gate, Param& evidence_proj, Param& evidence_gate) {
    Tape::Var state_term = t.matmul(state, t.param(state_gate));                       // l x 1
    Tape::Var projected = t.matmul(evidence, t.param(evidence_proj));                  // 1 x d
    Tape::Var evidence_term = t.matmul(projected, t.param(evidence_gate));             // 1 x 1
    return t.sigmoid(t.add(state_term, t.broadcast_row(evidence_term, state.rows)));   // l x 1
  };
  return {mix_for(key, params.key_gate_state, params.evidence_to_key, params.key_gate_evidence),
          mix_for(value, params.value_gate_state, params.evidence_to_value, params.value_gate_evidence)};
}

ConditionedKv conditioned_kv(Tape& t, Tape::Var key, Tape::Var value, Tape::Var evidence, MixWeights mix,
                             ModalityAdapterParams& params) {
  auto condition = [&](Tape::Var state, Tape::Var lambda, Param& evidence_proj) {
    Tape::Var projected_rows = t.broadcast_row(t.matmul(evidence, t.param(evidence_proj)), state.rows);
    Tape::Var lambda_cols = t.broadcast_col(lambda, state.cols);
    Tape::Var keep = t.affine(lambda_cols, -1.0, 1.0);  // 1 - lambda
    return t.add(t.hadamard(keep, state), t.hadamard(lambda_cols, projected_rows));
  };
  return {condition(key, mix.key_mix, params.evidence_to_key),
          condition(value, mix.value_mix, params.evidence_to_value)};
}

Tape::Var modality_attention(Tape& t, Tape::Var query, Tape::Var key_hat, Tape::Var value_hat) {
  double inv_scale = 1.0 / std::sqrt(static_cast<double>(key_hat.cols));
  Tape::Var scores = t.scale(t.matmul(query, t.transpose(key_hat)), inv_scale);
  return t.matmul(t.softmax_rows(scores), value_hat);
}

Tape::Var fuse(Tape& t, Tape::Var hidden, const std::vector<std::pair<Modality, Tape::Var>>& attended,
               FusionSiteParams& params, const FusionOptions& opts) {
  Tape::Var out = hidden;
  for (const auto& [modality, h_m] : attended) {
    auto it = params.modalities.find(modality);
    if (it == params.modalities.end()) {
      throw ConfigError("fuse: no parameters for modality '" + modality_name(modality) + "'");
    }
    ModalityAdapterParams& mp = it->second;
    Tape::Var gate = t.matmul(t.concat_cols(hidden, h_m), t.param(mp.gate_weight));
    gate = t.add(gate, t.broadcast_row(t.param(mp.gate_bias), hidden.rows));
    if (opts.gate_activation == GateActivation::sigmoid) gate = t.sigmoid(gate);
    out = t.add(out, t.hadamard(gate, h_m));
  }
  return out;
}

Tape::Var fusion_forward(Tape& t, Tape::Var hidden,
                         const std::vector<std::pair<Modality, Tape::Var>>& evidence, FusionSiteParams& params,
                         const FusionOptions& opts) {
  QkvProjection qkv = project_qkv(t, hidden, params);
  std::vector<std::pair<Modality, Tape::Var>> attended;
  for (const auto& [modality, e] : evidence) {
    auto it = params.modalities.find(modality);
    if (it == params.modalities.end()) {
      throw ConfigError("fusion_forward: no parameters for modality '" + modality_name(modality) + "'");
    }
    ModalityAdapterParams& mp = it->second;
    MixWeights mix = modality_lambdas(t, qkv.key, qkv.value, e, mp);
    ConditionedKv kv = conditioned_kv(t, qkv.key, qkv.value, e, mix, mp);
    attended.emplace_back(modality, modality_attention(t, qkv.query, kv.key, kv.value));
  }
  return fuse(t, hidden, attended, params, opts);
}

}  // namespace clinsum
