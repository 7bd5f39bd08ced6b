#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "clinsum/common.hpp"
#include "clinsum/tensor.hpp"

namespace clinsum {

enum class Modality { visual, knowledge };

std::string modality_name(Modality m);
Modality modality_from(const std::string& name);

enum class GateActivation { linear, sigmoid };

struct FusionOptions {
  // the compound gates are affine by default; sigmoid is an opt-in variant
  GateActivation gate_activation = GateActivation::linear;
};

// Parameters for one modality attached to a fusion site.
struct ModalityAdapterParams {
  Param evidence_to_key;       // d_m x d
  Param evidence_to_value;     // d_m x d
  Param key_gate_state;        // d x 1
  Param value_gate_state;      // d x 1
  Param key_gate_evidence;     // d x 1
  Param value_gate_evidence;   // d x 1
  Param gate_weight;           // 2d x d
  Param gate_bias;             // 1 x d

  std::vector<Param*> parameters();
};

// All learnable state of one fusion adapter: shared q/k/v projections plus
// one adapter block per attached modality.
struct FusionSiteParams {
  int d = 0;
  Param query_proj, key_proj, value_proj;  // d x d
  std::map<Modality, ModalityAdapterParams> modalities;

  FusionSiteParams() = default;
  FusionSiteParams(const std::string& name_prefix, int d, const std::map<Modality, int>& evidence_widths,
                   const Rng& base);

  std::vector<Param*> parameters();
  // zeroes every compound-gate weight and bias; with the linear gate this
  // makes the whole site an exact identity
  void zero_gates();
};

struct QkvProjection {
  Tape::Var query, key, value;
};

QkvProjection project_qkv(Tape& t, Tape::Var hidden, FusionSiteParams& params);

// Sigmoid mixing weights, one per row: lambda = sigma(K w1 + (E U) w2).
struct MixWeights {
  Tape::Var key_mix, value_mix;  // l x 1, entries strictly in (0,1)
};

MixWeights modality_lambdas(Tape& t, Tape::Var key, Tape::Var value, Tape::Var evidence,
                            ModalityAdapterParams& params);

struct ConditionedKv {
  Tape::Var key, value;  // l x d
};

// Convex mix of the text key/value with the projected evidence row:
// K_hat = (1-lambda) . K + lambda . broadcast(E U_k), likewise for V.
ConditionedKv conditioned_kv(Tape& t, Tape::Var key, Tape::Var value, Tape::Var evidence, MixWeights mix,
                             ModalityAdapterParams& params);

// Single-head scaled dot-product attention over the conditioned pair.
Tape::Var modality_attention(Tape& t, Tape::Var query, Tape::Var key_hat, Tape::Var value_hat);

// H + sum_m gate_m . H_m with gate_m = [H ++ H_m] W_g + b_g.
Tape::Var fuse(Tape& t, Tape::Var hidden, const std::vector<std::pair<Modality, Tape::Var>>& attended,
               FusionSiteParams& params, const FusionOptions& opts = {});

// Full adapter: qkv projection, then per attached modality the mix/condition/
// attend chain, then the gated merge. Differentiable end to end.
Tape::Var fusion_forward(Tape& t, Tape::Var hidden,
                         const std::vector<std::pair<Modality, Tape::Var>>& evidence, FusionSiteParams& params,
                         const FusionOptions& opts = {});

}  // namespace clinsum
