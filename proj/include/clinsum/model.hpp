#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "clinsum/common.hpp"
#include "clinsum/corpus.hpp"
#include "clinsum/fusion.hpp"
#include "clinsum/tensor.hpp"

namespace clinsum {

enum class FusionPosition { after_ffn, after_attention };

struct ModelConfig {
  int d_model = 32;
  int n_heads = 2;
  int n_encoder_layers = 6;
  int n_decoder_layers = 2;
  int d_ff = 64;
  int vocab_size = 0;  // 0: adopt the vocabulary size at model construction
  int n_departments = 9;
  // encoder layer index (1-based) -> modalities fused after that layer
  std::map<int, std::set<Modality>> fusion_placement = {{3, {Modality::knowledge}}, {4, {Modality::visual}}};
  int max_src_len = 360;
  int max_tgt_len = 64;
  double alpha_cl = 0.2;
  double alpha_gl = 0.8;
  int d_v = 786;
  int d_kn = 786;
  double learning_rate = 5e-5;
  int epochs = 30;
  int batch_size = 32;
  uint64_t seed = 13;
  TargetField target_field = TargetField::summary;
  GateActivation gate_activation = GateActivation::linear;
  FusionPosition fusion_position = FusionPosition::after_ffn;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct GenerationStrategy {
  enum class Kind { greedy, beam };
  Kind kind = Kind::greedy;
  int beam_width = 1;

  static GenerationStrategy greedy() { return {}; }
  static GenerationStrategy beam(int width) { return {Kind::beam, width}; }
};

// One dialogue ready for the network: token ids plus pooled evidence rows.
struct TrainingExample {
  std::string id;
  std::vector<int> src;
  std::vector<int> tgt;  // BOS ... EOS
  int department = 0;
  Tensor e_v;   // 1 x d_v
  Tensor e_kn;  // 1 x d_kn
};

// Encoder-decoder transformer with fusion adapters at configured layers, a
// department head on the pooled encoder output, and a shared token
// embedding. Pre-norm residual blocks throughout.
class SummarizerModel {
 public:
  SummarizerModel(ModelConfig config, Vocabulary vocab, std::vector<std::string> departments);

  const ModelConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  const std::vector<std::string>& departments() const { return departments_; }

  Tape::Var encode(Tape& t, const std::vector<int>& src_tokens, const Tensor& e_v, const Tensor& e_kn);
  Tape::Var classify_department(Tape& t, Tape::Var encoded);
  // tgt is the full framed target (BOS ... EOS); returns (|tgt|-1) x vocab
  // teacher-forced logits aligned with tgt[1:].
  Tape::Var decode_train(Tape& t, const std::vector<int>& tgt, Tape::Var encoded);

  struct JointLoss {
    Tape::Var total, classification, generation;
  };
  JointLoss joint_loss(Tape& t, Tape::Var dec_logits, const std::vector<int>& tgt, Tape::Var dept_logits,
                       int dept_label);

  // Autoregressive decode; returns generated text token ids (no BOS/EOS,
  // never PAD). Deterministic: argmax ties break toward the lower token id,
  // beam ties toward the lexicographically smaller sequence.
  std::vector<int> generate(const std::vector<int>& src_tokens, const Tensor& e_v, const Tensor& e_kn,
                            const GenerationStrategy& strategy);

  int predict_department(const std::vector<int>& src_tokens, const Tensor& e_v, const Tensor& e_kn);

  const std::vector<Param*>& parameters() { return all_params_; }
  long parameter_count() const;

  void save(const std::filesystem::path& path) const;
  static SummarizerModel load(const std::filesystem::path& path);

 private:
  struct AttentionParams {
    Param query, key, value, output;
  };
  struct LayerNormParams {
    Param gain, bias;
  };
  struct EncoderLayer {
    LayerNormParams ln_attn, ln_ffn;
    AttentionParams attn;
    Param ff_in_w, ff_in_b, ff_out_w, ff_out_b;
  };
  struct DecoderLayer {
    LayerNormParams ln_self, ln_cross, ln_ffn;
    AttentionParams self_attn, cross_attn;
    Param ff_in_w, ff_in_b, ff_out_w, ff_out_b;
  };

  Tape::Var embed(Tape& t, const std::vector<int>& ids);
  Tape::Var layer_norm(Tape& t, Tape::Var x, LayerNormParams& p);
  Tape::Var multi_head_attention(Tape& t, Tape::Var q_in, Tape::Var kv_in, AttentionParams& p, bool causal);
  Tape::Var feed_forward(Tape& t, Tape::Var x, Param& w1, Param& b1, Param& w2, Param& b2);
  Tape::Var decoder_logits(Tape& t, const std::vector<int>& decoder_input, Tape::Var encoded);
  std::vector<double> next_token_log_probs(Tape& t, const std::vector<int>& prefix, Tape::Var encoded);
  void register_params();

  ModelConfig config_;
  Vocabulary vocab_;
  std::vector<std::string> departments_;
  Tensor positional_;

  Param token_embedding_;
  std::vector<EncoderLayer> encoder_;
  LayerNormParams encoder_final_ln_;
  std::map<int, FusionSiteParams> fusion_sites_;
  std::vector<DecoderLayer> decoder_;
  LayerNormParams decoder_final_ln_;
  Param dept_hidden_w_, dept_hidden_b_, dept_out_w_, dept_out_b_;
  Param out_proj_w_, out_proj_b_;
  std::vector<Param*> all_params_;
};

class AdamOptimizer {
 public:
  explicit AdamOptimizer(std::vector<Param*> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
                         double eps = 1e-8);
  void zero_grad();
  void step();

 private:
  std::vector<Param*> params_;
  std::vector<Tensor> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;  // always alpha_cl*cl + alpha_gl*gl of the means below
  double cl = 0.0;
  double gl = 0.0;
  double dept_accuracy = 0.0;
  double val_rouge_l = -1.0;  // -1 when no validation hook ran
};

struct TrainOptions {
  // overrides config.epochs when >= 0 (the synthetic overfit run caps lower)
  int epochs = -1;
  // per-epoch checkpointing: writes "last.ckpt" each epoch and "best.ckpt"
  // whenever val improves (or loss improves when no validation hook is set)
  std::optional<std::filesystem::path> checkpoint_dir;
  std::function<double(SummarizerModel&, int)> val_metric;
  std::function<void(const EpochStats&)> on_epoch;
  // early exit hook for bounded-budget runs; checked after each epoch
  std::function<bool(SummarizerModel&, const EpochStats&)> stop_when;
};

struct TrainResult {
  std::vector<EpochStats> log;
  int best_epoch = -1;
  double best_score = 0.0;
};

// Adam with gradient accumulation across config.batch_size dialogues per
// step; epoch order shuffled by the seeded generator.
TrainResult train_model(SummarizerModel& model, const std::vector<TrainingExample>& examples,
                        const TrainOptions& opts = {});

}  // namespace clinsum
