#include "clinsum/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace clinsum {

void ModelConfig::validate() const {
  if (d_model < 1 || d_ff < 1 || n_encoder_layers < 1 || n_decoder_layers < 1) {
    throw ConfigError("model dims and layer counts must be >= 1");
  }
  if (n_heads < 1 || d_model % n_heads != 0) {
    throw ConfigError("n_heads must divide d_model (" + std::to_string(n_heads) + " vs " +
                      std::to_string(d_model) + ")");
  }
  if (std::abs(alpha_cl + alpha_gl - 1.0) > 1e-12) {
    throw ConfigError("alpha_cl + alpha_gl must equal 1");
  }
  for (const auto& [layer, modalities] : fusion_placement) {
    if (layer < 1 || layer > n_encoder_layers) {
      throw ConfigError("fusion layer " + std::to_string(layer) + " outside [1," +
                        std::to_string(n_encoder_layers) + "]");
    }
    if (modalities.empty()) throw ConfigError("fusion layer " + std::to_string(layer) + " has no modalities");
  }
  if (max_src_len < 1 || max_tgt_len < 2) throw ConfigError("sequence caps too small");
  if (n_departments < 1) throw ConfigError("n_departments must be >= 1");
  if (d_v < 1 || d_kn < 1) throw ConfigError("evidence widths must be >= 1");
  if (batch_size < 1 || epochs < 0) throw ConfigError("batch_size must be >= 1 and epochs >= 0");
  if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  nlohmann::json placement = nlohmann::json::object();
  for (const auto& [layer, modalities] : c.fusion_placement) {
    nlohmann::json names = nlohmann::json::array();
    for (Modality m : modalities) names.push_back(modality_name(m));
    placement[std::to_string(layer)] = names;
  }
  j = nlohmann::json{{"d_model", c.d_model},
                     {"n_heads", c.n_heads},
                     {"n_encoder_layers", c.n_encoder_layers},
                     {"n_decoder_layers", c.n_decoder_layers},
                     {"d_ff", c.d_ff},
                     {"vocab_size", c.vocab_size},
                     {"n_departments", c.n_departments},
                     {"fusion_placement", placement},
                     {"max_src_len", c.max_src_len},
                     {"max_tgt_len", c.max_tgt_len},
                     {"alpha_cl", c.alpha_cl},
                     {"alpha_gl", c.alpha_gl},
                     {"d_v", c.d_v},
                     {"d_kn", c.d_kn},
                     {"learning_rate", c.learning_rate},
                     {"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"seed", c.seed},
                     {"target_field", target_field_name(c.target_field)},
                     {"gate_activation", c.gate_activation == GateActivation::linear ? "linear" : "sigmoid"},
                     {"fusion_position",
                      c.fusion_position == FusionPosition::after_ffn ? "after_ffn" : "after_attention"}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig defaults;
  c.d_model = j.value("d_model", defaults.d_model);
  c.n_heads = j.value("n_heads", defaults.n_heads);
  c.n_encoder_layers = j.value("n_encoder_layers", defaults.n_encoder_layers);
  c.n_decoder_layers = j.value("n_decoder_layers", defaults.n_decoder_layers);
  c.d_ff = j.value("d_ff", defaults.d_ff);
  c.vocab_size = j.value("vocab_size", defaults.vocab_size);
  c.n_departments = j.value("n_departments", defaults.n_departments);
  if (j.contains("fusion_placement")) {
    c.fusion_placement.clear();
    for (auto it = j.at("fusion_placement").begin(); it != j.at("fusion_placement").end(); ++it) {
      std::set<Modality> modalities;
      for (const auto& name : it.value()) modalities.insert(modality_from(name.get<std::string>()));
      c.fusion_placement[std::stoi(it.key())] = std::move(modalities);
    }
  }
  c.max_src_len = j.value("max_src_len", defaults.max_src_len);
  c.max_tgt_len = j.value("max_tgt_len", defaults.max_tgt_len);
  c.alpha_cl = j.value("alpha_cl", defaults.alpha_cl);
  c.alpha_gl = j.value("alpha_gl", defaults.alpha_gl);
  c.d_v = j.value("d_v", defaults.d_v);
  c.d_kn = j.value("d_kn", defaults.d_kn);
  c.learning_rate = j.value("learning_rate", defaults.learning_rate);
  c.epochs = j.value("epochs", defaults.epochs);
  c.batch_size = j.value("batch_size", defaults.batch_size);
  c.seed = j.value("seed", defaults.seed);
  c.target_field = target_field_from(j.value("target_field", std::string("summary")));
  std::string gate = j.value("gate_activation", std::string("linear"));
  if (gate != "linear" && gate != "sigmoid") throw ConfigError("gate_activation must be linear or sigmoid");
  c.gate_activation = gate == "linear" ? GateActivation::linear : GateActivation::sigmoid;
  std::string pos = j.value("fusion_position", std::string("after_ffn"));
  if (pos != "after_ffn" && pos != "after_attention") {
    throw ConfigError("fusion_position must be after_ffn or after_attention");
  }
  c.fusion_position = pos == "after_ffn" ? FusionPosition::after_ffn : FusionPosition::after_attention;
}

namespace {

Tensor sinusoidal_table(int max_len, int d) {
  Tensor table(max_len, d);
  for (int p = 0; p < max_len; ++p) {
    for (int i = 0; i < d; i += 2) {
      double rate = std::pow(10000.0, static_cast<double>(i) / d);
      table.at(p, i) = std::sin(p / rate);
      if (i + 1 < d) table.at(p, i + 1) = std::cos(p / rate);
    }
  }
  return table;
}

}  // namespace

SummarizerModel::SummarizerModel(ModelConfig config, Vocabulary vocab, std::vector<std::string> departments)
    : config_(std::move(config)), vocab_(std::move(vocab)), departments_(std::move(departments)) {
  if (config_.vocab_size == 0) config_.vocab_size = vocab_.size();
  config_.validate();
  if (config_.vocab_size != vocab_.size()) {
    throw ConfigError("config vocab_size " + std::to_string(config_.vocab_size) + " != vocabulary size " +
                      std::to_string(vocab_.size()));
  }
  if (static_cast<int>(departments_.size()) != config_.n_departments) {
    throw ConfigError("config n_departments " + std::to_string(config_.n_departments) + " != label count " +
                      std::to_string(departments_.size()));
  }

  int d = config_.d_model;
  positional_ = sinusoidal_table(std::max(config_.max_src_len, config_.max_tgt_len), d);
  Rng base(config_.seed);

  token_embedding_ = make_weight("token_embedding", config_.vocab_size, d, base);

  auto make_attention = [&](const std::string& prefix) {
    AttentionParams p;
    p.query = make_weight(prefix + ".query", d, d, base);
    p.key = make_weight(prefix + ".key", d, d, base);
    p.value = make_weight(prefix + ".value", d, d, base);
    p.output = make_weight(prefix + ".output", d, d, base);
    return p;
  };
  auto make_ln = [&](const std::string& prefix) {
    LayerNormParams p;
    p.gain = Param(prefix + ".gain", Tensor::full(1, d, 1.0));
    p.bias = make_zeros(prefix + ".bias", 1, d);
    return p;
  };

  for (int i = 1; i <= config_.n_encoder_layers; ++i) {
    std::string prefix = "enc.l" + std::to_string(i);
    EncoderLayer layer;
    layer.ln_attn = make_ln(prefix + ".ln_attn");
    layer.attn = make_attention(prefix + ".attn");
    layer.ln_ffn = make_ln(prefix + ".ln_ffn");
    layer.ff_in_w = make_weight(prefix + ".ff_in.weight", d, config_.d_ff, base);
    layer.ff_in_b = make_zeros(prefix + ".ff_in.bias", 1, config_.d_ff);
    layer.ff_out_w = make_weight(prefix + ".ff_out.weight", config_.d_ff, d, base);
    layer.ff_out_b = make_zeros(prefix + ".ff_out.bias", 1, d);
    encoder_.push_back(std::move(layer));
  }
  encoder_final_ln_ = make_ln("enc.final_ln");

  for (const auto& [layer, modalities] : config_.fusion_placement) {
    std::map<Modality, int> widths;
    for (Modality m : modalities) widths[m] = m == Modality::visual ? config_.d_v : config_.d_kn;
    fusion_sites_.emplace(layer,
                          FusionSiteParams("enc.l" + std::to_string(layer) + ".fusion", d, widths, base));
  }

  for (int i = 1; i <= config_.n_decoder_layers; ++i) {
    std::string prefix = "dec.l" + std::to_string(i);
    DecoderLayer layer;
    layer.ln_self = make_ln(prefix + ".ln_self");
    layer.self_attn = make_attention(prefix + ".self");
    layer.ln_cross = make_ln(prefix + ".ln_cross");
    layer.cross_attn = make_attention(prefix + ".cross");
    layer.ln_ffn = make_ln(prefix + ".ln_ffn");
    layer.ff_in_w = make_weight(prefix + ".ff_in.weight", d, config_.d_ff, base);
    layer.ff_in_b = make_zeros(prefix + ".ff_in.bias", 1, config_.d_ff);
    layer.ff_out_w = make_weight(prefix + ".ff_out.weight", config_.d_ff, d, base);
    layer.ff_out_b = make_zeros(prefix + ".ff_out.bias", 1, d);
    decoder_.push_back(std::move(layer));
  }
  decoder_final_ln_ = make_ln("dec.final_ln");

  dept_hidden_w_ = make_weight("dept.hidden.weight", d, d, base);
  dept_hidden_b_ = make_zeros("dept.hidden.bias", 1, d);
  dept_out_w_ = make_weight("dept.output.weight", d, config_.n_departments, base);
  dept_out_b_ = make_zeros("dept.output.bias", 1, config_.n_departments);

  out_proj_w_ = make_weight("out_proj.weight", d, config_.vocab_size, base);
  out_proj_b_ = make_zeros("out_proj.bias", 1, config_.vocab_size);

  register_params();
}

void SummarizerModel::register_params() {
  all_params_.clear();
  all_params_.push_back(&token_embedding_);
  auto add_attention = [&](AttentionParams& p) {
    all_params_.insert(all_params_.end(), {&p.query, &p.key, &p.value, &p.output});
  };
  auto add_ln = [&](LayerNormParams& p) { all_params_.insert(all_params_.end(), {&p.gain, &p.bias}); };
  for (EncoderLayer& l : encoder_) {
    add_ln(l.ln_attn);
    add_attention(l.attn);
    add_ln(l.ln_ffn);
    all_params_.insert(all_params_.end(), {&l.ff_in_w, &l.ff_in_b, &l.ff_out_w, &l.ff_out_b});
  }
  add_ln(encoder_final_ln_);
  for (DecoderLayer& l : decoder_) {
    add_ln(l.ln_self);
    add_attention(l.self_attn);
    add_ln(l.ln_cross);
    add_attention(l.cross_attn);
    add_ln(l.ln_ffn);
    all_params_.insert(all_params_.end(), {&l.ff_in_w, &l.ff_in_b, &l.ff_out_w, &l.ff_out_b});
  }
  add_ln(decoder_final_ln_);
  all_params_.insert(all_params_.end(), {&dept_hidden_w_, &dept_hidden_b_, &dept_out_w_, &dept_out_b_});
  all_params_.insert(all_params_.end(), {&out_proj_w_, &out_proj_b_});
  for (auto& [layer, site] : fusion_sites_) {
    for (Param* p : site.parameters()) all_params_.push_back(p);
  }
}

long SummarizerModel::parameter_count() const {
  long count = 0;
  for (const Param* p : all_params_) count += static_cast<long>(p->value.size());
  return count;
}

Tape::Var SummarizerModel::embed(Tape& t, const std::vector<int>& ids) {
  std::vector<int> safe = ids;
  for (int& id : safe) {
    if (id < 0 || id >= config_.vocab_size) id = Vocabulary::unk_id;
  }
  Tape::Var tokens = t.gather_rows(t.param(token_embedding_), safe);
  Tensor pe(static_cast<int>(safe.size()), config_.d_model);
  for (size_t i = 0; i < safe.size(); ++i) {
    for (int j = 0; j < config_.d_model; ++j) pe.at(static_cast<int>(i), j) = positional_.at(static_cast<int>(i), j);
  }
  return t.add(tokens, t.constant(std::move(pe)));
}

Tape::Var SummarizerModel::layer_norm(Tape& t, Tape::Var x, LayerNormParams& p) {
  Tape::Var normed = t.layer_norm_rows(x);
  normed = t.hadamard(normed, t.broadcast_row(t.param(p.gain), x.rows));
  return t.add(normed, t.broadcast_row(t.param(p.bias), x.rows));
}

Tape::Var SummarizerModel::multi_head_attention(Tape& t, Tape::Var q_in, Tape::Var kv_in, AttentionParams& p,
                                                bool causal) {
  Tape::Var q = t.matmul(q_in, t.param(p.query));
  Tape::Var k = t.matmul(kv_in, t.param(p.key));
  Tape::Var v = t.matmul(kv_in, t.param(p.value));
  int d_head = config_.d_model / config_.n_heads;
  double inv_scale = 1.0 / std::sqrt(static_cast<double>(d_head));
  Tape::Var merged;
  for (int h = 0; h < config_.n_heads; ++h) {
    int c0 = h * d_head, c1 = (h + 1) * d_head;
    Tape::Var scores = t.scale(t.matmul(t.slice_cols(q, c0, c1), t.transpose(t.slice_cols(k, c0, c1))), inv_scale);
    Tape::Var weights = causal ? t.causal_softmax_rows(scores) : t.softmax_rows(scores);
    Tape::Var head = t.matmul(weights, t.slice_cols(v, c0, c1));
    merged = h == 0 ? head : t.concat_cols(merged, head);
  }
  return t.matmul(merged, t.param(p.output));
}

Tape::Var SummarizerModel::feed_forward(Tape& t, Tape::Var x, Param& w1, Param& b1, Param& w2, Param& b2) {
  Tape::Var hidden = t.add(t.matmul(x, t.param(w1)), t.broadcast_row(t.param(b1), x.rows));
  hidden = t.relu(hidden);
  return t.add(t.matmul(hidden, t.param(w2)), t.broadcast_row(t.param(b2), x.rows));
}

Tape::Var SummarizerModel::encode(Tape& t, const std::vector<int>& src_tokens, const Tensor& e_v,
                                  const Tensor& e_kn) {
  if (src_tokens.empty()) throw DataError("encode: empty source");
  if (static_cast<int>(src_tokens.size()) > config_.max_src_len) {
    throw DataError("encode: source length " + std::to_string(src_tokens.size()) + " exceeds max_src_len " +
                    std::to_string(config_.max_src_len));
  }
  if (!fusion_sites_.empty()) {
    if (e_v.rows() != 1 || e_v.cols() != config_.d_v) {
      throw ShapeError("encode: visual evidence must be 1x" + std::to_string(config_.d_v) + ", got " +
                       shape_str(e_v.rows(), e_v.cols()));
    }
    if (e_kn.rows() != 1 || e_kn.cols() != config_.d_kn) {
      throw ShapeError("encode: knowledge evidence must be 1x" + std::to_string(config_.d_kn) + ", got " +
                       shape_str(e_kn.rows(), e_kn.cols()));
    }
  }

  Tape::Var h = embed(t, src_tokens);
  std::map<int, std::vector<std::pair<Modality, Tape::Var>>> site_evidence;
  for (const auto& [layer, modalities] : config_.fusion_placement) {
    for (Modality m : modalities) {
      site_evidence[layer].emplace_back(m, t.constant(m == Modality::visual ? e_v : e_kn));
    }
  }

  for (int i = 1; i <= config_.n_encoder_layers; ++i) {
    EncoderLayer& layer = encoder_[static_cast<size_t>(i - 1)];
    h = t.add(h, multi_head_attention(t, layer_norm(t, h, layer.ln_attn), h, layer.attn, false));
    if (config_.fusion_position == FusionPosition::after_attention && site_evidence.count(i)) {
      h = fusion_forward(t, h, site_evidence.at(i), fusion_sites_.at(i), {config_.gate_activation});
    }
    h = t.add(h, feed_forward(t, layer_norm(t, h, layer.ln_ffn), layer.ff_in_w, layer.ff_in_b, layer.ff_out_w,
                              layer.ff_out_b));
    if (config_.fusion_position == FusionPosition::after_ffn && site_evidence.count(i)) {
      h = fusion_forward(t, h, site_evidence.at(i), fusion_sites_.at(i), {config_.gate_activation});
    }
  }
  return layer_norm(t, h, encoder_final_ln_);
}

Tape::Var SummarizerModel::classify_department(Tape& t, Tape::Var encoded) {
  Tape::Var pooled = t.mean_pool_rows(encoded);
  Tape::Var hidden = t.add(t.matmul(pooled, t.param(dept_hidden_w_)), t.param(dept_hidden_b_));
  hidden = t.relu(hidden);
  return t.add(t.matmul(hidden, t.param(dept_out_w_)), t.param(dept_out_b_));
}

Tape::Var SummarizerModel::decoder_logits(Tape& t, const std::vector<int>& decoder_input, Tape::Var encoded) {
  Tape::Var h = embed(t, decoder_input);
  for (DecoderLayer& layer : decoder_) {
    h = t.add(h, multi_head_attention(t, layer_norm(t, h, layer.ln_self), h, layer.self_attn, true));
    // encoder output enters as key and value; decoder state is the query
    Tape::Var q = layer_norm(t, h, layer.ln_cross);
    Tape::Var q_proj = t.matmul(q, t.param(layer.cross_attn.query));
    Tape::Var k_proj = t.matmul(encoded, t.param(layer.cross_attn.key));
    Tape::Var v_proj = t.matmul(encoded, t.param(layer.cross_attn.value));
    int d_head = config_.d_model / config_.n_heads;
    double inv_scale = 1.0 / std::sqrt(static_cast<double>(d_head));
    Tape::Var merged;
    for (int head = 0; head < config_.n_heads; ++head) {
      int c0 = head * d_head, c1 = (head + 1) * d_head;
      Tape::Var scores =
          t.scale(t.matmul(t.slice_cols(q_proj, c0, c1), t.transpose(t.slice_cols(k_proj, c0, c1))), inv_scale);
      Tape::Var weights = t.softmax_rows(scores);
      Tape::Var attended = t.matmul(weights, t.slice_cols(v_proj, c0, c1));
      merged = head == 0 ? attended : t.concat_cols(merged, attended);
    }
    h = t.add(h, t.matmul(merged, t.param(layer.cross_attn.output)));
    h = t.add(h, feed_forward(t, layer_norm(t, h, layer.ln_ffn), layer.ff_in_w, layer.ff_in_b, layer.ff_out_w,
                              layer.ff_out_b));
  }
  h = layer_norm(t, h, decoder_final_ln_);
  return t.add(t.matmul(h, t.param(out_proj_w_)), t.broadcast_row(t.param(out_proj_b_), h.rows));
}

Tape::Var SummarizerModel::decode_train(Tape& t, const std::vector<int>& tgt, Tape::Var encoded) {
  if (tgt.size() < 2) throw DataError("decode_train: target needs BOS and at least one label");
  if (static_cast<int>(tgt.size()) > config_.max_tgt_len) {
    throw DataError("decode_train: target length " + std::to_string(tgt.size()) + " exceeds max_tgt_len " +
                    std::to_string(config_.max_tgt_len));
  }
  std::vector<int> decoder_input(tgt.begin(), tgt.end() - 1);
  return decoder_logits(t, decoder_input, encoded);
}

SummarizerModel::JointLoss SummarizerModel::joint_loss(Tape& t, Tape::Var dec_logits,
                                                       const std::vector<int>& tgt, Tape::Var dept_logits,
                                                       int dept_label) {
  if (dept_label < 0 || dept_label >= config_.n_departments) {
    throw DataError("joint_loss: department label " + std::to_string(dept_label) + " out of range");
  }
  std::vector<int> labels(tgt.begin() + 1, tgt.end());
  if (static_cast<int>(labels.size()) != dec_logits.rows) {
    throw ShapeError("joint_loss: " + std::to_string(labels.size()) + " labels vs " +
                     std::to_string(dec_logits.rows) + " logit rows");
  }
  JointLoss out;
  out.classification = t.cross_entropy(dept_logits, {dept_label});
  out.generation = t.cross_entropy(dec_logits, labels, Vocabulary::pad_id);
  out.total = t.add(t.scale(out.classification, config_.alpha_cl), t.scale(out.generation, config_.alpha_gl));
  return out;
}

std::vector<double> SummarizerModel::next_token_log_probs(Tape& t, const std::vector<int>& prefix,
                                                          Tape::Var encoded) {
  Tape::Var logits = decoder_logits(t, prefix, encoded);
  const Tensor& values = t.value(logits);
  int v = values.cols();
  int last = values.rows() - 1;
  double mx = values.at(last, 0);
  for (int j = 1; j < v; ++j) mx = std::max(mx, values.at(last, j));
  double sum = 0.0;
  for (int j = 0; j < v; ++j) sum += std::exp(values.at(last, j) - mx);
  double lse = mx + std::log(sum);
  std::vector<double> out(static_cast<size_t>(v));
  for (int j = 0; j < v; ++j) out[static_cast<size_t>(j)] = values.at(last, j) - lse;
  return out;
}

std::vector<int> SummarizerModel::generate(const std::vector<int>& src_tokens, const Tensor& e_v,
                                           const Tensor& e_kn, const GenerationStrategy& strategy) {
  Tape t;
  Tape::Var encoded = encode(t, src_tokens, e_v, e_kn);

  if (strategy.kind == GenerationStrategy::Kind::greedy) {
    std::vector<int> prefix{Vocabulary::bos_id};
    std::vector<int> out;
    while (static_cast<int>(prefix.size()) < config_.max_tgt_len) {
      std::vector<double> logp = next_token_log_probs(t, prefix, encoded);
      int best = -1;
      for (int j = 0; j < static_cast<int>(logp.size()); ++j) {
        if (j == Vocabulary::pad_id) continue;
        if (best < 0 || logp[static_cast<size_t>(j)] > logp[static_cast<size_t>(best)]) best = j;
      }
      if (best == Vocabulary::eos_id) break;
      out.push_back(best);
      prefix.push_back(best);
    }
    return out;
  }

  if (strategy.beam_width < 1) throw ConfigError("beam width must be >= 1");
  struct Hypothesis {
    std::vector<int> prefix;  // BOS + generated (EOS excluded; finished flag instead)
    double logp_sum = 0.0;
    bool finished = false;

    double mean_logp() const {
      size_t generated = prefix.size() - 1 + (finished ? 1 : 0);
      return generated == 0 ? 0.0 : logp_sum / static_cast<double>(generated);
    }
  };
  auto better = [](const Hypothesis& a, const Hypothesis& b) {
    double sa = a.mean_logp(), sb = b.mean_logp();
    if (sa != sb) return sa > sb;
    return a.prefix < b.prefix;
  };

  std::vector<Hypothesis> beam{{{Vocabulary::bos_id}, 0.0, false}};
  while (true) {
    bool all_finished = true;
    for (const Hypothesis& h : beam) all_finished = all_finished && h.finished;
    if (all_finished) break;

    std::vector<Hypothesis> candidates;
    for (const Hypothesis& h : beam) {
      if (h.finished || static_cast<int>(h.prefix.size()) >= config_.max_tgt_len) {
        Hypothesis done = h;
        done.finished = true;
        candidates.push_back(std::move(done));
        continue;
      }
      std::vector<double> logp = next_token_log_probs(t, h.prefix, encoded);
      for (int j = 0; j < static_cast<int>(logp.size()); ++j) {
        if (j == Vocabulary::pad_id) continue;
        Hypothesis next = h;
        next.logp_sum += logp[static_cast<size_t>(j)];
        if (j == Vocabulary::eos_id) {
          next.finished = true;
        } else {
          next.prefix.push_back(j);
        }
        candidates.push_back(std::move(next));
      }
    }
    std::sort(candidates.begin(), candidates.end(), better);
    if (static_cast<int>(candidates.size()) > strategy.beam_width) {
      candidates.resize(static_cast<size_t>(strategy.beam_width));
    }
    beam = std::move(candidates);
  }
  std::sort(beam.begin(), beam.end(), better);
  return {beam.front().prefix.begin() + 1, beam.front().prefix.end()};
}

int SummarizerModel::predict_department(const std::vector<int>& src_tokens, const Tensor& e_v,
                                        const Tensor& e_kn) {
  Tape t;
  Tape::Var logits = classify_department(t, encode(t, src_tokens, e_v, e_kn));
  const Tensor& values = t.value(logits);
  int best = 0;
  for (int j = 1; j < values.cols(); ++j) {
    if (values.at(0, j) > values.at(0, best)) best = j;
  }
  return best;
}

// ---------------------------------------------------------------------------
// checkpoint io: little-endian binary, raw doubles, bit-exact round trip

namespace {

void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof(v)); }
void write_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof(v)); }
void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

uint32_t read_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
uint64_t read_u64(std::istream& is) {
  uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
std::string read_string(std::istream& is) {
  uint32_t len = read_u32(is);
  std::string s(len, '\0');
  is.read(s.data(), static_cast<std::streamsize>(len));
  return s;
}

constexpr char kMagic[4] = {'C', 'L', 'S', 'M'};

}  // namespace

void SummarizerModel::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write checkpoint: " + path.string());
  os.write(kMagic, 4);
  write_u32(os, 1);  // format version
  write_string(os, nlohmann::json(config_).dump());
  write_u32(os, static_cast<uint32_t>(vocab_.tokens().size()));
  for (const std::string& tok : vocab_.tokens()) write_string(os, tok);
  write_u32(os, static_cast<uint32_t>(departments_.size()));
  for (const std::string& label : departments_) write_string(os, label);
  write_u64(os, all_params_.size());
  for (const Param* p : all_params_) {
    write_string(os, p->name);
    write_u32(os, static_cast<uint32_t>(p->value.rows()));
    write_u32(os, static_cast<uint32_t>(p->value.cols()));
    os.write(reinterpret_cast<const char*>(p->value.data()),
             static_cast<std::streamsize>(p->value.size() * sizeof(double)));
  }
  if (!os) throw DataError("checkpoint write failed: " + path.string());
}

SummarizerModel SummarizerModel::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) throw DataError("not a checkpoint file: " + path.string());
  uint32_t version = read_u32(is);
  if (version != 1) throw DataError("unsupported checkpoint version " + std::to_string(version));

  ModelConfig config = nlohmann::json::parse(read_string(is)).get<ModelConfig>();
  uint32_t n_tokens = read_u32(is);
  std::vector<std::string> tokens(n_tokens);
  for (auto& tok : tokens) tok = read_string(is);
  uint32_t n_departments = read_u32(is);
  std::vector<std::string> departments(n_departments);
  for (auto& label : departments) label = read_string(is);

  SummarizerModel model(std::move(config), Vocabulary(std::move(tokens)), std::move(departments));

  std::map<std::string, Param*> by_name;
  for (Param* p : model.all_params_) by_name[p->name] = p;
  uint64_t n_params = read_u64(is);
  if (n_params != model.all_params_.size()) {
    throw DataError("checkpoint holds " + std::to_string(n_params) + " tensors, model expects " +
                    std::to_string(model.all_params_.size()));
  }
  for (uint64_t i = 0; i < n_params; ++i) {
    std::string name = read_string(is);
    int rows = static_cast<int>(read_u32(is));
    int cols = static_cast<int>(read_u32(is));
    auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError("checkpoint tensor '" + name + "' unknown to this config");
    Param& p = *it->second;
    if (p.value.rows() != rows || p.value.cols() != cols) {
      throw DataError("checkpoint tensor '" + name + "' is " + shape_str(rows, cols) + ", model expects " +
                      shape_str(p.value.rows(), p.value.cols()));
    }
    is.read(reinterpret_cast<char*>(p.value.data()),
            static_cast<std::streamsize>(p.value.size() * sizeof(double)));
  }
  if (!is) throw DataError("truncated checkpoint: " + path.string());
  return model;
}

// ---------------------------------------------------------------------------

AdamOptimizer::AdamOptimizer(std::vector<Param*> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (Param* p : params_) {
    m_.emplace_back(p->value.rows(), p->value.cols());
    v_.emplace_back(p->value.rows(), p->value.cols());
  }
}

void AdamOptimizer::zero_grad() {
  for (Param* p : params_) p->zero_grad();
}

void AdamOptimizer::step() {
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Param& p = *params_[i];
    for (size_t k = 0; k < p.value.size(); ++k) {
      double g = p.grad[k];
      m_[i][k] = beta1_ * m_[i][k] + (1.0 - beta1_) * g;
      v_[i][k] = beta2_ * v_[i][k] + (1.0 - beta2_) * g * g;
      double m_hat = m_[i][k] / bc1;
      double v_hat = v_[i][k] / bc2;
      p.value[k] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
    }
  }
}

TrainResult train_model(SummarizerModel& model, const std::vector<TrainingExample>& examples,
                        const TrainOptions& opts) {
  if (examples.empty()) throw DataError("train: empty corpus");
  const ModelConfig& config = model.config();
  int epochs = opts.epochs >= 0 ? opts.epochs : config.epochs;

  AdamOptimizer adam(model.parameters(), config.learning_rate);
  Rng shuffler = Rng(config.seed).named("train/shuffle");
  TrainResult result;

  for (int epoch = 1; epoch <= epochs; ++epoch) {
    std::vector<size_t> order(examples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffler.shuffle(order);

    double cl_sum = 0.0, gl_sum = 0.0;
    long correct = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(config.batch_size)) {
      size_t end = std::min(order.size(), start + static_cast<size_t>(config.batch_size));
      adam.zero_grad();
      double inv_batch = 1.0 / static_cast<double>(end - start);
      for (size_t k = start; k < end; ++k) {
        const TrainingExample& ex = examples[order[k]];
        Tape t;
        Tape::Var encoded = model.encode(t, ex.src, ex.e_v, ex.e_kn);
        Tape::Var dept_logits = model.classify_department(t, encoded);
        Tape::Var dec_logits = model.decode_train(t, ex.tgt, encoded);
        auto loss = model.joint_loss(t, dec_logits, ex.tgt, dept_logits, ex.department);
        cl_sum += t.value(loss.classification)[0];
        gl_sum += t.value(loss.generation)[0];
        const Tensor& dl = t.value(dept_logits);
        int best = 0;
        for (int j = 1; j < dl.cols(); ++j) {
          if (dl.at(0, j) > dl.at(0, best)) best = j;
        }
        correct += best == ex.department;
        t.backward(t.scale(loss.total, inv_batch));
      }
      adam.step();
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.cl = cl_sum / static_cast<double>(examples.size());
    stats.gl = gl_sum / static_cast<double>(examples.size());
    stats.loss = config.alpha_cl * stats.cl + config.alpha_gl * stats.gl;
    stats.dept_accuracy = static_cast<double>(correct) / static_cast<double>(examples.size());
    if (opts.val_metric) stats.val_rouge_l = opts.val_metric(model, epoch);

    if (opts.checkpoint_dir) {
      std::filesystem::create_directories(*opts.checkpoint_dir);
      model.save(*opts.checkpoint_dir / "last.ckpt");
      double score = opts.val_metric ? stats.val_rouge_l : -stats.loss;
      if (result.best_epoch < 0 || score > result.best_score) {
        result.best_epoch = epoch;
        result.best_score = score;
        model.save(*opts.checkpoint_dir / "best.ckpt");
      }
    } else {
      double score = opts.val_metric ? stats.val_rouge_l : -stats.loss;
      if (result.best_epoch < 0 || score > result.best_score) {
        result.best_epoch = epoch;
        result.best_score = score;
      }
    }

    if (opts.on_epoch) opts.on_epoch(stats);
    result.log.push_back(stats);
    if (opts.stop_when && opts.stop_when(model, stats)) break;
  }
  return result;
}

}  // namespace clinsum
