#pragma once

#include <deque>
#include <functional>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "clinsum/common.hpp"

namespace clinsum {

// Dense 2-D double-precision matrix, row-major. Immutable by convention once
// it enters a Tape; plain value semantics everywhere else.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int rows, int cols) : rows_(rows), cols_(cols), values_(check_dims(rows, cols), 0.0) {}
  Tensor(int rows, int cols, std::vector<double> values);
  Tensor(std::initializer_list<std::initializer_list<double>> rows);

  static Tensor zeros(int rows, int cols) { return Tensor(rows, cols); }
  static Tensor full(int rows, int cols, double v);
  static Tensor identity(int n);
  static Tensor row(std::initializer_list<double> v);
  static Tensor uniform(int rows, int cols, double lo, double hi, Rng rng);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double& at(int r, int c) { return values_[static_cast<size_t>(r) * cols_ + c]; }
  double at(int r, int c) const { return values_[static_cast<size_t>(r) * cols_ + c]; }
  double& operator[](size_t i) { return values_[i]; }
  double operator[](size_t i) const { return values_[i]; }

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  const std::vector<double>& values() const { return values_; }

  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  bool all_finite() const;
  void fill(double v) { std::fill(values_.begin(), values_.end(), v); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.values_ == b.values_;
  }

 private:
  static size_t check_dims(int rows, int cols);
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> values_;
};

// Named learnable parameter with a gradient buffer. Tape::backward
// accumulates (+=) into grad; the optimizer owns zeroing.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  Param() = default;
  Param(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}

  void zero_grad() { grad.fill(0.0); }
};

// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) with fan_in = rows; used for all
// weight matrices. Values come from a substream named after the parameter,
// so init is independent of construction order.
Param make_weight(const std::string& name, int rows, int cols, const Rng& base);
Param make_zeros(const std::string& name, int rows, int cols);

enum class OpKind {
  leaf,
  matmul,
  transpose,
  add,
  sub,
  hadamard,
  relu,
  sigmoid,
  affine,
  softmax_rows,
  causal_softmax_rows,
  mean_pool_rows,
  sum_all,
  broadcast_row,
  broadcast_col,
  concat_cols,
  slice_cols,
  gather_rows,
  layer_norm_rows,
  cross_entropy,
};

// Reverse-mode tape. Nodes are recorded in topological order; backward
// replays them once, in reverse. Single-owner: a Tape must not be shared
// across threads, though independent tapes may run concurrently.
class Tape {
 public:
  struct Var {
    int id = -1;
    int rows = 0;
    int cols = 0;
    bool valid() const { return id >= 0; }
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  // Registers p.value as a leaf; backward adds the node gradient into p.grad.
  // Repeat registrations of the same Param on one tape return the same node.
  Var param(Param& p);

  Var matmul(Var a, Var b);
  Var transpose(Var a);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var hadamard(Var a, Var b);
  Var relu(Var a);
  Var sigmoid(Var a);
  Var scale(Var a, double c) { return affine(a, c, 0.0); }
  Var affine(Var a, double mul, double shift);
  Var softmax_rows(Var a);
  // Square scores only: row i is a softmax over columns 0..i, exact zeros above.
  Var causal_softmax_rows(Var a);
  Var mean_pool_rows(Var a);
  Var sum_all(Var a);
  Var broadcast_row(Var a, int rows);
  Var broadcast_col(Var a, int cols);
  Var concat_cols(Var a, Var b);
  Var slice_cols(Var a, int c0, int c1);
  Var gather_rows(Var table, std::vector<int> ids);
  Var layer_norm_rows(Var a, double eps = 1e-5);
  Var cross_entropy(Var logits, std::vector<int> targets, std::optional<int> ignore_index = {});

  const Tensor& value(Var v) const { return nodes_[check_var(v)].value; }
  // Runs reverse-mode accumulation from a scalar loss. Throws if the loss is
  // not 1x1 or the tape was already consumed.
  void backward(Var loss);
  // Gradient w.r.t. any node, valid after backward().
  const Tensor& grad(Var v) const;
  bool consumed() const { return consumed_; }
  size_t node_count() const { return nodes_.size(); }

  // Test-only hook: scales the adjoint flowing out of every node of the given
  // kind, to prove gradient checking catches a corrupted backward rule.
  void corrupt_adjoint_for_testing(OpKind kind, double factor) {
    corrupt_kind_ = kind;
    corrupt_factor_ = factor;
  }

 private:
  struct Node {
    OpKind kind = OpKind::leaf;
    Tensor value;
    std::vector<int> inputs;
    std::function<void(Tape&, int)> backward;
    Param* bound = nullptr;
    bool requires_grad = true;
  };

  int push(Node n);
  Var as_var(int id) const {
    return Var{id, nodes_[static_cast<size_t>(id)].value.rows(), nodes_[static_cast<size_t>(id)].value.cols()};
  }
  size_t check_var(Var v) const;
  Tensor& grad_buf(int id) { return grads_[static_cast<size_t>(id)]; }

  // deque keeps value()/grad() references stable as nodes are appended
  std::deque<Node> nodes_;
  std::deque<Tensor> grads_;
  std::unordered_map<Param*, int> param_nodes_;
  bool consumed_ = false;
  OpKind corrupt_kind_ = OpKind::leaf;
  double corrupt_factor_ = 1.0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = false;
  size_t entries_checked = 0;
  std::string worst_param;
};

struct GradCheckOptions {
  double eps = 1e-5;
  double tol = 1e-4;
  // Fraction of entries to test per parameter (at least one each when > 0).
  double sample_fraction = 1.0;
  uint64_t sample_seed = 0;
};

// Central-difference verification of reverse-mode gradients. build_loss must
// deterministically rebuild the whole graph on the given tape from the
// current parameter values (registering each Param via tape.param).
GradCheckReport check_gradients(const std::function<Tape::Var(Tape&)>& build_loss,
                                std::span<Param* const> params, const GradCheckOptions& opts);

}  // namespace clinsum
