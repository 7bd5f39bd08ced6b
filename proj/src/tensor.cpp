#include "clinsum/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

namespace clinsum {

size_t Tensor::check_dims(int rows, int cols) {
  if (rows < 0 || cols < 0) {
    throw ShapeError("tensor dims must be nonnegative: " + shape_str(rows, cols));
  }
  return static_cast<size_t>(rows) * static_cast<size_t>(cols);
}

Tensor::Tensor(int rows, int cols, std::vector<double> values) : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != check_dims(rows, cols)) {
    throw ShapeError("tensor " + shape_str(rows, cols) + " needs " +
                     std::to_string(static_cast<size_t>(rows) * cols) + " values, got " +
                     std::to_string(values_.size()));
  }
}

Tensor::Tensor(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = static_cast<int>(rows.size());
  cols_ = rows_ ? static_cast<int>(rows.begin()->size()) : 0;
  values_.reserve(static_cast<size_t>(rows_) * cols_);
  for (const auto& r : rows) {
    if (static_cast<int>(r.size()) != cols_) throw ShapeError("ragged initializer rows");
    values_.insert(values_.end(), r.begin(), r.end());
  }
}

Tensor Tensor::full(int rows, int cols, double v) {
  Tensor t(rows, cols);
  t.fill(v);
  return t;
}

Tensor Tensor::identity(int n) {
  Tensor t(n, n);
  for (int i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

Tensor Tensor::row(std::initializer_list<double> v) {
  return Tensor(1, static_cast<int>(v.size()), std::vector<double>(v));
}

Tensor Tensor::uniform(int rows, int cols, double lo, double hi, Rng rng) {
  Tensor t(rows, cols);
  for (size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

Param make_weight(const std::string& name, int rows, int cols, const Rng& base) {
  double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  Rng stream = base.named("param/" + name);
  return Param(name, Tensor::uniform(rows, cols, -bound, bound, stream));
}

Param make_zeros(const std::string& name, int rows, int cols) {
  return Param(name, Tensor::zeros(rows, cols));
}

// ---------------------------------------------------------------------------
// Tape

int Tape::push(Node n) {
  if (consumed_) throw ShapeError("tape already consumed by backward");
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

size_t Tape::check_var(Var v) const {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) throw ShapeError("var does not belong to this tape");
  return static_cast<size_t>(v.id);
}

Tape::Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.kind = OpKind::leaf;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  return as_var(push(std::move(n)));
}

Tape::Var Tape::param(Param& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return as_var(it->second);
  Node n;
  n.kind = OpKind::leaf;
  n.value = p.value;
  n.bound = &p;
  int id = push(std::move(n));
  param_nodes_.emplace(&p, id);
  return as_var(id);
}

Tape::Var Tape::matmul(Var a, Var b) {
  if (a.cols != b.rows) {
    throw ShapeError("matmul: inner dimensions differ: " + shape_str(a.rows, a.cols) + " x " +
                     shape_str(b.rows, b.cols));
  }
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  Tensor out(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = av.data() + static_cast<size_t>(i) * a.cols;
    double* orow = out.data() + static_cast<size_t>(i) * b.cols;
    for (int k = 0; k < a.cols; ++k) {
      double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = bv.data() + static_cast<size_t>(k) * b.cols;
      for (int j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
    }
  }
  Node n;
  n.kind = OpKind::matmul;
  n.value = std::move(out);
  n.inputs = {a.id, b.id};
  n.backward = [](Tape& t, int self) {
    const Node& node = t.nodes_[static_cast<size_t>(self)];
    const Tensor& g = t.grads_[static_cast<size_t>(self)];
    const Tensor& av = t.nodes_[static_cast<size_t>(node.inputs[0])].value;
    const Tensor& bv = t.nodes_[static_cast<size_t>(node.inputs[1])].value;
    Tensor& ga = t.grad_buf(node.inputs[0]);
    Tensor& gb = t.grad_buf(node.inputs[1]);
    // dA += dC * B^T
    for (int i = 0; i < av.rows(); ++i) {
      for (int k = 0; k < bv.rows(); ++k) {
        double acc = 0.0;
        for (int j = 0; j < bv.cols(); ++j) acc += g.at(i, j) * bv.at(k, j);
        ga.at(i, k) += acc;
      }
    }
    // dB += A^T * dC
    for (int i = 0; i < av.rows(); ++i) {
      for (int k = 0; k < av.cols(); ++k) {
        double aik = av.at(i, k);
        if (aik == 0.0) continue;
        for (int j = 0; j < bv.cols(); ++j) gb.at(k, j) += aik * g.at(i, j);
      }
    }
  };
  return as_var(push(std::move(n)));
}

Tape::Var Tape::transpose(Var a) {
  const Tensor& av = value(a);
  Tensor out(a.cols, a.rows);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) out.at(j, i) = av.at(i, j);
  Node n;
  n.kind = OpKind::transpose;
  n.value = std::move(out);
  n.inputs = {a.id};
  n.backward = [](Tape& t, int self) {
    const Node& node = t.nodes_[static_cast<size_t>(self)];
    const Tensor& g = t.grads_[static_cast<size_t>(self)];
    Tensor& ga = t.grad_buf(node.inputs[0]);
    for (int i = 0; i < g.rows(); ++i)
      for (int j = 0; j < g.cols(); ++j) ga.at(j, i) += g.at(i, j);
  };
  return as_var(push(std::move(n)));
}

static void require_same_shape(const char* op, Tape::Var a, Tape::Var b) {
  if (a.rows != b.rows || a.cols != b.cols) {
    throw ShapeError(std::string(op) + ": shape mismatch: " + shape_str(a.rows, a.cols) + " vs " +
                     shape_str(b.rows, b.cols));
  }
}

Tape::Var Tape::add(Var a, Var b) {
  require_same_shape("add", a, b);
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  Tensor out(a.rows, a.cols);
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  Node n;
  n.kind = OpKind::add;
  n.value = std::move(out);
  n.inputs = {a.id, b.id};
  n.backward = [](Tape& t, int self) {
    const Node& node = t.nodes_[static_cast<size_t>(self)];
    const Tensor& g = t.grads_[static_cast<size_t>(self)];
    Tensor& ga = t.grad_buf(node.inputs[0]);
    Tensor& gb = t.grad_buf(node.inputs[1]);
    for (size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
      gb[i] += g[i];
    }
  };
  return as_var(push(std::move(n)));
}

Tape::Var Tape::sub(Var a, Var b) {
  require_same_shape("sub", a, b);
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  Tensor out(a.rows, a.cols);
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  Node n;
  n.kind = OpKind::sub;
  n.value = std::move(out);
  n.inputs = {a.id, b.id};
  n.backward = [](Tape& t, int self) {
    const Node& node = t.nodes_[static_cast<size_t>(self)];
    const Tensor& g = t.grads_[static_cast<size_t>(self)];
    Tensor& ga = t.grad_buf(node.inputs[0]);
    Tensor& gb = t.grad_buf(node.inputs[1]);
    for (size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
      gb[i] -= g[i];
    }
  };
  return as_var(push(std::move(n)));
}

Tape::Var Tape::hadamard(Var a, Var b) {
  require_same_shape("mul_hadamard", a, b);
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  Tensor out(a.rows, a.cols);
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  Node n;
  n.kind = OpKind::hadamard;
  n.value = std::move(out);
  n.inputs = {a.id, b.id};
  n.backward = [](Tape& t, int self) {
    const Node& node = t.nodes_[static_cast<size_t>(self)];
    const Tensor& g = t.grads_[static_cast<size_t>(self)];
    const Tensor& av = t.nodes_[static_cast<size_t>(node.inputs[0])].value;
    const Tensor& bv = t.nodes_[static_cast<size_t>(node.inputs[1])].value;
    Tensor& ga = t.grad_buf(node.inputs[0]);
    Tensor& gb = t.grad_buf(node.inputs[1]);
    for (size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i] * bv[i];
      gb[i] += g[i] * av[i];
    }
  };
  return as_var(push(std::move(n)));
}

Tape::Var Tape::relu(Var a) {
  const Tensor& av = value(a);
  Tensor out(a.rows, a.cols);
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
  Node n;
  n.kind = OpKind::relu;
  n.value = std::move(out);
  n.inputs = {a.id};
  n.backward = [](Tape& t, int self) {
    const Node& node = t.nodes_[static_cast<size_t>(self)];
    const Tensor& g = t.grads_[static_cast<size_t>(self)];
    const Tensor& av = t.nodes_[static_cast<size_t>(node.inputs[0])].value;
    Tensor& ga = t.grad_buf(node.inputs[0]);
    for (size_t i = 0; i < g.size(); ++i) ga[i] += av[i] > 0.0 ? g[i] : 0.0;
  };
  return as_var(push(std::move(n)));
}

Tape::Var Tape::sigmoid(Var a) {
  const Tensor& av = value(a);
  Tensor out(a.rows, a.cols);
  for (size_t i = 0; i < out.size(); ++i) {
    double x = av[i];
    out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  Node n;
  n.kind = OpKind::sigmoid;
  n.value = std::move(out);
  n.inputs = {a.id};
  n.backward = [](Tape& t, int self) {
    const Node& node = t.nodes_[static_cast<size_t>(self)];
    const Tensor& g = t.grads_[static_cast<size_t>(self)];
    const Tensor& y = node.value;
    Tensor& ga = t.grad_buf(node.inputs[0]);
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
  };
  return as_var(push(std::move(n)));
}

Tape::Var Tape::affine(Var a, double mul, double shift) {
  const Tensor& av = value(a);
  Tensor out(a.rows, a.cols);
  for (size_t i = 0; i < out.size(); ++i) out[i] = mul * av[i] + shift;
  Node n;
  n.kind = OpKind::affine;
  n.value = std::move(out);
  n.inputs = {a.id};
  n.backward = [mul](Tape& t, int self) {
    const Node& node = t.nodes_[static_cast<size_t>(self)];
    const Tensor& g = t.grads_[static_cast<size_t>(self)];
    Tensor& ga = t.grad_buf(node.inputs[0]);
    for (size_t i = 0; i < g.size(); ++i) ga[i] += mul * g[i];
  };
  return as_var(push(std::move(n)));
}

// Shared softmax adjoint: dx_j = y_j * (g_j - sum_k g_k y_k), per row.
static void softmax_backward_row(const double* y, const double* g, double* gx, int c) {
  double dot = 0.0;
  for (int j = 0; j < c; ++j) dot += g[j] * y[j];
  for (int j = 0; j < c; ++j) gx[j] += y[j] * (g[j] - dot);
}

Tape::Var Tape::softmax_rows(Var a) {
  const Tensor& av = value(a);
  Tensor out(a.rows, a.cols);
  for (int i = 0; i < a.rows; ++i) {
    const double* x = av.data() + static_cast<size_t>(i) * a.cols;
    double* y = out.data() + static_cast<size_t>(i) * a.cols;
    double mx = x[0];
    for (int j = 1; j < a.cols; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (int j = 0; j < a.cols; ++j) {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    }
    for (int j = 0; j < a.cols; ++j) y[j] /= sum;
  }
  Node n;
  n.kind = OpKind::softmax_rows;
  n.value = std::move(out);
  n.inputs = {a.id};
  n.backward = [](Tape& t, int self) {
    const Node& node = t.nodes_[static_cast<size_t>(self)];
    const Tensor& g = t.grads_[static_cast<size_t>(self)];
    const Tensor& y = node.value;
    Tensor& ga = t.grad_buf(node.inputs[0]);
    int c = y.cols();
    for (int i = 0; i < y.rows(); ++i) {
      softmax_backward_row(y.data() + static_cast<size_t>(i) * c, g.data() + static_cast<size_t>(i) * c,
                           ga.data() + static_cast<size_t>(i) * c, c);
    }
  };
  return as_var(push(std::move(n)));
}

Tape::Var Tape::causal_softmax_rows(Var a) {
  if (a.rows != a.cols) {
    throw ShapeError("causal_softmax_rows: scores must be square, got " + shape_str(a.rows, a.cols));
  }
  const Tensor& av = value(a);
  Tensor out(a.rows, a.cols);
  for (int i = 0; i < a.rows; ++i) {
    const double* x = av.data() + static_cast<size_t>(i) * a.cols;
    double* y = out.data() + static_cast<size_t>(i) * a.cols;
    double mx = x[0];
    for (int j = 1; j <= i; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (int j = 0; j <= i; ++j) {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    }
    for (int j = 0; j <= i; ++j) y[j] /= sum;
    // entries above the diagonal stay exactly zero
  }
  Node n;
  n.kind = OpKind::causal_softmax_rows;
  n.value = std::move(out);
  n.inputs = {a.id};
  n.backward = [](Tape& t, int self) {
    const Node& node = t.nodes_[static_cast<size_t>(self)];
    const Tensor& g = t.grads_[static_cast<size_t>(self)];
    const Tensor& y = node.value;
    Tensor& ga = t.grad_buf(node.inputs[0]);
    int c = y.cols();
    for (int i = 0; i < y.rows(); ++i) {
      // masked entries have y == 0, so the shared formula zeroes them
      softmax_backward_row(y.data() + static_cast<size_t>(i) * c, g.data() + static_cast<size_t>(i) * c,
                           ga.data() + static_cast<size_t>(i) * c, c);
    }
  };
  return as_var(push(std::move(n)));
}

Tape::Var Tape::mean_pool_rows(Var a) {
  const Tensor& av = value(a);
  Tensor out(1, a.cols);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) out.at(0, j) += av.at(i, j);
  for (int j = 0; j < a.cols; ++j) out.at(0, j) /= a.rows;
  Node n;
  n.kind = OpKind::mean_pool_rows;
  n.value = std::move(out);
  n.inputs = {a.id};
  n.backward = [](Tape& t, int self) {
    const Node& node = t.nodes_[static_cast<size_t>(self)];
    const Tensor& g = t.grads_[static_cast<size_t>(self)];
    Tensor& ga = t.grad_buf(node.inputs[0]);
    double inv = 1.0 / ga.rows();
    for (int i = 0; i < ga.rows(); ++i)
      for (int j = 0; j < ga.cols(); ++j) ga.at(i, j) += g.at(0, j) * inv;
  };
  return as_var(push(std::move(n)));
}

Tape::Var Tape::sum_all(Var a) {
  const Tensor& av = value(a);
  double acc = 0.0;
  for (size_t i = 0; i < av.size(); ++i) acc += av[i];
  Node n;
  n.kind = OpKind::sum_all;
  n.value = Tensor(1, 1, {acc});
  n.inputs = {a.id};
  n.backward = [](Tape& t, int self) {
    const Node& node = t.nodes_[static_cast<size_t>(self)];
    double g = t.grads_[static_cast<size_t>(self)][0];
    Tensor& ga = t.grad_buf(node.inputs[0]);
    for (size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  };
  return as_var(push(std::move(n)));
}

Tape::Var Tape::broadcast_row(Var a, int rows) {
  if (a.rows != 1) throw ShapeError("broadcast_row expects a 1xc tensor, got " + shape_str(a.rows, a.cols));
  const Tensor& av = value(a);
  Tensor out(rows, a.cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < a.cols; ++j) out.at(i, j) = av.at(0, j);
  Node n;
  n.kind = OpKind::broadcast_row;
  n.value = std::move(out);
  n.inputs = {a.id};
  n.backward = [](Tape& t, int self) {
    const Node& node = t.nodes_[static_cast<size_t>(self)];
    const Tensor& g = t.grads_[static_cast<size_t>(self)];
    Tensor& ga = t.grad_buf(node.inputs[0]);
    for (int i = 0; i < g.rows(); ++i)
      for (int j = 0; j < g.cols(); ++j) ga.at(0, j) += g.at(i, j);
  };
  return as_var(push(std::move(n)));
}

Tape::Var Tape::broadcast_col(Var a, int cols) {
  if (a.cols != 1) throw ShapeError("broadcast_col expects an rx1 tensor, got " + shape_str(a.rows, a.cols));
  const Tensor& av = value(a);
  Tensor out(a.rows, cols);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < cols; ++j) out.at(i, j) = av.at(i, 0);
  Node n;
  n.kind = OpKind::broadcast_col;
  n.value = std::move(out);
  n.inputs = {a.id};
  n.backward = [](Tape& t, int self) {
    const Node& node = t.nodes_[static_cast<size_t>(self)];
    const Tensor& g = t.grads_[static_cast<size_t>(self)];
    Tensor& ga = t.grad_buf(node.inputs[0]);
    for (int i = 0; i < g.rows(); ++i)
      for (int j = 0; j < g.cols(); ++j) ga.at(i, 0) += g.at(i, j);
  };
  return as_var(push(std::move(n)));
}

Tape::Var Tape::concat_cols(Var a, Var b) {
  if (a.rows != b.rows) {
    throw ShapeError("concat_features: row counts differ: " + shape_str(a.rows, a.cols) + " vs " +
                     shape_str(b.rows, b.cols));
  }
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  Tensor out(a.rows, a.cols + b.cols);
  for (int i = 0; i < a.rows; ++i) {
    for (int j = 0; j < a.cols; ++j) out.at(i, j) = av.at(i, j);
    for (int j = 0; j < b.cols; ++j) out.at(i, a.cols + j) = bv.at(i, j);
  }
  Node n;
  n.kind = OpKind::concat_cols;
  n.value = std::move(out);
  n.inputs = {a.id, b.id};
  int split = a.cols;
  n.backward = [split](Tape& t, int self) {
    const Node& node = t.nodes_[static_cast<size_t>(self)];
    const Tensor& g = t.grads_[static_cast<size_t>(self)];
    Tensor& ga = t.grad_buf(node.inputs[0]);
    Tensor& gb = t.grad_buf(node.inputs[1]);
    for (int i = 0; i < g.rows(); ++i) {
      for (int j = 0; j < split; ++j) ga.at(i, j) += g.at(i, j);
      for (int j = split; j < g.cols(); ++j) gb.at(i, j - split) += g.at(i, j);
    }
  };
  return as_var(push(std::move(n)));
}

Tape::Var Tape::slice_cols(Var a, int c0, int c1) {
  if (c0 < 0 || c1 > a.cols || c0 >= c1) {
    throw ShapeError("slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c1) + ") invalid for " +
                     shape_str(a.rows, a.cols));
  }
  const Tensor& av = value(a);
  Tensor out(a.rows, c1 - c0);
  for (int i = 0; i < a.rows; ++i)
    for (int j = c0; j < c1; ++j) out.at(i, j - c0) = av.at(i, j);
  Node n;
  n.kind = OpKind::slice_cols;
  n.value = std::move(out);
  n.inputs = {a.id};
  n.backward = [c0](Tape& t, int self) {
    const Node& node = t.nodes_[static_cast<size_t>(self)];
    const Tensor& g = t.grads_[static_cast<size_t>(self)];
    Tensor& ga = t.grad_buf(node.inputs[0]);
    for (int i = 0; i < g.rows(); ++i)
      for (int j = 0; j < g.cols(); ++j) ga.at(i, c0 + j) += g.at(i, j);
  };
  return as_var(push(std::move(n)));
}

Tape::Var Tape::gather_rows(Var table, std::vector<int> ids) {
  const Tensor& tv = value(table);
  for (int id : ids) {
    if (id < 0 || id >= table.rows) {
      throw ShapeError("gather_rows: row " + std::to_string(id) + " out of range for " +
                       shape_str(table.rows, table.cols));
    }
  }
  Tensor out(static_cast<int>(ids.size()), table.cols);
  for (size_t i = 0; i < ids.size(); ++i)
    for (int j = 0; j < table.cols; ++j) out.at(static_cast<int>(i), j) = tv.at(ids[i], j);
  Node n;
  n.kind = OpKind::gather_rows;
  n.value = std::move(out);
  n.inputs = {table.id};
  n.backward = [ids = std::move(ids)](Tape& t, int self) {
    const Node& node = t.nodes_[static_cast<size_t>(self)];
    const Tensor& g = t.grads_[static_cast<size_t>(self)];
    Tensor& ga = t.grad_buf(node.inputs[0]);
    for (size_t i = 0; i < ids.size(); ++i)
      for (int j = 0; j < g.cols(); ++j) ga.at(ids[i], j) += g.at(static_cast<int>(i), j);
  };
  return as_var(push(std::move(n)));
}

Tape::Var Tape::layer_norm_rows(Var a, double eps) {
  const Tensor& av = value(a);
  Tensor out(a.rows, a.cols);
  std::vector<double> inv_std(static_cast<size_t>(a.rows));
  for (int i = 0; i < a.rows; ++i) {
    double mean = 0.0;
    for (int j = 0; j < a.cols; ++j) mean += av.at(i, j);
    mean /= a.cols;
    double var = 0.0;
    for (int j = 0; j < a.cols; ++j) {
      double d = av.at(i, j) - mean;
      var += d * d;
    }
    var /= a.cols;
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(i)] = is;
    for (int j = 0; j < a.cols; ++j) out.at(i, j) = (av.at(i, j) - mean) * is;
  }
  Node n;
  n.kind = OpKind::layer_norm_rows;
  n.value = std::move(out);
  n.inputs = {a.id};
  n.backward = [inv_std = std::move(inv_std)](Tape& t, int self) {
    const Node& node = t.nodes_[static_cast<size_t>(self)];
    const Tensor& g = t.grads_[static_cast<size_t>(self)];
    const Tensor& y = node.value;
    Tensor& ga = t.grad_buf(node.inputs[0]);
    int c = y.cols();
    for (int i = 0; i < y.rows(); ++i) {
      double gm = 0.0, gym = 0.0;
      for (int j = 0; j < c; ++j) {
        gm += g.at(i, j);
        gym += g.at(i, j) * y.at(i, j);
      }
      gm /= c;
      gym /= c;
      double is = inv_std[static_cast<size_t>(i)];
      for (int j = 0; j < c; ++j) ga.at(i, j) += is * (g.at(i, j) - gm - y.at(i, j) * gym);
    }
  };
  return as_var(push(std::move(n)));
}

Tape::Var Tape::cross_entropy(Var logits, std::vector<int> targets, std::optional<int> ignore_index) {
  if (static_cast<int>(targets.size()) != logits.rows) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     shape_str(logits.rows, logits.cols) + " logits");
  }
  for (int tgt : targets) {
    bool ignored = ignore_index && tgt == *ignore_index;
    if (!ignored && (tgt < 0 || tgt >= logits.cols)) {
      throw ShapeError("cross_entropy: target " + std::to_string(tgt) + " out of range [0," +
                       std::to_string(logits.cols) + ")");
    }
  }
  const Tensor& lv = value(logits);
  Tensor probs(logits.rows, logits.cols);
  double loss = 0.0;
  int active = 0;
  for (int i = 0; i < logits.rows; ++i) {
    const double* x = lv.data() + static_cast<size_t>(i) * logits.cols;
    double* p = probs.data() + static_cast<size_t>(i) * logits.cols;
    double mx = x[0];
    for (int j = 1; j < logits.cols; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (int j = 0; j < logits.cols; ++j) {
      p[j] = std::exp(x[j] - mx);
      sum += p[j];
    }
    for (int j = 0; j < logits.cols; ++j) p[j] /= sum;
    if (ignore_index && targets[static_cast<size_t>(i)] == *ignore_index) continue;
    // -log softmax via log-sum-exp, not log(p), for stability
    loss += std::log(sum) + mx - x[targets[static_cast<size_t>(i)]];
    ++active;
  }
  loss = active > 0 ? loss / active : 0.0;
  Node n;
  n.kind = OpKind::cross_entropy;
  n.value = Tensor(1, 1, {loss});
  n.inputs = {logits.id};
  n.backward = [targets = std::move(targets), ignore_index, probs = std::move(probs), active](Tape& t, int self) {
    if (active == 0) return;
    const Node& node = t.nodes_[static_cast<size_t>(self)];
    double g = t.grads_[static_cast<size_t>(self)][0] / active;
    Tensor& ga = t.grad_buf(node.inputs[0]);
    for (int i = 0; i < probs.rows(); ++i) {
      int tgt = targets[static_cast<size_t>(i)];
      if (ignore_index && tgt == *ignore_index) continue;
      for (int j = 0; j < probs.cols(); ++j) ga.at(i, j) += g * (probs.at(i, j) - (j == tgt ? 1.0 : 0.0));
    }
  };
  return as_var(push(std::move(n)));
}

void Tape::backward(Var loss) {
  size_t root = check_var(loss);
  if (consumed_) throw ShapeError("backward: tape already consumed");
  if (loss.rows != 1 || loss.cols != 1) {
    throw ShapeError("backward: loss must be 1x1, got " + shape_str(loss.rows, loss.cols));
  }
  consumed_ = true;
  grads_.clear();
  for (const Node& n : nodes_) grads_.emplace_back(n.value.rows(), n.value.cols());
  grads_[root][0] = 1.0;
  for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (corrupt_factor_ != 1.0 && n.kind == corrupt_kind_) {
      Tensor& g = grads_[static_cast<size_t>(id)];
      for (size_t i = 0; i < g.size(); ++i) g[i] *= corrupt_factor_;
    }
    if (n.backward) n.backward(*this, id);
  }
  for (auto& [p, id] : param_nodes_) {
    const Tensor& g = grads_[static_cast<size_t>(id)];
    for (size_t i = 0; i < g.size(); ++i) p->grad[i] += g[i];
  }
}

const Tensor& Tape::grad(Var v) const {
  size_t id = check_var(v);
  if (!consumed_) throw ShapeError("grad: call backward first");
  return grads_[id];
}

GradCheckReport check_gradients(const std::function<Tape::Var(Tape&)>& build_loss,
                                std::span<Param* const> params, const GradCheckOptions& opts) {
  GradCheckReport report;
  if (opts.eps <= 0.0) throw ConfigError("check_gradients: eps must be positive");

  for (Param* p : params) p->zero_grad();
  {
    Tape tape;
    Tape::Var loss = build_loss(tape);
    tape.backward(loss);
  }
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Param* p : params) analytic.push_back(p->grad);

  Rng rng(opts.sample_seed);
  bool all_finite = true;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Param& p = *params[pi];
    std::vector<size_t> entries;
    if (opts.sample_fraction >= 1.0) {
      entries.resize(p.value.size());
      for (size_t i = 0; i < entries.size(); ++i) entries[i] = i;
    } else {
      for (size_t i = 0; i < p.value.size(); ++i) {
        if (rng.uniform() < opts.sample_fraction) entries.push_back(i);
      }
      if (entries.empty() && p.value.size() > 0) {
        entries.push_back(static_cast<size_t>(rng.next_u64() % p.value.size()));
      }
    }
    for (size_t idx : entries) {
      double saved = p.value[idx];
      p.value[idx] = saved + opts.eps;
      double f_plus;
      {
        Tape tape;
        f_plus = tape.value(build_loss(tape))[0];
      }
      p.value[idx] = saved - opts.eps;
      double f_minus;
      {
        Tape tape;
        f_minus = tape.value(build_loss(tape))[0];
      }
      p.value[idx] = saved;
      double numeric = (f_plus - f_minus) / (2.0 * opts.eps);
      double a = analytic[pi][idx];
      if (!std::isfinite(numeric) || !std::isfinite(a)) {
        all_finite = false;
        report.max_rel_err = std::numeric_limits<double>::infinity();
        report.worst_param = p.name;
        continue;
      }
      double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      ++report.entries_checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = p.name;
      }
    }
  }
  report.pass = all_finite && report.max_rel_err < opts.tol;
  return report;
}

}  // namespace clinsum
