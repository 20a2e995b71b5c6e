#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "dail/errors.hpp"
#include "dail/rng.hpp"

// Minimal reverse-mode differentiation over real vectors. A Tape records one forward
// pass; Parameters live outside the tape and receive gradients directly from the ops
// that read them.

namespace dail {

struct Parameter {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
  std::vector<double> grad;
  std::vector<double> adam_m;
  std::vector<double> adam_v;

  Parameter() = default;
  Parameter(std::string id, std::size_t r, std::size_t c)
      : name(std::move(id)), rows(r), cols(c), values(r * c, 0.0), grad(r * c, 0.0),
        adam_m(r * c, 0.0), adam_v(r * c, 0.0) {}

  std::size_t size() const { return values.size(); }
  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

inline void init_uniform(Parameter& p, Rng& rng, double bound) {
  for (double& v : p.values) v = uniform(rng, -bound, bound);
}

inline void init_normal(Parameter& p, Rng& rng, double sigma) {
  for (double& v : p.values) v = sigma * standard_normal(rng);
}

struct Var {
  std::size_t index = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  struct Node {
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    Backward backward;
  };

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) { nodes_.reserve(1024); }

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(std::vector<double> value) { return record(std::move(value), false, nullptr); }

  /// Appends a node. `fn` reads this node's grad and accumulates into its inputs.
  Var record(std::vector<double> value, bool requires_grad, Backward fn) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = grad_enabled_ && requires_grad;
    if (n.requires_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  const std::vector<double>& value(Var v) const { return nodes_[v.index].value; }
  double scalar(Var v) const { return nodes_[v.index].value.at(0); }
  bool requires_grad(Var v) const { return nodes_[v.index].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  std::vector<double>& grad(Var v) { return grad_at(v.index); }
  std::vector<double>& grad_at(std::size_t i) {
    auto& n = nodes_[i];
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
  }
  const std::vector<double>& value_at(std::size_t i) const { return nodes_[i].value; }

  /// Seeds d(root)/d(root) = 1 and walks the tape in exact reverse order.
  void backward(Var root) {
    if (nodes_[root.index].value.size() != 1) throw ShapeError("backward requires a scalar root");
    if (!nodes_[root.index].requires_grad) return;
    grad(root)[0] = 1.0;
    for (std::size_t i = root.index + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
      n.backward(*this, i);
    }
  }

 private:
  bool grad_enabled_;
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Plain (tape-free) numerics shared with the distributional code.

inline double logsumexp(std::span<const double> x) {
  if (x.empty()) throw InvalidArgument("logsumexp of empty input");
  const double m = *std::max_element(x.begin(), x.end());
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

inline std::vector<double> softmax(std::span<const double> x) {
  if (x.empty()) throw InvalidArgument("softmax of empty input");
  const double m = *std::max_element(x.begin(), x.end());
  std::vector<double> p(x.size());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (p[i] = std::exp(x[i] - m));
  for (double& v : p) v /= s;
  return p;
}

inline std::vector<double> log_softmax(std::span<const double> x) {
  const double lse = logsumexp(x);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - lse;
  return out;
}

inline double log_sigmoid(double x) {
  return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// ---------------------------------------------------------------------------
// Differentiable ops.

namespace detail {

inline bool is_sparse(std::span<const double> x) {
  std::size_t nnz = 0;
  for (double v : x) nnz += v != 0.0;
  return nnz * 8 <= x.size();
}

inline void require_size(std::size_t got, std::size_t want, const char* op) {
  if (got != want)
    throw ShapeError(std::string(op) + ": expected length " + std::to_string(want) + ", got " +
                     std::to_string(got));
}

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Map<const RowMajorMatrix> as_matrix(const std::vector<double>& v, std::size_t rows, std::size_t cols) {
  return {v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}

inline Eigen::Map<RowMajorMatrix> as_matrix(std::vector<double>& v, std::size_t rows, std::size_t cols) {
  return {v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}

inline Eigen::Map<const Eigen::VectorXd> as_vector(std::span<const double> v) {
  return {v.data(), static_cast<Eigen::Index>(v.size())};
}

inline Eigen::Map<Eigen::VectorXd> as_vector(std::span<double> v) {
  return {v.data(), static_cast<Eigen::Index>(v.size())};
}

// y += W x (W row-major rows x cols). One-hot style inputs take the column path.
inline void gemv_acc(const Parameter& w, std::span<const double> x, std::span<double> y) {
  if (is_sparse(x)) {
    for (std::size_t c = 0; c < w.cols; ++c) {
      if (x[c] == 0.0) continue;
      for (std::size_t r = 0; r < w.rows; ++r) y[r] += w.values[r * w.cols + c] * x[c];
    }
    return;
  }
  as_vector(y).noalias() += as_matrix(w.values, w.rows, w.cols) * as_vector(x);
}

// dW += dy x^T ; dx += W^T dy (when dx non-empty)
inline void gemv_backward(Parameter& w, std::span<const double> x, std::span<const double> dy,
                          std::span<double> dx) {
  if (is_sparse(x)) {
    for (std::size_t c = 0; c < w.cols; ++c) {
      if (x[c] == 0.0) continue;
      for (std::size_t r = 0; r < w.rows; ++r) w.grad[r * w.cols + c] += dy[r] * x[c];
    }
  } else {
    as_matrix(w.grad, w.rows, w.cols).noalias() += as_vector(dy) * as_vector(x).transpose();
  }
  if (!dx.empty()) as_vector(dx).noalias() += as_matrix(w.values, w.rows, w.cols).transpose() * as_vector(dy);
}

}  // namespace detail

/// W x + b
inline Var dense(Tape& t, Parameter& w, Parameter& b, Var x) {
  const auto& xv = t.value(x);
  detail::require_size(xv.size(), w.cols, "dense");
  detail::require_size(b.size(), w.rows, "dense bias");
  std::vector<double> y(b.values);
  detail::gemv_acc(w, xv, y);
  return t.record(std::move(y), true, [&w, &b, x](Tape& tp, std::size_t self) {
    const auto& dy = tp.grad_at(self);
    for (std::size_t r = 0; r < b.rows; ++r) b.grad[r] += dy[r];
    std::span<double> dx;
    if (tp.requires_grad(x)) dx = tp.grad(x);
    detail::gemv_backward(w, tp.value(x), dy, dx);
  });
}

/// Row `id` of an embedding table (rows x dim).
inline Var embed(Tape& t, Parameter& table, std::size_t id) {
  if (id >= table.rows)
    throw IndexError("embedding id " + std::to_string(id) + " out of range for " + table.name);
  const auto first = table.values.begin() + static_cast<std::ptrdiff_t>(id * table.cols);
  std::vector<double> row(first, first + static_cast<std::ptrdiff_t>(table.cols));
  return t.record(std::move(row), true, [&table, id](Tape& tp, std::size_t self) {
    const auto& dy = tp.grad_at(self);
    for (std::size_t c = 0; c < table.cols; ++c) table.grad[id * table.cols + c] += dy[c];
  });
}

struct RnnCell {
  Parameter* w_h = nullptr;  // d x d
  Parameter* w_x = nullptr;  // d x input
  Parameter* b = nullptr;    // d
};

/// h' = tanh(W_h h + W_x x + b)
inline Var rnn_step(Tape& t, const RnnCell& cell, Var h, Var x) {
  Parameter& wh = *cell.w_h;
  Parameter& wx = *cell.w_x;
  Parameter& b = *cell.b;
  detail::require_size(t.value(h).size(), wh.cols, "rnn_step h");
  detail::require_size(t.value(x).size(), wx.cols, "rnn_step x");
  if (wh.rows != wx.rows || b.size() != wh.rows) throw ShapeError("rnn_step: inconsistent cell");
  std::vector<double> y(b.values);
  detail::gemv_acc(wh, t.value(h), y);
  detail::gemv_acc(wx, t.value(x), y);
  for (double& v : y) v = std::tanh(v);
  return t.record(std::move(y), true, [&wh, &wx, &b, h, x](Tape& tp, std::size_t self) {
    const auto& out = tp.value_at(self);
    const auto& dout = tp.grad_at(self);
    std::vector<double> dz(out.size());
    for (std::size_t i = 0; i < out.size(); ++i) dz[i] = dout[i] * (1.0 - out[i] * out[i]);
    for (std::size_t i = 0; i < dz.size(); ++i) b.grad[i] += dz[i];
    std::span<double> dh, dx;
    if (tp.requires_grad(h)) dh = tp.grad(h);
    if (tp.requires_grad(x)) dx = tp.grad(x);
    detail::gemv_backward(wh, tp.value(h), dz, dh);
    detail::gemv_backward(wx, tp.value(x), dz, dx);
  });
}

inline Var relu(Tape& t, Var x) {
  std::vector<double> y(t.value(x));
  for (double& v : y) v = v > 0.0 ? v : 0.0;
  return t.record(std::move(y), t.requires_grad(x), [x](Tape& tp, std::size_t self) {
    const auto& in = tp.value(x);
    const auto& dy = tp.grad_at(self);
    auto& dx = tp.grad(x);
    for (std::size_t i = 0; i < in.size(); ++i)
      if (in[i] > 0.0) dx[i] += dy[i];
  });
}

inline Var tanh(Tape& t, Var x) {
  std::vector<double> y(t.value(x));
  for (double& v : y) v = std::tanh(v);
  return t.record(std::move(y), t.requires_grad(x), [x](Tape& tp, std::size_t self) {
    const auto& out = tp.value_at(self);
    const auto& dy = tp.grad_at(self);
    auto& dx = tp.grad(x);
    for (std::size_t i = 0; i < out.size(); ++i) dx[i] += dy[i] * (1.0 - out[i] * out[i]);
  });
}

inline Var concat(Tape& t, std::span<const Var> parts) {
  std::vector<double> y;
  bool rg = false;
  for (Var p : parts) {
    const auto& v = t.value(p);
    y.insert(y.end(), v.begin(), v.end());
    rg = rg || t.requires_grad(p);
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.record(std::move(y), rg, [inputs = std::move(inputs)](Tape& tp, std::size_t self) {
    const auto& dy = tp.grad_at(self);
    std::size_t off = 0;
    for (Var p : inputs) {
      const std::size_t n = tp.value(p).size();
      if (tp.requires_grad(p)) {
        auto& dp = tp.grad(p);
        for (std::size_t i = 0; i < n; ++i) dp[i] += dy[off + i];
      }
      off += n;
    }
  });
}

inline Var concat(Tape& t, std::initializer_list<Var> parts) {
  return concat(t, std::span<const Var>(parts.begin(), parts.size()));
}

inline Var slice(Tape& t, Var x, std::size_t offset, std::size_t len) {
  const auto& v = t.value(x);
  if (offset + len > v.size()) throw ShapeError("slice out of range");
  std::vector<double> y(v.begin() + static_cast<std::ptrdiff_t>(offset),
                        v.begin() + static_cast<std::ptrdiff_t>(offset + len));
  return t.record(std::move(y), t.requires_grad(x), [x, offset](Tape& tp, std::size_t self) {
    const auto& dy = tp.grad_at(self);
    auto& dx = tp.grad(x);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[offset + i] += dy[i];
  });
}

inline Var add(Tape& t, Var a, Var b) {
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  detail::require_size(bv.size(), av.size(), "add");
  std::vector<double> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
  return t.record(std::move(y), t.requires_grad(a) || t.requires_grad(b), [a, b](Tape& tp, std::size_t self) {
    const auto dy = tp.grad_at(self);
    for (Var in : {a, b}) {
      if (!tp.requires_grad(in)) continue;
      auto& d = tp.grad(in);
      for (std::size_t i = 0; i < dy.size(); ++i) d[i] += dy[i];
    }
  });
}

inline Var sub(Tape& t, Var a, Var b) {
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  detail::require_size(bv.size(), av.size(), "sub");
  std::vector<double> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] - bv[i];
  return t.record(std::move(y), t.requires_grad(a) || t.requires_grad(b), [a, b](Tape& tp, std::size_t self) {
    const auto dy = tp.grad_at(self);
    if (tp.requires_grad(a)) {
      auto& d = tp.grad(a);
      for (std::size_t i = 0; i < dy.size(); ++i) d[i] += dy[i];
    }
    if (tp.requires_grad(b)) {
      auto& d = tp.grad(b);
      for (std::size_t i = 0; i < dy.size(); ++i) d[i] -= dy[i];
    }
  });
}

inline Var scale(Tape& t, Var x, double c) {
  std::vector<double> y(t.value(x));
  for (double& v : y) v *= c;
  return t.record(std::move(y), t.requires_grad(x), [x, c](Tape& tp, std::size_t self) {
    const auto& dy = tp.grad_at(self);
    auto& dx = tp.grad(x);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += c * dy[i];
  });
}

inline Var square(Tape& t, Var x) {
  std::vector<double> y(t.value(x));
  for (double& v : y) v *= v;
  return t.record(std::move(y), t.requires_grad(x), [x](Tape& tp, std::size_t self) {
    const auto& in = tp.value(x);
    const auto& dy = tp.grad_at(self);
    auto& dx = tp.grad(x);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += 2.0 * in[i] * dy[i];
  });
}

/// Sum of the entries of one vector -> scalar.
inline Var sum(Tape& t, Var x) {
  const auto& v = t.value(x);
  const double s = std::accumulate(v.begin(), v.end(), 0.0);
  return t.record({s}, t.requires_grad(x), [x](Tape& tp, std::size_t self) {
    const double g = tp.grad_at(self)[0];
    for (double& d : tp.grad(x)) d += g;
  });
}

/// Sum of several scalars -> scalar. Empty input yields a constant 0.
inline Var add_scalars(Tape& t, std::span<const Var> xs) {
  double s = 0.0;
  bool rg = false;
  for (Var x : xs) {
    s += t.scalar(x);
    rg = rg || t.requires_grad(x);
  }
  std::vector<Var> inputs(xs.begin(), xs.end());
  return t.record({s}, rg, [inputs = std::move(inputs)](Tape& tp, std::size_t self) {
    const double g = tp.grad_at(self)[0];
    for (Var x : inputs)
      if (tp.requires_grad(x)) tp.grad(x)[0] += g;
  });
}

/// Scalars -> vector.
inline Var stack(Tape& t, std::span<const Var> xs) {
  std::vector<double> y;
  bool rg = false;
  for (Var x : xs) {
    y.push_back(t.scalar(x));
    rg = rg || t.requires_grad(x);
  }
  std::vector<Var> inputs(xs.begin(), xs.end());
  return t.record(std::move(y), rg, [inputs = std::move(inputs)](Tape& tp, std::size_t self) {
    const auto dy = tp.grad_at(self);
    for (std::size_t i = 0; i < inputs.size(); ++i)
      if (tp.requires_grad(inputs[i])) tp.grad(inputs[i])[0] += dy[i];
  });
}

inline Var pick(Tape& t, Var x, std::size_t i) {
  const auto& v = t.value(x);
  if (i >= v.size()) throw IndexError("pick index " + std::to_string(i) + " out of range");
  return t.record({v[i]}, t.requires_grad(x), [x, i](Tape& tp, std::size_t self) {
    tp.grad(x)[i] += tp.grad_at(self)[0];
  });
}

/// <x, c> for a constant vector c.
inline Var dot_const(Tape& t, Var x, std::span<const double> c) {
  const auto& v = t.value(x);
  detail::require_size(c.size(), v.size(), "dot_const");
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) s += v[i] * c[i];
  std::vector<double> coeffs(c.begin(), c.end());
  return t.record({s}, t.requires_grad(x), [x, coeffs = std::move(coeffs)](Tape& tp, std::size_t self) {
    const double g = tp.grad_at(self)[0];
    auto& dx = tp.grad(x);
    for (std::size_t i = 0; i < coeffs.size(); ++i) dx[i] += g * coeffs[i];
  });
}

inline Var softmax(Tape& t, Var x) {
  auto p = softmax(std::span<const double>(t.value(x)));
  return t.record(std::move(p), t.requires_grad(x), [x](Tape& tp, std::size_t self) {
    const auto& p = tp.value_at(self);
    const auto& dy = tp.grad_at(self);
    double inner = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) inner += dy[i] * p[i];
    auto& dx = tp.grad(x);
    for (std::size_t i = 0; i < p.size(); ++i) dx[i] += p[i] * (dy[i] - inner);
  });
}

inline Var logsumexp(Tape& t, Var x) {
  const double lse = logsumexp(std::span<const double>(t.value(x)));
  return t.record({lse}, t.requires_grad(x), [x](Tape& tp, std::size_t self) {
    const double g = tp.grad_at(self)[0];
    const auto p = softmax(std::span<const double>(tp.value(x)));
    auto& dx = tp.grad(x);
    for (std::size_t i = 0; i < p.size(); ++i) dx[i] += g * p[i];
  });
}

/// KL(target || softmax(logits)) with 0 log 0 = 0. Target is a constant.
inline Var kl_div(Tape& t, std::span<const double> target, Var logits) {
  const auto& z = t.value(logits);
  detail::require_size(target.size(), z.size(), "kl_div");
  const auto logp = log_softmax(std::span<const double>(z));
  double kl = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i)
    if (target[i] > 0.0) kl += target[i] * (std::log(target[i]) - logp[i]);
  std::vector<double> tgt(target.begin(), target.end());
  return t.record({kl}, t.requires_grad(logits), [logits, tgt = std::move(tgt)](Tape& tp, std::size_t self) {
    const double g = tp.grad_at(self)[0];
    const auto p = softmax(std::span<const double>(tp.value(logits)));
    const double mass = std::accumulate(tgt.begin(), tgt.end(), 0.0);
    auto& dx = tp.grad(logits);
    for (std::size_t i = 0; i < p.size(); ++i) dx[i] += g * (mass * p[i] - tgt[i]);
  });
}

/// x^T y / (|x| |y|)
inline Var cosine(Tape& t, Var a, Var b) {
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  detail::require_size(bv.size(), av.size(), "cosine");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    ab += av[i] * bv[i];
    aa += av[i] * av[i];
    bb += bv[i] * bv[i];
  }
  if (aa == 0.0 || bb == 0.0) throw DegenerateEmbedding("cosine similarity of a zero-norm vector");
  const double na = std::sqrt(aa), nb = std::sqrt(bb);
  const double c = ab / (na * nb);
  return t.record({c}, t.requires_grad(a) || t.requires_grad(b),
                  [a, b, na, nb, c](Tape& tp, std::size_t self) {
                    const double g = tp.grad_at(self)[0];
                    const auto& av = tp.value(a);
                    const auto& bv = tp.value(b);
                    if (tp.requires_grad(a)) {
                      auto& da = tp.grad(a);
                      for (std::size_t i = 0; i < av.size(); ++i)
                        da[i] += g * (bv[i] / (na * nb) - c * av[i] / (na * na));
                    }
                    if (tp.requires_grad(b)) {
                      auto& db = tp.grad(b);
                      for (std::size_t i = 0; i < bv.size(); ++i)
                        db[i] += g * (av[i] / (na * nb) - c * bv[i] / (nb * nb));
                    }
                  });
}

/// log sigma(x) for a scalar x.
inline Var log_sigmoid(Tape& t, Var x) {
  const double v = t.scalar(x);
  return t.record({log_sigmoid(v)}, t.requires_grad(x), [x, v](Tape& tp, std::size_t self) {
    tp.grad(x)[0] += tp.grad_at(self)[0] * sigmoid(-v);
  });
}

// ---------------------------------------------------------------------------
// Optimisation.

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update at step t (t >= 1), then zeroes the gradients.
inline void adam_step(std::span<Parameter> params, const AdamConfig& cfg, long t) {
  if (t < 1) throw InvalidArgument("adam step index must be >= 1");
  for (const Parameter& p : params)
    for (double g : p.grad)
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + p.name + "'");
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (Parameter& p : params) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = p.grad[i];
      p.adam_m[i] = cfg.beta1 * p.adam_m[i] + (1.0 - cfg.beta1) * g;
      p.adam_v[i] = cfg.beta2 * p.adam_v[i] + (1.0 - cfg.beta2) * g * g;
      const double mhat = p.adam_m[i] / c1;
      const double vhat = p.adam_v[i] / c2;
      p.values[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
      if (!std::isfinite(p.values[i]))
        throw NumericError("non-finite value after update in parameter '" + p.name + "'");
    }
    p.zero_grad();
  }
}

inline void zero_grads(std::span<Parameter> params) {
  for (Parameter& p : params) p.zero_grad();
}

/// Largest per-parameter relative error between the tape gradient and central
/// differences: |analytic - numeric|_2 / max(1e-8, |numeric|_2), maximised over
/// parameter tensors. `loss` must build the same scalar on whatever tape it is given.
inline double grad_check(const std::function<Var(Tape&)>& loss, std::span<Parameter> params,
                         double eps = 1e-5) {
  zero_grads(params);
  {
    Tape tape;
    Var root = loss(tape);
    tape.backward(root);
  }
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (Parameter& p : params) analytic.push_back(p.grad);
  zero_grads(params);

  const auto eval = [&] {
    Tape tape(false);
    return tape.scalar(loss(tape));
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = params[k];
    double diff2 = 0.0, num2 = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p.values[i];
      p.values[i] = saved + eps;
      const double up = eval();
      p.values[i] = saved - eps;
      const double down = eval();
      p.values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double d = analytic[k][i] - numeric;
      diff2 += d * d;
      num2 += numeric * numeric;
    }
    worst = std::max(worst, std::sqrt(diff2) / std::max(1e-8, std::sqrt(num2)));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Checkpoints.
//
// Layout (little-endian):
//   8 bytes  magic "DAILCKPT"
//   u32      format version (1)
//   u32      parameter count
//   per parameter:
//     u32 name length, name bytes (UTF-8, no terminator)
//     u32 rows, u32 cols
//     f64 values[rows * cols], row-major

inline constexpr char kCheckpointMagic[8] = {'D', 'A', 'I', 'L', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian host");

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw SchemaError("truncated checkpoint " + path);
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, std::span<const Parameter> params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::write_pod<std::uint32_t>(out, kCheckpointVersion);
  detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const Parameter& p : params) {
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(p.rows));
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(p.cols));
    out.write(reinterpret_cast<const char*>(p.values.data()),
              static_cast<std::streamsize>(p.values.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("failed writing checkpoint " + path);
}

inline std::vector<Parameter> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw SchemaError("not a checkpoint file: " + path);
  const auto version = detail::read_pod<std::uint32_t>(in, path);
  if (version != kCheckpointVersion)
    throw SchemaError("unsupported checkpoint version " + std::to_string(version));
  const auto count = detail::read_pod<std::uint32_t>(in, path);
  std::vector<Parameter> params;
  params.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = detail::read_pod<std::uint32_t>(in, path);
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw SchemaError("truncated checkpoint " + path);
    const auto rows = detail::read_pod<std::uint32_t>(in, path);
    const auto cols = detail::read_pod<std::uint32_t>(in, path);
    Parameter p(name, rows, cols);
    if (!in.read(reinterpret_cast<char*>(p.values.data()),
                 static_cast<std::streamsize>(p.values.size() * sizeof(double))))
      throw SchemaError("truncated checkpoint " + path);
    params.push_back(std::move(p));
  }
  return params;
}

/// Copies checkpoint values into `params`, which must match by name and shape.
inline void assign_checkpoint(std::span<Parameter> params, const std::vector<Parameter>& loaded) {
  if (loaded.size() != params.size()) throw SchemaError("checkpoint parameter count mismatch");
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Parameter& src = loaded[k];
    Parameter& dst = params[k];
    if (src.name != dst.name || src.rows != dst.rows || src.cols != dst.cols)
      throw SchemaError("checkpoint parameter '" + src.name + "' does not match '" + dst.name + "'");
    dst.values = src.values;
  }
}

}  // namespace dail
