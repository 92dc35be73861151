#pragma once

// Small reverse-mode automatic differentiation over dense double matrices.
//
// Values are computed eagerly when an op is called; each op also records a
// backward rule on the tape. Tape::backward walks the recorded nodes from
// the root down to the first node, so every node is visited once and in
// reverse topological order (parents are always recorded before children).
//
// Sequences are laid out time-major along columns: a batch of B sequences
// of n steps with d features each is a B x (n*d) matrix, step t occupying
// columns [t*d, (t+1)*d). slice_time/concat_time work on that layout.

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "dvae/errors.hpp"
#include "dvae/types.hpp"

namespace dvae::ad {

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Mat& value() const;
  /// Gradient after Tape::backward. Zero-filled if nothing flowed here.
  Mat grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Mat&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Mat value) { return push(std::move(value), false, nullptr); }
  Var variable(Mat value) { return push(std::move(value), true, nullptr); }

  /// Records an op result. `requires_grad` should be true iff any parent
  /// requires a gradient; `backward` receives this node's gradient.
  Var push(Mat value, bool requires_grad, BackwardFn backward) {
    nodes_.push_back(Node{std::move(value), Mat(), requires_grad, false, std::move(backward)});
    return Var(this, nodes_.size() - 1);
  }

  const Mat& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool has_grad(std::size_t id) const { return nodes_[id].has_grad; }
  const Mat& raw_grad(std::size_t id) const { return nodes_[id].grad; }
  std::size_t size() const { return nodes_.size(); }

  template <typename Expr>
  void accumulate(std::size_t id, const Expr& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (!n.has_grad) {
      n.grad = g;
      n.has_grad = true;
    } else {
      n.grad += g;
    }
  }

  /// Back-propagates from a 1x1 root. Gradients from an earlier backward
  /// call are discarded first.
  void backward(const Var& root) {
    if (root.tape() != this) throw ContractError("backward: root belongs to another tape");
    const Mat& v = value(root.id());
    if (v.rows() != 1 || v.cols() != 1)
      throw ContractError("backward: root must be scalar, got " + std::to_string(v.rows()) +
                          "x" + std::to_string(v.cols()));
    for (Node& n : nodes_) {
      n.has_grad = false;
      n.grad.resize(0, 0);
    }
    if (!nodes_[root.id()].requires_grad) return;
    accumulate(root.id(), Mat::Ones(1, 1));
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.has_grad && n.backward) n.backward(*this, n.grad);
    }
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad;
    bool has_grad;
    BackwardFn backward;
  };
  // deque: references to existing nodes survive push_back.
  std::deque<Node> nodes_;
};

inline const Mat& Var::value() const { return tape_->value(id_); }

inline Mat Var::grad() const {
  if (tape_->has_grad(id_)) return tape_->raw_grad(id_);
  return Mat::Zero(rows(), cols());
}

namespace detail {

inline void same_shape(const Var& a, const Var& b, const char* op) {
  if (a.tape() != b.tape()) throw ConfigError(std::string(op) + ": operands on different tapes");
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ConfigError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                      std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                      std::to_string(b.cols()));
}

inline bool any_grad(const Var& a) { return a.tape()->requires_grad(a.id()); }
inline bool any_grad(const Var& a, const Var& b) { return any_grad(a) || any_grad(b); }

// Elementwise unary op whose derivative is expressed through input x and
// output y.
template <typename Fwd, typename Deriv>
Var unary(const Var& a, Fwd fwd, Deriv deriv) {
  Tape& tape = *a.tape();
  Mat y = a.value().unaryExpr(fwd);
  const bool rg = any_grad(a);
  const std::size_t ia = a.id();
  Tape::BackwardFn back;
  if (rg) {
    back = [ia, deriv, iy = tape.size()](Tape& t, const Mat& g) {
      const Mat& x = t.value(ia);
      const Mat& y = t.value(iy);
      t.accumulate(ia, (g.array() * x.binaryExpr(y, deriv).array()).matrix());
    };
  }
  return tape.push(std::move(y), rg, std::move(back));
}

inline double stable_softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) {
  detail::same_shape(a, b, "add");
  const std::size_t ia = a.id(), ib = b.id();
  Tape::BackwardFn back;
  if (detail::any_grad(a, b))
    back = [ia, ib](Tape& t, const Mat& g) {
      t.accumulate(ia, g);
      t.accumulate(ib, g);
    };
  return a.tape()->push(a.value() + b.value(), detail::any_grad(a, b), std::move(back));
}

inline Var sub(const Var& a, const Var& b) {
  detail::same_shape(a, b, "sub");
  const std::size_t ia = a.id(), ib = b.id();
  Tape::BackwardFn back;
  if (detail::any_grad(a, b))
    back = [ia, ib](Tape& t, const Mat& g) {
      t.accumulate(ia, g);
      t.accumulate(ib, -g);
    };
  return a.tape()->push(a.value() - b.value(), detail::any_grad(a, b), std::move(back));
}

/// Elementwise product.
inline Var mul(const Var& a, const Var& b) {
  detail::same_shape(a, b, "mul");
  const std::size_t ia = a.id(), ib = b.id();
  Tape::BackwardFn back;
  if (detail::any_grad(a, b))
    back = [ia, ib](Tape& t, const Mat& g) {
      if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
      if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
    };
  return a.tape()->push(a.value().cwiseProduct(b.value()), detail::any_grad(a, b),
                        std::move(back));
}

inline Var scale(const Var& a, double s) {
  const std::size_t ia = a.id();
  Tape::BackwardFn back;
  if (detail::any_grad(a)) back = [ia, s](Tape& t, const Mat& g) { t.accumulate(ia, s * g); };
  return a.tape()->push(s * a.value(), detail::any_grad(a), std::move(back));
}

inline Var add_scalar(const Var& a, double s) {
  const std::size_t ia = a.id();
  Tape::BackwardFn back;
  if (detail::any_grad(a)) back = [ia](Tape& t, const Mat& g) { t.accumulate(ia, g); };
  return a.tape()->push((a.value().array() + s).matrix(), detail::any_grad(a), std::move(back));
}

inline Var neg(const Var& a) { return scale(a, -1.0); }

inline Var matmul(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw ConfigError("matmul: operands on different tapes");
  if (a.cols() != b.rows())
    throw ConfigError("matmul: inner dimensions differ (" + std::to_string(a.cols()) + " vs " +
                      std::to_string(b.rows()) + ")");
  const std::size_t ia = a.id(), ib = b.id();
  Tape::BackwardFn back;
  if (detail::any_grad(a, b))
    back = [ia, ib](Tape& t, const Mat& g) {
      if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
      if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
    };
  Mat y = a.value() * b.value();
  return a.tape()->push(std::move(y), detail::any_grad(a, b), std::move(back));
}

/// Adds a 1 x c row to every row of a (bias add).
inline Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols())
    throw ConfigError("add_row: expected a 1x" + std::to_string(a.cols()) + " row");
  const std::size_t ia = a.id(), ir = row.id();
  Tape::BackwardFn back;
  if (detail::any_grad(a, row))
    back = [ia, ir](Tape& t, const Mat& g) {
      t.accumulate(ia, g);
      if (t.requires_grad(ir)) t.accumulate(ir, g.colwise().sum());
    };
  Mat y = a.value().rowwise() + row.value().row(0);
  return a.tape()->push(std::move(y), detail::any_grad(a, row), std::move(back));
}

/// Repeats a 1 x c row n times.
inline Var broadcast_rows(const Var& row, Eigen::Index n) {
  if (row.rows() != 1) throw ConfigError("broadcast_rows: input must be a single row");
  const std::size_t ir = row.id();
  Tape::BackwardFn back;
  if (detail::any_grad(row))
    back = [ir](Tape& t, const Mat& g) { t.accumulate(ir, g.colwise().sum()); };
  Mat y = row.value().replicate(n, 1);
  return row.tape()->push(std::move(y), detail::any_grad(row), std::move(back));
}

/// Multiplies column j by the constant s[j] (per-dimension scale).
inline Var scale_cols(const Var& a, const Vec& s) {
  if (s.size() != a.cols()) throw ConfigError("scale_cols: scale length must equal column count");
  const std::size_t ia = a.id();
  Tape::BackwardFn back;
  if (detail::any_grad(a))
    back = [ia, s](Tape& t, const Mat& g) { t.accumulate(ia, g * s.asDiagonal()); };
  Mat y = a.value() * s.asDiagonal();
  return a.tape()->push(std::move(y), detail::any_grad(a), std::move(back));
}

inline Var tanh(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var sigmoid(const Var& a) {
  return detail::unary(
      a, [](double x) { return detail::stable_sigmoid(x); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var softplus(const Var& a) {
  return detail::unary(
      a, [](double x) { return detail::stable_softplus(x); },
      [](double x, double) { return detail::stable_sigmoid(x); });
}

inline Var exp(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Var square(const Var& a) {
  return detail::unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Var sqrt(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

/// max(a, c) elementwise; the gradient flows where a > c.
inline Var clamp_min(const Var& a, double c) {
  return detail::unary(
      a, [c](double x) { return x > c ? x : c; }, [c](double x, double) { return x > c ? 1.0 : 0.0; });
}

inline Var relu(const Var& a) { return clamp_min(a, 0.0); }

inline Var sum(const Var& a) {
  const std::size_t ia = a.id();
  const Eigen::Index r = a.rows(), c = a.cols();
  Tape::BackwardFn back;
  if (detail::any_grad(a))
    back = [ia, r, c](Tape& t, const Mat& g) { t.accumulate(ia, Mat::Constant(r, c, g(0, 0))); };
  return a.tape()->push(Mat::Constant(1, 1, a.value().sum()), detail::any_grad(a),
                        std::move(back));
}

inline Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

/// Sums each row: B x c -> B x 1.
inline Var row_sum(const Var& a) {
  const std::size_t ia = a.id();
  const Eigen::Index c = a.cols();
  Tape::BackwardFn back;
  if (detail::any_grad(a))
    back = [ia, c](Tape& t, const Mat& g) { t.accumulate(ia, g.replicate(1, c)); };
  Mat y = a.value().rowwise().sum();
  return a.tape()->push(std::move(y), detail::any_grad(a), std::move(back));
}

inline Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols())
    throw ConfigError("slice_cols: range out of bounds");
  const std::size_t ia = a.id();
  const Eigen::Index r = a.rows(), c = a.cols();
  Tape::BackwardFn back;
  if (detail::any_grad(a))
    back = [ia, r, c, start, count](Tape& t, const Mat& g) {
      Mat full = Mat::Zero(r, c);
      full.middleCols(start, count) = g;
      t.accumulate(ia, full);
    };
  Mat y = a.value().middleCols(start, count);
  return a.tape()->push(std::move(y), detail::any_grad(a), std::move(back));
}

inline Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows())
    throw ConfigError("slice_rows: range out of bounds");
  const std::size_t ia = a.id();
  const Eigen::Index r = a.rows(), c = a.cols();
  Tape::BackwardFn back;
  if (detail::any_grad(a))
    back = [ia, r, c, start, count](Tape& t, const Mat& g) {
      Mat full = Mat::Zero(r, c);
      full.middleRows(start, count) = g;
      t.accumulate(ia, full);
    };
  Mat y = a.value().middleRows(start, count);
  return a.tape()->push(std::move(y), detail::any_grad(a), std::move(back));
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ConfigError("concat_cols: nothing to concatenate");
  const Eigen::Index r = parts.front().rows();
  Eigen::Index total = 0;
  bool rg = false;
  for (const Var& p : parts) {
    if (p.rows() != r || p.tape() != parts.front().tape())
      throw ConfigError("concat_cols: row counts differ");
    total += p.cols();
    rg = rg || detail::any_grad(p);
  }
  Mat y(r, total);
  std::vector<std::pair<std::size_t, Eigen::Index>> spans;
  Eigen::Index offset = 0;
  for (const Var& p : parts) {
    y.middleCols(offset, p.cols()) = p.value();
    spans.emplace_back(p.id(), p.cols());
    offset += p.cols();
  }
  Tape::BackwardFn back;
  if (rg)
    back = [spans = std::move(spans)](Tape& t, const Mat& g) {
      Eigen::Index off = 0;
      for (const auto& [id, cols] : spans) {
        if (t.requires_grad(id)) t.accumulate(id, g.middleCols(off, cols));
        off += cols;
      }
    };
  return parts.front().tape()->push(std::move(y), rg, std::move(back));
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ConfigError("concat_rows: nothing to concatenate");
  const Eigen::Index c = parts.front().cols();
  Eigen::Index total = 0;
  bool rg = false;
  for (const Var& p : parts) {
    if (p.cols() != c || p.tape() != parts.front().tape())
      throw ConfigError("concat_rows: column counts differ");
    total += p.rows();
    rg = rg || detail::any_grad(p);
  }
  Mat y(total, c);
  std::vector<std::pair<std::size_t, Eigen::Index>> spans;
  Eigen::Index offset = 0;
  for (const Var& p : parts) {
    y.middleRows(offset, p.rows()) = p.value();
    spans.emplace_back(p.id(), p.rows());
    offset += p.rows();
  }
  Tape::BackwardFn back;
  if (rg)
    back = [spans = std::move(spans)](Tape& t, const Mat& g) {
      Eigen::Index off = 0;
      for (const auto& [id, rows] : spans) {
        if (t.requires_grad(id)) t.accumulate(id, g.middleRows(off, rows));
        off += rows;
      }
    };
  return parts.front().tape()->push(std::move(y), rg, std::move(back));
}

/// Step t of a time-major B x (n*d) sequence.
inline Var slice_time(const Var& seq, Eigen::Index t, Eigen::Index d) {
  return slice_cols(seq, t * d, d);
}

/// Steps [t0, t0 + count) of a time-major sequence.
inline Var slice_time(const Var& seq, Eigen::Index t0, Eigen::Index count, Eigen::Index d) {
  return slice_cols(seq, t0 * d, count * d);
}

inline Var concat_time(const std::vector<Var>& steps) { return concat_cols(steps); }

/// Elementwise log N(x; mean, sd^2) for a fixed scalar sd.
inline Var normal_log_density(const Var& x, const Var& mean, double sd) {
  const Var r = scale(sub(x, mean), 1.0 / sd);
  return add_scalar(scale(square(r), -0.5), -std::log(sd) - 0.5 * kLog2Pi);
}

/// Elementwise log N(x; mean, sd^2) with a learned sd.
inline Var normal_log_density(const Var& x, const Var& mean, const Var& sd) {
  const Var r = sub(x, mean);
  const Var quad = mul(square(r), exp(scale(log(sd), -2.0)));
  return add_scalar(sub(scale(quad, -0.5), log(sd)), -0.5 * kLog2Pi);
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check.

using ScalarFn = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  Eigen::Index worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries_checked = 0;
};

/// Compares reverse-mode gradients of f at `params` with central
/// differences of step h. Per entry the error is
/// |analytic - numeric| / (|analytic| + |numeric| + 1e-12); the maximum is
/// reported.
inline GradCheckResult grad_check(const ScalarFn& f, std::vector<Mat> params, double h = 1e-5) {
  std::vector<Mat> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const Mat& p : params) vars.push_back(tape.variable(p));
    const Var out = f(tape, vars);
    tape.backward(out);
    for (const Var& v : vars) analytic.push_back(v.grad());
  }
  auto eval = [&]() {
    Tape tape;
    std::vector<Var> vars;
    for (const Mat& p : params) vars.push_back(tape.constant(p));
    return f(tape, vars).scalar();
  };

  GradCheckResult res;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    for (Eigen::Index i = 0; i < params[pi].size(); ++i) {
      double& x = params[pi].data()[i];
      const double saved = x;
      x = saved + h;
      const double up = eval();
      x = saved - h;
      const double down = eval();
      x = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[pi].data()[i];
      const double err = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-12);
      ++res.entries_checked;
      if (err > res.max_rel_error || std::isnan(err)) {
        res.max_rel_error = std::isnan(err) ? std::numeric_limits<double>::infinity() : err;
        res.worst_param = pi;
        res.worst_index = i;
        res.worst_analytic = a;
        res.worst_numeric = numeric;
      }
    }
  }
  return res;
}

}  // namespace dvae::ad
