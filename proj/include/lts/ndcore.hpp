#pragma once

// Dense rank-2 tensors and a reverse-mode tape. Column vectors are [n x 1].

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lts/error.hpp"

namespace lts {

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  constexpr std::size_t size() const noexcept { return rows * cols; }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
  }
};

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values)
      : shape_(shape), values_(std::move(values)) {
    if (shape_.size() != values_.size()) {
      throw DimensionError("tensor of shape " + shape_.str() + " given " +
                           std::to_string(values_.size()) + " values");
    }
  }

  static Tensor zeros(std::size_t rows, std::size_t cols) {
    return Tensor({rows, cols}, std::vector<double>(rows * cols, 0.0));
  }

  static Tensor column(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n, 1}, std::move(values));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::initializer_list<double> values) {
    return Tensor({rows, cols}, std::vector<double>(values));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rows() const noexcept { return shape_.rows; }
  std::size_t cols() const noexcept { return shape_.cols; }
  std::size_t size() const noexcept { return values_.size(); }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator()(std::size_t r, std::size_t c) {
    return values_[r * shape_.cols + c];
  }
  double operator()(std::size_t r, std::size_t c) const {
    return values_[r * shape_.cols + c];
  }

  // Gradient storage is allocated on first access.
  bool has_grad() const noexcept { return !grad_.empty() || size() == 0; }
  std::span<double> grad() {
    if (grad_.size() != values_.size()) grad_.assign(values_.size(), 0.0);
    return grad_;
  }
  std::span<const double> grad() const { return grad_; }
  void zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }
  void drop_grad() { grad_.clear(); }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(),
                       [](double v) { return std::isfinite(v); });
  }

 private:
  Shape shape_;
  std::vector<double> values_;
  std::vector<double> grad_;
};

class Tape;

// Handle to a node recorded on a Tape.
class Var {
 public:
  Var() = default;
  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Records operations in execution order. A tape built with record=false
// evaluates forward only and keeps no backward rules.
class Tape {
 public:
  using BackwardRule = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return record_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Owned value without gradient.
  Var constant(Tensor value) {
    Node node;
    node.own = std::move(value);
    return append(std::move(node));
  }

  // Borrowed value without gradient. The tensor must outlive the tape.
  Var view(const Tensor& value) {
    Node node;
    node.ref = &value;
    return append(std::move(node));
  }

  // Trainable leaf. backward() adds dL/dvalue into value.grad(). Binding the
  // same tensor twice returns the same node, so shared uses accumulate.
  Var variable(Tensor& value) {
    if (!record_) return view(value);
    if (auto it = bound_.find(&value); it != bound_.end()) {
      return Var(this, it->second);
    }
    Node node;
    node.ref = &value;
    node.sink = &value;
    node.needs_grad = true;
    Var v = append(std::move(node));
    bound_.emplace(&value, v.id());
    return v;
  }

  const Tensor& value(Var v) const { return value(v.id()); }
  const Tensor& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.ref ? *n.ref : n.own;
  }

  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  bool needs_grad(Var v) const { return needs_grad(v.id()); }

  // Records an op result. `inputs` decides whether a gradient is needed.
  Var record(Tensor value, std::initializer_list<Var> inputs,
             BackwardRule rule) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(rule));
  }

  Var record(Tensor value, std::span<const Var> inputs, BackwardRule rule) {
#ifndef NDEBUG
    assert(value.all_finite() && "non-finite value produced by a tape op");
#endif
    Node node;
    node.own = std::move(value);
    if (record_) {
      for (const Var& in : inputs) {
        check_owner(in);
        if (nodes_[in.id()].needs_grad) node.needs_grad = true;
      }
      if (node.needs_grad) node.backward = std::move(rule);
    }
    return append(std::move(node));
  }

  // Gradient buffer of a node during backward(); allocated on first use.
  std::vector<double>& grad(std::size_t id) {
    std::vector<double>& g = grads_[id];
    if (g.empty()) g.assign(value(id).size(), 0.0);
    return g;
  }
  std::vector<double>& grad(Var v) { return grad(v.id()); }

  // Propagates d(loss)/d(node) to every recorded node, visiting each node
  // once in reverse recording order, then flushes leaf gradients into the
  // bound tensors.
  void backward(Var loss) {
    check_owner(loss);
    if (value(loss).size() != 1) {
      throw ContractError("backward needs a scalar loss, got shape " +
                          value(loss).shape().str());
    }
    if (!record_) throw ContractError("backward on a non-recording tape");
    grads_.assign(nodes_.size(), {});
    grad(loss.id())[0] = 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (grads_[i].empty() || !n.needs_grad) continue;
      if (n.backward) n.backward(*this, i);
      if (n.sink) {
        std::span<double> dst = n.sink->grad();
        const std::vector<double>& src = grads_[i];
        for (std::size_t k = 0; k < src.size(); ++k) dst[k] += src[k];
      }
    }
    grads_.clear();
  }

 private:
  struct Node {
    Tensor own;
    const Tensor* ref = nullptr;
    Tensor* sink = nullptr;
    bool needs_grad = false;
    BackwardRule backward;
  };

  Var append(Node node) {
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
  }

  void check_owner(Var v) const {
    if (v.tape() != this || v.id() >= nodes_.size()) {
      throw ContractError("variable does not belong to this tape");
    }
  }

  bool record_;
  std::deque<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  std::unordered_map<const Tensor*, std::size_t> bound_;
};

inline const Tensor& Var::value() const { return tape_->value(*this); }

namespace detail {

inline void require_same_shape(const char* op, Var a, Var b) {
  if (!(a.shape() == b.shape())) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         a.shape().str() + " vs " + b.shape().str());
  }
}

inline bool is_vector(const Shape& s) { return s.rows == 1 || s.cols == 1; }

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.cols() != B.rows()) {
    throw DimensionError("matmul: shape mismatch " + A.shape().str() + " x " +
                         B.shape().str());
  }
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor out = Tensor::zeros(m, n);
  {
    const double* pa = A.values().data();
    const double* pb = B.values().data();
    double* po = out.values().data();
    for (std::size_t i = 0; i < m; ++i) {
      const double* arow = pa + i * k;
      double* orow = po + i * n;
      if (n == 1) {
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += arow[p] * pb[p];
        orow[0] = s;
        continue;
      }
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = arow[p];
        if (aip == 0.0) continue;
        const double* brow = pb + p * n;
        for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
      }
    }
  }
  Tape& tape = *a.tape();
  return tape.record(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, std::size_t self) {
    const double* dy = t.grad(self).data();
    const double* pa = t.value(a).values().data();
    const double* pb = t.value(b).values().data();
    if (t.needs_grad(a)) {
      double* da = t.grad(a).data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* dyrow = dy + i * n;
        double* darow = da + i * k;
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = pb + p * n;
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += dyrow[j] * brow[j];
          darow[p] += s;
        }
      }
    }
    if (t.needs_grad(b)) {
      double* db = t.grad(b).data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* arow = pa + i * k;
        const double* dyrow = dy + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = arow[p];
          if (aip == 0.0) continue;
          double* dbrow = db + p * n;
          for (std::size_t j = 0; j < n; ++j) dbrow[j] += aip * dyrow[j];
        }
      }
    }
  });
}

inline Var transpose(Var a) {
  const Tensor& A = a.value();
  const std::size_t r = A.rows(), c = A.cols();
  Tensor out = Tensor::zeros(c, r);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out(j, i) = A(i, j);
  return a.tape()->record(std::move(out), {a}, [a, r, c](Tape& t, std::size_t self) {
    const std::vector<double>& dy = t.grad(self);
    std::vector<double>& da = t.grad(a);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) da[i * c + j] += dy[j * r + i];
  });
}

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(Var a, Var b) {
  detail::require_same_shape("add", a, b);
  Tensor out = a.value();
  out.drop_grad();
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const std::vector<double>& dy = t.grad(self);
    for (Var in : {a, b}) {
      if (!t.needs_grad(in)) continue;
      std::vector<double>& d = t.grad(in);
      for (std::size_t i = 0; i < dy.size(); ++i) d[i] += dy[i];
    }
  });
}

inline Var sub(Var a, Var b) {
  detail::require_same_shape("sub", a, b);
  Tensor out = a.value();
  out.drop_grad();
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= B[i];
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const std::vector<double>& dy = t.grad(self);
    if (t.needs_grad(a)) {
      std::vector<double>& d = t.grad(a);
      for (std::size_t i = 0; i < dy.size(); ++i) d[i] += dy[i];
    }
    if (t.needs_grad(b)) {
      std::vector<double>& d = t.grad(b);
      for (std::size_t i = 0; i < dy.size(); ++i) d[i] -= dy[i];
    }
  });
}

inline Var hadamard(Var a, Var b) {
  detail::require_same_shape("hadamard", a, b);
  Tensor out = a.value();
  out.drop_grad();
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const std::vector<double>& dy = t.grad(self);
    const Tensor& A = t.value(a);
    const Tensor& B = t.value(b);
    if (t.needs_grad(a)) {
      std::vector<double>& d = t.grad(a);
      for (std::size_t i = 0; i < dy.size(); ++i) d[i] += dy[i] * B[i];
    }
    if (t.needs_grad(b)) {
      std::vector<double>& d = t.grad(b);
      for (std::size_t i = 0; i < dy.size(); ++i) d[i] += dy[i] * A[i];
    }
  });
}

namespace detail {

// y = f(x) pointwise, with dy/dx expressed through y.
template <typename Forward, typename DerivFromOutput>
Var pointwise(Var x, Forward f, DerivFromOutput df) {
  Tensor out = x.value();
  out.drop_grad();
  for (double& v : out.values()) v = f(v);
  return x.tape()->record(std::move(out), {x}, [x, df](Tape& t, std::size_t self) {
    const std::vector<double>& dy = t.grad(self);
    const Tensor& y = t.value(self);
    std::vector<double>& dx = t.grad(x);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * df(y[i]);
  });
}

}  // namespace detail

inline Var tanh(Var x) {
  return detail::pointwise(
      x, [](double v) { return std::tanh(v); },
      [](double y) { return 1.0 - y * y; });
}

inline Var sigmoid(Var x) {
  return detail::pointwise(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double y) { return y * (1.0 - y); });
}

// 1 - x
inline Var one_minus(Var x) {
  return detail::pointwise(
      x, [](double v) { return 1.0 - v; }, [](double) { return -1.0; });
}

inline Var scale(Var x, double factor) {
  return detail::pointwise(
      x, [factor](double v) { return factor * v; },
      [factor](double) { return factor; });
}

inline Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return x.tape()->record(Tensor::column({s}), {x}, [x](Tape& t, std::size_t self) {
    const double dy = t.grad(self)[0];
    for (double& d : t.grad(x)) d += dy;
  });
}

// ---------------------------------------------------------------------------
// Structural

// Row `index` of a matrix, returned as a column vector (embedding lookup).
inline Var row(Var m, std::size_t index) {
  const Tensor& M = m.value();
  if (index >= M.rows()) {
    throw IndexError("row " + std::to_string(index) + " out of range for " +
                     M.shape().str());
  }
  const std::size_t c = M.cols();
  std::vector<double> vals(M.values().begin() + index * c,
                           M.values().begin() + (index + 1) * c);
  return m.tape()->record(Tensor::column(std::move(vals)), {m},
                          [m, index, c](Tape& t, std::size_t self) {
                            const std::vector<double>& dy = t.grad(self);
                            std::vector<double>& dm = t.grad(m);
                            for (std::size_t j = 0; j < c; ++j) dm[index * c + j] += dy[j];
                          });
}

// Vertical concatenation of vectors into one column vector.
inline Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat: no operands");
  std::vector<double> vals;
  for (Var p : parts) {
    if (!detail::is_vector(p.shape())) {
      throw DimensionError("concat: operand is not a vector " + p.shape().str());
    }
    vals.insert(vals.end(), p.value().values().begin(), p.value().values().end());
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts.front().tape()->record(
      Tensor::column(std::move(vals)), parts, [inputs](Tape& t, std::size_t self) {
        const std::vector<double>& dy = t.grad(self);
        std::size_t offset = 0;
        for (Var in : inputs) {
          const std::size_t n = t.value(in).size();
          if (t.needs_grad(in)) {
            std::vector<double>& d = t.grad(in);
            for (std::size_t i = 0; i < n; ++i) d[i] += dy[offset + i];
          }
          offset += n;
        }
      });
}

inline Var concat(std::initializer_list<Var> parts) {
  return concat(std::span<const Var>(parts.begin(), parts.size()));
}

// Stacks equal-length vectors as the rows of a matrix.
inline Var stack_rows(std::span<const Var> rows) {
  if (rows.empty()) throw DimensionError("stack_rows: no operands");
  const std::size_t width = rows.front().value().size();
  std::vector<double> vals;
  vals.reserve(rows.size() * width);
  for (Var r : rows) {
    if (!detail::is_vector(r.shape()) || r.value().size() != width) {
      throw DimensionError("stack_rows: operand " + r.shape().str() +
                           " is not a vector of length " + std::to_string(width));
    }
    vals.insert(vals.end(), r.value().values().begin(), r.value().values().end());
  }
  std::vector<Var> inputs(rows.begin(), rows.end());
  return rows.front().tape()->record(
      Tensor({rows.size(), width}, std::move(vals)), rows,
      [inputs, width](Tape& t, std::size_t self) {
        const std::vector<double>& dy = t.grad(self);
        for (std::size_t r = 0; r < inputs.size(); ++r) {
          if (!t.needs_grad(inputs[r])) continue;
          std::vector<double>& d = t.grad(inputs[r]);
          for (std::size_t j = 0; j < width; ++j) d[j] += dy[r * width + j];
        }
      });
}

// ---------------------------------------------------------------------------
// Distributions and losses

inline Var softmax(Var x) {
  const Tensor& X = x.value();
  if (X.size() == 0) throw DimensionError("softmax: empty input");
  if (!detail::is_vector(X.shape())) {
    throw DimensionError("softmax: expected a vector, got " + X.shape().str());
  }
  const double peak = *std::max_element(X.values().begin(), X.values().end());
  Tensor out = X;
  out.drop_grad();
  double z = 0.0;
  for (double& v : out.values()) {
    v = std::exp(v - peak);
    z += v;
  }
  for (double& v : out.values()) v /= z;
  return x.tape()->record(std::move(out), {x}, [x](Tape& t, std::size_t self) {
    const std::vector<double>& dy = t.grad(self);
    const Tensor& y = t.value(self);
    double dot = 0.0;
    for (std::size_t i = 0; i < dy.size(); ++i) dot += dy[i] * y[i];
    std::vector<double>& dx = t.grad(x);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += y[i] * (dy[i] - dot);
  });
}

// out[i] = max(x[2i], x[2i+1]); ties resolve to the lower index.
inline Var maxout(Var x) {
  const Tensor& X = x.value();
  if (!detail::is_vector(X.shape()) || X.size() % 2 != 0) {
    throw DimensionError("maxout: expected a vector of even length, got " +
                         X.shape().str());
  }
  const std::size_t k = X.size() / 2;
  std::vector<double> vals(k);
  std::vector<std::size_t> winner(k);
  for (std::size_t i = 0; i < k; ++i) {
    const bool second = X[2 * i + 1] > X[2 * i];
    winner[i] = 2 * i + (second ? 1 : 0);
    vals[i] = X[winner[i]];
  }
  return x.tape()->record(Tensor::column(std::move(vals)), {x},
                          [x, winner](Tape& t, std::size_t self) {
                            const std::vector<double>& dy = t.grad(self);
                            std::vector<double>& dx = t.grad(x);
                            for (std::size_t i = 0; i < dy.size(); ++i) dx[winner[i]] += dy[i];
                          });
}

inline constexpr double kProbabilityFloor = 1e-12;

// -log p[target], with p[target] floored at 1e-12.
inline Var cross_entropy(Var p, std::size_t target) {
  const Tensor& P = p.value();
  if (target >= P.size()) {
    throw IndexError("cross_entropy: target " + std::to_string(target) +
                     " out of range for distribution of size " +
                     std::to_string(P.size()));
  }
  const double pt = P[target];
  const bool clamped = !(pt > kProbabilityFloor);
  const double loss = -std::log(clamped ? kProbabilityFloor : pt);
  return p.tape()->record(Tensor::column({loss}), {p},
                          [p, target, pt, clamped](Tape& t, std::size_t self) {
                            if (clamped) return;
                            t.grad(p)[target] -= t.grad(self)[0] / pt;
                          });
}

// ---------------------------------------------------------------------------
// Finite-difference verification

using ScalarFunction = std::function<Var(Tape&)>;

namespace detail {

inline double evaluate_scalar(const ScalarFunction& f) {
  Tape tape(false);
  const double y = f(tape).value()[0];
  if (!std::isfinite(y)) throw NumericError("grad_check: non-finite function value");
  return y;
}

}  // namespace detail

// Compares the tape gradient of `f` against central differences over every
// coordinate of `params`. `f` must bind each parameter via Tape::variable.
// Returns max |analytic - numeric| / max(1, |analytic|, |numeric|).
inline double grad_check(const ScalarFunction& f, std::span<Tensor* const> params,
                         double epsilon = 1e-5) {
  if (!(epsilon >= 1e-6 && epsilon <= 1e-3)) {
    throw ContractError("grad_check: epsilon must lie in [1e-6, 1e-3]");
  }
  for (Tensor* p : params) p->grad(), p->zero_grad();
  {
    Tape tape;
    Var y = f(tape);
    if (y.value().size() != 1) throw ContractError("grad_check: f must be scalar");
    if (!std::isfinite(y.value()[0])) {
      throw NumericError("grad_check: non-finite function value");
    }
    tape.backward(y);
  }
  double worst = 0.0;
  for (Tensor* p : params) {
    const std::vector<double> analytic(p->grad().begin(), p->grad().end());
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double saved = (*p)[i];
      (*p)[i] = saved + epsilon;
      const double up = detail::evaluate_scalar(f);
      (*p)[i] = saved - epsilon;
      const double down = detail::evaluate_scalar(f);
      (*p)[i] = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
  }
  return worst;
}

inline double grad_check(const ScalarFunction& f, Tensor& param, double epsilon = 1e-5) {
  Tensor* ptr = &param;
  return grad_check(f, std::span<Tensor* const>(&ptr, 1), epsilon);
}

}  // namespace lts
