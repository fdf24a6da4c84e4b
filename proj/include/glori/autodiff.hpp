#pragma once

// Reverse-mode differentiation over a linear tape of dense operations.
//
// Every forward op appends one node holding its output; if any input needs a
// gradient the node also stores a vector-Jacobian product closure. backward()
// walks the nodes in exact reverse order, so accumulation order (and hence the
// floating-point result) is a pure function of the recorded program.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "glori/error.hpp"
#include "glori/tensor.hpp"

namespace glori {

class Tape;

// Handle to a node on a Tape. Cheap to copy; only valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  // (tape, upstream gradient, forward output) -> accumulates into inputs.
  using Backward = std::function<void(Tape&, const Tensor&, const Tensor&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Input node; differentiable iff value.requires_grad().
  Var leaf(Tensor value) {
    const bool rg = value.requires_grad();
    return push(std::move(value), rg, nullptr);
  }

  Var constant(Tensor value) {
    value.set_requires_grad(false);
    return push(std::move(value), false, nullptr);
  }

  Var record(Tensor value, std::initializer_list<Var> inputs, Backward fn) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(fn));
  }

  Var record(Tensor value, std::span<const Var> inputs, Backward fn) {
    if (!value.all_finite()) {
      throw NumericError("non-finite value produced by forward operation");
    }
    bool rg = false;
    for (const Var& v : inputs) {
      check_owner(v);
      rg = rg || nodes_[v.id_].requires_grad;
    }
    return push(std::move(value), rg, rg ? std::move(fn) : Backward{});
  }

  const Tensor& value(Var v) const {
    check_owner(v);
    return nodes_[v.id_].value;
  }

  bool requires_grad(Var v) const {
    check_owner(v);
    return nodes_[v.id_].requires_grad;
  }

  // Gradient buffer for v, zero-initialised on first touch.
  Tensor& grad_slot(Var v) {
    check_owner(v);
    Node& n = nodes_[v.id_];
    if (n.grad.shape() != n.value.shape() || n.grad.size() != n.value.size()) {
      n.grad = Tensor(n.value.shape(), 0.0);
    }
    return n.grad;
  }

  // Accumulated gradient after backward(); zeros if v never received one.
  Tensor grad(Var v) const {
    check_owner(v);
    const Node& n = nodes_[v.id_];
    if (n.grad.size() != n.value.size()) return Tensor(n.value.shape(), 0.0);
    return n.grad;
  }

  void backward(Var loss) {
    check_owner(loss);
    if (nodes_[loss.id_].value.size() != 1) {
      throw ShapeError("backward() needs a scalar loss, got shape " +
                       shape_str(nodes_[loss.id_].value.shape()));
    }
    for (Node& n : nodes_) n.grad = Tensor();
    if (!nodes_[loss.id_].requires_grad) return;
    grad_slot(loss).fill(1.0);
    for (std::size_t i = loss.id_ + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, n.grad, n.value);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Backward backward;
  };

  Var push(Tensor value, bool rg, Backward fn) {
    nodes_.push_back(Node{std::move(value), Tensor(), rg, std::move(fn)});
    return Var(this, nodes_.size() - 1);
  }

  void check_owner(Var v) const {
    if (v.tape_ != this || v.id_ >= nodes_.size()) {
      throw UsageError("variable does not belong to this tape");
    }
  }

  std::deque<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(*this); }

namespace detail {

// c[m,n] += a[m,k] * b[k,n]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t t = 0; t < k; ++t) {
      const double av = a[i * k + t];
      if (av == 0.0) continue;
      const double* brow = b + t * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m,n] += a[m,k] * b[n,k]^T. b is transposed into a scratch buffer so the
// inner loop runs over contiguous memory.
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t n) {
  std::vector<double> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t t = 0; t < k; ++t) bt[t * n + j] = b[j * k + t];
  gemm_nn(a, bt.data(), c, m, k, n);
}

// c[k,n] += a[m,k]^T * b[m,n]
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* brow = b + i * n;
    for (std::size_t t = 0; t < k; ++t) {
      const double av = a[i * k + t];
      if (av == 0.0) continue;
      double* crow = c + t * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     ", got shape " + shape_str(t.shape()));
  }
}

inline void require_same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw UsageError("operands live on different tapes");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(Var a, Var b) {
  detail::require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require_rank(av, 2, "matmul");
  detail::require_rank(bv, 2, "matmul");
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  if (bv.dim(0) != k) {
    throw ShapeError("matmul: inner extents differ " + shape_str(av.shape()) + " x " +
                     shape_str(bv.shape()));
  }
  Tensor out({m, n});
  detail::gemm_nn(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
  return a.tape().record(std::move(out), {a, b},
                         [a, b, m, k, n](Tape& tape, const Tensor& g, const Tensor&) {
                           if (tape.requires_grad(a)) {
                             detail::gemm_nt(g.data().data(), b.value().data().data(),
                                             tape.grad_slot(a).data().data(), m, n, k);
                           }
                           if (tape.requires_grad(b)) {
                             detail::gemm_tn(a.value().data().data(), g.data().data(),
                                             tape.grad_slot(b).data().data(), m, k, n);
                           }
                         });
}

// a[m,k] * b[n,k]^T without materialising the transpose.
inline Var matmul_nt(Var a, Var b) {
  detail::require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require_rank(av, 2, "matmul_nt");
  detail::require_rank(bv, 2, "matmul_nt");
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(0);
  if (bv.dim(1) != k) {
    throw ShapeError("matmul_nt: inner extents differ " + shape_str(av.shape()) + " x " +
                     shape_str(bv.shape()) + "^T");
  }
  Tensor out({m, n});
  detail::gemm_nt(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
  return a.tape().record(std::move(out), {a, b},
                         [a, b, m, k, n](Tape& tape, const Tensor& g, const Tensor&) {
                           if (tape.requires_grad(a)) {
                             detail::gemm_nn(g.data().data(), b.value().data().data(),
                                             tape.grad_slot(a).data().data(), m, n, k);
                           }
                           if (tape.requires_grad(b)) {
                             detail::gemm_tn(g.data().data(), a.value().data().data(),
                                             tape.grad_slot(b).data().data(), m, n, k);
                           }
                         });
}

// x[n,d] + b[d] with b broadcast over rows.
inline Var add_rowvec(Var x, Var b) {
  detail::require_same_tape(x, b);
  const Tensor& xv = x.value();
  const Tensor& bv = b.value();
  detail::require_rank(xv, 2, "add_rowvec");
  const std::size_t n = xv.dim(0), d = xv.dim(1);
  if (bv.size() != d) {
    throw ShapeError("add_rowvec: bias " + shape_str(bv.shape()) + " vs rows of " +
                     shape_str(xv.shape()));
  }
  Tensor out = xv;
  out.set_requires_grad(false);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] += bv[j];
  return x.tape().record(std::move(out), {x, b},
                         [x, b, n, d](Tape& tape, const Tensor& g, const Tensor&) {
                           if (tape.requires_grad(x)) {
                             Tensor& gx = tape.grad_slot(x);
                             for (std::size_t i = 0; i < n * d; ++i) gx[i] += g[i];
                           }
                           if (tape.requires_grad(b)) {
                             Tensor& gb = tape.grad_slot(b);
                             for (std::size_t i = 0; i < n; ++i)
                               for (std::size_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
                           }
                         });
}

// y = x W + b
inline Var linear(Var x, Var w, Var b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  detail::require_rank(xv, 2, "linear");
  detail::require_rank(wv, 2, "linear");
  if (xv.dim(1) != wv.dim(0) || b.value().size() != wv.dim(1)) {
    throw ShapeError("linear: x " + shape_str(xv.shape()) + ", W " + shape_str(wv.shape()) +
                     ", b " + shape_str(b.value().shape()));
  }
  return add_rowvec(matmul(x, w), b);
}

// ---------------------------------------------------------------------------
// Elementwise

enum class Activation { relu, tanh, exp };

// Largest argument accepted by exp before the result overflows a double.
inline constexpr double kExpLimit = 709.0;

inline Var activation(Activation kind, Var x) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double v = xv[i];
    switch (kind) {
      case Activation::relu: out[i] = v > 0.0 ? v : 0.0; break;
      case Activation::tanh: out[i] = std::tanh(v); break;
      case Activation::exp:
        if (v > kExpLimit) throw NumericError("exp overflow: argument " + std::to_string(v));
        out[i] = std::exp(v);
        break;
    }
  }
  return x.tape().record(std::move(out), {x},
                         [x, kind](Tape& tape, const Tensor& g, const Tensor& y) {
                           const Tensor& xv = x.value();
                           Tensor& gx = tape.grad_slot(x);
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             switch (kind) {
                               case Activation::relu:
                                 if (xv[i] > 0.0) gx[i] += g[i];
                                 break;
                               case Activation::tanh: gx[i] += g[i] * (1.0 - y[i] * y[i]); break;
                               case Activation::exp: gx[i] += g[i] * y[i]; break;
                             }
                           }
                         });
}

inline Var relu(Var x) { return activation(Activation::relu, x); }
inline Var tanh(Var x) { return activation(Activation::tanh, x); }
inline Var exp(Var x) { return activation(Activation::exp, x); }

inline Var add(Var a, Var b) {
  detail::require_same_tape(a, b);
  if (a.shape() != b.shape()) {
    throw ShapeError("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor out = a.value();
  out.set_requires_grad(false);
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape().record(std::move(out), {a, b},
                         [a, b](Tape& tape, const Tensor& g, const Tensor&) {
                           for (Var v : {a, b}) {
                             if (!tape.requires_grad(v)) continue;
                             Tensor& gv = tape.grad_slot(v);
                             for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
                           }
                         });
}

inline Var mul(Var a, Var b) {
  detail::require_same_tape(a, b);
  if (a.shape() != b.shape()) {
    throw ShapeError("mul: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return a.tape().record(std::move(out), {a, b},
                         [a, b](Tape& tape, const Tensor& g, const Tensor&) {
                           if (tape.requires_grad(a)) {
                             Tensor& ga = tape.grad_slot(a);
                             const Tensor& bv = b.value();
                             for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
                           }
                           if (tape.requires_grad(b)) {
                             Tensor& gb = tape.grad_slot(b);
                             const Tensor& av = a.value();
                             for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                           }
                         });
}

inline Var scale(Var x, double c) {
  Tensor out(x.shape());
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * c;
  return x.tape().record(std::move(out), {x}, [x, c](Tape& tape, const Tensor& g, const Tensor&) {
    Tensor& gx = tape.grad_slot(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * c;
  });
}

inline Var sum(Var x) {
  const Tensor& xv = x.value();
  double s = 0.0;
  for (double v : xv.data()) s += v;
  return x.tape().record(Tensor::scalar(s), {x},
                         [x](Tape& tape, const Tensor& g, const Tensor&) {
                           Tensor& gx = tape.grad_slot(x);
                           for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
                         });
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Var reshape(Var x, Shape shape) {
  if (shape_size(shape) != x.value().size()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  Tensor out(std::move(shape), x.value().storage());
  return x.tape().record(std::move(out), {x}, [x](Tape& tape, const Tensor& g, const Tensor&) {
    Tensor& gx = tape.grad_slot(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

// Columns [start, start+len) of a rank-2 tensor.
inline Var slice_cols(Var x, std::size_t start, std::size_t len) {
  const Tensor& xv = x.value();
  detail::require_rank(xv, 2, "slice_cols");
  const std::size_t n = xv.dim(0), d = xv.dim(1);
  if (start + len > d) {
    throw ShapeError("slice_cols: [" + std::to_string(start) + "," + std::to_string(start + len) +
                     ") outside " + shape_str(xv.shape()));
  }
  Tensor out({n, len});
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(xv.data().begin() + i * d + start, len, out.data().begin() + i * len);
  return x.tape().record(std::move(out), {x},
                         [x, n, d, start, len](Tape& tape, const Tensor& g, const Tensor&) {
                           Tensor& gx = tape.grad_slot(x);
                           for (std::size_t i = 0; i < n; ++i)
                             for (std::size_t j = 0; j < len; ++j)
                               gx[i * d + start + j] += g[i * len + j];
                         });
}

// Contiguous concatenation along `axis`; all other extents must agree.
inline Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_str(first));
  std::size_t total = 0;
  for (const Var& p : parts) {
    detail::require_same_tape(parts[0], p);
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) {
      throw ShapeError("concat: extent mismatch " + shape_str(first) + " vs " + shape_str(s));
    }
    total += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  Shape out_shape = first;
  out_shape[axis] = total;
  Tensor out(out_shape);
  std::vector<std::size_t> widths;
  widths.reserve(parts.size());
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const std::size_t w = p.shape()[axis] * inner;
    const Tensor& pv = p.value();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pv.data().begin() + o * w, w, out.data().begin() + o * total * inner + offset);
    widths.push_back(w);
    offset += w;
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  const std::size_t row = total * inner;
  return parts[0].tape().record(
      std::move(out), inputs,
      [inputs, widths, outer, row](Tape& tape, const Tensor& g, const Tensor&) {
        std::size_t off = 0;
        for (std::size_t p = 0; p < inputs.size(); ++p) {
          const std::size_t w = widths[p];
          if (tape.requires_grad(inputs[p])) {
            Tensor& gp = tape.grad_slot(inputs[p]);
            for (std::size_t o = 0; o < outer; ++o)
              for (std::size_t i = 0; i < w; ++i) gp[o * w + i] += g[o * row + off + i];
          }
          off += w;
        }
      });
}

inline Var concat(std::initializer_list<Var> parts, std::size_t axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

// Mean over rows: x[n,d] -> [1,d].
inline Var mean_rows(Var x) {
  const Tensor& xv = x.value();
  detail::require_rank(xv, 2, "mean_rows");
  const std::size_t n = xv.dim(0), d = xv.dim(1);
  if (n == 0) throw ShapeError("mean_rows: no rows");
  Tensor out({1, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[j] += xv[i * d + j];
  for (std::size_t j = 0; j < d; ++j) out[j] /= static_cast<double>(n);
  return x.tape().record(std::move(out), {x}, [x, n, d](Tape& tape, const Tensor& g, const Tensor&) {
    Tensor& gx = tape.grad_slot(x);
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += g[j] * inv;
  });
}

// out[m] = <a[m,:], b[m,:]>
inline Var rowwise_dot(Var a, Var b) {
  detail::require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require_rank(av, 2, "rowwise_dot");
  if (av.shape() != bv.shape()) {
    throw ShapeError("rowwise_dot: " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  }
  const std::size_t m = av.dim(0), d = av.dim(1);
  Tensor out({m});
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += av[i * d + j] * bv[i * d + j];
    out[i] = s;
  }
  return a.tape().record(std::move(out), {a, b},
                         [a, b, m, d](Tape& tape, const Tensor& g, const Tensor&) {
                           if (tape.requires_grad(a)) {
                             Tensor& ga = tape.grad_slot(a);
                             const Tensor& bv = b.value();
                             for (std::size_t i = 0; i < m; ++i)
                               for (std::size_t j = 0; j < d; ++j) ga[i * d + j] += g[i] * bv[i * d + j];
                           }
                           if (tape.requires_grad(b)) {
                             Tensor& gb = tape.grad_slot(b);
                             const Tensor& av = a.value();
                             for (std::size_t i = 0; i < m; ++i)
                               for (std::size_t j = 0; j < d; ++j) gb[i * d + j] += g[i] * av[i * d + j];
                           }
                         });
}

// ---------------------------------------------------------------------------
// Normalisation and attention

// Row m becomes softmax(logits[m] / tau[m]). The row max is subtracted before
// dividing by tau, which is safe because tau > 0.
inline Var softmax_with_temperature(Var logits, Var tau) {
  detail::require_same_tape(logits, tau);
  const Tensor& lv = logits.value();
  const Tensor& tv = tau.value();
  detail::require_rank(lv, 2, "softmax_with_temperature");
  const std::size_t m = lv.dim(0), n = lv.dim(1);
  if (tv.size() != m) {
    throw ShapeError("softmax_with_temperature: tau " + shape_str(tv.shape()) + " for logits " +
                     shape_str(lv.shape()));
  }
  Tensor out({m, n});
  for (std::size_t r = 0; r < m; ++r) {
    const double t = tv[r];
    if (!(t > 0.0)) throw NumericError("softmax_with_temperature: non-positive temperature");
    const double* row = lv.data().data() + r * n;
    double* o = out.data().data() + r * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp((row[j] - mx) / t);
      z += o[j];
    }
    for (std::size_t j = 0; j < n; ++j) o[j] /= z;
  }
  return logits.tape().record(
      std::move(out), {logits, tau},
      [logits, tau, m, n](Tape& tape, const Tensor& g, const Tensor& y) {
        const Tensor& lv = logits.value();
        const Tensor& tv = tau.value();
        Tensor* gl = tape.requires_grad(logits) ? &tape.grad_slot(logits) : nullptr;
        Tensor* gtau = tape.requires_grad(tau) ? &tape.grad_slot(tau) : nullptr;
        for (std::size_t r = 0; r < m; ++r) {
          double dot = 0.0;
          for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
          const double t = tv[r];
          double gt = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double dz = y[r * n + j] * (g[r * n + j] - dot);
            if (gl) (*gl)[r * n + j] += dz / t;
            gt -= dz * lv[r * n + j] / (t * t);
          }
          if (gtau) (*gtau)[r] += gt;
        }
      });
}

inline constexpr double kLayerNormEps = 1e-5;

// Per-row standardisation over the feature axis followed by gamma/beta.
inline Var layer_norm(Var x, Var gamma, Var beta, double eps = kLayerNormEps) {
  const Tensor& xv = x.value();
  detail::require_rank(xv, 2, "layer_norm");
  const std::size_t n = xv.dim(0), d = xv.dim(1);
  if (d == 0) throw ShapeError("layer_norm: empty feature axis");
  if (!(eps > 0.0)) throw UsageError("layer_norm: eps must be positive");
  if (gamma.value().size() != d || beta.value().size() != d) {
    throw ShapeError("layer_norm: affine params do not match " + shape_str(xv.shape()));
  }
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  Tensor xhat({n, d});
  std::vector<double> inv_std(n);
  Tensor out({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = xv.data().data() + i * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double r = 1.0 / std::sqrt(var + eps);
    inv_std[i] = r;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * r;
      xhat[i * d + j] = h;
      out[i * d + j] = gv[j] * h + bv[j];
    }
  }
  return x.tape().record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, n, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          Tape& tape, const Tensor& g, const Tensor&) {
        const Tensor& gv = gamma.value();
        if (tape.requires_grad(gamma)) {
          Tensor& gg = tape.grad_slot(gamma);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) gg[j] += g[i * d + j] * xhat[i * d + j];
        }
        if (tape.requires_grad(beta)) {
          Tensor& gb = tape.grad_slot(beta);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
        }
        if (tape.requires_grad(x)) {
          Tensor& gx = tape.grad_slot(x);
          std::vector<double> dh(d);
          for (std::size_t i = 0; i < n; ++i) {
            double mean_dh = 0.0, mean_dh_h = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              dh[j] = g[i * d + j] * gv[j];
              mean_dh += dh[j];
              mean_dh_h += dh[j] * xhat[i * d + j];
            }
            mean_dh /= static_cast<double>(d);
            mean_dh_h /= static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j) {
              gx[i * d + j] += inv_std[i] * (dh[j] - mean_dh - xhat[i * d + j] * mean_dh_h);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Spatial pooling on [H, W, d] grids

inline Var avg_pool2d(Var x, std::size_t k) {
  const Tensor& xv = x.value();
  detail::require_rank(xv, 3, "avg_pool2d");
  const std::size_t h = xv.dim(0), w = xv.dim(1), d = xv.dim(2);
  if (k == 0 || h % k != 0 || w % k != 0) {
    throw ShapeError("avg_pool2d: grid " + shape_str(xv.shape()) + " not divisible by " +
                     std::to_string(k));
  }
  const std::size_t oh = h / k, ow = w / k;
  Tensor out({oh, ow, d});
  const double inv = 1.0 / static_cast<double>(k * k);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const double* src = xv.data().data() + (i * w + j) * d;
      double* dst = out.data().data() + ((i / k) * ow + j / k) * d;
      for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
    }
  for (double& v : out.data()) v *= inv;
  return x.tape().record(std::move(out), {x},
                         [x, k, h, w, d, ow, inv](Tape& tape, const Tensor& g, const Tensor&) {
                           Tensor& gx = tape.grad_slot(x);
                           for (std::size_t i = 0; i < h; ++i)
                             for (std::size_t j = 0; j < w; ++j) {
                               const double* src = g.data().data() + ((i / k) * ow + j / k) * d;
                               double* dst = gx.data().data() + (i * w + j) * d;
                               for (std::size_t c = 0; c < d; ++c) dst[c] += src[c] * inv;
                             }
                         });
}

inline Var upsample_nearest(Var x, std::size_t factor) {
  const Tensor& xv = x.value();
  detail::require_rank(xv, 3, "upsample_nearest");
  if (factor == 0) throw ShapeError("upsample_nearest: factor must be >= 1");
  const std::size_t h = xv.dim(0), w = xv.dim(1), d = xv.dim(2);
  const std::size_t oh = h * factor, ow = w * factor;
  Tensor out({oh, ow, d});
  for (std::size_t i = 0; i < oh; ++i)
    for (std::size_t j = 0; j < ow; ++j)
      std::copy_n(xv.data().begin() + ((i / factor) * w + j / factor) * d, d,
                  out.data().begin() + (i * ow + j) * d);
  return x.tape().record(std::move(out), {x},
                         [x, factor, w, d, oh, ow](Tape& tape, const Tensor& g, const Tensor&) {
                           Tensor& gx = tape.grad_slot(x);
                           for (std::size_t i = 0; i < oh; ++i)
                             for (std::size_t j = 0; j < ow; ++j) {
                               const double* src = g.data().data() + (i * ow + j) * d;
                               double* dst = gx.data().data() + ((i / factor) * w + j / factor) * d;
                               for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
                             }
                         });
}

// ---------------------------------------------------------------------------
// Loss

// Mean binary cross-entropy on raw logits, in the overflow-free form
// max(z,0) - z*y + log1p(exp(-|z|)).
inline Var bce_with_logits(Var logits, Var labels) {
  detail::require_same_tape(logits, labels);
  const Tensor& zv = logits.value();
  const Tensor& yv = labels.value();
  if (zv.size() != yv.size() || zv.size() == 0) {
    throw ShapeError("bce_with_logits: logits " + shape_str(zv.shape()) + " vs labels " +
                     shape_str(yv.shape()));
  }
  for (double y : yv.data()) {
    if (y != 0.0 && y != 1.0) throw UsageError("bce_with_logits: labels must be 0 or 1");
  }
  const std::size_t m = zv.size();
  double loss = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double z = zv[i];
    loss += std::max(z, 0.0) - z * yv[i] + std::log1p(std::exp(-std::abs(z)));
  }
  loss /= static_cast<double>(m);
  return logits.tape().record(
      Tensor::scalar(loss), {logits, labels},
      [logits, labels, m](Tape& tape, const Tensor& g, const Tensor&) {
        if (!tape.requires_grad(logits)) return;
        const Tensor& zv = logits.value();
        const Tensor& yv = labels.value();
        Tensor& gz = tape.grad_slot(logits);
        for (std::size_t i = 0; i < m; ++i) {
          const double z = zv[i];
          const double p = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
          gz[i] += g[0] * (p - yv[i]) / static_cast<double>(m);
        }
      });
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

using ScalarProgram = std::function<Var(Tape&, std::span<const Var>)>;

// Max over every coordinate of every point of
//   |analytic - central_fd| / max(1, |analytic|).
inline double grad_check(const ScalarProgram& f, const std::vector<Tensor>& points,
                         double h = 1e-5) {
  if (!(h > 0.0)) throw UsageError("grad_check: step must be positive");
  auto evaluate = [&](const std::vector<Tensor>& at) {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& t : at) vars.push_back(tape.constant(t));
    const double v = f(tape, vars).value().item();
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite function value");
    return v;
  };

  Tape tape;
  std::vector<Var> vars;
  for (Tensor t : points) vars.push_back(tape.leaf(std::move(t.set_requires_grad(true))));
  Var out = f(tape, vars);
  tape.backward(out);

  double worst = 0.0;
  std::vector<Tensor> probe = points;
  for (std::size_t p = 0; p < points.size(); ++p) {
    const Tensor analytic = tape.grad(vars[p]);
    for (std::size_t i = 0; i < points[p].size(); ++i) {
      const double x0 = points[p][i];
      probe[p][i] = x0 + h;
      const double fp = evaluate(probe);
      probe[p][i] = x0 - h;
      const double fm = evaluate(probe);
      probe[p][i] = x0;
      const double fd = (fp - fm) / (2.0 * h);
      const double a = analytic[i];
      if (!std::isfinite(a)) throw NumericError("grad_check: non-finite analytic gradient");
      worst = std::max(worst, std::abs(a - fd) / std::max(1.0, std::abs(a)));
    }
  }
  return worst;
}

inline double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& point,
                         double h = 1e-5) {
  return grad_check([&](Tape& t, std::span<const Var> v) { return f(t, v[0]); },
                    std::vector<Tensor>{point}, h);
}

}  // namespace glori
