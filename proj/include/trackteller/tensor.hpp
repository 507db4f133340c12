#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "trackteller/errors.hpp"

namespace trackteller::numcore {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized on first backward touch
  bool requires_grad = false;
  bool backward_done = false;  // set on a node used as a backward root
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> pull;  // propagates this->grad into parents

  std::vector<double>& grad_buf() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

// Dense row-major tensor of doubles with define-by-run reverse-mode
// autodiff. Values are immutable after construction except through
// ParamStore updates between episodes; the grad slot is filled by
// backward(). A graph is confined to one thread.
class Tensor {
 public:
  Tensor() : n_(std::make_shared<detail::Node>()) {
    n_->shape = {0};
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), 0.0, requires_grad);
  }

  static Tensor filled(Shape shape, double v, bool requires_grad = false) {
    auto n = std::make_shared<detail::Node>();
    n->value.assign(numel(shape), v);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor from(Shape shape, std::vector<double> data,
                     bool requires_grad = false) {
    if (numel(shape) != data.size())
      throw ShapeError("data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  const Shape& shape() const { return n_->shape; }
  std::size_t size() const { return n_->value.size(); }
  std::size_t rows() const { return dim2_().first; }
  std::size_t cols() const { return dim2_().second; }
  bool requires_grad() const { return n_->requires_grad; }

  const std::vector<double>& data() const { return n_->value; }
  double item() const {
    if (size() != 1)
      throw GradError("item() on non-scalar tensor " + shape_str(shape()));
    return n_->value[0];
  }
  double at(std::size_t i) const { return n_->value.at(i); }
  double at(std::size_t r, std::size_t c) const {
    return n_->value.at(r * cols() + c);
  }

  // Gradient accumulated by the last backward pass; empty before that.
  const std::vector<double>& grad() const { return n_->grad; }

  // In-place access for optimizers and finite-difference probes only.
  std::vector<double>& mutable_data() { return n_->value; }
  void zero_grad() { n_->grad.assign(n_->value.size(), 0.0); }

  detail::Node* node() const { return n_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return n_; }

  explicit Tensor(std::shared_ptr<detail::Node> n) : n_(std::move(n)) {}

 private:
  std::pair<std::size_t, std::size_t> dim2_() const {
    const auto& s = n_->shape;
    if (s.size() == 1) return {1, s[0]};
    if (s.size() == 2) return {s[0], s[1]};
    throw ShapeError("expected 1-d or 2-d tensor, got " + shape_str(s));
  }

  std::shared_ptr<detail::Node> n_;
};

namespace detail {

inline Tensor make_op(Shape shape, std::vector<double> value,
                      std::vector<Tensor> parents,
                      std::function<void(Node&)> pull) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool rg = false;
  for (const auto& p : parents) rg = rg || p.requires_grad();
  n->requires_grad = rg;
  if (rg) {
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node_ptr());
    Node* raw = n.get();
    n->pull = [raw, fn = std::move(pull)]() { fn(*raw); };
  }
  return Tensor(std::move(n));
}

inline void require_same_shape(const Tensor& a, const Tensor& b,
                               const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise ops

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.at(i) + b.at(i);
  auto* pa = a.node();
  auto* pb = b.node();
  return detail::make_op(a.shape(), std::move(v), {a, b},
                         [pa, pb](detail::Node& n) {
                           if (pa->requires_grad) {
                             auto& g = pa->grad_buf();
                             for (std::size_t i = 0; i < g.size(); ++i)
                               g[i] += n.grad[i];
                           }
                           if (pb->requires_grad) {
                             auto& g = pb->grad_buf();
                             for (std::size_t i = 0; i < g.size(); ++i)
                               g[i] += n.grad[i];
                           }
                         });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.at(i) - b.at(i);
  auto* pa = a.node();
  auto* pb = b.node();
  return detail::make_op(a.shape(), std::move(v), {a, b},
                         [pa, pb](detail::Node& n) {
                           if (pa->requires_grad) {
                             auto& g = pa->grad_buf();
                             for (std::size_t i = 0; i < g.size(); ++i)
                               g[i] += n.grad[i];
                           }
                           if (pb->requires_grad) {
                             auto& g = pb->grad_buf();
                             for (std::size_t i = 0; i < g.size(); ++i)
                               g[i] -= n.grad[i];
                           }
                         });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.at(i) * b.at(i);
  auto* pa = a.node();
  auto* pb = b.node();
  return detail::make_op(
      a.shape(), std::move(v), {a, b}, [pa, pb](detail::Node& n) {
        if (pa->requires_grad) {
          auto& g = pa->grad_buf();
          for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += n.grad[i] * pb->value[i];
        }
        if (pb->requires_grad) {
          auto& g = pb->grad_buf();
          for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += n.grad[i] * pa->value[i];
        }
      });
}

// y = a*x + b, elementwise with scalar constants.
inline Tensor affine(const Tensor& x, double a, double b) {
  std::vector<double> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a * x.at(i) + b;
  auto* px = x.node();
  return detail::make_op(x.shape(), std::move(v), {x},
                         [px, a](detail::Node& n) {
                           auto& g = px->grad_buf();
                           for (std::size_t i = 0; i < g.size(); ++i)
                             g[i] += a * n.grad[i];
                         });
}

inline Tensor scale(const Tensor& x, double a) { return affine(x, a, 0.0); }

namespace detail {

template <class F, class DF>
Tensor unary_op(const Tensor& x, F f, DF df, const char* /*name*/) {
  std::vector<double> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(x.at(i));
  auto* px = x.node();
  std::vector<double> vcopy = v;  // df may use the output value
  return make_op(x.shape(), std::move(v), {x},
                 [px, df, vcopy = std::move(vcopy)](Node& n) {
                   auto& g = px->grad_buf();
                   for (std::size_t i = 0; i < g.size(); ++i)
                     g[i] += n.grad[i] * df(px->value[i], vcopy[i]);
                 });
}

}  // namespace detail

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary_op(
      x,
      [](double v) {
        // stable in both tails
        return v >= 0 ? 1.0 / (1.0 + std::exp(-v))
                      : std::exp(v) / (1.0 + std::exp(v));
      },
      [](double, double y) { return y * (1.0 - y); }, "sigmoid");
}

inline Tensor relu(const Tensor& x) {
  return detail::unary_op(
      x, [](double v) { return v > 0 ? v : 0.0; },
      [](double v, double) { return v > 0 ? 1.0 : 0.0; }, "relu");
}

inline Tensor exp(const Tensor& x) {
  return detail::unary_op(
      x, [](double v) { return std::exp(v); },
      [](double, double y) { return y; }, "exp");
}

inline Tensor log(const Tensor& x) {
  return detail::unary_op(
      x, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; }, "log");
}

inline Tensor abs(const Tensor& x) {
  return detail::unary_op(
      x, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); },
      "abs");
}

inline Tensor pow_const(const Tensor& x, double p) {
  return detail::unary_op(
      x, [p](double v) { return std::pow(v, p); },
      [p](double v, double) { return p * std::pow(v, p - 1.0); }, "pow");
}

// Wraps angles to [-pi, pi). Pass-through gradient (shift is locally
// constant).
inline Tensor wrap_angle(const Tensor& x) {
  constexpr double kTwoPi = 6.283185307179586476925286766559;
  return detail::unary_op(
      x,
      [](double v) {
        double w = v - kTwoPi * std::floor((v + 3.14159265358979323846) / kTwoPi);
        return w;
      },
      [](double, double) { return 1.0; }, "wrap_angle");
}

// atan2(y, x) elementwise. The (0,0) input is pinned to angle 0 with zero
// gradient.
inline Tensor atan2(const Tensor& y, const Tensor& x) {
  detail::require_same_shape(y, x, "atan2");
  std::vector<double> v(y.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = (y.at(i) == 0.0 && x.at(i) == 0.0) ? 0.0 : std::atan2(y.at(i), x.at(i));
  }
  auto* py = y.node();
  auto* px = x.node();
  return detail::make_op(
      y.shape(), std::move(v), {y, x}, [py, px](detail::Node& n) {
        for (std::size_t i = 0; i < n.value.size(); ++i) {
          double yy = py->value[i], xx = px->value[i];
          double d = xx * xx + yy * yy;
          if (d == 0.0) continue;
          if (py->requires_grad) py->grad_buf()[i] += n.grad[i] * xx / d;
          if (px->requires_grad) px->grad_buf()[i] -= n.grad[i] * yy / d;
        }
      });
}

// ---------------------------------------------------------------------------
// matrix ops

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 ||
      a.shape()[1] != b.shape()[0])
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> v(m * n, 0.0);
  const auto& av = a.data();
  const auto& bv = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = &bv[p * n];
      double* vrow = &v[i * n];
      for (std::size_t j = 0; j < n; ++j) vrow[j] += aip * brow[j];
    }
  auto* pa = a.node();
  auto* pb = b.node();
  return detail::make_op(
      {m, n}, std::move(v), {a, b}, [pa, pb, m, k, n](detail::Node& nd) {
        const auto& g = nd.grad;
        if (pa->requires_grad) {
          auto& ga = pa->grad_buf();
          // dA += G * B^T
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
              double gij = g[i * n + j];
              if (gij == 0.0) continue;
              const double* brow = &pb->value[0] + j;  // column j of B
              for (std::size_t p = 0; p < k; ++p)
                ga[i * k + p] += gij * brow[p * n];
            }
        }
        if (pb->requires_grad) {
          auto& gb = pb->grad_buf();
          // dB += A^T * G
          for (std::size_t p = 0; p < k; ++p)
            for (std::size_t i = 0; i < m; ++i) {
              double aip = pa->value[i * k + p];
              if (aip == 0.0) continue;
              const double* grow = &g[i * n];
              double* gbrow = &gb[p * n];
              for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
            }
        }
      });
}

inline Tensor transpose(const Tensor& a) {
  if (a.shape().size() != 2)
    throw ShapeError("transpose: expected 2-d tensor, got " +
                     shape_str(a.shape()));
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<double> v(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) v[j * m + i] = a.at(i * n + j);
  auto* pa = a.node();
  return detail::make_op({n, m}, std::move(v), {a},
                         [pa, m, n](detail::Node& nd) {
                           auto& ga = pa->grad_buf();
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t j = 0; j < n; ++j)
                               ga[i * n + j] += nd.grad[j * m + i];
                         });
}

// y = x * W^T (+ b per row). W is [out x in], b is [out] or empty tensor.
inline Tensor linear(const Tensor& x, const Tensor& w) {
  return matmul(x, transpose(w));
}

inline Tensor add_rowvec(const Tensor& x, const Tensor& v);

inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_rowvec(matmul(x, transpose(w)), b);
}

// Broadcast-add a row vector (shape [d] or [1 x d]) to every row.
inline Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  const std::size_t r = x.rows(), c = x.cols();
  if (v.size() != c)
    throw ShapeError("add_rowvec: row vector " + shape_str(v.shape()) +
                     " does not match " + shape_str(x.shape()));
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x.at(i * c + j) + v.at(j);
  auto* px = x.node();
  auto* pv = v.node();
  return detail::make_op(x.shape(), std::move(out), {x, v},
                         [px, pv, r, c](detail::Node& nd) {
                           if (px->requires_grad) {
                             auto& g = px->grad_buf();
                             for (std::size_t i = 0; i < g.size(); ++i)
                               g[i] += nd.grad[i];
                           }
                           if (pv->requires_grad) {
                             auto& g = pv->grad_buf();
                             for (std::size_t i = 0; i < r; ++i)
                               for (std::size_t j = 0; j < c; ++j)
                                 g[j] += nd.grad[i * c + j];
                           }
                         });
}

// ---------------------------------------------------------------------------
// reductions and normalizations

inline Tensor sum_all(const Tensor& x) {
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x.at(i);
  auto* px = x.node();
  return detail::make_op({1}, {s}, {x}, [px](detail::Node& nd) {
    auto& g = px->grad_buf();
    for (auto& gi : g) gi += nd.grad[0];
  });
}

inline Tensor mean_all(const Tensor& x) {
  if (x.size() == 0) throw ShapeError("mean_all: empty tensor");
  return scale(sum_all(x), 1.0 / static_cast<double>(x.size()));
}

// Column mean: [n x d] -> [1 x d].
inline Tensor mean_dim0(const Tensor& x) {
  const std::size_t r = x.rows(), c = x.cols();
  if (r == 0) throw ShapeError("mean_dim0: zero rows");
  std::vector<double> v(c, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) v[j] += x.at(i * c + j);
  for (auto& e : v) e /= static_cast<double>(r);
  auto* px = x.node();
  return detail::make_op({1, c}, std::move(v), {x},
                         [px, r, c](detail::Node& nd) {
                           auto& g = px->grad_buf();
                           for (std::size_t i = 0; i < r; ++i)
                             for (std::size_t j = 0; j < c; ++j)
                               g[i * c + j] += nd.grad[j] / static_cast<double>(r);
                         });
}

// Row-stochastic softmax over the last dimension.
inline Tensor softmax_lastdim(const Tensor& x) {
  const std::size_t r = x.rows(), c = x.cols();
  if (c == 0) throw ShapeError("softmax: empty last dimension");
  std::vector<double> v(x.size());
  for (std::size_t i = 0; i < r; ++i) {
    double mx = x.at(i * c);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x.at(i * c + j));
    double z = 0;
    for (std::size_t j = 0; j < c; ++j) {
      v[i * c + j] = std::exp(x.at(i * c + j) - mx);
      z += v[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) v[i * c + j] /= z;
  }
  auto* px = x.node();
  std::vector<double> y = v;
  return detail::make_op(x.shape(), std::move(v), {x},
                         [px, y = std::move(y), r, c](detail::Node& nd) {
                           auto& g = px->grad_buf();
                           for (std::size_t i = 0; i < r; ++i) {
                             double dot = 0;
                             for (std::size_t j = 0; j < c; ++j)
                               dot += nd.grad[i * c + j] * y[i * c + j];
                             for (std::size_t j = 0; j < c; ++j)
                               g[i * c + j] +=
                                   y[i * c + j] * (nd.grad[i * c + j] - dot);
                           }
                         });
}

// Parameter-free layer normalization over the last dimension.
inline Tensor layernorm_lastdim(const Tensor& x, double eps = 1e-5) {
  const std::size_t r = x.rows(), c = x.cols();
  if (c == 0) throw ShapeError("layernorm: empty last dimension");
  std::vector<double> v(x.size()), inv_std(r), means(r);
  for (std::size_t i = 0; i < r; ++i) {
    double mu = 0;
    for (std::size_t j = 0; j < c; ++j) mu += x.at(i * c + j);
    mu /= static_cast<double>(c);
    double var = 0;
    for (std::size_t j = 0; j < c; ++j) {
      double d = x.at(i * c + j) - mu;
      var += d * d;
    }
    var /= static_cast<double>(c);
    double inv = 1.0 / std::sqrt(var + eps);
    means[i] = mu;
    inv_std[i] = inv;
    for (std::size_t j = 0; j < c; ++j) v[i * c + j] = (x.at(i * c + j) - mu) * inv;
  }
  auto* px = x.node();
  std::vector<double> y = v;
  return detail::make_op(
      x.shape(), std::move(v), {x},
      [px, y = std::move(y), inv_std = std::move(inv_std), r, c](detail::Node& nd) {
        auto& g = px->grad_buf();
        for (std::size_t i = 0; i < r; ++i) {
          double gmean = 0, gydot = 0;
          for (std::size_t j = 0; j < c; ++j) {
            gmean += nd.grad[i * c + j];
            gydot += nd.grad[i * c + j] * y[i * c + j];
          }
          gmean /= static_cast<double>(c);
          gydot /= static_cast<double>(c);
          for (std::size_t j = 0; j < c; ++j)
            g[i * c + j] +=
                inv_std[i] * (nd.grad[i * c + j] - gmean - y[i * c + j] * gydot);
        }
      });
}

// ---------------------------------------------------------------------------
// layout ops

inline Tensor concat_lastdim(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows())
    throw ShapeError("concat_lastdim: row mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  const std::size_t r = a.rows(), ca = a.cols(), cb = b.cols();
  std::vector<double> v(r * (ca + cb));
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < ca; ++j) v[i * (ca + cb) + j] = a.at(i * ca + j);
    for (std::size_t j = 0; j < cb; ++j)
      v[i * (ca + cb) + ca + j] = b.at(i * cb + j);
  }
  auto* pa = a.node();
  auto* pb = b.node();
  return detail::make_op({r, ca + cb}, std::move(v), {a, b},
                         [pa, pb, r, ca, cb](detail::Node& nd) {
                           if (pa->requires_grad) {
                             auto& g = pa->grad_buf();
                             for (std::size_t i = 0; i < r; ++i)
                               for (std::size_t j = 0; j < ca; ++j)
                                 g[i * ca + j] += nd.grad[i * (ca + cb) + j];
                           }
                           if (pb->requires_grad) {
                             auto& g = pb->grad_buf();
                             for (std::size_t i = 0; i < r; ++i)
                               for (std::size_t j = 0; j < cb; ++j)
                                 g[i * cb + j] += nd.grad[i * (ca + cb) + ca + j];
                           }
                         });
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no parts");
  const std::size_t c = parts[0].cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.cols() != c)
      throw ShapeError("concat_rows: column mismatch " +
                       shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    total += p.rows();
  }
  std::vector<double> v;
  v.reserve(total * c);
  for (const auto& p : parts) v.insert(v.end(), p.data().begin(), p.data().end());
  std::vector<detail::Node*> raw;
  raw.reserve(parts.size());
  std::vector<std::size_t> row_of;
  for (const auto& p : parts) {
    raw.push_back(p.node());
    row_of.push_back(p.rows());
  }
  return detail::make_op(
      {total, c}, std::move(v), parts,
      [raw = std::move(raw), row_of = std::move(row_of), c](detail::Node& nd) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < raw.size(); ++k) {
          if (raw[k]->requires_grad) {
            auto& g = raw[k]->grad_buf();
            for (std::size_t i = 0; i < row_of[k] * c; ++i)
              g[i] += nd.grad[off + i];
          }
          off += row_of[k] * c;
        }
      });
}

inline Tensor slice_rows(const Tensor& x, std::size_t r0, std::size_t n) {
  const std::size_t r = x.rows(), c = x.cols();
  if (r0 + n > r)
    throw ShapeError("slice_rows: range [" + std::to_string(r0) + "," +
                     std::to_string(r0 + n) + ") exceeds " +
                     shape_str(x.shape()));
  std::vector<double> v(x.data().begin() + r0 * c, x.data().begin() + (r0 + n) * c);
  auto* px = x.node();
  return detail::make_op({n, c}, std::move(v), {x},
                         [px, r0, n, c](detail::Node& nd) {
                           auto& g = px->grad_buf();
                           for (std::size_t i = 0; i < n * c; ++i)
                             g[r0 * c + i] += nd.grad[i];
                         });
}

inline Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t n) {
  const std::size_t r = x.rows(), c = x.cols();
  if (c0 + n > c)
    throw ShapeError("slice_cols: range [" + std::to_string(c0) + "," +
                     std::to_string(c0 + n) + ") exceeds " +
                     shape_str(x.shape()));
  std::vector<double> v(r * n);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < n; ++j) v[i * n + j] = x.at(i * c + c0 + j);
  auto* px = x.node();
  return detail::make_op({r, n}, std::move(v), {x},
                         [px, r, c, c0, n](detail::Node& nd) {
                           auto& g = px->grad_buf();
                           for (std::size_t i = 0; i < r; ++i)
                             for (std::size_t j = 0; j < n; ++j)
                               g[i * c + c0 + j] += nd.grad[i * n + j];
                         });
}

// Row lookup (embedding gather). Duplicate ids accumulate gradient.
inline Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& ids) {
  const std::size_t r = table.rows(), c = table.cols();
  std::vector<double> v(ids.size() * c);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= r)
      throw ShapeError("gather_rows: id " + std::to_string(ids[i]) +
                       " out of range for " + shape_str(table.shape()));
    for (std::size_t j = 0; j < c; ++j) v[i * c + j] = table.at(ids[i] * c + j);
  }
  auto* pt = table.node();
  return detail::make_op({ids.size(), c}, std::move(v), {table},
                         [pt, ids, c](detail::Node& nd) {
                           auto& g = pt->grad_buf();
                           for (std::size_t i = 0; i < ids.size(); ++i)
                             for (std::size_t j = 0; j < c; ++j)
                               g[ids[i] * c + j] += nd.grad[i * c + j];
                         });
}

// Scatter rows of x into n_cells buckets; each bucket stores the mean of
// the rows assigned to it, empty buckets stay zero.
inline Tensor scatter_mean_rows(const Tensor& x,
                                const std::vector<std::size_t>& cell,
                                std::size_t n_cells) {
  const std::size_t r = x.rows(), c = x.cols();
  if (cell.size() != r)
    throw ShapeError("scatter_mean_rows: " + std::to_string(cell.size()) +
                     " cell ids for " + shape_str(x.shape()));
  std::vector<double> v(n_cells * c, 0.0);
  std::vector<std::size_t> count(n_cells, 0);
  for (std::size_t i = 0; i < r; ++i) {
    if (cell[i] >= n_cells)
      throw ShapeError("scatter_mean_rows: cell id out of range");
    count[cell[i]]++;
    for (std::size_t j = 0; j < c; ++j) v[cell[i] * c + j] += x.at(i * c + j);
  }
  for (std::size_t k = 0; k < n_cells; ++k)
    if (count[k] > 1)
      for (std::size_t j = 0; j < c; ++j)
        v[k * c + j] /= static_cast<double>(count[k]);
  auto* px = x.node();
  return detail::make_op(
      {n_cells, c}, std::move(v), {x},
      [px, cell, count = std::move(count), c](detail::Node& nd) {
        auto& g = px->grad_buf();
        for (std::size_t i = 0; i < cell.size(); ++i) {
          double inv = 1.0 / static_cast<double>(count[cell[i]]);
          for (std::size_t j = 0; j < c; ++j)
            g[i * c + j] += nd.grad[cell[i] * c + j] * inv;
        }
      });
}

// out[p] = sum_q w[p][q] * x[idx[p][q]]; fixed sparse row mixing, used for
// bilinear resampling.
inline Tensor gather_weighted_rows(
    const Tensor& x, const std::vector<std::array<std::size_t, 4>>& idx,
    const std::vector<std::array<double, 4>>& w) {
  const std::size_t c = x.cols(), p = idx.size();
  if (w.size() != p)
    throw ShapeError("gather_weighted_rows: index/weight count mismatch");
  std::vector<double> v(p * c, 0.0);
  for (std::size_t i = 0; i < p; ++i)
    for (int q = 0; q < 4; ++q) {
      if (idx[i][q] >= x.rows())
        throw ShapeError("gather_weighted_rows: row id out of range");
      for (std::size_t j = 0; j < c; ++j)
        v[i * c + j] += w[i][q] * x.at(idx[i][q] * c + j);
    }
  auto* px = x.node();
  return detail::make_op({p, c}, std::move(v), {x},
                         [px, idx, w, c](detail::Node& nd) {
                           auto& g = px->grad_buf();
                           for (std::size_t i = 0; i < idx.size(); ++i)
                             for (int q = 0; q < 4; ++q)
                               for (std::size_t j = 0; j < c; ++j)
                                 g[idx[i][q] * c + j] +=
                                     w[i][q] * nd.grad[i * c + j];
                         });
}

// 3x3 patch extraction on an h*w grid stored row-major as [(h*w) x c].
// Output row for cell (i,j) is the 9 neighbor rows concatenated
// (raster order, zero padding outside the grid): [(h*w) x 9c].
inline Tensor im2col_3x3(const Tensor& x, std::size_t h, std::size_t w) {
  const std::size_t c = x.cols();
  if (x.rows() != h * w)
    throw ShapeError("im2col_3x3: grid " + std::to_string(h) + "x" +
                     std::to_string(w) + " does not match " +
                     shape_str(x.shape()));
  std::vector<double> v(h * w * 9 * c, 0.0);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      std::size_t out_row = i * w + j;
      for (int k = 0; k < 9; ++k) {
        int di = k / 3 - 1, dj = k % 3 - 1;
        int ni = static_cast<int>(i) + di, nj = static_cast<int>(j) + dj;
        if (ni < 0 || nj < 0 || ni >= static_cast<int>(h) ||
            nj >= static_cast<int>(w))
          continue;
        std::size_t in_row = static_cast<std::size_t>(ni) * w + nj;
        for (std::size_t ch = 0; ch < c; ++ch)
          v[(out_row * 9 + k) * c + ch] = x.at(in_row * c + ch);
      }
    }
  auto* px = x.node();
  return detail::make_op(
      {h * w, 9 * c}, std::move(v), {x}, [px, h, w, c](detail::Node& nd) {
        auto& g = px->grad_buf();
        for (std::size_t i = 0; i < h; ++i)
          for (std::size_t j = 0; j < w; ++j) {
            std::size_t out_row = i * w + j;
            for (int k = 0; k < 9; ++k) {
              int di = k / 3 - 1, dj = k % 3 - 1;
              int ni = static_cast<int>(i) + di, nj = static_cast<int>(j) + dj;
              if (ni < 0 || nj < 0 || ni >= static_cast<int>(h) ||
                  nj >= static_cast<int>(w))
                continue;
              std::size_t in_row = static_cast<std::size_t>(ni) * w + nj;
              for (std::size_t ch = 0; ch < c; ++ch)
                g[in_row * c + ch] += nd.grad[(out_row * 9 + k) * c + ch];
            }
          }
      });
}

// Per-row cosine similarity of two [n x d] tensors -> [n].
inline Tensor cosine_rows(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "cosine_rows");
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> v(r), saa(r), sbb(r), sab(r);
  for (std::size_t i = 0; i < r; ++i) {
    double aa = 0, bb = 0, ab = 0;
    for (std::size_t j = 0; j < c; ++j) {
      double av = a.at(i * c + j), bv = b.at(i * c + j);
      aa += av * av;
      bb += bv * bv;
      ab += av * bv;
    }
    saa[i] = aa;
    sbb[i] = bb;
    sab[i] = ab;
    v[i] = (aa == 0.0 || bb == 0.0) ? 0.0 : ab / std::sqrt(aa * bb);
  }
  auto* pa = a.node();
  auto* pb = b.node();
  std::vector<double> cv = v;
  return detail::make_op(
      {r}, std::move(v), {a, b},
      [pa, pb, saa = std::move(saa), sbb = std::move(sbb), cv = std::move(cv), r,
       c](detail::Node& nd) {
        for (std::size_t i = 0; i < r; ++i) {
          if (saa[i] == 0.0 || sbb[i] == 0.0) continue;
          double denom = std::sqrt(saa[i] * sbb[i]);
          double gi = nd.grad[i];
          if (gi == 0.0) continue;
          for (std::size_t j = 0; j < c; ++j) {
            double av = pa->value[i * c + j], bv = pb->value[i * c + j];
            if (pa->requires_grad)
              pa->grad_buf()[i * c + j] += gi * (bv / denom - cv[i] * av / saa[i]);
            if (pb->requires_grad)
              pb->grad_buf()[i * c + j] += gi * (av / denom - cv[i] * bv / sbb[i]);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// backward

// Reverse-mode accumulation from a scalar loss into every reachable
// tensor with requires_grad. A second call on the same loss (without a
// fresh forward pass) is an error.
inline void backward(const Tensor& loss) {
  auto* root = loss.node();
  if (loss.size() != 1)
    throw GradError("backward: loss must be scalar, got " +
                    shape_str(loss.shape()));
  if (!root->requires_grad)
    throw GradError("backward: loss is detached from any tracked parameter");
  if (root->backward_done)
    throw GradError("backward: already called on this loss");
  root->backward_done = true;

  // iterative post-order topological sort
  std::vector<detail::Node*> topo;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* n : topo) n->grad_buf();
  root->grad[0] = 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it)
    if ((*it)->pull) (*it)->pull();
}

// ---------------------------------------------------------------------------
// composite primitives

enum class Nonlinearity { relu, sigmoid };

struct LinearLayer {
  Tensor w;  // [out x in]
  Tensor b;  // [out]
};

// affine -> nonlinearity chain; the final layer stays affine.
inline Tensor mlp(const Tensor& x, const std::vector<LinearLayer>& layers,
                  Nonlinearity kind = Nonlinearity::relu) {
  if (layers.empty()) throw ShapeError("mlp: no layers");
  Tensor h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = linear(h, layers[i].w, layers[i].b);
    if (i + 1 < layers.size())
      h = kind == Nonlinearity::relu ? relu(h) : sigmoid(h);
  }
  return h;
}

// Multi-head scaled dot-product attention with a learned output
// projection. Q [q x D], K,V [k x D], D divisible by heads. If
// attn_weights is non-null it receives the per-head softmax matrices
// (heads entries of q x k, values only).
inline Tensor scaled_dot_attention(
    const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
    const Tensor& w_out, std::vector<std::vector<double>>* attn_weights = nullptr) {
  const std::size_t d = q.cols();
  if (k.cols() != d || v.cols() != d)
    throw ShapeError("attention: key/value dim mismatch " +
                     shape_str(k.shape()) + " vs " + shape_str(q.shape()));
  if (k.rows() != v.rows())
    throw ShapeError("attention: key/value row mismatch");
  if (k.rows() == 0) throw EmptyKeyError("attention: empty key set");
  if (heads == 0 || d % heads != 0)
    throw ShapeError("attention: dim " + std::to_string(d) +
                     " not divisible by " + std::to_string(heads) + " heads");
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> head_out;
  head_out.reserve(heads);
  if (attn_weights) attn_weights->clear();
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, dh);
    Tensor kh = slice_cols(k, h * dh, dh);
    Tensor vh = slice_cols(v, h * dh, dh);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    Tensor a = softmax_lastdim(scores);
    if (attn_weights) attn_weights->push_back(a.data());
    head_out.push_back(matmul(a, vh));
  }
  Tensor merged = head_out[0];
  for (std::size_t h = 1; h < heads; ++h)
    merged = concat_lastdim(merged, head_out[h]);
  return linear(merged, w_out);
}

}  // namespace trackteller::numcore
