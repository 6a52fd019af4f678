#pragma once

// Reverse-mode differentiation over dense 2-D tensors.
//
// A Var is a handle to a node in a dynamically built graph. Leaves created
// with Var::parameter accumulate gradients across backward() calls until
// zero_grad() is called; intermediate gradients are scratch space that is
// reset on each sweep and released once consumed.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cws/error.hpp"
#include "cws/tensor.hpp"

namespace cws {

struct Node {
  Tensor value;
  Tensor grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  const char* op = "leaf";
  std::string name;
  bool requires_grad = false;

  bool is_leaf() const { return !backward; }

  Tensor& grad_buffer() {
    if (grad.shape() != value.shape() || grad.empty()) grad = Tensor(value.rows(), value.cols());
    return grad;
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value) : node_(std::make_shared<Node>()) { node_->value = std::move(value); }

  // A named leaf that collects gradients.
  static Var parameter(Tensor value, std::string name) {
    Var v(std::move(value));
    v.node_->requires_grad = true;
    v.node_->name = std::move(name);
    return v;
  }

  static Var constant(Tensor value) { return Var(std::move(value)); }
  static Var scalar(double v) { return Var(Tensor::scalar(v)); }

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad_buffer(); }
  Tensor& mutable_grad() { return node_->grad_buffer(); }
  Shape shape() const { return node_->value.shape(); }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  double item() const { return node_->value.item(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const std::string& name() const { return node_->name; }
  const char* op() const { return node_->op; }
  void zero_grad() { node_->grad_buffer().fill(0.0); }

  std::shared_ptr<Node> node() const { return node_; }
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<Node> node_;
};

using GradientMap = std::map<std::string, Tensor>;

namespace detail {

inline Var make_op(Tensor value, std::vector<Var> inputs, const char* op,
                   std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = op;
  for (const auto& in : inputs) n->requires_grad = n->requires_grad || in.requires_grad();
  if (n->requires_grad) {
    n->parents.reserve(inputs.size());
    for (const auto& in : inputs) n->parents.push_back(in.node());
    n->backward = std::move(backward);
  }
  return Var(std::move(n));
}

inline bool wants(const Node& self, std::size_t i) { return self.parents[i]->requires_grad; }
inline Tensor& pgrad(Node& self, std::size_t i) { return self.parents[i]->grad_buffer(); }
inline const Tensor& pval(const Node& self, std::size_t i) { return self.parents[i]->value; }

inline std::size_t bdim(std::size_t a, std::size_t b, const char* op, const Shape& sa, const Shape& sb) {
  if (a == b) return a;
  if (a == 1) return b;
  if (b == 1) return a;
  throw ContractViolation(std::string(op) + ": shape mismatch " + to_string(sa) + " vs " + to_string(sb));
}

// Sum `g` (shape of the broadcast result) into `acc` (shape of one operand).
inline void reduce_into(Tensor& acc, const Tensor& g, const Tensor* scale = nullptr) {
  const std::size_t ar = acc.rows(), ac = acc.cols();
  for (std::size_t r = 0; r < g.rows(); ++r) {
    const std::size_t rr = ar == 1 ? 0 : r;
    for (std::size_t c = 0; c < g.cols(); ++c) {
      const std::size_t cc = ac == 1 ? 0 : c;
      double v = g(r, c);
      if (scale != nullptr) v *= (*scale)(scale->rows() == 1 ? 0 : r, scale->cols() == 1 ? 0 : c);
      acc(rr, cc) += v;
    }
  }
}

template <class F>
Tensor broadcast_apply(const Tensor& a, const Tensor& b, const char* op, F f) {
  const std::size_t r = bdim(a.rows(), b.rows(), op, a.shape(), b.shape());
  const std::size_t c = bdim(a.cols(), b.cols(), op, a.shape(), b.shape());
  Tensor out(r, c);
  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[i]);
    return out;
  }
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t ai = a.rows() == 1 ? 0 : i, bi = b.rows() == 1 ? 0 : i;
    for (std::size_t j = 0; j < c; ++j) {
      out(i, j) = f(a(ai, a.cols() == 1 ? 0 : j), b(bi, b.cols() == 1 ? 0 : j));
    }
  }
  return out;
}

template <class F, class DF>
Var unary(const Var& x, const char* op, F f, DF df) {
  const Tensor& xv = x.value();
  Tensor out(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  return make_op(std::move(out), {x}, op, [df](Node& self) {
    const Tensor& xin = pval(self, 0);
    Tensor& g = pgrad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(xin[i], self.value[i]);
  });
}

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMajor>;
using CMapMat = Eigen::Map<const RowMajor>;

inline CMapMat as_eigen(const Tensor& t) {
  return CMapMat(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
inline MapMat as_eigen(Tensor& t) {
  return MapMat(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Backward pass

inline GradientMap backward(const Var& root) {
  require(root.defined(), "backward: undefined root");
  require(root.value().is_scalar(), "backward: root must be scalar, got " + to_string(root.shape()));
  GradientMap touched;
  if (!root.requires_grad()) return touched;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Parents come first, so the first NaN found names the op that produced it.
  for (Node* n : order) {
    for (double v : n->value.data()) {
      if (std::isnan(v)) throw NumericFault(std::string("backward: NaN value produced by op '") + n->op + "'");
    }
    if (!n->is_leaf()) n->grad = Tensor(n->value.rows(), n->value.cols());
  }
  root.node()->grad_buffer()[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->is_leaf()) continue;
    n->backward(*n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && !p->grad.all_finite()) {
        throw NumericFault(std::string("backward: non-finite gradient produced by op '") + n->op + "'");
      }
    }
    n->grad = Tensor();
  }

  for (Node* n : order) {
    if (n->is_leaf() && !n->name.empty()) touched.emplace(n->name, n->grad);
  }
  return touched;
}

// ---------------------------------------------------------------------------
// Elementwise binary ops (with row/column broadcasting)

inline Var add(const Var& a, const Var& b) {
  Tensor out = detail::broadcast_apply(a.value(), b.value(), "add", [](double x, double y) { return x + y; });
  return detail::make_op(std::move(out), {a, b}, "add", [](Node& self) {
    if (detail::wants(self, 0)) detail::reduce_into(detail::pgrad(self, 0), self.grad);
    if (detail::wants(self, 1)) detail::reduce_into(detail::pgrad(self, 1), self.grad);
  });
}

inline Var sub(const Var& a, const Var& b) {
  Tensor out = detail::broadcast_apply(a.value(), b.value(), "sub", [](double x, double y) { return x - y; });
  return detail::make_op(std::move(out), {a, b}, "sub", [](Node& self) {
    if (detail::wants(self, 0)) detail::reduce_into(detail::pgrad(self, 0), self.grad);
    if (detail::wants(self, 1)) {
      Tensor neg = self.grad;
      for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -neg[i];
      detail::reduce_into(detail::pgrad(self, 1), neg);
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  Tensor out = detail::broadcast_apply(a.value(), b.value(), "mul", [](double x, double y) { return x * y; });
  return detail::make_op(std::move(out), {a, b}, "mul", [](Node& self) {
    if (detail::wants(self, 0)) detail::reduce_into(detail::pgrad(self, 0), self.grad, &detail::pval(self, 1));
    if (detail::wants(self, 1)) detail::reduce_into(detail::pgrad(self, 1), self.grad, &detail::pval(self, 0));
  });
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }

// ---------------------------------------------------------------------------
// Scalar-constant and unary ops

inline Var scale(const Var& x, double c) {
  return detail::unary(
      x, "scale", [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline Var add_scalar(const Var& x, double c) {
  return detail::unary(
      x, "add_scalar", [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

inline Var neg(const Var& x) { return scale(x, -1.0); }
inline Var operator-(const Var& x) { return neg(x); }

inline Var exp(const Var& x) {
  return detail::unary(
      x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Var log(const Var& x) {
  return detail::unary(
      x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Var tanh(const Var& x) {
  return detail::unary(
      x, "tanh", [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

inline double sigmoid_scalar(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

inline double softplus_scalar(double v) {
  return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
}

inline Var sigmoid(const Var& x) {
  return detail::unary(
      x, "sigmoid", [](double v) { return sigmoid_scalar(v); }, [](double, double y) { return y * (1.0 - y); });
}

inline Var softplus(const Var& x) {
  return detail::unary(
      x, "softplus", [](double v) { return softplus_scalar(v); },
      [](double v, double) { return sigmoid_scalar(v); });
}

inline Var square(const Var& x) {
  return detail::unary(
      x, "square", [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

inline Var detach(const Var& x) { return Var::constant(x.value()); }

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw ContractViolation("matmul: shape mismatch " + to_string(av.shape()) + " vs " + to_string(bv.shape()));
  }
  Tensor out(av.rows(), bv.cols());
  detail::as_eigen(out).noalias() = detail::as_eigen(av) * detail::as_eigen(bv);
  return detail::make_op(std::move(out), {a, b}, "matmul", [](Node& self) {
    const auto g = detail::as_eigen(static_cast<const Tensor&>(self.grad));
    if (detail::wants(self, 0)) {
      detail::as_eigen(detail::pgrad(self, 0)).noalias() += g * detail::as_eigen(detail::pval(self, 1)).transpose();
    }
    if (detail::wants(self, 1)) {
      detail::as_eigen(detail::pgrad(self, 1)).noalias() += detail::as_eigen(detail::pval(self, 0)).transpose() * g;
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

enum class Reduce { per_row, per_col, all };

inline Var sum(const Var& x, Reduce how = Reduce::all) {
  const Tensor& v = x.value();
  Tensor out = how == Reduce::per_row ? Tensor(v.rows(), 1) : how == Reduce::per_col ? Tensor(1, v.cols()) : Tensor(1, 1);
  for (std::size_t r = 0; r < v.rows(); ++r) {
    for (std::size_t c = 0; c < v.cols(); ++c) {
      out(how == Reduce::per_row ? r : 0, how == Reduce::per_col ? c : 0) += v(r, c);
    }
  }
  return detail::make_op(std::move(out), {x}, "sum", [](Node& self) {
    Tensor& g = detail::pgrad(self, 0);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      for (std::size_t c = 0; c < g.cols(); ++c) {
        g(r, c) += self.grad(self.grad.rows() == 1 ? 0 : r, self.grad.cols() == 1 ? 0 : c);
      }
    }
  });
}

inline Var mean(const Var& x) {
  require(x.value().size() > 0, "mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

// log(sum(exp(x))) along an axis, evaluated with a max shift. An all -inf
// slice yields -inf with zero gradient.
inline Var logsumexp(const Var& x, Reduce how = Reduce::all) {
  const Tensor& v = x.value();
  const std::size_t n_out_r = how == Reduce::per_col || how == Reduce::all ? 1 : v.rows();
  const std::size_t n_out_c = how == Reduce::per_row || how == Reduce::all ? 1 : v.cols();
  if ((how == Reduce::per_row && v.cols() == 0) || (how == Reduce::per_col && v.rows() == 0) || v.size() == 0) {
    throw ContractViolation("logsumexp: empty reduction axis for shape " + to_string(v.shape()));
  }
  auto slot = [&](std::size_t r, std::size_t c) {
    return std::pair<std::size_t, std::size_t>{n_out_r == 1 ? 0 : r, n_out_c == 1 ? 0 : c};
  };
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  Tensor mx(n_out_r, n_out_c, kNegInf);
  for (std::size_t r = 0; r < v.rows(); ++r)
    for (std::size_t c = 0; c < v.cols(); ++c) {
      auto [i, j] = slot(r, c);
      mx(i, j) = std::max(mx(i, j), v(r, c));
    }
  Tensor acc(n_out_r, n_out_c);
  for (std::size_t r = 0; r < v.rows(); ++r)
    for (std::size_t c = 0; c < v.cols(); ++c) {
      auto [i, j] = slot(r, c);
      if (std::isfinite(mx(i, j))) acc(i, j) += std::exp(v(r, c) - mx(i, j));
    }
  Tensor out(n_out_r, n_out_c);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::isfinite(mx[i]) ? mx[i] + std::log(acc[i]) : mx[i];
  return detail::make_op(std::move(out), {x}, "logsumexp", [how](Node& self) {
    const Tensor& xin = detail::pval(self, 0);
    Tensor& g = detail::pgrad(self, 0);
    for (std::size_t r = 0; r < xin.rows(); ++r)
      for (std::size_t c = 0; c < xin.cols(); ++c) {
        const std::size_t i = how == Reduce::per_row ? r : 0;
        const std::size_t j = how == Reduce::per_col ? c : 0;
        const double lse = self.value(i, j);
        if (std::isfinite(lse)) g(r, c) += self.grad(i, j) * std::exp(xin(r, c) - lse);
      }
  });
}

// Row-wise log-softmax. Entries of -inf are allowed and map to -inf.
inline Var log_softmax(const Var& x) {
  const Tensor& v = x.value();
  require(v.cols() > 0, "log_softmax: zero columns");
  Tensor out(v.rows(), v.cols());
  for (std::size_t r = 0; r < v.rows(); ++r) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < v.cols(); ++c) m = std::max(m, v(r, c));
    double s = 0.0;
    for (std::size_t c = 0; c < v.cols(); ++c) s += std::exp(v(r, c) - m);
    const double lse = m + std::log(s);
    for (std::size_t c = 0; c < v.cols(); ++c) out(r, c) = v(r, c) - lse;
  }
  return detail::make_op(std::move(out), {x}, "log_softmax", [](Node& self) {
    Tensor& g = detail::pgrad(self, 0);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      double gs = 0.0;
      for (std::size_t c = 0; c < g.cols(); ++c) gs += self.grad(r, c);
      for (std::size_t c = 0; c < g.cols(); ++c) g(r, c) += self.grad(r, c) - std::exp(self.value(r, c)) * gs;
    }
  });
}

inline Var softmax(const Var& x) {
  const Tensor& v = x.value();
  require(v.cols() > 0, "softmax: zero columns");
  Tensor out(v.rows(), v.cols());
  for (std::size_t r = 0; r < v.rows(); ++r) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < v.cols(); ++c) m = std::max(m, v(r, c));
    double s = 0.0;
    for (std::size_t c = 0; c < v.cols(); ++c) s += (out(r, c) = std::exp(v(r, c) - m));
    for (std::size_t c = 0; c < v.cols(); ++c) out(r, c) /= s;
  }
  return detail::make_op(std::move(out), {x}, "softmax", [](Node& self) {
    Tensor& g = detail::pgrad(self, 0);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < g.cols(); ++c) dot += self.grad(r, c) * self.value(r, c);
      for (std::size_t c = 0; c < g.cols(); ++c) g(r, c) += self.value(r, c) * (self.grad(r, c) - dot);
    }
  });
}

// ---------------------------------------------------------------------------
// Indexing and layout

// out[r] = x(r, index[r]); result is rows x 1.
inline Var gather_cols(const Var& x, std::span<const int> index) {
  const Tensor& v = x.value();
  require(index.size() == v.rows(), "gather_cols: " + std::to_string(index.size()) + " indices for " +
                                        std::to_string(v.rows()) + " rows");
  Tensor out(v.rows(), 1);
  for (std::size_t r = 0; r < v.rows(); ++r) {
    const int c = index[r];
    if (c < 0 || static_cast<std::size_t>(c) >= v.cols()) {
      throw ContractViolation("gather_cols: index " + std::to_string(c) + " out of range [0," +
                              std::to_string(v.cols()) + ")");
    }
    out(r, 0) = v(r, static_cast<std::size_t>(c));
  }
  std::vector<int> idx(index.begin(), index.end());
  return detail::make_op(std::move(out), {x}, "gather_cols", [idx = std::move(idx)](Node& self) {
    Tensor& g = detail::pgrad(self, 0);
    for (std::size_t r = 0; r < g.rows(); ++r) g(r, static_cast<std::size_t>(idx[r])) += self.grad(r, 0);
  });
}

// out row i = x row index[i].
inline Var gather_rows(const Var& x, std::span<const std::size_t> index) {
  const Tensor& v = x.value();
  Tensor out(index.size(), v.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    require(index[i] < v.rows(), "gather_rows: row " + std::to_string(index[i]) + " out of range " +
                                     std::to_string(v.rows()));
    std::copy_n(v.row_span(index[i]).begin(), v.cols(), out.row_span(i).begin());
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return detail::make_op(std::move(out), {x}, "gather_rows", [idx = std::move(idx)](Node& self) {
    Tensor& g = detail::pgrad(self, 0);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto dst = g.row_span(idx[i]);
      auto src = self.grad.row_span(i);
      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
    }
  });
}

inline Var hcat(const std::vector<Var>& parts) {
  require(!parts.empty(), "hcat: no inputs");
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) {
      throw ContractViolation("hcat: row mismatch " + to_string(parts.front().shape()) + " vs " + to_string(p.shape()));
    }
    cols += p.cols();
  }
  Tensor out(rows, cols);
  std::size_t off = 0;
  for (const auto& p : parts) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < p.cols(); ++c) out(r, off + c) = p.value()(r, c);
    off += p.cols();
  }
  return detail::make_op(std::move(out), parts, "hcat", [](Node& self) {
    std::size_t o = 0;
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      const std::size_t w = self.parents[i]->value.cols();
      if (detail::wants(self, i)) {
        Tensor& g = detail::pgrad(self, i);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < w; ++c) g(r, c) += self.grad(r, o + c);
      }
      o += w;
    }
  });
}

inline Var slice_cols(const Var& x, std::size_t begin, std::size_t end) {
  const Tensor& v = x.value();
  require(begin <= end && end <= v.cols(), "slice_cols: bad range [" + std::to_string(begin) + "," +
                                               std::to_string(end) + ") for " + to_string(v.shape()));
  Tensor out(v.rows(), end - begin);
  for (std::size_t r = 0; r < v.rows(); ++r)
    for (std::size_t c = begin; c < end; ++c) out(r, c - begin) = v(r, c);
  return detail::make_op(std::move(out), {x}, "slice_cols", [begin](Node& self) {
    Tensor& g = detail::pgrad(self, 0);
    for (std::size_t r = 0; r < self.grad.rows(); ++r)
      for (std::size_t c = 0; c < self.grad.cols(); ++c) g(r, begin + c) += self.grad(r, c);
  });
}

inline Var reshape(const Var& x, std::size_t rows, std::size_t cols) {
  require(rows * cols == x.value().size(),
          "reshape: " + to_string(x.shape()) + " cannot become [" + std::to_string(rows) + "x" + std::to_string(cols) + "]");
  Tensor out(rows, cols, x.value().storage());
  return detail::make_op(std::move(out), {x}, "reshape", [](Node& self) {
    Tensor& g = detail::pgrad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

// Sum of a list of same-shaped Vars.
inline Var add_n(const std::vector<Var>& xs) {
  require(!xs.empty(), "add_n: no inputs");
  Var acc = xs.front();
  for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
  return acc;
}

}  // namespace cws
