#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace upt {

using Shape = std::vector<std::size_t>;

class shape_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class numeric_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class io_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

inline std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

struct Node {
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backprop;
};

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

// Disables graph construction for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : saved_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = saved_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};

// Dense row-major tensor of doubles with optional reverse-mode gradient tracking.
// Value semantics: copies share the underlying data and gradient buffers.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<double>>(std::move(values))),
        requires_grad_(requires_grad) {
    if (data_->size() != detail::shape_numel(shape_)) {
      throw shape_error("tensor: data length " + std::to_string(data_->size()) +
                        " does not match shape " + detail::shape_str(shape_));
    }
    if (requires_grad_) grad_ = std::make_shared<std::vector<double>>(data_->size(), 0.0);
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::size_t n = detail::shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }

  static Tensor full(Shape shape, double v) {
    std::size_t n = detail::shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v));
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<double>{v}, requires_grad);
  }

  static Tensor row(std::vector<double> v, bool requires_grad = false) {
    Shape s{v.size()};
    return Tensor(std::move(s), std::move(v), requires_grad);
  }

  bool defined() const { return static_cast<bool>(data_); }
  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const { return data_ ? data_->size() : 0; }
  bool requires_grad() const { return requires_grad_; }

  std::vector<double>& values() { return *data_; }
  const std::vector<double>& values() const { return *data_; }

  std::vector<double>& grad() {
    if (!grad_) throw std::logic_error("tensor: gradient buffer not allocated");
    return *grad_;
  }
  const std::vector<double>& grad() const {
    if (!grad_) throw std::logic_error("tensor: gradient buffer not allocated");
    return *grad_;
  }
  bool has_grad() const { return static_cast<bool>(grad_); }

  Tensor& set_requires_grad(bool rg) {
    requires_grad_ = rg;
    if (rg && !grad_) grad_ = std::make_shared<std::vector<double>>(data_->size(), 0.0);
    return *this;
  }

  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0);
  }

  double item() const {
    if (numel() != 1) {
      throw shape_error("tensor: item() on non-scalar shape " + detail::shape_str(shape_));
    }
    return (*data_)[0];
  }

  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != shape_.size()) {
      throw shape_error("tensor: index rank mismatch for shape " + detail::shape_str(shape_));
    }
    auto st = detail::row_major_strides(shape_);
    std::size_t off = 0, d = 0;
    for (std::size_t i : idx) {
      if (i >= shape_[d]) throw std::out_of_range("tensor: index out of range");
      off += i * st[d++];
    }
    return off;
  }

  double at(std::initializer_list<std::size_t> idx) const { return (*data_)[offset(idx)]; }

  std::shared_ptr<std::vector<double>> data_ptr() const { return data_; }
  std::shared_ptr<std::vector<double>> grad_ptr() const { return grad_; }
  const std::shared_ptr<detail::Node>& node() const { return node_; }
  void set_node(std::shared_ptr<detail::Node> n) { node_ = std::move(n); }

  bool all_finite() const {
    for (double v : *data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  std::shared_ptr<std::vector<double>> grad_;
  bool requires_grad_ = false;
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t k = 0; k < r; ++k) {
    std::size_t ea = k < a.size() ? a[a.size() - 1 - k] : 1;
    std::size_t eb = k < b.size() ? b[b.size() - 1 - k] : 1;
    if (ea != eb && ea != 1 && eb != 1) {
      throw shape_error(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                        " are not broadcastable");
    }
    out[r - 1 - k] = std::max(ea, eb);
  }
  return out;
}

// Per-output-dimension element stride into an input, 0 where the input broadcasts.
inline std::vector<std::size_t> bcast_strides(const Shape& out, const Shape& in) {
  auto ist = row_major_strides(in);
  std::vector<std::size_t> st(out.size(), 0);
  for (std::size_t k = 0; k < out.size(); ++k) {
    std::size_t d = out.size() - 1 - k;
    if (k < in.size()) {
      std::size_t id = in.size() - 1 - k;
      st[d] = (in[id] == 1) ? 0 : ist[id];
    }
  }
  return st;
}

// Odometer over a shape that tracks offsets into two broadcast inputs.
struct BcastIter {
  const Shape& shape;
  std::vector<std::size_t> idx;
  std::vector<std::size_t> sa, sb;
  std::size_t offa = 0, offb = 0;

  BcastIter(const Shape& out, const Shape& a, const Shape& b)
      : shape(out), idx(out.size(), 0), sa(bcast_strides(out, a)), sb(bcast_strides(out, b)) {}

  void advance() {
    for (std::size_t d = shape.size(); d-- > 0;) {
      ++idx[d];
      offa += sa[d];
      offb += sb[d];
      if (idx[d] < shape[d]) return;
      offa -= sa[d] * shape[d];
      offb -= sb[d] * shape[d];
      idx[d] = 0;
    }
  }
};

inline std::vector<std::shared_ptr<Node>> parent_nodes(std::initializer_list<const Tensor*> ts) {
  std::vector<std::shared_ptr<Node>> out;
  for (const Tensor* t : ts)
    if (t->node()) out.push_back(t->node());
  return out;
}

inline bool track(const Tensor& a) { return grad_mode_flag() && a.requires_grad(); }
inline bool track(const Tensor& a, const Tensor& b) {
  return grad_mode_flag() && (a.requires_grad() || b.requires_grad());
}

// fwd(av, bv) -> value; da(av, bv) and db(av, bv) -> local partials.
template <class F, class DA, class DB>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, F fwd, DA da, DB db) {
  Shape os = broadcast_shape(a.shape(), b.shape(), name);
  std::size_t n = shape_numel(os);
  std::vector<double> out(n);
  {
    BcastIter it(os, a.shape(), b.shape());
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < n; ++i, it.advance()) out[i] = fwd(av[it.offa], bv[it.offb]);
  }
  Tensor result(os, std::move(out), track(a, b));
  if (result.requires_grad()) {
    auto node = std::make_shared<Node>();
    node->parents = parent_nodes({&a, &b});
    auto og = result.grad_ptr();
    Shape shape = os;
    node->backprop = [a, b, og, shape, da, db]() {
      BcastIter it(shape, a.shape(), b.shape());
      const auto& av = a.values();
      const auto& bv = b.values();
      const auto& g = *og;
      std::vector<double>* ga = a.requires_grad() ? &const_cast<Tensor&>(a).grad() : nullptr;
      std::vector<double>* gb = b.requires_grad() ? &const_cast<Tensor&>(b).grad() : nullptr;
      for (std::size_t i = 0; i < g.size(); ++i, it.advance()) {
        if (ga) (*ga)[it.offa] += da(av[it.offa], bv[it.offb]) * g[i];
        if (gb) (*gb)[it.offb] += db(av[it.offa], bv[it.offb]) * g[i];
      }
    };
    result.set_node(node);
  }
  return result;
}

// fwd(x) -> value; dv(x, y) -> local partial given input and output values.
template <class F, class D>
Tensor unary_op(const Tensor& a, const char*, F fwd, D dv) {
  std::size_t n = a.numel();
  std::vector<double> out(n);
  const auto& av = a.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i]);
  Tensor result(a.shape(), std::move(out), track(a));
  if (result.requires_grad()) {
    auto node = std::make_shared<Node>();
    node->parents = parent_nodes({&a});
    auto og = result.grad_ptr();
    auto ov = result.data_ptr();
    node->backprop = [a, og, ov, dv]() {
      const auto& av2 = a.values();
      const auto& yv = *ov;
      const auto& g = *og;
      auto& ga = const_cast<Tensor&>(a).grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += dv(av2[i], yv[i]) * g[i];
    };
    result.set_node(node);
  }
  return result;
}

inline double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

inline double stable_softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

}  // namespace detail

// ---- elementwise -----------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

inline Tensor add(const Tensor& a, double c) {
  return detail::unary_op(
      a, "add_scalar", [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

inline Tensor mul(const Tensor& a, double c) {
  return detail::unary_op(
      a, "mul_scalar", [c](double x) { return x * c; }, [c](double, double) { return c; });
}

inline Tensor sub(const Tensor& a, double c) { return add(a, -c); }

// c - a
inline Tensor rsub(double c, const Tensor& a) {
  return detail::unary_op(
      a, "rsub_scalar", [c](double x) { return c - x; }, [](double, double) { return -1.0; });
}

inline Tensor neg(const Tensor& a) { return mul(a, -1.0); }

inline Tensor relu(const Tensor& a) {
  return detail::unary_op(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary_op(
      a, "sigmoid", [](double x) { return detail::stable_sigmoid(x); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor exp(const Tensor& a) {
  return detail::unary_op(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline constexpr double kLogEps = 1e-8;

// log(x + eps); eps guards the zero inputs that arise from IoU/overlap terms.
inline Tensor log(const Tensor& a, double eps = kLogEps) {
  return detail::unary_op(
      a, "log", [eps](double x) { return std::log(x + eps); },
      [eps](double x, double) { return 1.0 / (x + eps); });
}

inline Tensor softplus(const Tensor& a) {
  return detail::unary_op(
      a, "softplus", [](double x) { return detail::stable_softplus(x); },
      [](double x, double) { return detail::stable_sigmoid(x); });
}

inline Tensor pow(const Tensor& a, double p) {
  return detail::unary_op(
      a, "pow", [p](double x) { return std::pow(x, p); },
      [p](double x, double) { return p == 0.0 ? 0.0 : p * std::pow(x, p - 1.0); });
}

// ---- matmul ----------------------------------------------------------------

// Batched matrix product over the last two axes; leading axes broadcast.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw shape_error("matmul: operands must have rank >= 2, got " +
                      detail::shape_str(a.shape()) + " and " + detail::shape_str(b.shape()));
  }
  std::size_t p = a.shape()[a.rank() - 2], q = a.shape()[a.rank() - 1];
  std::size_t q2 = b.shape()[b.rank() - 2], r = b.shape()[b.rank() - 1];
  if (q != q2) {
    throw shape_error("matmul: inner extents disagree for shapes " +
                      detail::shape_str(a.shape()) + " and " + detail::shape_str(b.shape()));
  }
  Shape abatch(a.shape().begin(), a.shape().end() - 2);
  Shape bbatch(b.shape().begin(), b.shape().end() - 2);
  Shape batch = detail::broadcast_shape(abatch, bbatch, "matmul");
  Shape os = batch;
  os.push_back(p);
  os.push_back(r);

  std::size_t nbatch = detail::shape_numel(batch);
  std::vector<double> out(nbatch * p * r, 0.0);
  const auto& av = a.values();
  const auto& bv = b.values();
  {
    detail::BcastIter it(batch, abatch, bbatch);
    for (std::size_t bi = 0; bi < nbatch; ++bi, it.advance()) {
      const double* A = av.data() + it.offa * p * q;
      const double* B = bv.data() + it.offb * q * r;
      double* C = out.data() + bi * p * r;
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < q; ++j) {
          double aij = A[i * q + j];
          if (aij == 0.0) continue;
          const double* Brow = B + j * r;
          double* Crow = C + i * r;
          for (std::size_t k = 0; k < r; ++k) Crow[k] += aij * Brow[k];
        }
    }
  }
  Tensor result(os, std::move(out), detail::track(a, b));
  if (result.requires_grad()) {
    auto node = std::make_shared<detail::Node>();
    node->parents = detail::parent_nodes({&a, &b});
    auto og = result.grad_ptr();
    node->backprop = [a, b, og, batch, abatch, bbatch, p, q, r]() {
      const auto& av2 = a.values();
      const auto& bv2 = b.values();
      const auto& g = *og;
      std::vector<double>* ga = a.requires_grad() ? &const_cast<Tensor&>(a).grad() : nullptr;
      std::vector<double>* gb = b.requires_grad() ? &const_cast<Tensor&>(b).grad() : nullptr;
      std::size_t nbatch2 = detail::shape_numel(batch);
      detail::BcastIter it(batch, abatch, bbatch);
      for (std::size_t bi = 0; bi < nbatch2; ++bi, it.advance()) {
        const double* A = av2.data() + it.offa * p * q;
        const double* B = bv2.data() + it.offb * q * r;
        const double* G = g.data() + bi * p * r;
        if (ga) {
          double* dA = ga->data() + it.offa * p * q;
          for (std::size_t i = 0; i < p; ++i)
            for (std::size_t j = 0; j < q; ++j) {
              double acc = 0.0;
              const double* Brow = B + j * r;
              const double* Grow = G + i * r;
              for (std::size_t k = 0; k < r; ++k) acc += Grow[k] * Brow[k];
              dA[i * q + j] += acc;
            }
        }
        if (gb) {
          double* dB = gb->data() + it.offb * q * r;
          for (std::size_t j = 0; j < q; ++j)
            for (std::size_t i = 0; i < p; ++i) {
              double aij = A[i * q + j];
              if (aij == 0.0) continue;
              const double* Grow = G + i * r;
              double* dBrow = dB + j * r;
              for (std::size_t k = 0; k < r; ++k) dBrow[k] += aij * Grow[k];
            }
        }
      }
    };
    result.set_node(node);
  }
  return result;
}

// ---- reductions and shape ops ----------------------------------------------

inline std::size_t normalize_axis(long axis, std::size_t rank) {
  long r = static_cast<long>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw shape_error("axis " + std::to_string(axis) + " out of range");
  return static_cast<std::size_t>(axis);
}

namespace detail {
// Splits a shape at an axis: product of extents before, at, and after it.
inline void axis_split(const Shape& s, std::size_t axis, std::size_t& outer, std::size_t& extent,
                       std::size_t& inner) {
  outer = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  extent = s[axis];
  inner = 1;
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
}
}  // namespace detail

inline Tensor sum(const Tensor& a, long axis_in, bool keepdim = false) {
  std::size_t axis = normalize_axis(axis_in, a.rank());
  Shape os = a.shape();
  if (keepdim)
    os[axis] = 1;
  else
    os.erase(os.begin() + static_cast<long>(axis));
  std::size_t outer, extent, inner;
  detail::axis_split(a.shape(), axis, outer, extent, inner);

  std::vector<double> out(detail::shape_numel(os), 0.0);
  const auto& av = a.values();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t e = 0; e < extent; ++e) {
      const double* src = av.data() + o * extent * inner + e * inner;
      double* dst = out.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  Tensor result(os, std::move(out), detail::track(a));
  if (result.requires_grad()) {
    auto node = std::make_shared<detail::Node>();
    node->parents = detail::parent_nodes({&a});
    auto og = result.grad_ptr();
    node->backprop = [a, og, outer, extent, inner]() {
      auto& ga = const_cast<Tensor&>(a).grad();
      const auto& g = *og;
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t e = 0; e < extent; ++e) {
          double* dst = ga.data() + o * extent * inner + e * inner;
          const double* src = g.data() + o * inner;
          for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
    };
    result.set_node(node);
  }
  return result;
}

inline Tensor sum_all(const Tensor& a) {
  double total = 0.0;
  for (double v : a.values()) total += v;
  Tensor result(Shape{1}, std::vector<double>{total}, detail::track(a));
  if (result.requires_grad()) {
    auto node = std::make_shared<detail::Node>();
    node->parents = detail::parent_nodes({&a});
    auto og = result.grad_ptr();
    node->backprop = [a, og]() {
      auto& ga = const_cast<Tensor&>(a).grad();
      double g = (*og)[0];
      for (double& v : ga) v += g;
    };
    result.set_node(node);
  }
  return result;
}

inline Tensor mean(const Tensor& a, long axis, bool keepdim = false) {
  std::size_t extent = a.shape()[normalize_axis(axis, a.rank())];
  if (extent == 0) throw shape_error("mean: empty axis");
  return mul(sum(a, axis, keepdim), 1.0 / static_cast<double>(extent));
}

inline Tensor reshape(const Tensor& a, Shape ns) {
  if (detail::shape_numel(ns) != a.numel()) {
    throw shape_error("reshape: cannot view " + detail::shape_str(a.shape()) + " as " +
                      detail::shape_str(ns));
  }
  Tensor result(ns, a.values(), detail::track(a));
  if (result.requires_grad()) {
    auto node = std::make_shared<detail::Node>();
    node->parents = detail::parent_nodes({&a});
    auto og = result.grad_ptr();
    node->backprop = [a, og]() {
      auto& ga = const_cast<Tensor&>(a).grad();
      const auto& g = *og;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    };
    result.set_node(node);
  }
  return result;
}

// Swaps the trailing two axes.
inline Tensor transpose(const Tensor& a) {
  if (a.rank() < 2) throw shape_error("transpose: rank must be >= 2");
  Shape os = a.shape();
  std::swap(os[a.rank() - 2], os[a.rank() - 1]);
  std::size_t rows = a.shape()[a.rank() - 2], cols = a.shape()[a.rank() - 1];
  std::size_t mat = rows * cols, nmat = mat == 0 ? 0 : a.numel() / mat;
  std::vector<double> out(a.numel());
  const auto& av = a.values();
  for (std::size_t b = 0; b < nmat; ++b)
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j)
        out[b * mat + j * rows + i] = av[b * mat + i * cols + j];
  Tensor result(os, std::move(out), detail::track(a));
  if (result.requires_grad()) {
    auto node = std::make_shared<detail::Node>();
    node->parents = detail::parent_nodes({&a});
    auto og = result.grad_ptr();
    node->backprop = [a, og, rows, cols, mat, nmat]() {
      auto& ga = const_cast<Tensor&>(a).grad();
      const auto& g = *og;
      for (std::size_t b = 0; b < nmat; ++b)
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < cols; ++j)
            ga[b * mat + i * cols + j] += g[b * mat + j * rows + i];
    };
    result.set_node(node);
  }
  return result;
}

inline Tensor concat(const std::vector<Tensor>& parts, long axis_in) {
  if (parts.empty()) throw shape_error("concat: no inputs");
  std::size_t axis = normalize_axis(axis_in, parts[0].rank());
  Shape os = parts[0].shape();
  std::size_t total = 0;
  for (const Tensor& t : parts) {
    if (t.rank() != os.size()) throw shape_error("concat: rank mismatch");
    for (std::size_t d = 0; d < os.size(); ++d)
      if (d != axis && t.shape()[d] != os[d]) {
        throw shape_error("concat: shape mismatch at non-concat axis: " +
                          detail::shape_str(t.shape()) + " vs " + detail::shape_str(os));
      }
    total += t.shape()[axis];
  }
  os[axis] = total;

  std::size_t outer, extent_total, inner;
  detail::axis_split(os, axis, outer, extent_total, inner);
  std::vector<std::size_t> extents;
  for (const Tensor& t : parts) extents.push_back(t.shape()[axis]);

  std::vector<double> out(detail::shape_numel(os));
  std::size_t base = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    std::size_t e = extents[pi];
    const auto& tv = parts[pi].values();
    for (std::size_t o = 0; o < outer; ++o) {
      const double* src = tv.data() + o * e * inner;
      double* dst = out.data() + (o * extent_total + base) * inner;
      std::copy(src, src + e * inner, dst);
    }
    base += e;
  }
  bool rg = false;
  for (const Tensor& t : parts) rg = rg || t.requires_grad();
  rg = rg && grad_enabled();
  Tensor result(os, std::move(out), rg);
  if (rg) {
    auto node = std::make_shared<detail::Node>();
    for (const Tensor& t : parts)
      if (t.node()) node->parents.push_back(t.node());
    auto og = result.grad_ptr();
    auto parts_copy = parts;
    node->backprop = [parts_copy, extents, og, outer, extent_total, inner]() {
      const auto& g = *og;
      std::size_t base2 = 0;
      for (std::size_t pi = 0; pi < parts_copy.size(); ++pi) {
        std::size_t e = extents[pi];
        const Tensor& t = parts_copy[pi];
        if (t.requires_grad()) {
          auto& gt = const_cast<Tensor&>(t).grad();
          for (std::size_t o = 0; o < outer; ++o) {
            const double* src = g.data() + (o * extent_total + base2) * inner;
            double* dst = gt.data() + o * e * inner;
            for (std::size_t i = 0; i < e * inner; ++i) dst[i] += src[i];
          }
        }
        base2 += e;
      }
    };
    result.set_node(node);
  }
  return result;
}

// Copies out [offset, offset+len) of the last axis.
inline Tensor slice_last(const Tensor& a, std::size_t offset, std::size_t len) {
  std::size_t last = a.shape().back();
  if (offset + len > last) {
    throw shape_error("slice_last: range [" + std::to_string(offset) + ", " +
                      std::to_string(offset + len) + ") exceeds extent " + std::to_string(last));
  }
  Shape os = a.shape();
  os.back() = len;
  std::size_t outer = last == 0 ? 0 : a.numel() / last;
  std::vector<double> out(outer * len);
  const auto& av = a.values();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy(av.data() + o * last + offset, av.data() + o * last + offset + len,
              out.data() + o * len);
  Tensor result(os, std::move(out), detail::track(a));
  if (result.requires_grad()) {
    auto node = std::make_shared<detail::Node>();
    node->parents = detail::parent_nodes({&a});
    auto og = result.grad_ptr();
    node->backprop = [a, og, outer, last, offset, len]() {
      auto& ga = const_cast<Tensor&>(a).grad();
      const auto& g = *og;
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < len; ++i) ga[o * last + offset + i] += g[o * len + i];
    };
    result.set_node(node);
  }
  return result;
}

// Selects rows (leading-axis slices) by index; indices may repeat.
inline Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& idx) {
  if (a.rank() < 1) throw shape_error("gather_rows: rank must be >= 1");
  std::size_t rows = a.shape()[0];
  std::size_t rowsize = rows == 0 ? 0 : a.numel() / rows;
  for (std::size_t i : idx)
    if (i >= rows) throw std::out_of_range("gather_rows: row index out of range");
  Shape os = a.shape();
  os[0] = idx.size();
  std::vector<double> out(idx.size() * rowsize);
  const auto& av = a.values();
  for (std::size_t k = 0; k < idx.size(); ++k)
    std::copy(av.data() + idx[k] * rowsize, av.data() + (idx[k] + 1) * rowsize,
              out.data() + k * rowsize);
  Tensor result(os, std::move(out), detail::track(a));
  if (result.requires_grad()) {
    auto node = std::make_shared<detail::Node>();
    node->parents = detail::parent_nodes({&a});
    auto og = result.grad_ptr();
    node->backprop = [a, og, idx, rowsize]() {
      auto& ga = const_cast<Tensor&>(a).grad();
      const auto& g = *og;
      for (std::size_t k = 0; k < idx.size(); ++k)
        for (std::size_t i = 0; i < rowsize; ++i) ga[idx[k] * rowsize + i] += g[k * rowsize + i];
    };
    result.set_node(node);
  }
  return result;
}

// [n, m] -> [n, n, m] with out[i] = X for every i (out[i, j] = x_j).
inline Tensor duplicate_rows(const Tensor& x) {
  if (x.rank() != 2) throw shape_error("duplicate_rows: expected rank 2, got " +
                                       detail::shape_str(x.shape()));
  std::size_t n = x.shape()[0], m = x.shape()[1];
  std::vector<double> out(n * n * m);
  const auto& xv = x.values();
  for (std::size_t i = 0; i < n; ++i) std::copy(xv.begin(), xv.end(), out.begin() + i * n * m);
  Tensor result(Shape{n, n, m}, std::move(out), detail::track(x));
  if (result.requires_grad()) {
    auto node = std::make_shared<detail::Node>();
    node->parents = detail::parent_nodes({&x});
    auto og = result.grad_ptr();
    node->backprop = [x, og, n, m]() {
      auto& gx = const_cast<Tensor&>(x).grad();
      const auto& g = *og;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < n * m; ++k) gx[k] += g[i * n * m + k];
    };
    result.set_node(node);
  }
  return result;
}

// [n, m] -> [n, n, 2m] with out[i, j] = x_i concat x_j.
inline Tensor pairwise_concat(const Tensor& x) {
  if (x.rank() != 2) throw shape_error("pairwise_concat: expected rank 2, got " +
                                       detail::shape_str(x.shape()));
  std::size_t n = x.shape()[0], m = x.shape()[1];
  std::vector<double> out(n * n * 2 * m);
  const auto& xv = x.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double* dst = out.data() + (i * n + j) * 2 * m;
      std::copy(xv.data() + i * m, xv.data() + (i + 1) * m, dst);
      std::copy(xv.data() + j * m, xv.data() + (j + 1) * m, dst + m);
    }
  Tensor result(Shape{n, n, 2 * m}, std::move(out), detail::track(x));
  if (result.requires_grad()) {
    auto node = std::make_shared<detail::Node>();
    node->parents = detail::parent_nodes({&x});
    auto og = result.grad_ptr();
    node->backprop = [x, og, n, m]() {
      auto& gx = const_cast<Tensor&>(x).grad();
      const auto& g = *og;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double* src = g.data() + (i * n + j) * 2 * m;
          for (std::size_t c = 0; c < m; ++c) {
            gx[i * m + c] += src[c];
            gx[j * m + c] += src[m + c];
          }
        }
    };
    result.set_node(node);
  }
  return result;
}

// Overwrites entries of a rank-2 tensor with a constant; no gradient flows
// through the overwritten positions.
inline Tensor set_entries(const Tensor& a, const std::vector<std::pair<std::size_t, std::size_t>>& pos,
                          double value) {
  if (a.rank() != 2) throw shape_error("set_entries: expected rank 2");
  std::size_t rows = a.shape()[0], cols = a.shape()[1];
  std::vector<double> out = a.values();
  std::vector<char> fixed(out.size(), 0);
  for (auto [i, j] : pos) {
    if (i >= rows || j >= cols) throw std::out_of_range("set_entries: index out of range");
    out[i * cols + j] = value;
    fixed[i * cols + j] = 1;
  }
  Tensor result(a.shape(), std::move(out), detail::track(a));
  if (result.requires_grad()) {
    auto node = std::make_shared<detail::Node>();
    node->parents = detail::parent_nodes({&a});
    auto og = result.grad_ptr();
    node->backprop = [a, og, fixed]() {
      auto& ga = const_cast<Tensor&>(a).grad();
      const auto& g = *og;
      for (std::size_t i = 0; i < g.size(); ++i)
        if (!fixed[i]) ga[i] += g[i];
    };
    result.set_node(node);
  }
  return result;
}

// ---- softmax ----------------------------------------------------------------

// Max-subtracted softmax along one axis. Lanes whose entries are all -inf
// produce all-zero outputs instead of NaN.
inline Tensor softmax(const Tensor& a, long axis_in) {
  std::size_t axis = normalize_axis(axis_in, a.rank());
  if (a.shape()[axis] == 0) {
    throw shape_error("softmax: empty axis extent in " + detail::shape_str(a.shape()));
  }
  std::size_t outer, extent, inner;
  detail::axis_split(a.shape(), axis, outer, extent, inner);
  std::vector<double> out(a.numel());
  const auto& av = a.values();
  constexpr double ninf = -std::numeric_limits<double>::infinity();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      std::size_t base = o * extent * inner + i;
      double mx = ninf;
      for (std::size_t e = 0; e < extent; ++e) mx = std::max(mx, av[base + e * inner]);
      if (mx == ninf) {
        for (std::size_t e = 0; e < extent; ++e) out[base + e * inner] = 0.0;
        continue;
      }
      double total = 0.0;
      for (std::size_t e = 0; e < extent; ++e) {
        double v = std::exp(av[base + e * inner] - mx);
        out[base + e * inner] = v;
        total += v;
      }
      for (std::size_t e = 0; e < extent; ++e) out[base + e * inner] /= total;
    }
  Tensor result(a.shape(), std::move(out), detail::track(a));
  if (result.requires_grad()) {
    auto node = std::make_shared<detail::Node>();
    node->parents = detail::parent_nodes({&a});
    auto og = result.grad_ptr();
    auto ov = result.data_ptr();
    node->backprop = [a, og, ov, outer, extent, inner]() {
      auto& ga = const_cast<Tensor&>(a).grad();
      const auto& g = *og;
      const auto& y = *ov;
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
          std::size_t base = o * extent * inner + i;
          double dot = 0.0;
          for (std::size_t e = 0; e < extent; ++e)
            dot += g[base + e * inner] * y[base + e * inner];
          for (std::size_t e = 0; e < extent; ++e) {
            std::size_t k = base + e * inner;
            ga[k] += y[k] * (g[k] - dot);
          }
        }
    };
    result.set_node(node);
  }
  return result;
}

// ---- composite layers --------------------------------------------------------

// x [.., in] times W [in, out] plus b [out].
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add(matmul(x, w), b);
}

// Normalizes the last axis to zero mean / unit variance (no affine).
inline Tensor layer_norm_raw(const Tensor& x, double eps = 1e-5) {
  long last = static_cast<long>(x.rank()) - 1;
  Tensor mu = mean(x, last, true);
  Tensor centered = sub(x, mu);
  Tensor var = mean(mul(centered, centered), last, true);
  Tensor inv = pow(add(var, eps), -0.5);
  return mul(centered, inv);
}

inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
  return add(mul(layer_norm_raw(x, eps), gain), bias);
}

// ---- backward ----------------------------------------------------------------

// Reverse-mode sweep from a scalar loss. Gradients accumulate (repeated calls sum).
inline void backward(Tensor& loss) {
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                detail::shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw std::invalid_argument("backward: loss is not reachable from any tracked tensor");
  }
  loss.grad()[0] += 1.0;
  if (!loss.node()) return;

  // Iterative post-order DFS; reverse post-order is a topological order.
  std::vector<detail::Node*> order;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  std::unordered_set<detail::Node*> seen;
  stack.push_back({loss.node().get(), 0});
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) (*it)->backprop();
}

}  // namespace upt
