#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <memory>
#include <utility>
#include <vector>

#include "kog/common.hpp"
#include "kog/kernels.hpp"
#include "kog/rng.hpp"

// Dense tensors with reverse-mode differentiation. Ops run eagerly; when a
// Tape is active (via TapeScope) and an input participates in gradients, the
// op registers a pull-back closure. Tape::backward walks the closures in
// reverse recording order, which is a topological order by construction.
//
// There is no implicit broadcasting: every shape rule is explicit and
// violations throw ShapeError.

namespace kog {

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;  // empty until backward touches this tensor
  bool requires_grad = false;
  bool on_tape = false;
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0))
      : impl_(std::make_shared<TensorImpl<T>>()) {
    impl_->shape = std::move(shape);
    impl_->values.assign(shape_numel(impl_->shape), fill);
  }
  Tensor(Shape shape, std::vector<T> values)
      : impl_(std::make_shared<TensorImpl<T>>()) {
    if (shape_numel(shape) != values.size())
      throw ShapeError("value count " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape));
    impl_->shape = std::move(shape);
    impl_->values = std::move(values);
  }

  static Tensor scalar(T v) { return Tensor({1}, std::vector<T>{v}); }
  static Tensor eye(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.impl_->values[i * n + i] = T(1);
    return t;
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape[i]; }
  std::size_t size() const { return impl_->values.size(); }

  std::vector<T>& values() { return impl_->values; }
  const std::vector<T>& values() const { return impl_->values; }
  T* data() { return impl_->values.data(); }
  const T* data() const { return impl_->values.data(); }

  T item() const {
    if (size() != 1) throw ContractError("item() requires a single-element tensor");
    return impl_->values[0];
  }

  void set_requires_grad(bool b) { impl_->requires_grad = b; }
  bool requires_grad() const { return impl_->requires_grad; }
  bool on_tape() const { return impl_->on_tape; }
  void mark_on_tape() { impl_->on_tape = true; }
  // True when backward must deliver a gradient to or through this tensor.
  bool needs_grad() const { return impl_->requires_grad || impl_->on_tape; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::vector<T>& grad() {
    if (impl_->grad.empty())
      throw ContractError("gradient absent; run backward() first");
    return impl_->grad;
  }
  const std::vector<T>& grad() const {
    if (impl_->grad.empty())
      throw ContractError("gradient absent; run backward() first");
    return impl_->grad;
  }
  void ensure_grad() {
    if (impl_->grad.empty()) impl_->grad.assign(size(), T(0));
  }
  void zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
  }

  bool same_object(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape*& current() {
    thread_local Tape* cur = nullptr;
    return cur;
  }

  void push(Tensor<T> out, std::function<void()> pull) {
    nodes_.push_back(Node{std::move(out), std::move(pull)});
  }

  std::size_t node_count() const { return nodes_.size(); }

  void backward(Tensor<T> loss) {
    if (loss.size() != 1)
      throw ContractError("backward requires a scalar loss, got shape " +
                          shape_str(loss.shape()));
    bool found = false;
    for (const auto& n : nodes_)
      if (n.out.same_object(loss)) {
        found = true;
        break;
      }
    if (!found)
      throw ContractError("backward requires a loss produced on this tape");
    loss.ensure_grad();
    loss.grad()[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      it->out.ensure_grad();
      it->pull();
    }
  }

  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Tensor<T> out;
    std::function<void()> pull;
  };
  std::vector<Node> nodes_;
};

template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : prev_(Tape<T>::current()) {
    Tape<T>::current() = &tape;
  }
  ~TapeScope() { Tape<T>::current() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* prev_;
};

// Additive-mask sentinel handling: masked entries carry the most negative
// finite value; any row whose maximum stays below this floor is treated as
// fully masked and softmaxes to an all-zero row.
template <typename T>
constexpr T masked_floor() {
  return std::numeric_limits<T>::lowest() * T(1e-4);
}

namespace detail {

// The closure is only materialized into a std::function when a tape is
// active and some input participates in gradients; eval-mode forwards pay
// nothing for it.
template <typename T, typename Pull, typename... Ins>
void record(Tensor<T>& out, Pull&& pull, const Ins&... ins) {
  Tape<T>* tape = Tape<T>::current();
  if (!tape) return;
  bool any = (ins.needs_grad() || ...);
  if (!any) return;
  out.mark_on_tape();
  tape->push(out, std::function<void()>(std::forward<Pull>(pull)));
}

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

}  // namespace detail

// ---------------------------------------------------------------- matmul

template <typename T>
Tensor<T> matmul(Tensor<T> a, Tensor<T> b) {
  detail::check(a.rank() == 2 && b.rank() == 2,
                "matmul expects rank-2 operands, got " + shape_str(a.shape()) +
                    " and " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  detail::check(b.dim(0) == k, "matmul inner dims differ: " + shape_str(a.shape()) +
                                   " vs " + shape_str(b.shape()));
  const auto& kr = kern::active<T>();
  Tensor<T> out({m, n});
  kr.matmul_nn(m, n, k, a.data(), b.data(), out.data(), false);
  detail::record(
      out,
      [a, b, out, m, n, k]() mutable {
        const auto& kr2 = kern::active<T>();
        const T* g = out.grad().data();
        if (a.needs_grad()) {
          a.ensure_grad();
          kr2.matmul_nt(m, k, n, g, b.data(), a.grad().data(), true);
        }
        if (b.needs_grad()) {
          b.ensure_grad();
          kr2.matmul_tn(k, n, m, a.data(), g, b.grad().data(), true);
        }
      },
      a, b);
  return out;
}

// Batched matmul: a is [B, m, k]; b is [k, n] (shared) or [B, k, n].
template <typename T>
Tensor<T> bmm(Tensor<T> a, Tensor<T> b) {
  detail::check(a.rank() == 3, "bmm expects rank-3 lhs, got " + shape_str(a.shape()));
  const std::size_t B = a.dim(0), m = a.dim(1), k = a.dim(2);
  const bool shared = b.rank() == 2;
  detail::check(shared || (b.rank() == 3 && b.dim(0) == B),
                "bmm rhs must be rank-2 or batch-matched rank-3, got " +
                    shape_str(b.shape()));
  const std::size_t n = shared ? b.dim(1) : b.dim(2);
  detail::check((shared ? b.dim(0) : b.dim(1)) == k,
                "bmm inner dims differ: " + shape_str(a.shape()) + " vs " +
                    shape_str(b.shape()));
  const auto& kr = kern::active<T>();
  Tensor<T> out({B, m, n});
  for (std::size_t i = 0; i < B; ++i)
    kr.matmul_nn(m, n, k, a.data() + i * m * k,
                 b.data() + (shared ? 0 : i * k * n), out.data() + i * m * n, false);
  detail::record(
      out,
      [a, b, out, B, m, n, k, shared]() mutable {
        const auto& kr2 = kern::active<T>();
        const T* g = out.grad().data();
        if (a.needs_grad()) {
          a.ensure_grad();
          for (std::size_t i = 0; i < B; ++i)
            kr2.matmul_nt(m, k, n, g + i * m * n,
                          b.data() + (shared ? 0 : i * k * n),
                          a.grad().data() + i * m * k, true);
        }
        if (b.needs_grad()) {
          b.ensure_grad();
          for (std::size_t i = 0; i < B; ++i)
            kr2.matmul_tn(k, n, m, a.data() + i * m * k, g + i * m * n,
                          b.grad().data() + (shared ? 0 : i * k * n), true);
        }
      },
      a, b);
  return out;
}

// Batched matmul against transposed rhs: a [B, m, k], b [B, n, k] -> [B, m, n].
template <typename T>
Tensor<T> bmm_t(Tensor<T> a, Tensor<T> b) {
  detail::check(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) &&
                    a.dim(2) == b.dim(2),
                "bmm_t expects [B,m,k] x [B,n,k], got " + shape_str(a.shape()) +
                    " and " + shape_str(b.shape()));
  const std::size_t B = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
  const auto& kr = kern::active<T>();
  Tensor<T> out({B, m, n});
  for (std::size_t i = 0; i < B; ++i)
    kr.matmul_nt(m, n, k, a.data() + i * m * k, b.data() + i * n * k,
                 out.data() + i * m * n, false);
  detail::record(
      out,
      [a, b, out, B, m, n, k]() mutable {
        const auto& kr2 = kern::active<T>();
        const T* g = out.grad().data();
        if (a.needs_grad()) {
          a.ensure_grad();
          for (std::size_t i = 0; i < B; ++i)
            kr2.matmul_nn(m, k, n, g + i * m * n, b.data() + i * n * k,
                          a.grad().data() + i * m * k, true);
        }
        if (b.needs_grad()) {
          b.ensure_grad();
          for (std::size_t i = 0; i < B; ++i)
            kr2.matmul_tn(n, k, m, g + i * m * n, a.data() + i * m * k,
                          b.grad().data() + i * n * k, true);
        }
      },
      a, b);
  return out;
}

// Left-apply a node-axis matrix to every batch: L [m, l], x [B, l, d] -> [B, m, d].
template <typename T>
Tensor<T> lmm(Tensor<T> l_mat, Tensor<T> x) {
  detail::check(l_mat.rank() == 2 && x.rank() == 3 && x.dim(1) == l_mat.dim(1),
                "lmm expects [m,l] x [B,l,d], got " + shape_str(l_mat.shape()) +
                    " and " + shape_str(x.shape()));
  const std::size_t m = l_mat.dim(0), l = l_mat.dim(1), B = x.dim(0), d = x.dim(2);
  const auto& kr = kern::active<T>();
  Tensor<T> out({B, m, d});
  for (std::size_t i = 0; i < B; ++i)
    kr.matmul_nn(m, d, l, l_mat.data(), x.data() + i * l * d, out.data() + i * m * d,
                 false);
  detail::record(
      out,
      [l_mat, x, out, B, m, l, d]() mutable {
        const auto& kr2 = kern::active<T>();
        const T* g = out.grad().data();
        if (l_mat.needs_grad()) {
          l_mat.ensure_grad();
          for (std::size_t i = 0; i < B; ++i)
            kr2.matmul_nt(m, l, d, g + i * m * d, x.data() + i * l * d,
                          l_mat.grad().data(), true);
        }
        if (x.needs_grad()) {
          x.ensure_grad();
          for (std::size_t i = 0; i < B; ++i)
            kr2.matmul_tn(l, d, m, l_mat.data(), g + i * m * d,
                          x.grad().data() + i * l * d, true);
        }
      },
      l_mat, x);
  return out;
}

// Rank-2 transpose, or rank-3 swap of the last two axes.
template <typename T>
Tensor<T> transpose(Tensor<T> a) {
  detail::check(a.rank() == 2 || a.rank() == 3,
                "transpose expects rank 2 or 3, got " + shape_str(a.shape()));
  const std::size_t B = a.rank() == 3 ? a.dim(0) : 1;
  const std::size_t r = a.dim(a.rank() - 2), c = a.dim(a.rank() - 1);
  Shape os = a.shape();
  std::swap(os[a.rank() - 2], os[a.rank() - 1]);
  Tensor<T> out(os);
  for (std::size_t b = 0; b < B; ++b) {
    const T* src = a.data() + b * r * c;
    T* dst = out.data() + b * r * c;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) dst[j * r + i] = src[i * c + j];
  }
  detail::record(
      out,
      [a, out, B, r, c]() mutable {
        if (!a.needs_grad()) return;
        a.ensure_grad();
        const T* g = out.grad().data();
        T* da = a.grad().data();
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j)
              da[b * r * c + i * c + j] += g[b * r * c + j * r + i];
      },
      a);
  return out;
}

// ---------------------------------------------------------------- pointwise

template <typename T>
Tensor<T> add(Tensor<T> a, Tensor<T> b) {
  detail::check(a.shape() == b.shape(), "add shape mismatch: " +
                                            shape_str(a.shape()) + " vs " +
                                            shape_str(b.shape()));
  const auto& kr = kern::active<T>();
  Tensor<T> out(a.shape());
  kr.add(a.size(), a.data(), b.data(), out.data());
  detail::record(
      out,
      [a, b, out]() mutable {
        const auto& kr2 = kern::active<T>();
        const T* g = out.grad().data();
        if (a.needs_grad()) {
          a.ensure_grad();
          kr2.axpy(a.size(), T(1), g, a.grad().data());
        }
        if (b.needs_grad()) {
          b.ensure_grad();
          kr2.axpy(b.size(), T(1), g, b.grad().data());
        }
      },
      a, b);
  return out;
}

template <typename T>
Tensor<T> sub(Tensor<T> a, Tensor<T> b) {
  detail::check(a.shape() == b.shape(), "sub shape mismatch: " +
                                            shape_str(a.shape()) + " vs " +
                                            shape_str(b.shape()));
  const auto& kr = kern::active<T>();
  Tensor<T> out(a.shape());
  kr.sub(a.size(), a.data(), b.data(), out.data());
  detail::record(
      out,
      [a, b, out]() mutable {
        const auto& kr2 = kern::active<T>();
        const T* g = out.grad().data();
        if (a.needs_grad()) {
          a.ensure_grad();
          kr2.axpy(a.size(), T(1), g, a.grad().data());
        }
        if (b.needs_grad()) {
          b.ensure_grad();
          kr2.axpy(b.size(), T(-1), g, b.grad().data());
        }
      },
      a, b);
  return out;
}

template <typename T>
Tensor<T> mul(Tensor<T> a, Tensor<T> b) {
  detail::check(a.shape() == b.shape(), "mul shape mismatch: " +
                                            shape_str(a.shape()) + " vs " +
                                            shape_str(b.shape()));
  const auto& kr = kern::active<T>();
  Tensor<T> out(a.shape());
  kr.mul(a.size(), a.data(), b.data(), out.data());
  detail::record(
      out,
      [a, b, out]() mutable {
        const T* g = out.grad().data();
        if (a.needs_grad()) {
          a.ensure_grad();
          T* da = a.grad().data();
          const T* bv = b.data();
          for (std::size_t i = 0; i < a.size(); ++i) da[i] += g[i] * bv[i];
        }
        if (b.needs_grad()) {
          b.ensure_grad();
          T* db = b.grad().data();
          const T* av = a.data();
          for (std::size_t i = 0; i < b.size(); ++i) db[i] += g[i] * av[i];
        }
      },
      a, b);
  return out;
}

template <typename T>
Tensor<T> scalar_mul(Tensor<T> a, T c) {
  const auto& kr = kern::active<T>();
  Tensor<T> out(a.shape());
  kr.scale(a.size(), c, a.data(), out.data());
  detail::record(
      out,
      [a, out, c]() mutable {
        if (!a.needs_grad()) return;
        a.ensure_grad();
        kern::active<T>().axpy(a.size(), c, out.grad().data(), a.grad().data());
      },
      a);
  return out;
}

// x [..., d] + v [d] broadcast over leading axes (bias add).
template <typename T>
Tensor<T> add_rowvec(Tensor<T> x, Tensor<T> v) {
  detail::check(v.rank() == 1 && x.rank() >= 1 && x.dim(x.rank() - 1) == v.dim(0),
                "add_rowvec expects [..., d] and [d], got " + shape_str(x.shape()) +
                    " and " + shape_str(v.shape()));
  const std::size_t d = v.dim(0), rows = x.size() / d;
  const auto& kr = kern::active<T>();
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < rows; ++r)
    kr.add(d, x.data() + r * d, v.data(), out.data() + r * d);
  detail::record(
      out,
      [x, v, out, rows, d]() mutable {
        const auto& kr2 = kern::active<T>();
        const T* g = out.grad().data();
        if (x.needs_grad()) {
          x.ensure_grad();
          kr2.axpy(x.size(), T(1), g, x.grad().data());
        }
        if (v.needs_grad()) {
          v.ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            kr2.axpy(d, T(1), g + r * d, v.grad().data());
        }
      },
      x, v);
  return out;
}

// x [..., l, l] + mask [l, l] broadcast over leading axes. The mask may be a
// learnable tensor (GraAttention score bias) or a constant order mask.
template <typename T>
Tensor<T> masked_add(Tensor<T> x, Tensor<T> mask) {
  detail::check(mask.rank() == 2 && x.rank() >= 2 &&
                    x.dim(x.rank() - 2) == mask.dim(0) &&
                    x.dim(x.rank() - 1) == mask.dim(1),
                "masked_add expects [..., l, l] and matching [l, l], got " +
                    shape_str(x.shape()) + " and " + shape_str(mask.shape()));
  const std::size_t block = mask.size(), nb = x.size() / block;
  const auto& kr = kern::active<T>();
  Tensor<T> out(x.shape());
  for (std::size_t b = 0; b < nb; ++b)
    kr.add(block, x.data() + b * block, mask.data(), out.data() + b * block);
  detail::record(
      out,
      [x, mask, out, nb, block]() mutable {
        const auto& kr2 = kern::active<T>();
        const T* g = out.grad().data();
        if (x.needs_grad()) {
          x.ensure_grad();
          kr2.axpy(x.size(), T(1), g, x.grad().data());
        }
        if (mask.needs_grad()) {
          mask.ensure_grad();
          for (std::size_t b = 0; b < nb; ++b)
            kr2.axpy(block, T(1), g + b * block, mask.grad().data());
        }
      },
      x, mask);
  return out;
}

// ---------------------------------------------------------------- softmax

// Softmax over the last axis. Rows whose maximum sits below the masked floor
// (i.e. every entry carries the additive mask sentinel) yield exact zeros.
template <typename T>
Tensor<T> row_softmax(Tensor<T> x) {
  detail::check(x.rank() >= 1, "row_softmax needs at least rank 1");
  const std::size_t n = x.dim(x.rank() - 1), rows = x.size() / n;
  const auto& kr = kern::active<T>();
  Tensor<T> out(x.shape());
  std::vector<bool> dead(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = x.data() + r * n;
    T* dst = out.data() + r * n;
    T m = src[0];
    for (std::size_t j = 1; j < n; ++j) m = std::max(m, src[j]);
    dead[r] = m <= masked_floor<T>();
    for (std::size_t j = 0; j < n; ++j) dst[j] = src[j] - m;
  }
  kr.vexp(out.size(), out.data(), out.data());
  for (std::size_t r = 0; r < rows; ++r) {
    T* dst = out.data() + r * n;
    if (dead[r]) {
      std::fill(dst, dst + n, T(0));
      continue;
    }
    T sum = T(0);
    for (std::size_t j = 0; j < n; ++j) sum += dst[j];
    const T inv = T(1) / sum;
    for (std::size_t j = 0; j < n; ++j) dst[j] *= inv;
  }
  detail::record(
      out,
      [x, out, rows, n]() mutable {
        if (!x.needs_grad()) return;
        x.ensure_grad();
        const auto& kr2 = kern::active<T>();
        const T* g = out.grad().data();
        const T* a = out.data();
        T* dx = x.grad().data();
        for (std::size_t r = 0; r < rows; ++r) {
          const T inner = kr2.dot(n, g + r * n, a + r * n);
          for (std::size_t j = 0; j < n; ++j)
            dx[r * n + j] += a[r * n + j] * (g[r * n + j] - inner);
        }
      },
      x);
  return out;
}

// Fused (x * scale) softmax over the last axis; one output allocation, same
// rounding sequence as scalar_mul followed by row_softmax.
template <typename T>
Tensor<T> scaled_softmax(Tensor<T> x, T scale) {
  detail::check(x.rank() >= 1, "scaled_softmax needs at least rank 1");
  const std::size_t n = x.dim(x.rank() - 1), rows = x.size() / n;
  const auto& kr = kern::active<T>();
  Tensor<T> out(x.shape());
  std::vector<bool> dead(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = x.data() + r * n;
    T* dst = out.data() + r * n;
    for (std::size_t j = 0; j < n; ++j) dst[j] = src[j] * scale;
    T m = dst[0];
    for (std::size_t j = 1; j < n; ++j) m = std::max(m, dst[j]);
    dead[r] = m <= masked_floor<T>();
    for (std::size_t j = 0; j < n; ++j) dst[j] -= m;
  }
  kr.vexp(out.size(), out.data(), out.data());
  for (std::size_t r = 0; r < rows; ++r) {
    T* dst = out.data() + r * n;
    if (dead[r]) {
      std::fill(dst, dst + n, T(0));
      continue;
    }
    T sum = T(0);
    for (std::size_t j = 0; j < n; ++j) sum += dst[j];
    const T inv = T(1) / sum;
    for (std::size_t j = 0; j < n; ++j) dst[j] *= inv;
  }
  detail::record(
      out,
      [x, out, rows, n, scale]() mutable {
        if (!x.needs_grad()) return;
        x.ensure_grad();
        const auto& kr2 = kern::active<T>();
        const T* g = out.grad().data();
        const T* a = out.data();
        T* dx = x.grad().data();
        for (std::size_t r = 0; r < rows; ++r) {
          const T inner = kr2.dot(n, g + r * n, a + r * n);
          for (std::size_t j = 0; j < n; ++j)
            dx[r * n + j] += scale * a[r * n + j] * (g[r * n + j] - inner);
        }
      },
      x);
  return out;
}

// Fused ((x + mask) * scale) softmax with a constant additive mask broadcast
// over the leading axes. The hot path of KOG-MSA: one pass, one allocation.
template <typename T>
Tensor<T> masked_scaled_softmax(Tensor<T> x, const Tensor<T>& mask, T scale) {
  detail::check(mask.rank() == 2 && x.rank() >= 2 &&
                    x.dim(x.rank() - 2) == mask.dim(0) &&
                    x.dim(x.rank() - 1) == mask.dim(1),
                "masked_scaled_softmax expects [..., l, l] with an [l, l] mask, "
                "got " + shape_str(x.shape()) + " and " + shape_str(mask.shape()));
  if (mask.needs_grad())
    throw ContractError("masked_scaled_softmax requires a constant mask");
  const std::size_t n = mask.dim(1), rows = x.size() / n;
  const auto& kr = kern::active<T>();
  Tensor<T> out(x.shape());
  const std::size_t mask_rows = mask.dim(0);
  std::vector<bool> dead(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = x.data() + r * n;
    const T* mrow = mask.data() + (r % mask_rows) * n;
    T* dst = out.data() + r * n;
    for (std::size_t j = 0; j < n; ++j) dst[j] = (src[j] + mrow[j]) * scale;
    T m = dst[0];
    for (std::size_t j = 1; j < n; ++j) m = std::max(m, dst[j]);
    dead[r] = m <= masked_floor<T>();
    for (std::size_t j = 0; j < n; ++j) dst[j] -= m;
  }
  kr.vexp(out.size(), out.data(), out.data());
  for (std::size_t r = 0; r < rows; ++r) {
    T* dst = out.data() + r * n;
    if (dead[r]) {
      std::fill(dst, dst + n, T(0));
      continue;
    }
    T sum = T(0);
    for (std::size_t j = 0; j < n; ++j) sum += dst[j];
    const T inv = T(1) / sum;
    for (std::size_t j = 0; j < n; ++j) dst[j] *= inv;
  }
  detail::record(
      out,
      [x, out, rows, n, scale]() mutable {
        if (!x.needs_grad()) return;
        x.ensure_grad();
        const auto& kr2 = kern::active<T>();
        const T* g = out.grad().data();
        const T* a = out.data();
        T* dx = x.grad().data();
        for (std::size_t r = 0; r < rows; ++r) {
          const T inner = kr2.dot(n, g + r * n, a + r * n);
          for (std::size_t j = 0; j < n; ++j)
            dx[r * n + j] += scale * a[r * n + j] * (g[r * n + j] - inner);
        }
      },
      x);
  return out;
}

// Fused out = acc + c[i] * x (order-fusion accumulation).
template <typename T>
Tensor<T> add_scaled(Tensor<T> acc, Tensor<T> x, Tensor<T> c, std::size_t i) {
  detail::check(acc.shape() == x.shape(), "add_scaled shape mismatch: " +
                                              shape_str(acc.shape()) + " vs " +
                                              shape_str(x.shape()));
  detail::check(c.rank() == 1 && i < c.dim(0),
                "add_scaled coefficient index out of range");
  const auto& kr = kern::active<T>();
  Tensor<T> out(acc.shape());
  std::memcpy(out.data(), acc.data(), acc.size() * sizeof(T));
  kr.axpy(out.size(), c.data()[i], x.data(), out.data());
  detail::record(
      out,
      [acc, x, c, out, i]() mutable {
        const auto& kr2 = kern::active<T>();
        const T* g = out.grad().data();
        if (acc.needs_grad()) {
          acc.ensure_grad();
          kr2.axpy(acc.size(), T(1), g, acc.grad().data());
        }
        if (x.needs_grad()) {
          x.ensure_grad();
          kr2.axpy(x.size(), c.data()[i], g, x.grad().data());
        }
        if (c.needs_grad()) {
          c.ensure_grad();
          c.grad()[i] += kr2.dot(x.size(), g, x.data());
        }
      },
      acc, x, c);
  return out;
}

// ---------------------------------------------------------------- indexing

// Select rows of x [n, d] by index list -> [m, d]; adjoint scatter-adds.
template <typename T>
Tensor<T> gather_rows(Tensor<T> x, const std::vector<int>& idx) {
  detail::check(x.rank() == 2, "gather_rows expects rank-2 input");
  const std::size_t n = x.dim(0), d = x.dim(1);
  for (int i : idx)
    detail::check(i >= 0 && static_cast<std::size_t>(i) < n,
                  "gather_rows index " + std::to_string(i) + " out of range");
  Tensor<T> out({idx.size(), d});
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::memcpy(out.data() + r * d, x.data() + static_cast<std::size_t>(idx[r]) * d,
                d * sizeof(T));
  detail::record(
      out,
      [x, out, idx, d]() mutable {
        if (!x.needs_grad()) return;
        x.ensure_grad();
        const auto& kr = kern::active<T>();
        const T* g = out.grad().data();
        for (std::size_t r = 0; r < idx.size(); ++r)
          kr.axpy(d, T(1), g + r * d,
                  x.grad().data() + static_cast<std::size_t>(idx[r]) * d);
      },
      x);
  return out;
}

// Pairwise positional lookup: q [B, l, r], map [l*l] with values in [0, r)
// -> out[b, m, n] = q[b, m, map[m*l+n]].
template <typename T>
Tensor<T> index_expand(Tensor<T> q, const std::vector<int>& map, std::size_t l) {
  detail::check(q.rank() == 3 && q.dim(1) == l && map.size() == l * l,
                "index_expand expects [B, l, r] with an l*l map, got " +
                    shape_str(q.shape()));
  const std::size_t B = q.dim(0), r = q.dim(2);
  Tensor<T> out({B, l, l});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t m = 0; m < l; ++m) {
      const T* src = q.data() + (b * l + m) * r;
      T* dst = out.data() + (b * l + m) * l;
      const int* row = map.data() + m * l;
      for (std::size_t n = 0; n < l; ++n) dst[n] = src[row[n]];
    }
  detail::record(
      out,
      [q, out, map, B, l, r]() mutable {
        if (!q.needs_grad()) return;
        q.ensure_grad();
        const T* g = out.grad().data();
        T* dq = q.grad().data();
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t m = 0; m < l; ++m) {
            const T* grow = g + (b * l + m) * l;
            T* drow = dq + (b * l + m) * r;
            const int* row = map.data() + m * l;
            for (std::size_t n = 0; n < l; ++n) drow[row[n]] += grow[n];
          }
      },
      q);
  return out;
}

// Bucket-sum of pairwise weights: a [B, l, l] -> out[b, m, ri] = sum over n
// with map[m*l+n] == ri of a[b, m, n]. Exact adjoint of index_expand.
template <typename T>
Tensor<T> index_reduce(Tensor<T> a, const std::vector<int>& map, std::size_t r) {
  detail::check(a.rank() == 3 && a.dim(1) == a.dim(2) &&
                    map.size() == a.dim(1) * a.dim(2),
                "index_reduce expects [B, l, l] with an l*l map, got " +
                    shape_str(a.shape()));
  const std::size_t B = a.dim(0), l = a.dim(1);
  Tensor<T> out({B, l, r});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t m = 0; m < l; ++m) {
      const T* src = a.data() + (b * l + m) * l;
      T* dst = out.data() + (b * l + m) * r;
      const int* row = map.data() + m * l;
      for (std::size_t n = 0; n < l; ++n) dst[row[n]] += src[n];
    }
  detail::record(
      out,
      [a, out, map, B, l, r]() mutable {
        if (!a.needs_grad()) return;
        a.ensure_grad();
        const T* g = out.grad().data();
        T* da = a.grad().data();
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t m = 0; m < l; ++m) {
            const T* grow = g + (b * l + m) * r;
            T* drow = da + (b * l + m) * l;
            const int* row = map.data() + m * l;
            for (std::size_t n = 0; n < l; ++n) drow[n] += grow[row[n]];
          }
      },
      a);
  return out;
}

// ---------------------------------------------------------------- layout

template <typename T>
Tensor<T> reshape(Tensor<T> a, Shape shape) {
  detail::check(shape_numel(shape) == a.size(),
                "reshape " + shape_str(a.shape()) + " -> " + shape_str(shape) +
                    " changes element count");
  Tensor<T> out(std::move(shape), a.values());
  detail::record(
      out,
      [a, out]() mutable {
        if (!a.needs_grad()) return;
        a.ensure_grad();
        kern::active<T>().axpy(a.size(), T(1), out.grad().data(), a.grad().data());
      },
      a);
  return out;
}

// [B, l, h*dh] -> [B*h, l, dh]; batch-major, heads inner.
template <typename T>
Tensor<T> split_heads(Tensor<T> x, std::size_t h) {
  detail::check(x.rank() == 3 && x.dim(2) % h == 0,
                "split_heads expects [B, l, h*dh], got " + shape_str(x.shape()));
  const std::size_t B = x.dim(0), l = x.dim(1), dh = x.dim(2) / h;
  Tensor<T> out({B * h, l, dh});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < l; ++i)
      for (std::size_t hh = 0; hh < h; ++hh)
        std::memcpy(out.data() + ((b * h + hh) * l + i) * dh,
                    x.data() + (b * l + i) * h * dh + hh * dh, dh * sizeof(T));
  detail::record(
      out,
      [x, out, B, l, h, dh]() mutable {
        if (!x.needs_grad()) return;
        x.ensure_grad();
        const T* g = out.grad().data();
        T* dx = x.grad().data();
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t i = 0; i < l; ++i)
            for (std::size_t hh = 0; hh < h; ++hh)
              kern::active<T>().axpy(dh, T(1), g + ((b * h + hh) * l + i) * dh,
                                     dx + (b * l + i) * h * dh + hh * dh);
      },
      x);
  return out;
}

// [B*h, l, dh] -> [B, l, h*dh]; inverse of split_heads.
template <typename T>
Tensor<T> merge_heads(Tensor<T> x, std::size_t h) {
  detail::check(x.rank() == 3 && x.dim(0) % h == 0,
                "merge_heads expects [B*h, l, dh], got " + shape_str(x.shape()));
  const std::size_t B = x.dim(0) / h, l = x.dim(1), dh = x.dim(2);
  Tensor<T> out({B, l, h * dh});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < l; ++i)
      for (std::size_t hh = 0; hh < h; ++hh)
        std::memcpy(out.data() + (b * l + i) * h * dh + hh * dh,
                    x.data() + ((b * h + hh) * l + i) * dh, dh * sizeof(T));
  detail::record(
      out,
      [x, out, B, l, h, dh]() mutable {
        if (!x.needs_grad()) return;
        x.ensure_grad();
        const T* g = out.grad().data();
        T* dx = x.grad().data();
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t i = 0; i < l; ++i)
            for (std::size_t hh = 0; hh < h; ++hh)
              kern::active<T>().axpy(dh, T(1), g + (b * l + i) * h * dh + hh * dh,
                                     dx + ((b * h + hh) * l + i) * dh);
      },
      x);
  return out;
}

// Repeat a [h, r, c] parameter across a batch: -> [B*h, r, c].
template <typename T>
Tensor<T> tile_batch(Tensor<T> x, std::size_t batch) {
  detail::check(x.rank() == 3, "tile_batch expects rank-3 input");
  const std::size_t h = x.dim(0), block = x.dim(1) * x.dim(2);
  Tensor<T> out({batch * h, x.dim(1), x.dim(2)});
  for (std::size_t b = 0; b < batch; ++b)
    std::memcpy(out.data() + b * h * block, x.data(), h * block * sizeof(T));
  detail::record(
      out,
      [x, out, batch, h, block]() mutable {
        if (!x.needs_grad()) return;
        x.ensure_grad();
        const T* g = out.grad().data();
        for (std::size_t b = 0; b < batch; ++b)
          kern::active<T>().axpy(h * block, T(1), g + b * h * block,
                                 x.grad().data());
      },
      x);
  return out;
}

template <typename T>
Tensor<T> concat_last(Tensor<T> a, Tensor<T> b) {
  detail::check(a.rank() == b.rank() && a.rank() >= 1,
                "concat_last rank mismatch");
  for (std::size_t i = 0; i + 1 < a.rank(); ++i)
    detail::check(a.dim(i) == b.dim(i), "concat_last leading dims differ: " +
                                            shape_str(a.shape()) + " vs " +
                                            shape_str(b.shape()));
  const std::size_t da = a.dim(a.rank() - 1), db = b.dim(b.rank() - 1);
  const std::size_t rows = a.size() / da;
  Shape os = a.shape();
  os.back() = da + db;
  Tensor<T> out(os);
  for (std::size_t r = 0; r < rows; ++r) {
    std::memcpy(out.data() + r * (da + db), a.data() + r * da, da * sizeof(T));
    std::memcpy(out.data() + r * (da + db) + da, b.data() + r * db, db * sizeof(T));
  }
  detail::record(
      out,
      [a, b, out, rows, da, db]() mutable {
        const auto& kr = kern::active<T>();
        const T* g = out.grad().data();
        if (a.needs_grad()) {
          a.ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            kr.axpy(da, T(1), g + r * (da + db), a.grad().data() + r * da);
        }
        if (b.needs_grad()) {
          b.ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            kr.axpy(db, T(1), g + r * (da + db) + da, b.grad().data() + r * db);
        }
      },
      a, b);
  return out;
}

// Split the last axis at k: returns ([..., k], [..., d-k]).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_last(Tensor<T> x, std::size_t k) {
  const std::size_t d = x.dim(x.rank() - 1);
  detail::check(k >= 1 && k < d, "split_last point " + std::to_string(k) +
                                     " outside last axis of " +
                                     shape_str(x.shape()));
  const std::size_t rows = x.size() / d;
  Shape sa = x.shape(), sb = x.shape();
  sa.back() = k;
  sb.back() = d - k;
  Tensor<T> a(sa), b(sb);
  for (std::size_t r = 0; r < rows; ++r) {
    std::memcpy(a.data() + r * k, x.data() + r * d, k * sizeof(T));
    std::memcpy(b.data() + r * (d - k), x.data() + r * d + k, (d - k) * sizeof(T));
  }
  auto pull_a = [x, a, rows, d, k]() mutable {
    if (!x.needs_grad()) return;
    x.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r)
      kern::active<T>().axpy(k, T(1), a.grad().data() + r * k,
                             x.grad().data() + r * d);
  };
  auto pull_b = [x, b, rows, d, k]() mutable {
    if (!x.needs_grad()) return;
    x.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r)
      kern::active<T>().axpy(d - k, T(1), b.grad().data() + r * (d - k),
                             x.grad().data() + r * d + k);
  };
  detail::record(a, std::move(pull_a), x);
  detail::record(b, std::move(pull_b), x);
  return {a, b};
}

// ---------------------------------------------------------------- norm / act

// Layer normalization over the last axis with learnable gain and bias.
template <typename T>
Tensor<T> layer_norm(Tensor<T> x, Tensor<T> gain, Tensor<T> bias,
                     T eps = T(1e-5)) {
  const std::size_t d = x.dim(x.rank() - 1);
  detail::check(gain.rank() == 1 && bias.rank() == 1 && gain.dim(0) == d &&
                    bias.dim(0) == d,
                "layer_norm gain/bias must be [d] for input " +
                    shape_str(x.shape()));
  const std::size_t rows = x.size() / d;
  Tensor<T> out(x.shape());
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  auto inv_sigma = std::make_shared<std::vector<T>>(rows);
  const auto& kr = kern::active<T>();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = x.data() + r * d;
    const T mu = kr.reduce_sum(d, src) / T(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) {
      const T c = src[j] - mu;
      var += c * c;
    }
    var /= T(d);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_sigma)[r] = is;
    T* xh = xhat->data() + r * d;
    T* dst = out.data() + r * d;
    for (std::size_t j = 0; j < d; ++j) {
      xh[j] = (src[j] - mu) * is;
      dst[j] = xh[j] * gain.data()[j] + bias.data()[j];
    }
  }
  detail::record(
      out,
      [x, gain, bias, out, xhat, inv_sigma, rows, d]() mutable {
        const T* g = out.grad().data();
        if (gain.needs_grad()) {
          gain.ensure_grad();
          T* dg = gain.grad().data();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j)
              dg[j] += g[r * d + j] * (*xhat)[r * d + j];
        }
        if (bias.needs_grad()) {
          bias.ensure_grad();
          T* db = bias.grad().data();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) db[j] += g[r * d + j];
        }
        if (x.needs_grad()) {
          x.ensure_grad();
          T* dx = x.grad().data();
          for (std::size_t r = 0; r < rows; ++r) {
            T sum_dy = T(0), sum_dy_xhat = T(0);
            for (std::size_t j = 0; j < d; ++j) {
              const T dy = g[r * d + j] * gain.data()[j];
              sum_dy += dy;
              sum_dy_xhat += dy * (*xhat)[r * d + j];
            }
            const T is = (*inv_sigma)[r];
            for (std::size_t j = 0; j < d; ++j) {
              const T dy = g[r * d + j] * gain.data()[j];
              dx[r * d + j] += is * (dy - sum_dy / T(d) -
                                     (*xhat)[r * d + j] * sum_dy_xhat / T(d));
            }
          }
        }
      },
      x, gain, bias);
  return out;
}

template <typename T>
Tensor<T> gelu(Tensor<T> x) {
  Tensor<T> out(x.shape());
  const T inv_sqrt2 = T(0.7071067811865475);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x.data()[i];
    out.data()[i] = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  }
  detail::record(
      out,
      [x, out]() mutable {
        if (!x.needs_grad()) return;
        x.ensure_grad();
        const T inv_sqrt2 = T(0.7071067811865475);
        const T inv_sqrt2pi = T(0.3989422804014327);
        const T* g = out.grad().data();
        T* dx = x.grad().data();
        for (std::size_t i = 0; i < x.size(); ++i) {
          const T v = x.data()[i];
          const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
          const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
          dx[i] += g[i] * (cdf + v * pdf);
        }
      },
      x);
  return out;
}

// Inverted dropout: scales kept activations by 1/(1-rate) at train time so
// evaluation is the identity.
template <typename T>
Tensor<T> dropout(Tensor<T> x, double rate, bool train, Rng* rng) {
  if (!train || rate <= 0.0) return x;
  if (rate >= 1.0) throw ConfigError("dropout rate must be < 1");
  if (!rng) throw ContractError("train-mode dropout needs an Rng");
  auto keep = std::make_shared<std::vector<T>>(x.size());
  const T scale = T(1.0 / (1.0 - rate));
  Tensor<T> out(x.shape());
  // One seed draw per call; the per-element stream comes from splitmix64,
  // which is much cheaper than the main engine at this volume.
  std::uint64_t state = rng->next_u64();
  for (std::size_t i = 0; i < x.size(); ++i) {
    state += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    z ^= z >> 31;
    const bool drop = static_cast<double>(z >> 11) * 0x1.0p-53 < rate;
    (*keep)[i] = drop ? T(0) : scale;
    out.data()[i] = x.data()[i] * (*keep)[i];
  }
  detail::record(
      out,
      [x, out, keep]() mutable {
        if (!x.needs_grad()) return;
        x.ensure_grad();
        const T* g = out.grad().data();
        T* dx = x.grad().data();
        for (std::size_t i = 0; i < x.size(); ++i) dx[i] += g[i] * (*keep)[i];
      },
      x);
  return out;
}

// ---------------------------------------------------------------- reductions

template <typename T>
Tensor<T> sum_all(Tensor<T> x) {
  Tensor<T> out = Tensor<T>::scalar(kern::active<T>().reduce_sum(x.size(), x.data()));
  detail::record(
      out,
      [x, out]() mutable {
        if (!x.needs_grad()) return;
        x.ensure_grad();
        const T g = out.grad()[0];
        T* dx = x.grad().data();
        for (std::size_t i = 0; i < x.size(); ++i) dx[i] += g;
      },
      x);
  return out;
}

template <typename T>
Tensor<T> mean_all(Tensor<T> x) {
  const T inv = T(1) / T(x.size());
  Tensor<T> out =
      Tensor<T>::scalar(kern::active<T>().reduce_sum(x.size(), x.data()) * inv);
  detail::record(
      out,
      [x, out, inv]() mutable {
        if (!x.needs_grad()) return;
        x.ensure_grad();
        const T g = out.grad()[0] * inv;
        T* dx = x.grad().data();
        for (std::size_t i = 0; i < x.size(); ++i) dx[i] += g;
      },
      x);
  return out;
}

// Mean over examples of the squared Frobenius norm of (pred - target).
// Rank >= 3 treats the first axis as the example axis; lower ranks are one
// example.
template <typename T>
Tensor<T> sq_err(Tensor<T> pred, Tensor<T> target) {
  detail::check(pred.shape() == target.shape(),
                "sq_err shape mismatch: " + shape_str(pred.shape()) + " vs " +
                    shape_str(target.shape()));
  const std::size_t batch = pred.rank() >= 3 ? pred.dim(0) : 1;
  T acc = T(0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const T dlt = pred.data()[i] - target.data()[i];
    acc += dlt * dlt;
  }
  Tensor<T> out = Tensor<T>::scalar(acc / T(batch));
  detail::record(
      out,
      [pred, target, out, batch]() mutable {
        const T g = out.grad()[0] * T(2) / T(batch);
        if (pred.needs_grad()) {
          pred.ensure_grad();
          T* dp = pred.grad().data();
          for (std::size_t i = 0; i < pred.size(); ++i)
            dp[i] += g * (pred.data()[i] - target.data()[i]);
        }
        if (target.needs_grad()) {
          target.ensure_grad();
          T* dt = target.grad().data();
          for (std::size_t i = 0; i < target.size(); ++i)
            dt[i] -= g * (pred.data()[i] - target.data()[i]);
        }
      },
      pred, target);
  return out;
}

// out = c[i] * x with a learnable coefficient vector c (order-fusion weights).
template <typename T>
Tensor<T> scale_coeff(Tensor<T> x, Tensor<T> c, std::size_t i) {
  detail::check(c.rank() == 1 && i < c.dim(0),
                "scale_coeff index " + std::to_string(i) + " outside " +
                    shape_str(c.shape()));
  const auto& kr = kern::active<T>();
  Tensor<T> out(x.shape());
  kr.scale(x.size(), c.data()[i], x.data(), out.data());
  detail::record(
      out,
      [x, c, out, i]() mutable {
        const auto& kr2 = kern::active<T>();
        const T* g = out.grad().data();
        if (x.needs_grad()) {
          x.ensure_grad();
          kr2.axpy(x.size(), c.data()[i], g, x.grad().data());
        }
        if (c.needs_grad()) {
          c.ensure_grad();
          c.grad()[i] += kr2.dot(x.size(), g, x.data());
        }
      },
      x, c);
  return out;
}

// Fill a tensor with Glorot-uniform values and mark it trainable.
template <typename T>
Tensor<T> glorot_init(Shape shape, std::size_t fan_in, std::size_t fan_out,
                      Rng& rng) {
  const double a = glorot_bound(fan_in, fan_out);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-a, a));
  t.set_requires_grad(true);
  return t;
}

}  // namespace kog
