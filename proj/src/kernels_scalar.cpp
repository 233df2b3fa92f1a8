#include "kog/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace kog::kern::scalar {

namespace {

template <typename T>
void add_(std::size_t n, const T* a, const T* b, T* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <typename T>
void sub_(std::size_t n, const T* a, const T* b, T* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

template <typename T>
void mul_(std::size_t n, const T* a, const T* b, T* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <typename T>
void scale_(std::size_t n, T alpha, const T* a, T* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = alpha * a[i];
}

template <typename T>
void axpy_(std::size_t n, T alpha, const T* x, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void vexp_(std::size_t n, const T* a, T* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(a[i]);
}

template <typename T>
T dot_(std::size_t n, const T* a, const T* b) {
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <typename T>
T reduce_sum_(std::size_t n, const T* a) {
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) acc += a[i];
  return acc;
}

template <typename T>
T reduce_max_(std::size_t n, const T* a) {
  T m = a[0];
  for (std::size_t i = 1; i < n; ++i) m = std::max(m, a[i]);
  return m;
}

// C (+)= A * B. Rank-1-update order: stream rows of B, broadcast A.
template <typename T>
void matmul_nn_(std::size_t m, std::size_t n, std::size_t k, const T* a,
                const T* b, T* c, bool accumulate) {
  if (!accumulate) std::memset(c, 0, m * n * sizeof(T));
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C (+)= A * B^T, B stored n x k. Row-dot form.
template <typename T>
void matmul_nt_(std::size_t m, std::size_t n, std::size_t k, const T* a,
                const T* b, T* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc = T(0);
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] = accumulate ? crow[j] + acc : acc;
    }
  }
}

// C (+)= A^T * B, A stored k x m.
template <typename T>
void matmul_tn_(std::size_t m, std::size_t n, std::size_t k, const T* a,
                const T* b, T* c, bool accumulate) {
  if (!accumulate) std::memset(c, 0, m * n * sizeof(T));
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = arow[i];
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
KernelTable<T> make_table() {
  return KernelTable<T>{add_<T>,   sub_<T>,        mul_<T>,        scale_<T>,
                        axpy_<T>,  vexp_<T>,       dot_<T>,        reduce_sum_<T>,
                        reduce_max_<T>, matmul_nn_<T>, matmul_nt_<T>,
                        matmul_tn_<T>};
}

}  // namespace

template <typename T>
const KernelTable<T>& table() {
  static const KernelTable<T> t = make_table<T>();
  return t;
}

template const KernelTable<float>& table<float>();
template const KernelTable<double>& table<double>();

}  // namespace kog::kern::scalar
