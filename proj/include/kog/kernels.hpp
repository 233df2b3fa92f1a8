#pragma once

#include <cstddef>
#include <string>

// Data-parallel inner loops of the tensor engine. Every kernel exists as a
// scalar reference implementation and, on x86-64, as an AVX2+FMA variant.
// The active variant is picked once at startup from CPUID; the KOG_KERNELS
// environment variable ("scalar" or "avx2") overrides the choice. Scalar and
// AVX2 variants are equivalence-tested against each other: bit-exact for the
// element-wise kernels, tolerance-bounded for kernels that reassociate sums
// (dot, reductions, matmul).
//
// Matrix conventions, all row-major:
//   matmul_nn: C[m x n] (+)= A[m x k] * B[k x n]
//   matmul_nt: C[m x n] (+)= A[m x k] * B[n x k]^T
//   matmul_tn: C[m x n] (+)= A[k x m]^T * B[k x n]

namespace kog::kern {

template <typename T>
struct KernelTable {
  void (*add)(std::size_t n, const T* a, const T* b, T* out);
  void (*sub)(std::size_t n, const T* a, const T* b, T* out);
  void (*mul)(std::size_t n, const T* a, const T* b, T* out);
  void (*scale)(std::size_t n, T alpha, const T* a, T* out);
  void (*axpy)(std::size_t n, T alpha, const T* x, T* y);  // y += alpha * x
  void (*vexp)(std::size_t n, const T* a, T* out);
  T (*dot)(std::size_t n, const T* a, const T* b);
  T (*reduce_sum)(std::size_t n, const T* a);
  T (*reduce_max)(std::size_t n, const T* a);
  void (*matmul_nn)(std::size_t m, std::size_t n, std::size_t k, const T* a,
                    const T* b, T* c, bool accumulate);
  void (*matmul_nt)(std::size_t m, std::size_t n, std::size_t k, const T* a,
                    const T* b, T* c, bool accumulate);
  void (*matmul_tn)(std::size_t m, std::size_t n, std::size_t k, const T* a,
                    const T* b, T* c, bool accumulate);
};

namespace scalar {
template <typename T>
const KernelTable<T>& table();
}

#if defined(__x86_64__) || defined(_M_X64)
#define KOG_HAVE_AVX2_KERNELS 1
namespace avx2 {
template <typename T>
const KernelTable<T>& table();
}
#else
#define KOG_HAVE_AVX2_KERNELS 0
#endif

// Active table for the process, resolved on first use.
template <typename T>
const KernelTable<T>& active();

// Name of the selected variant ("scalar" or "avx2").
const std::string& active_name();

}  // namespace kog::kern
