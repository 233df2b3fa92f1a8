#include <cstdlib>
#include <string>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "kog/common.hpp"
#include "kog/kernels.hpp"

namespace kog::kern {

namespace {

// Training allocates and frees step-sized activation buffers continuously;
// keeping them on the heap free list instead of mmap avoids page-fault churn.
struct MallocTuning {
  MallocTuning() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
#endif
  }
};
const MallocTuning malloc_tuning;

bool cpu_has_avx2() {
#if KOG_HAVE_AVX2_KERNELS
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

std::string resolve_variant() {
  if (const char* env = std::getenv("KOG_KERNELS")) {
    std::string want(env);
    if (want == "scalar") return "scalar";
    if (want == "avx2") {
      if (!cpu_has_avx2())
        throw ConfigError("KOG_KERNELS=avx2 requested but CPU lacks AVX2/FMA");
      return "avx2";
    }
    if (!want.empty())
      throw ConfigError("unknown KOG_KERNELS value '" + want +
                        "' (expected 'scalar' or 'avx2')");
  }
  return cpu_has_avx2() ? "avx2" : "scalar";
}

}  // namespace

const std::string& active_name() {
  static const std::string name = resolve_variant();
  return name;
}

template <typename T>
const KernelTable<T>& active() {
#if KOG_HAVE_AVX2_KERNELS
  static const KernelTable<T>& t =
      active_name() == "avx2" ? avx2::table<T>() : scalar::table<T>();
#else
  static const KernelTable<T>& t = scalar::table<T>();
#endif
  return t;
}

template const KernelTable<float>& active<float>();
template const KernelTable<double>& active<double>();

}  // namespace kog::kern
