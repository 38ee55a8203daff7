#include <cstdlib>
#include <string_view>

#include "wavecal/kernels.hpp"

namespace wavecal::kernels {

#if defined(WAVECAL_HAVE_AVX2)
namespace detail {
const KernelTable& avx2_table();
}
#endif

const KernelTable* avx2() {
#if defined(WAVECAL_HAVE_AVX2)
  static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return supported ? &detail::avx2_table() : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable& active() {
  static const KernelTable* chosen = [] {
    const char* env = std::getenv("WAVECAL_SIMD");
    const std::string_view want = env ? env : "";
    if (want == "scalar") return &scalar();
    if (const KernelTable* vec = avx2()) return vec;
    return &scalar();
  }();
  return *chosen;
}

}  // namespace wavecal::kernels
