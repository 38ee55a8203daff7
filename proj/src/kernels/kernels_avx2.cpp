// AVX2 + FMA variants. This translation unit is compiled with -mavx2 -mfma and
// must only be entered after a runtime CPU check (see dispatch.cpp).

#include "wavecal/kernels.hpp"

#include <immintrin.h>

#include <cmath>

namespace wavecal::kernels::detail {
namespace {

void weighted_sqdist_avx2(const double* x, const double* cols, std::size_t stride, std::size_t n,
                          std::size_t dims, const double* w, double* out) {
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    __m256d acc = _mm256_setzero_pd();
    for (std::size_t j = 0; j < dims; ++j) {
      const __m256d col = _mm256_loadu_pd(cols + j * stride + k);
      const __m256d diff = _mm256_sub_pd(_mm256_set1_pd(x[j]), col);
      acc = _mm256_fmadd_pd(_mm256_mul_pd(_mm256_set1_pd(w[j]), diff), diff, acc);
    }
    _mm256_storeu_pd(out + k, acc);
  }
  for (; k < n; ++k) {
    double acc = 0.0;
    for (std::size_t j = 0; j < dims; ++j) {
      const double diff = x[j] - cols[j * stride + k];
      acc = std::fma(w[j] * diff, diff, acc);
    }
    out[k] = acc;
  }
}

// exp(x) for x <= 0 using the Cephes rational approximation on a reduced
// argument; results below 2^-1021 flush to zero.
inline __m256d exp_nonpositive(__m256d x) {
  const __m256d log2e = _mm256_set1_pd(1.4426950408889634073599);
  const __m256d c1 = _mm256_set1_pd(6.93145751953125E-1);
  const __m256d c2 = _mm256_set1_pd(1.42860682030941723212E-6);
  const __m256d p0 = _mm256_set1_pd(1.26177193074810590878E-4);
  const __m256d p1 = _mm256_set1_pd(3.02994407707441961300E-2);
  const __m256d p2 = _mm256_set1_pd(9.99999999999999999910E-1);
  const __m256d q0 = _mm256_set1_pd(3.00198505138664455042E-6);
  const __m256d q1 = _mm256_set1_pd(2.52448340349684104192E-3);
  const __m256d q2 = _mm256_set1_pd(2.27265548208155028766E-1);
  const __m256d q3 = _mm256_set1_pd(2.00000000000000000009E0);
  const __m256d lower = _mm256_set1_pd(-708.0);

  const __m256d underflow = _mm256_cmp_pd(x, lower, _CMP_LT_OQ);
  x = _mm256_max_pd(x, lower);

  const __m256d n = _mm256_round_pd(_mm256_mul_pd(x, log2e), _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256d r = _mm256_fnmadd_pd(n, c1, x);
  r = _mm256_fnmadd_pd(n, c2, r);

  const __m256d rr = _mm256_mul_pd(r, r);
  __m256d p = _mm256_fmadd_pd(p0, rr, p1);
  p = _mm256_fmadd_pd(p, rr, p2);
  p = _mm256_mul_pd(p, r);
  __m256d q = _mm256_fmadd_pd(q0, rr, q1);
  q = _mm256_fmadd_pd(q, rr, q2);
  q = _mm256_fmadd_pd(q, rr, q3);
  __m256d e = _mm256_div_pd(p, _mm256_sub_pd(q, p));
  e = _mm256_fmadd_pd(_mm256_set1_pd(2.0), e, _mm256_set1_pd(1.0));

  // 2^n: place n + 1023 into the exponent field.
  const __m256d magic = _mm256_set1_pd(6755399441055744.0);  // 1.5 * 2^52
  __m256i bits = _mm256_castpd_si256(_mm256_add_pd(n, magic));
  bits = _mm256_sub_epi64(bits, _mm256_castpd_si256(magic));
  bits = _mm256_add_epi64(bits, _mm256_set1_epi64x(1023));
  bits = _mm256_slli_epi64(bits, 52);
  e = _mm256_mul_pd(e, _mm256_castsi256_pd(bits));

  return _mm256_andnot_pd(underflow, e);
}

void scaled_exp_neg_avx2(const double* in, double scale, double* out, std::size_t n) {
  const __m256d s = _mm256_set1_pd(scale);
  const __m256d sign = _mm256_set1_pd(-0.0);
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    const __m256d v = _mm256_xor_pd(_mm256_loadu_pd(in + k), sign);
    _mm256_storeu_pd(out + k, _mm256_mul_pd(s, exp_nonpositive(v)));
  }
  if (k < n) {
    alignas(32) double tail[4] = {0.0, 0.0, 0.0, 0.0};
    for (std::size_t i = 0; k + i < n; ++i) tail[i] = -in[k + i];
    const __m256d v = _mm256_mul_pd(s, exp_nonpositive(_mm256_load_pd(tail)));
    _mm256_store_pd(tail, v);
    for (std::size_t i = 0; k + i < n; ++i) out[k + i] = tail[i];
  }
}

void min_inplace_avx2(double* acc, const double* v, std::size_t n) {
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    _mm256_storeu_pd(acc + k, _mm256_min_pd(_mm256_loadu_pd(acc + k), _mm256_loadu_pd(v + k)));
  }
  for (; k < n; ++k) acc[k] = v[k] < acc[k] ? v[k] : acc[k];
}

std::size_t count_le_avx2(const double* v, std::size_t n, double bound) {
  const __m256d b = _mm256_set1_pd(bound);
  std::size_t count = 0;
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    const int mask = _mm256_movemask_pd(_mm256_cmp_pd(_mm256_loadu_pd(v + k), b, _CMP_LE_OQ));
    count += static_cast<std::size_t>(__builtin_popcount(static_cast<unsigned>(mask)));
  }
  for (; k < n; ++k) count += v[k] <= bound ? 1 : 0;
  return count;
}

}  // namespace

const KernelTable& avx2_table() {
  static const KernelTable table{"avx2", &weighted_sqdist_avx2, &scaled_exp_neg_avx2,
                                 &min_inplace_avx2, &count_le_avx2};
  return table;
}

}  // namespace wavecal::kernels::detail
