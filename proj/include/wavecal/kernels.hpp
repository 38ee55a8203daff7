#pragma once

// Data-parallel inner loops shared by the emulator, the space-filling
// designs and the proposal sampler.
//
// Every kernel has a portable scalar reference implementation. Vector
// variants (AVX2+FMA on x86-64) are compiled into separate translation
// units and selected once at runtime. Set WAVECAL_SIMD=scalar to force the
// reference path.

#include <cstddef>
#include <span>
#include <vector>

namespace wavecal::kernels {

/// Function table for one instruction-set level.
///
/// Point sets are stored column-major ("structure of arrays"): coordinate j
/// of point k lives at cols[j * stride + k]. Kernels vectorise across points.
struct KernelTable {
  const char* name;

  // out[k] = sum_j w[j] * (x[j] - cols[j*stride + k])^2  for k < n
  void (*weighted_sqdist)(const double* x, const double* cols, std::size_t stride,
                          std::size_t n, std::size_t dims, const double* w, double* out);

  // out[k] = scale * exp(-in[k]); in[k] >= 0
  void (*scaled_exp_neg)(const double* in, double scale, double* out, std::size_t n);

  // acc[k] = min(acc[k], v[k])
  void (*min_inplace)(double* acc, const double* v, std::size_t n);

  // number of k with v[k] <= bound
  std::size_t (*count_le)(const double* v, std::size_t n, double bound);
};

const KernelTable& scalar();

/// AVX2 table, or nullptr when not compiled in or not supported by this CPU.
const KernelTable* avx2();

/// Table used by the library: the widest supported variant unless
/// overridden through WAVECAL_SIMD.
const KernelTable& active();

/// Point set in column-major layout, ready for the kernels above.
class PointColumns {
 public:
  PointColumns() = default;
  PointColumns(std::size_t dims, std::size_t capacity);

  void push_back(std::span<const double> point);

  std::size_t size() const { return size_; }
  std::size_t dims() const { return dims_; }
  std::size_t stride() const { return stride_; }
  const double* data() const { return data_.data(); }
  double at(std::size_t point, std::size_t dim) const { return data_[dim * stride_ + point]; }

 private:
  void grow(std::size_t capacity);

  std::size_t dims_ = 0;
  std::size_t size_ = 0;
  std::size_t stride_ = 0;
  std::vector<double> data_;
};

}  // namespace wavecal::kernels
