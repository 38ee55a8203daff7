#include "wavecal/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace wavecal::kernels {
namespace {

void weighted_sqdist_scalar(const double* x, const double* cols, std::size_t stride, std::size_t n,
                            std::size_t dims, const double* w, double* out) {
  std::fill(out, out + n, 0.0);
  for (std::size_t j = 0; j < dims; ++j) {
    const double xj = x[j];
    const double wj = w[j];
    const double* col = cols + j * stride;
    for (std::size_t k = 0; k < n; ++k) {
      const double diff = xj - col[k];
      out[k] += wj * diff * diff;
    }
  }
}

void scaled_exp_neg_scalar(const double* in, double scale, double* out, std::size_t n) {
  for (std::size_t k = 0; k < n; ++k) out[k] = scale * std::exp(-in[k]);
}

void min_inplace_scalar(double* acc, const double* v, std::size_t n) {
  for (std::size_t k = 0; k < n; ++k) acc[k] = std::min(acc[k], v[k]);
}

std::size_t count_le_scalar(const double* v, std::size_t n, double bound) {
  std::size_t count = 0;
  for (std::size_t k = 0; k < n; ++k) count += v[k] <= bound ? 1 : 0;
  return count;
}

}  // namespace

const KernelTable& scalar() {
  static const KernelTable table{"scalar", &weighted_sqdist_scalar, &scaled_exp_neg_scalar,
                                 &min_inplace_scalar, &count_le_scalar};
  return table;
}

PointColumns::PointColumns(std::size_t dims, std::size_t capacity) : dims_(dims) {
  grow(std::max<std::size_t>(capacity, 4));
}

void PointColumns::grow(std::size_t capacity) {
  // Pad to a multiple of 4 so vector loads of the last block stay in bounds.
  const std::size_t new_stride = (capacity + 3) / 4 * 4;
  std::vector<double> next(dims_ * new_stride, 0.0);
  for (std::size_t j = 0; j < dims_; ++j) {
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(j * stride_), size_,
                next.begin() + static_cast<std::ptrdiff_t>(j * new_stride));
  }
  data_ = std::move(next);
  stride_ = new_stride;
}

void PointColumns::push_back(std::span<const double> point) {
  if (size_ == stride_) grow(std::max<std::size_t>(2 * stride_, 4));
  for (std::size_t j = 0; j < dims_; ++j) data_[j * stride_ + size_] = point[j];
  ++size_;
}

}  // namespace wavecal::kernels
