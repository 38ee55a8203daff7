#include "wavecal/param_space.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "wavecal/csv.hpp"
#include "wavecal/error.hpp"
#include "wavecal/kernels.hpp"
#include "wavecal/rng.hpp"

namespace wavecal {

ParameterSpace::ParameterSpace(std::vector<Dimension> dims) : dims_(std::move(dims)) {
  std::set<std::string> seen;
  for (const auto& d : dims_) {
    if (!(d.lo < d.hi)) {
      throw DomainError("parameter '" + d.name + "': lower bound " + format_double(d.lo) +
                        " is not below upper bound " + format_double(d.hi));
    }
    if (!std::isfinite(d.lo) || !std::isfinite(d.hi)) {
      throw DomainError("parameter '" + d.name + "' has a non-finite bound");
    }
    if (!seen.insert(d.name).second) throw DomainError("duplicate parameter name '" + d.name + "'");
  }
}

std::vector<std::string> ParameterSpace::names() const {
  std::vector<std::string> out;
  out.reserve(dims_.size());
  for (const auto& d : dims_) out.push_back(d.name);
  return out;
}

std::size_t ParameterSpace::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (dims_[i].name == name) return i;
  }
  throw DomainError("unknown parameter '" + std::string(name) + "'");
}

bool ParameterSpace::contains(std::span<const double> x) const {
  if (x.size() != dims_.size()) return false;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] >= dims_[i].lo && x[i] <= dims_[i].hi)) return false;
  }
  return true;
}

Point scale_to_unit(std::span<const double> x, const ParameterSpace& space) {
  if (!space.contains(x)) throw DomainError("point outside parameter space");
  Point u(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto& d = space[i];
    u[i] = (x[i] - d.lo) / (d.hi - d.lo);
  }
  return u;
}

Point unscale_from_unit(std::span<const double> u, const ParameterSpace& space) {
  if (u.size() != space.size()) throw DomainError("unit point has wrong dimension");
  Point x(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (!(u[i] >= 0.0 && u[i] <= 1.0)) throw DomainError("unit point outside [0,1]");
    const auto& d = space[i];
    x[i] = std::clamp(d.lo + u[i] * (d.hi - d.lo), d.lo, d.hi);
  }
  return x;
}

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::lhs: return "lhs";
    case Provenance::ray: return "ray";
    case Provenance::importance: return "importance";
    case Provenance::external: return "external";
  }
  return "external";
}

Provenance provenance_from_string(std::string_view s) {
  if (s == "lhs") return Provenance::lhs;
  if (s == "ray") return Provenance::ray;
  if (s == "importance") return Provenance::importance;
  if (s == "external") return Provenance::external;
  throw ParseError("unknown design provenance '" + std::string(s) + "'");
}

DesignBatch lhs_design(const ParameterSpace& space, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw DesignError("Latin hypercube with zero points requested");
  Rng rng(derive_seed(seed, {tag(Stream::design)}));
  const std::size_t d = space.size();
  std::vector<Point> unit(n, Point(d));
  std::vector<std::size_t> perm(n);
  for (std::size_t j = 0; j < d; ++j) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t i = 0; i < n; ++i) {
      // Jitter around the stratum midpoint, kept clear of the stratum edges
      // so the stratum survives rounding in the affine map.
      const double jitter = (uniform01(rng) - 0.5) * 0.98;
      unit[i][j] = (static_cast<double>(perm[i]) + 0.5 + jitter) / static_cast<double>(n);
    }
  }
  DesignBatch batch;
  batch.provenance = Provenance::lhs;
  batch.points.reserve(n);
  for (const auto& u : unit) batch.points.push_back(unscale_from_unit(u, space));
  return batch;
}

std::vector<std::size_t> maximin_indices(const std::vector<Point>& unit_points, std::size_t k) {
  const std::size_t n = unit_points.size();
  if (k > n) {
    throw DesignError("cannot thin " + std::to_string(n) + " points to " + std::to_string(k));
  }
  if (k == n) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    return all;
  }
  if (k == 0) return {};

  const std::size_t d = unit_points.front().size();
  kernels::PointColumns cols(d, n);
  for (const auto& p : unit_points) cols.push_back(p);
  const auto& kern = kernels::active();
  const std::vector<double> ones(d, 1.0);
  std::vector<double> dist(n);

  // Farthest pair, lowest indices on ties.
  std::size_t best_i = 0, best_j = 1;
  double best = -1.0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const std::size_t rest = n - i - 1;
    kern.weighted_sqdist(unit_points[i].data(), cols.data() + i + 1, cols.stride(), rest, d, ones.data(),
                         dist.data());
    for (std::size_t t = 0; t < rest; ++t) {
      if (dist[t] > best) {
        best = dist[t];
        best_i = i;
        best_j = i + 1 + t;
      }
    }
  }

  std::vector<char> chosen(n, 0);
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  auto select = [&](std::size_t idx) {
    chosen[idx] = 1;
    kern.weighted_sqdist(unit_points[idx].data(), cols.data(), cols.stride(), n, d, ones.data(), dist.data());
    kern.min_inplace(nearest.data(), dist.data(), n);
  };
  select(best_i);
  std::size_t count = 1;
  if (k >= 2) {
    select(best_j);
    count = 2;
  }
  while (count < k) {
    std::size_t arg = n;
    double far = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!chosen[i] && nearest[i] > far) {
        far = nearest[i];
        arg = i;
      }
    }
    select(arg);
    ++count;
  }
  std::vector<std::size_t> out;
  out.reserve(k);
  for (std::size_t i = 0; i < n; ++i) {
    if (chosen[i]) out.push_back(i);
  }
  return out;
}

DesignBatch maximin_thin(const DesignBatch& batch, std::size_t k, const ParameterSpace& space) {
  if (k > batch.size()) {
    throw DesignError("cannot thin " + std::to_string(batch.size()) + " points to " + std::to_string(k));
  }
  std::vector<Point> unit;
  unit.reserve(batch.size());
  for (const auto& p : batch.points) unit.push_back(scale_to_unit(p, space));
  DesignBatch out;
  out.provenance = batch.provenance;
  for (std::size_t idx : maximin_indices(unit, k)) out.points.push_back(batch.points[idx]);
  return out;
}

double min_pairwise_distance(const std::vector<Point>& points, const ParameterSpace& space) {
  double best = std::numeric_limits<double>::infinity();
  std::vector<Point> unit;
  unit.reserve(points.size());
  for (const auto& p : points) unit.push_back(scale_to_unit(p, space));
  for (std::size_t i = 0; i < unit.size(); ++i) {
    for (std::size_t j = i + 1; j < unit.size(); ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < unit[i].size(); ++t) {
        const double diff = unit[i][t] - unit[j][t];
        s += diff * diff;
      }
      best = std::min(best, std::sqrt(s));
    }
  }
  return best;
}

std::string design_to_csv(const DesignBatch& batch, const ParameterSpace& space) {
  CsvWriter w(space.names());
  for (const auto& p : batch.points) {
    for (double v : p) w.cell(v);
    w.end_row();
  }
  return w.text();
}

DesignBatch design_from_csv(std::string_view text, const ParameterSpace& space, Provenance provenance) {
  const CsvTable table = parse_csv(text);
  std::vector<std::size_t> cols;
  for (const auto& d : space.dims()) cols.push_back(table.column(d.name));
  DesignBatch batch;
  batch.provenance = provenance;
  for (const auto& row : table.rows) {
    Point p(space.size());
    for (std::size_t j = 0; j < cols.size(); ++j) p[j] = parse_double(row[cols[j]]);
    if (!space.contains(p)) throw DomainError("design point outside parameter space");
    batch.points.push_back(std::move(p));
  }
  return batch;
}

void save_design(const std::filesystem::path& path, const DesignBatch& batch, const ParameterSpace& space) {
  write_file_atomic(path, design_to_csv(batch, space));
}

DesignBatch load_design(const std::filesystem::path& path, const ParameterSpace& space) {
  return design_from_csv(read_file(path), space);
}

}  // namespace wavecal
