#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace wavecal {

/// Coordinates of one parameter set, in parameter units.
using Point = std::vector<double>;

struct Dimension {
  std::string name;
  double lo = 0.0;
  double hi = 1.0;

  friend bool operator==(const Dimension&, const Dimension&) = default;
};

/// Axis-aligned box of parameters. Immutable after construction.
class ParameterSpace {
 public:
  ParameterSpace() = default;
  /// Throws DomainError unless lo < hi everywhere and names are unique.
  explicit ParameterSpace(std::vector<Dimension> dims);

  std::size_t size() const { return dims_.size(); }
  const std::vector<Dimension>& dims() const { return dims_; }
  const Dimension& operator[](std::size_t i) const { return dims_[i]; }
  std::vector<std::string> names() const;
  std::size_t index_of(std::string_view name) const;

  /// Exact test on closed bounds.
  bool contains(std::span<const double> x) const;

  friend bool operator==(const ParameterSpace&, const ParameterSpace&) = default;

 private:
  std::vector<Dimension> dims_;
};

/// Affine map onto [0,1]^d. Throws DomainError for points outside the space.
Point scale_to_unit(std::span<const double> x, const ParameterSpace& space);
/// Inverse of scale_to_unit; throws DomainError outside [0,1]^d.
Point unscale_from_unit(std::span<const double> u, const ParameterSpace& space);

enum class Provenance { lhs, ray, importance, external };

std::string to_string(Provenance p);
Provenance provenance_from_string(std::string_view s);

struct DesignBatch {
  std::vector<Point> points;
  Provenance provenance = Provenance::external;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

/// Latin hypercube of n points: along every dimension each of the n
/// equal-width strata holds exactly one point. Deterministic per seed.
DesignBatch lhs_design(const ParameterSpace& space, std::size_t n, std::uint64_t seed);

/// Greedy maximin subset of k points, computed on unit-scaled coordinates.
/// Starts from the farthest pair and repeatedly adds the point whose nearest
/// selected neighbour is farthest. The result keeps the input order, so
/// thinning is nested: thin(thin(b, k), j) == thin(b, j) for j <= k.
DesignBatch maximin_thin(const DesignBatch& batch, std::size_t k, const ParameterSpace& space);

/// Indices selected by maximin_thin, in ascending order.
std::vector<std::size_t> maximin_indices(const std::vector<Point>& unit_points, std::size_t k);

/// Smallest pairwise Euclidean distance in unit-scaled coordinates
/// (infinity for fewer than two points).
double min_pairwise_distance(const std::vector<Point>& points, const ParameterSpace& space);

/// CSV with a header row of parameter names.
std::string design_to_csv(const DesignBatch& batch, const ParameterSpace& space);
DesignBatch design_from_csv(std::string_view text, const ParameterSpace& space,
                            Provenance provenance = Provenance::external);
void save_design(const std::filesystem::path& path, const DesignBatch& batch, const ParameterSpace& space);
DesignBatch load_design(const std::filesystem::path& path, const ParameterSpace& space);

}  // namespace wavecal
