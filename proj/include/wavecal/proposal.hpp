#pragma once

// Sampling from the current non-implausible region: Latin hypercube
// rejection, ray boundary tracing, ellipsoid-mixture importance sampling and
// maximin thinning, with optional cutoff relaxation (annealing).

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "wavecal/implausibility.hpp"
#include "wavecal/param_space.hpp"

namespace wavecal {

/// One classifier in the cascade: a point passes when measure <= cutoff.
struct OracleStage {
  std::function<std::vector<double>(const std::vector<Point>&)> measure;
  double cutoff = 3.0;
};

/// Conjunction of stages. Later stages are only measured on points that
/// pass every earlier stage. The last stage is the one being annealed.
class RegionOracle {
 public:
  std::vector<OracleStage> stages;
  std::size_t workers = 1;

  /// One stage per wave, holding shared ownership of the wave's emulators.
  static RegionOracle from_waves(const std::vector<std::shared_ptr<const WaveEmulators>>& waves,
                                 std::size_t workers = 1);

  bool empty() const { return stages.empty(); }
  double final_cutoff() const { return stages.back().cutoff; }

  /// Last-stage measure, or +inf where an earlier stage already fails.
  /// An oracle without stages returns 0 everywhere.
  std::vector<double> final_values(const std::vector<Point>& xs) const;
  /// Pass flags with the last stage's cutoff replaced by `cutoff`.
  std::vector<char> pass(const std::vector<Point>& xs, double cutoff) const;
  std::vector<char> pass(const std::vector<Point>& xs) const;
};

struct ProposalConfig {
  std::size_t n_target = 100;
  std::size_t n_candidates = 10000;
  /// Strictly decreasing cutoffs ending at the oracle's final cutoff. Empty
  /// selects {2, 1.5, 1.25, 1} times the final cutoff.
  std::vector<double> cutoff_schedule;
  /// Ray pairs per stage; 0 selects 20 * d.
  std::size_t ray_pairs = 0;
  double radius_mult = 1.5;
  /// Ellipsoid draws per stage; 0 selects n_candidates.
  std::size_t n_importance = 0;
};

std::vector<double> default_cutoff_schedule(double final_cutoff);

struct WeightedPoints {
  std::vector<Point> points;
  std::vector<double> weights;
};

/// Boundary points found by bisection along rays through pairs of
/// survivors, extended past both ends to the box edge. Tolerance is in
/// unit-scaled distance; each result is the last accepted point.
std::vector<Point> ray_boundary_points(const std::vector<Point>& survivors, const RegionOracle& oracle,
                                       double cutoff, const ParameterSpace& space, std::size_t pairs,
                                       std::uint64_t seed, double tol = 1e-3);

/// Uniform draws from a mixture of ellipsoids centred on the seeds (shape
/// from the seed covariance in unit coordinates), kept when inside the box
/// and accepted by the oracle. Weight = 1 / (components containing the
/// draw). Falls back to spherical components for fewer than d + 1 seeds or
/// a degenerate covariance.
WeightedPoints ellipsoid_importance(const std::vector<Point>& seeds, const RegionOracle& oracle, double cutoff,
                                    const ParameterSpace& space, std::size_t n, double radius_mult,
                                    std::uint64_t seed, bool* spherical = nullptr);

struct StageAudit {
  double cutoff = 0.0;
  std::size_t seeds = 0;
  std::size_t ray_points = 0;
  std::size_t importance_draws = 0;
  std::size_t importance_accepted = 0;
  bool spherical = false;
  std::size_t pool = 0;
};

struct ProposalAudit {
  std::size_t candidates = 0;
  std::size_t lhs_survivors = 0;  // at the final cutoff
  std::vector<StageAudit> stages;
  std::size_t returned = 0;

  std::string to_text() const;
};

struct ProposalResult {
  DesignBatch batch;
  std::vector<Provenance> sources;  // per point
  ProposalAudit audit;
};

/// Runs the four steps (with annealing over the schedule) and returns up to
/// n_target maximin-thinned points, all accepted at the final cutoff.
/// Throws EmptyRegion when no point survives the final cutoff.
ProposalResult propose(const RegionOracle& oracle, const ParameterSpace& space, const ProposalConfig& cfg,
                       std::uint64_t seed);

/// Proposal CSV: parameter columns plus a "source" column.
std::string proposal_to_csv(const ProposalResult& result, const ParameterSpace& space);

}  // namespace wavecal
