#pragma once

#include <Eigen/Core>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wavecal/emulator.hpp"
#include "wavecal/stochastic.hpp"

namespace wavecal {

enum class TargetForm { interval, mean_sd };

/// Observation z with observation error and model discrepancy. Interval
/// targets keep their bounds and sigma_k so the encoding round-trips.
struct Target {
  std::string output;
  TargetForm form = TargetForm::mean_sd;
  double lo = 0.0, hi = 0.0, sigma_k = 3.0;  // interval form
  double mean = 0.0, sd = 0.0;               // mean form
  double disc_sd = 0.0;

  static Target interval(std::string output, double lo, double hi, double disc_sd, double sigma_k = 3.0);
  static Target mean_sd(std::string output, double mean, double sd, double disc_sd);

  /// Interval midpoint, or the stated mean.
  double z() const;
  /// Half-width / sigma_k, or the stated sd.
  double obs_sd() const;
  double obs_var() const { return obs_sd() * obs_sd(); }
  double disc_var() const { return disc_sd * disc_sd; }
  /// z +/- 3 obs_sd, used for yield.
  double band_lo() const { return z() - 3.0 * obs_sd(); }
  double band_hi() const { return z() + 3.0 * obs_sd(); }

  friend bool operator==(const Target&, const Target&) = default;
};

struct ImplausibilitySpec {
  enum class Kind { nth_max, multivariate };
  Kind kind = Kind::nth_max;
  std::size_t n = 1;  // nth_max only
  double cutoff = 3.0;

  friend bool operator==(const ImplausibilitySpec&, const ImplausibilitySpec&) = default;
};

/// |m - z| / sqrt(pred_var + obs_var + disc_var + stoch_var).
double implausibility_uni(double pred_mean, double pred_var, double stoch_var, const Target& target);

/// n-th largest value (n = 1 is the maximum).
double combine_nth_max(std::span<const double> values, std::size_t n);

/// sqrt((m - z)' S^-1 (m - z)) with S = pred_cov + diag(obs + disc) + stoch_cov.
double implausibility_multi(const Eigen::VectorXd& pred_means, const Eigen::MatrixXd& pred_cov,
                            const Eigen::MatrixXd& stoch_cov, const std::vector<Target>& targets);

/// sqrt of the q-quantile of chi-squared with m degrees of freedom.
double default_multivariate_cutoff(std::size_t m, double q = 0.995);

struct ImplausibilityResult {
  std::vector<double> per_output;
  double combined = 0.0;
  bool pass = true;
};

/// The emulators, targets and measure of one wave.
struct WaveEmulators {
  std::vector<std::string> outputs;  // O_k
  std::vector<TrainedEmulator> emulators;
  std::vector<Target> targets;
  ImplausibilitySpec spec;
  std::optional<CovarianceEmulator> cem;
  /// Stochastic variance per output when the covariance emulator has none.
  std::vector<double> fixed_stoch_var;

  void check() const;
  /// Stochastic variance V*(x) for each output (rows) at each point (cols).
  Eigen::MatrixXd stoch_variances(const std::vector<Point>& xs) const;
  /// Per-output and combined implausibility; pass uses spec.cutoff. nth_max
  /// with n above the number of outputs falls back to the minimum.
  std::vector<ImplausibilityResult> evaluate(const std::vector<Point>& xs) const;
};

/// Pass flags against the wave's cutoff.
std::vector<char> classify(const WaveEmulators& wave, const std::vector<Point>& xs);

/// CSV of point coordinates, per-output I, combined I and pass flag.
std::string classification_csv(const WaveEmulators& wave, const std::vector<Point>& xs,
                               const std::vector<ImplausibilityResult>& results,
                               const std::vector<std::string>& param_names);

}  // namespace wavecal
