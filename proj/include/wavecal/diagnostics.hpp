#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "wavecal/implausibility.hpp"
#include "wavecal/stochastic.hpp"

namespace wavecal {

struct OutputValidation {
  std::string output;
  std::size_t n = 0;
  std::size_t comparison_failures = 0;      // |pred - mean| > 3 sqrt(pred_var + sample_var / n_l)
  std::size_t classification_failures = 0;  // emulator rejects, simulator accepts
  std::size_t large_errors = 0;             // |standardised error| > 3, model stochastic variance
  std::vector<double> std_errors;
  bool pass = false;
};

struct ValidationReport {
  std::vector<OutputValidation> outputs;

  bool all_pass() const;
  const OutputValidation& find(const std::string& output) const;
  /// One row per output: output, n, comparison_failures,
  /// classification_failures, large_errors, pass.
  std::string to_csv() const;
};

/// Pass rule: comparison failure rate <= 10%, no classification failures,
/// at most 5% of standardised errors beyond 3 in absolute value.
bool validation_pass(const OutputValidation& v);

/// Compares each wave emulator with hold-out sample means. The stochastic
/// variance is the wave's own estimate; classification uses the wave cutoff
/// on univariate implausibilities. Throws ValidationError for an empty
/// hold-out.
ValidationReport validate(const WaveEmulators& wave, const SampleStatistics& holdout);

/// Single-output variant used while retrying a fit.
OutputValidation validate_output(const TrainedEmulator& em, const Target& target, double cutoff,
                                 const std::vector<double>& stoch_var, const SampleStatistics& holdout,
                                 std::size_t holdout_output);

struct EffectStrength {
  std::vector<std::string> outputs;
  std::vector<std::string> parameters;
  Eigen::MatrixXd linear;     // signed, outputs x parameters
  Eigen::MatrixXd quadratic;  // magnitude of the squared term

  /// Long format: output, parameter, linear, quadratic.
  std::string to_csv() const;
};

/// Regression coefficients of each emulator in its frame coordinates
/// (design box mapped to [-1, 1]); inactive variables are zero.
EffectStrength effect_strength(const std::vector<std::string>& outputs, const std::vector<TrainedEmulator>& ems,
                               const std::vector<std::string>& parameters);

struct WaveValues {
  std::size_t wave = 0;
  SampleStatistics stats;
  std::vector<std::string> outputs;  // outputs exported for this wave
};

/// Long format: wave, point_id, output, mean.
std::string export_wave_values(const std::vector<WaveValues>& waves);
/// output, lo, hi, disc_sd; interval bounds as given, mean form as z +/- 3 sd.
std::string export_targets(const std::vector<Target>& targets);

}  // namespace wavecal
