#pragma once

// Repeated realisations: sample statistics, emulation of the true
// covariance surface with finite-sample corrections, and the matching
// inflation of the mean emulators' data variance.

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "wavecal/emulator.hpp"
#include "wavecal/param_space.hpp"

namespace wavecal {

/// values[point][rep][output].
struct RunEnsemble {
  DesignBatch design;
  std::vector<std::string> outputs;
  std::vector<std::vector<std::vector<double>>> values;

  std::size_t reps(std::size_t point) const { return values[point].size(); }
  std::size_t output_index(const std::string& name) const;
  /// Throws DomainError on ragged or mis-sized tensors.
  void check() const;
};

/// Long format: point_id, rep, output, value.
std::string ensemble_to_csv(const RunEnsemble& ens);
RunEnsemble ensemble_from_csv(std::string_view text, DesignBatch design, std::vector<std::string> outputs);

struct SampleStatistics {
  DesignBatch design;
  std::vector<std::string> outputs;
  std::vector<std::size_t> reps;
  Eigen::MatrixXd means;             // points x outputs
  std::vector<Eigen::MatrixXd> covs; // per point; empty unless requested

  bool has_covs() const { return !covs.empty(); }
  std::size_t output_index(const std::string& name) const;
  /// Sample variance of output a across points.
  Eigen::VectorXd variances(std::size_t a) const;
};

/// Unbiased sample means and covariances. Throws InsufficientRepsError when
/// covariances are requested and some point has a single repetition.
SampleStatistics summarize(const RunEnsemble& ens, bool with_covs = true);

/// Plug-in fourth-order prior quantities for one output pair.
struct FourthOrder {
  double c_ab = 0.0;        // E[M(Q_ab)]
  double c_ab_m = 0.0;      // Var[M(Q_ab)]
  double cov_m_aa_bb = 0.0; // Cov[M(Q_aa), M(Q_bb)]
  double c_aa = 0.0;
  double c_bb = 0.0;
  double c_r = 0.0;         // residual fourth-order term C_ab,R(C)
};

/// V_T: extra variance of a sample covariance from n realisations.
double correction_variance(const FourthOrder& f, std::size_t n);

/// C_ab and C_ab,M from the mean and variance of q_ab over the design,
/// Cov[M(Q_aa), M(Q_bb)] from the covariance of q_aa and q_bb, and C_ab,R(C)
/// from n_l times the bootstrap variance of q_ab at each point (averaged).
FourthOrder estimate_fourth_order(const RunEnsemble& ens, const SampleStatistics& stats, std::size_t a,
                                  std::size_t b, std::size_t n_boot, std::uint64_t seed);

/// Pairs (a, b), a <= b: every diagonal pair plus off-diagonal pairs whose
/// pooled sample correlation exceeds the threshold in absolute value.
std::vector<std::pair<std::size_t, std::size_t>> select_pairs(const SampleStatistics& stats, double threshold);

struct CovariancePair {
  std::size_t a = 0, b = 0;
  FourthOrder fourth;
  TrainedEmulator em;
};

struct CovarianceOptions {
  double corr_threshold = 0.3;
  std::size_t n_boot = 200;
  FitOptions fit;
  std::uint64_t seed = 0;
};

class CovarianceEmulator {
 public:
  std::vector<std::string> outputs;
  std::vector<CovariancePair> pairs;

  const CovariancePair* find(std::size_t a, std::size_t b) const;
  bool has_variance(std::size_t a) const { return find(a, a) != nullptr; }

  /// Predicted stochastic covariance over the given outputs. Pairs that
  /// were not emulated are zero; the result is repaired to PSD and
  /// *repaired reports whether that changed anything.
  Eigen::MatrixXd predict(const Point& x, const std::vector<std::size_t>& outputs_sel,
                          bool* repaired = nullptr) const;
  /// Clamped diagonal predictions V*(x) for output a at each point.
  std::vector<double> predict_variance(std::size_t a, const std::vector<Point>& xs) const;
};

/// Emulates each selected pair over the sample covariances. Data variance is
/// the prior covariance plus diag(V_T) (V_T from the point's rep count).
CovarianceEmulator train_covariance_emulators(const RunEnsemble& ens, const SampleStatistics& stats,
                                              const ParameterSpace& space,
                                              const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
                                              const CovarianceOptions& opts);

/// Nearest PSD matrix by eigen-clipping: the negative-eigenvalue part is
/// subtracted, so matrices that are already PSD come back unchanged.
Eigen::MatrixXd psd_repair(const Eigen::MatrixXd& m, bool* repaired = nullptr);

/// base + diag(v_star / reps). Throws InternalError for negative v_star.
Eigen::MatrixXd inflate_mean_data_variance(const Eigen::MatrixXd& base, const std::vector<double>& v_star,
                                           const std::vector<std::size_t>& reps);

/// Mean-emulator prior from sample means of one output; the leave-one-out
/// search sees each mean's sampling variance when covariances are present.
EmulatorPrior fit_prior(const SampleStatistics& stats, const ParameterSpace& space, std::size_t output,
                        const FitOptions& opts);

}  // namespace wavecal
