#pragma once

// Bayes linear emulator for a single simulator output.
//
// Prior form: g(x) = sum_j beta_j h_j(x_A) + u(x_A) + w(x), with known
// regression coefficients (Var[beta] = 0), a weakly stationary residual
// u with covariance (1 - delta) sigma2 r(x_A, x'_A), and a nugget w with
// covariance delta sigma2 [x == x'].
//
// Inputs are handled in a per-emulator frame: the box spanned by the
// training design is mapped to [-1, 1]^d. Regression terms and correlation
// lengths both live in that frame.

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wavecal/kernels.hpp"
#include "wavecal/param_space.hpp"

namespace wavecal {

/// Monomial regression terms over the active variables.
struct BasisSpec {
  /// terms[t][a] is the exponent of active variable a in term t.
  std::vector<std::vector<int>> terms;

  /// Constant, linear, and (for degree >= 2) squared and pairwise terms.
  static BasisSpec full(std::size_t n_active, int max_degree);

  std::size_t size() const { return terms.size(); }
  int degree() const;
  /// Human-readable term label such as "1", "beta", "dm^2" or "beta*dm".
  std::string term_name(std::size_t t, std::span<const std::size_t> active,
                        const std::vector<std::string>& names) const;
};

struct InputFrame {
  std::vector<double> center;
  std::vector<double> half_width;

  /// Frame centred at 0 with unit half-width: frame coordinates equal the
  /// raw coordinates.
  static InputFrame identity(std::size_t dims);
  /// Bounding box of the points; dimensions without spread fall back to the
  /// parameter range.
  static InputFrame from_points(const std::vector<Point>& points, const ParameterSpace& space);

  double map(std::size_t dim, double x) const { return (x - center[dim]) / half_width[dim]; }
};

enum class CorrelationFamily { squared_exponential };

struct CorrelationSpec {
  CorrelationFamily family = CorrelationFamily::squared_exponential;
  /// One length per active variable, in frame units.
  std::vector<double> lengths;
};

struct EmulatorPrior {
  InputFrame frame;
  std::vector<std::size_t> active;
  BasisSpec basis;
  std::vector<double> beta_mean;
  double sigma2 = 1.0;
  double delta = 0.0;
  CorrelationSpec corr;

  /// Throws FitError when fields are inconsistent.
  void check() const;

  std::size_t dims() const { return frame.center.size(); }
  /// Regression surface sum_j E[beta_j] h_j(x_A).
  double mean(std::span<const double> x) const;
  /// Basis values h_j(x_A).
  std::vector<double> basis_values(std::span<const double> x) const;
  /// Correlation r(x_A, y_A) without the nugget.
  double correlation(std::span<const double> x, std::span<const double> y) const;
};

/// Cov[g(x), g(y)] = (1 - delta) sigma2 r(x_A, y_A) + delta sigma2 [x == y].
/// The indicator compares the full points, not only the active coordinates.
double prior_cov(const EmulatorPrior& prior, std::span<const double> x, std::span<const double> y);

/// Prior covariance matrix of g over a design, Var[D] for deterministic data.
Eigen::MatrixXd prior_data_variance(const EmulatorPrior& prior, const std::vector<Point>& design);

struct FitOptions {
  int max_degree = 2;
  /// Forward stepwise entry threshold on the partial F statistic.
  double f_threshold = 4.0;
  double delta = 0.05;
  /// Multiplies the regression residual variance (corrective inflation).
  double sigma2_inflation = 1.0;
  /// Candidate correlation lengths (frame units); empty selects the default grid.
  std::vector<double> length_grid;
  /// Skip stepwise selection and use these active variables.
  std::optional<std::vector<std::size_t>> active_override;
  /// Skip the leave-one-out search and use this length everywhere.
  std::optional<double> fixed_length;
};

/// Default log-spaced grid of correlation lengths.
std::vector<double> default_length_grid();

/// Plug-in prior: stepwise regression for active variables and coefficients,
/// residual variance for sigma2, leave-one-out grid search for the
/// correlation lengths. noise_var (may be empty) is the sampling variance of
/// each datum and enters the leave-one-out score.
EmulatorPrior fit_prior(const std::vector<Point>& design, std::span<const double> y,
                        std::span<const double> noise_var, const ParameterSpace& space,
                        const FitOptions& opts);

/// Leave-one-out score (mean of log variance + squared standardised error)
/// for a prior on the given data; lower is better.
double loo_score(const EmulatorPrior& prior, const std::vector<Point>& design, std::span<const double> y,
                 std::span<const double> noise_var);

struct Prediction {
  std::vector<double> mean;
  std::vector<double> variance;
};

/// Prior adjusted by training data. Immutable; predict() is thread-safe.
class TrainedEmulator {
 public:
  TrainedEmulator() = default;

  const EmulatorPrior& prior() const { return prior_; }
  const DesignBatch& design() const { return design_; }
  const Eigen::VectorXd& data() const { return data_; }
  const Eigen::MatrixXd& data_var() const { return data_var_; }
  /// Diagonal jitter that was needed to factorize Var[D].
  double jitter() const { return jitter_; }

  /// Adjusted expectation and variance at each point. Variances are clamped
  /// at zero; a materially negative value raises InternalError.
  Prediction predict(const std::vector<Point>& xs) const;

  /// Cov_D[g(x), g(y)].
  double adjusted_cov(std::span<const double> x, std::span<const double> y) const;

 private:
  friend TrainedEmulator adjust(EmulatorPrior prior, DesignBatch design, Eigen::VectorXd data,
                                Eigen::MatrixXd data_var);

  void cov_row(std::span<const double> x, std::vector<double>& frame_x, std::vector<double>& sq,
               double* out) const;

  EmulatorPrior prior_;
  DesignBatch design_;
  Eigen::VectorXd data_;
  Eigen::MatrixXd data_var_;
  double jitter_ = 0.0;

  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::VectorXd alpha_;  // Var[D]^-1 (D - E[D])
  kernels::PointColumns design_cols_;
  std::vector<double> inv_len2_;
};

/// Bayes linear update of prior by data with the given Var[D]. Throws
/// AdjustmentError when Var[D] is not numerically PSD or stays singular
/// after jitter escalation.
TrainedEmulator adjust(EmulatorPrior prior, DesignBatch design, Eigen::VectorXd data, Eigen::MatrixXd data_var);

}  // namespace wavecal
