#include "wavecal/emulator.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "wavecal/csv.hpp"
#include "wavecal/error.hpp"

namespace wavecal {
namespace {

void combinations_with_replacement(std::size_t n_active, int remaining, std::size_t start,
                                   std::vector<int>& current, std::vector<std::vector<int>>& out) {
  if (remaining == 0) {
    out.push_back(current);
    return;
  }
  for (std::size_t i = start; i < n_active; ++i) {
    ++current[i];
    combinations_with_replacement(n_active, remaining - 1, i, current, out);
    --current[i];
  }
}

double eval_term(const std::vector<int>& exps, std::span<const double> frame_active) {
  double v = 1.0;
  for (std::size_t a = 0; a < exps.size(); ++a) {
    for (int e = 0; e < exps[a]; ++e) v *= frame_active[a];
  }
  return v;
}

std::vector<double> frame_active_coords(const EmulatorPrior& prior, std::span<const double> x) {
  std::vector<double> f(prior.active.size());
  for (std::size_t a = 0; a < prior.active.size(); ++a) {
    const std::size_t j = prior.active[a];
    f[a] = prior.frame.map(j, x[j]);
  }
  return f;
}

Eigen::MatrixXd regression_matrix(const std::vector<std::vector<double>>& frame_points,
                                  std::span<const std::size_t> active, const BasisSpec& basis) {
  const auto n = static_cast<Eigen::Index>(frame_points.size());
  Eigen::MatrixXd h(n, static_cast<Eigen::Index>(basis.size()));
  std::vector<double> fa(active.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < active.size(); ++a) fa[a] = frame_points[static_cast<std::size_t>(i)][active[a]];
    for (std::size_t t = 0; t < basis.size(); ++t) h(i, static_cast<Eigen::Index>(t)) = eval_term(basis.terms[t], fa);
  }
  return h;
}

struct LeastSquares {
  Eigen::VectorXd beta;
  double rss = 0.0;
  Eigen::Index rank = 0;
  std::vector<std::size_t> dependent;  // basis terms outside the numerical rank
};

LeastSquares least_squares(const Eigen::MatrixXd& h, const Eigen::VectorXd& y) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(h);
  qr.setThreshold(1e-10);
  LeastSquares out;
  out.rank = qr.rank();
  out.beta = qr.solve(y);
  out.rss = (y - h * out.beta).squaredNorm();
  const auto& perm = qr.colsPermutation().indices();
  for (Eigen::Index i = out.rank; i < h.cols(); ++i) out.dependent.push_back(static_cast<std::size_t>(perm(i)));
  std::sort(out.dependent.begin(), out.dependent.end());
  return out;
}

/// Cholesky with diagonal jitter escalating from 0 through 1e-10..1e-6 of
/// the trace. Returns false when every level fails.
bool factorize(const Eigen::MatrixXd& k, Eigen::LLT<Eigen::MatrixXd>& llt, double& jitter_out) {
  const double trace = std::max(k.trace(), 0.0);
  const double levels[] = {0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6};
  for (double level : levels) {
    const double jitter = level * trace;
    if (level > 0.0 && jitter <= 0.0) break;
    Eigen::MatrixXd kj = k;
    kj.diagonal().array() += jitter;
    llt.compute(kj);
    if (llt.info() != Eigen::Success) continue;
    const auto diag = llt.matrixLLT().diagonal();
    if (!diag.allFinite() || (diag.array() <= 0.0).any()) continue;
    jitter_out = jitter;
    return true;
  }
  return false;
}

Eigen::MatrixXd residual_cov_matrix(const std::vector<std::vector<double>>& frame_points,
                                    std::span<const std::size_t> active, std::span<const double> lengths,
                                    const std::vector<Point>& design, double sigma2, double delta) {
  const std::size_t n = frame_points.size();
  Eigen::MatrixXd k(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      double s = 0.0;
      for (std::size_t a = 0; a < active.size(); ++a) {
        const double diff = (frame_points[i][active[a]] - frame_points[j][active[a]]) / lengths[a];
        s += diff * diff;
      }
      double v = (1.0 - delta) * sigma2 * std::exp(-s);
      if (design[i] == design[j]) v += delta * sigma2;
      k(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
      k(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
    }
  }
  return k;
}

double loo_from_matrix(const Eigen::MatrixXd& k, const Eigen::VectorXd& resid) {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double jitter = 0.0;
  if (!factorize(k, llt, jitter)) return std::numeric_limits<double>::infinity();
  const auto n = k.rows();
  const Eigen::MatrixXd kinv = llt.solve(Eigen::MatrixXd::Identity(n, n));
  const Eigen::VectorXd alpha = kinv * resid;
  double score = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double p = kinv(i, i);
    if (!(p > 0.0)) return std::numeric_limits<double>::infinity();
    const double var = 1.0 / p;
    const double err = alpha(i) / p;
    score += std::log(var) + err * err / var;
  }
  return score / static_cast<double>(n);
}

std::vector<std::vector<double>> to_frame(const std::vector<Point>& design, const InputFrame& frame) {
  std::vector<std::vector<double>> out(design.size());
  for (std::size_t i = 0; i < design.size(); ++i) {
    out[i].resize(design[i].size());
    for (std::size_t j = 0; j < design[i].size(); ++j) out[i][j] = frame.map(j, design[i][j]);
  }
  return out;
}

}  // namespace

BasisSpec BasisSpec::full(std::size_t n_active, int max_degree) {
  BasisSpec b;
  std::vector<int> current(n_active, 0);
  for (int total = 0; total <= std::max(max_degree, 0); ++total) {
    combinations_with_replacement(n_active, total, 0, current, b.terms);
    if (n_active == 0) break;
  }
  return b;
}

int BasisSpec::degree() const {
  int deg = 0;
  for (const auto& t : terms) deg = std::max(deg, std::accumulate(t.begin(), t.end(), 0));
  return deg;
}

std::string BasisSpec::term_name(std::size_t t, std::span<const std::size_t> active,
                                 const std::vector<std::string>& names) const {
  std::string out;
  for (std::size_t a = 0; a < terms[t].size(); ++a) {
    const int e = terms[t][a];
    if (e == 0) continue;
    if (!out.empty()) out += '*';
    out += names.at(active[a]);
    if (e > 1) out += "^" + std::to_string(e);
  }
  return out.empty() ? "1" : out;
}

InputFrame InputFrame::identity(std::size_t dims) {
  return InputFrame{std::vector<double>(dims, 0.0), std::vector<double>(dims, 1.0)};
}

InputFrame InputFrame::from_points(const std::vector<Point>& points, const ParameterSpace& space) {
  InputFrame f;
  const std::size_t d = space.size();
  f.center.resize(d);
  f.half_width.resize(d);
  for (std::size_t j = 0; j < d; ++j) {
    const double range = space[j].hi - space[j].lo;
    double lo = space[j].hi, hi = space[j].lo;
    for (const auto& p : points) {
      lo = std::min(lo, p[j]);
      hi = std::max(hi, p[j]);
    }
    if (points.empty() || hi - lo <= 1e-12 * range) {
      f.center[j] = points.empty() ? 0.5 * (space[j].lo + space[j].hi) : lo;
      f.half_width[j] = 0.5 * range;
    } else {
      f.center[j] = 0.5 * (lo + hi);
      f.half_width[j] = 0.5 * (hi - lo);
    }
  }
  return f;
}

void EmulatorPrior::check() const {
  const std::size_t d = frame.center.size();
  if (frame.half_width.size() != d) throw FitError("frame dimensions disagree");
  for (double h : frame.half_width) {
    if (!(h > 0.0)) throw FitError("frame half-width must be positive");
  }
  for (std::size_t a : active) {
    if (a >= d) throw FitError("active index out of range");
  }
  if (basis.terms.empty()) throw FitError("empty regression basis");
  for (std::size_t e : basis.terms.front()) {
    if (e != 0) throw FitError("first basis term must be the constant");
  }
  for (const auto& t : basis.terms) {
    if (t.size() != active.size()) throw FitError("basis term arity disagrees with active set");
    for (int e : t) {
      if (e < 0) throw FitError("negative basis exponent");
    }
  }
  if (beta_mean.size() != basis.size()) throw FitError("coefficient count disagrees with basis");
  if (!(sigma2 >= 0.0) || !std::isfinite(sigma2)) throw FitError("sigma2 must be finite and >= 0");
  if (!(delta >= 0.0 && delta <= 1.0)) throw FitError("nugget proportion must lie in [0,1]");
  if (corr.lengths.size() != active.size()) throw FitError("one correlation length per active variable");
  for (double l : corr.lengths) {
    if (!(l > 0.0)) throw FitError("correlation lengths must be positive");
  }
}

std::vector<double> EmulatorPrior::basis_values(std::span<const double> x) const {
  const auto fa = frame_active_coords(*this, x);
  std::vector<double> h(basis.size());
  for (std::size_t t = 0; t < basis.size(); ++t) h[t] = eval_term(basis.terms[t], fa);
  return h;
}

double EmulatorPrior::mean(std::span<const double> x) const {
  const auto h = basis_values(x);
  double m = 0.0;
  for (std::size_t t = 0; t < h.size(); ++t) m += beta_mean[t] * h[t];
  return m;
}

double EmulatorPrior::correlation(std::span<const double> x, std::span<const double> y) const {
  double s = 0.0;
  for (std::size_t a = 0; a < active.size(); ++a) {
    const std::size_t j = active[a];
    const double diff = (frame.map(j, x[j]) - frame.map(j, y[j])) / corr.lengths[a];
    s += diff * diff;
  }
  return std::exp(-s);
}

double prior_cov(const EmulatorPrior& prior, std::span<const double> x, std::span<const double> y) {
  if (x.size() != prior.dims() || y.size() != prior.dims()) throw DomainError("point has wrong dimension");
  double v = (1.0 - prior.delta) * prior.sigma2 * prior.correlation(x, y);
  if (std::equal(x.begin(), x.end(), y.begin(), y.end())) v += prior.delta * prior.sigma2;
  return v;
}

Eigen::MatrixXd prior_data_variance(const EmulatorPrior& prior, const std::vector<Point>& design) {
  const auto n = static_cast<Eigen::Index>(design.size());
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i; j < n; ++j) {
      const double v = prior_cov(prior, design[static_cast<std::size_t>(i)], design[static_cast<std::size_t>(j)]);
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return k;
}

std::vector<double> default_length_grid() {
  std::vector<double> grid;
  const double lo = std::log(0.15), hi = std::log(3.0);
  const int count = 10;
  for (int i = 0; i < count; ++i) grid.push_back(std::exp(lo + (hi - lo) * i / (count - 1)));
  return grid;
}

double loo_score(const EmulatorPrior& prior, const std::vector<Point>& design, std::span<const double> y,
                 std::span<const double> noise_var) {
  Eigen::MatrixXd k = prior_data_variance(prior, design);
  if (!noise_var.empty()) {
    for (Eigen::Index i = 0; i < k.rows(); ++i) k(i, i) += noise_var[static_cast<std::size_t>(i)];
  }
  Eigen::VectorXd resid(static_cast<Eigen::Index>(design.size()));
  for (std::size_t i = 0; i < design.size(); ++i) resid(static_cast<Eigen::Index>(i)) = y[i] - prior.mean(design[i]);
  return loo_from_matrix(k, resid);
}

EmulatorPrior fit_prior(const std::vector<Point>& design, std::span<const double> y,
                        std::span<const double> noise_var, const ParameterSpace& space,
                        const FitOptions& opts) {
  const std::size_t n = design.size();
  const std::size_t d = space.size();
  if (y.size() != n) throw FitError("data length disagrees with design size");
  if (!noise_var.empty() && noise_var.size() != n) throw FitError("noise variance length disagrees with design");
  if (n < 3) throw FitError("at least 3 training points are required, got " + std::to_string(n));
  if (!(opts.delta >= 0.0 && opts.delta <= 1.0)) throw FitError("nugget proportion must lie in [0,1]");
  for (const auto& p : design) {
    if (!space.contains(p)) throw DomainError("training point outside parameter space");
  }

  const auto names = space.names();
  EmulatorPrior prior;
  prior.frame = InputFrame::from_points(design, space);
  const auto frame_points = to_frame(design, prior.frame);
  const Eigen::Map<const Eigen::VectorXd> yv(y.data(), static_cast<Eigen::Index>(n));

  const double ybar = yv.mean();
  const double tss = (yv.array() - ybar).square().sum();
  const double exact_fit = 1e-24 * std::max(tss, std::numeric_limits<double>::min());

  std::vector<std::size_t> active;
  if (opts.active_override) {
    active = *opts.active_override;
    std::sort(active.begin(), active.end());
    active.erase(std::unique(active.begin(), active.end()), active.end());
    for (std::size_t a : active) {
      if (a >= d) throw FitError("active variable index " + std::to_string(a) + " out of range");
    }
  } else {
    double rss = tss;
    std::size_t p = 1;
    while (rss > exact_fit) {
      double best_f = -1.0;
      std::size_t best_var = d;
      double best_rss = rss;
      std::size_t best_p = p;
      for (std::size_t j = 0; j < d; ++j) {
        if (std::find(active.begin(), active.end(), j) != active.end()) continue;
        auto trial = active;
        trial.push_back(j);
        std::sort(trial.begin(), trial.end());
        const BasisSpec basis = BasisSpec::full(trial.size(), opts.max_degree);
        const std::size_t p_new = basis.size();
        if (p_new + 2 > n) continue;
        const auto ls = least_squares(regression_matrix(frame_points, trial, basis), yv);
        if (ls.rank < static_cast<Eigen::Index>(p_new)) continue;
        double f;
        if (ls.rss <= exact_fit) {
          f = std::numeric_limits<double>::infinity();
        } else {
          f = ((rss - ls.rss) / static_cast<double>(p_new - p)) / (ls.rss / static_cast<double>(n - p_new));
        }
        if (f > best_f) {
          best_f = f;
          best_var = j;
          best_rss = ls.rss;
          best_p = p_new;
        }
      }
      if (best_var == d || !(best_f > opts.f_threshold)) break;
      active.push_back(best_var);
      std::sort(active.begin(), active.end());
      rss = best_rss;
      p = best_p;
    }
  }

  prior.active = active;
  prior.basis = BasisSpec::full(active.size(), opts.max_degree);
  const std::size_t p = prior.basis.size();
  if (p + 2 > n) {
    throw FitError("basis of " + std::to_string(p) + " terms needs at least " + std::to_string(p + 2) +
                   " training points, got " + std::to_string(n));
  }
  const Eigen::MatrixXd h = regression_matrix(frame_points, active, prior.basis);
  const auto ls = least_squares(h, yv);
  if (ls.rank < static_cast<Eigen::Index>(p)) {
    std::string terms;
    for (std::size_t t : ls.dependent) {
      if (!terms.empty()) terms += ", ";
      terms += prior.basis.term_name(t, active, names);
    }
    throw FitError("rank-deficient regression basis; collinear terms: " + terms);
  }
  prior.beta_mean.assign(ls.beta.data(), ls.beta.data() + ls.beta.size());

  const double dof = static_cast<double>(n - p);
  double sigma2 = ls.rss / dof * opts.sigma2_inflation;
  const double var_y = tss / static_cast<double>(n - 1);
  const double floor = var_y > 0.0 ? 1e-10 * var_y : 1e-10 * std::max(1.0, ybar * ybar);
  prior.sigma2 = std::max(sigma2, floor);
  prior.delta = opts.delta;

  const std::size_t a = active.size();
  if (a == 0) {
    prior.corr.lengths.clear();
  } else if (opts.fixed_length) {
    prior.corr.lengths.assign(a, *opts.fixed_length);
  } else {
    const auto grid = opts.length_grid.empty() ? default_length_grid() : opts.length_grid;
    Eigen::VectorXd resid = yv - h * ls.beta;
    auto score_for = [&](const std::vector<double>& lengths) {
      Eigen::MatrixXd k = residual_cov_matrix(frame_points, active, lengths, design, prior.sigma2, prior.delta);
      if (!noise_var.empty()) {
        for (std::size_t i = 0; i < n; ++i) k(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) += noise_var[i];
      }
      return loo_from_matrix(k, resid);
    };
    std::vector<double> best(a, grid.front());
    double best_score = std::numeric_limits<double>::infinity();
    for (double theta : grid) {
      std::vector<double> trial(a, theta);
      const double s = score_for(trial);
      if (s < best_score) {
        best_score = s;
        best = trial;
      }
    }
    if (a > 1) {
      for (std::size_t dim = 0; dim < a; ++dim) {
        for (double theta : grid) {
          if (theta == best[dim]) continue;
          auto trial = best;
          trial[dim] = theta;
          const double s = score_for(trial);
          if (s < best_score) {
            best_score = s;
            best = trial;
          }
        }
      }
    }
    prior.corr.lengths = best;
  }
  prior.check();
  return prior;
}

TrainedEmulator adjust(EmulatorPrior prior, DesignBatch design, Eigen::VectorXd data, Eigen::MatrixXd data_var) {
  prior.check();
  const auto n = static_cast<Eigen::Index>(design.size());
  if (data.size() != n) throw AdjustmentError("data length disagrees with design size");
  if (data_var.rows() != n || data_var.cols() != n) throw AdjustmentError("data variance has wrong shape");
  for (const auto& p : design.points) {
    if (p.size() != prior.dims()) throw AdjustmentError("design point has wrong dimension");
  }

  TrainedEmulator em;
  if (n > 0) {
    const double scale = std::max(1.0, data_var.cwiseAbs().maxCoeff());
    if ((data_var - data_var.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
      throw AdjustmentError("data variance matrix is not symmetric");
    }
    if (n <= 1000) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(data_var, Eigen::EigenvaluesOnly);
      const double trace = data_var.trace();
      if (eig.eigenvalues().minCoeff() < -1e-10 * std::abs(trace)) {
        throw AdjustmentError("data variance matrix is not positive semi-definite");
      }
    }
    if (!factorize(data_var, em.llt_, em.jitter_)) {
      throw AdjustmentError("data variance matrix is singular after jitter escalation");
    }
    Eigen::VectorXd resid(n);
    for (Eigen::Index i = 0; i < n; ++i) resid(i) = data(i) - prior.mean(design.points[static_cast<std::size_t>(i)]);
    em.alpha_ = em.llt_.solve(resid);
  }

  em.design_cols_ = kernels::PointColumns(prior.active.size(), design.size());
  std::vector<double> fa(prior.active.size());
  for (const auto& p : design.points) {
    for (std::size_t a = 0; a < prior.active.size(); ++a) fa[a] = prior.frame.map(prior.active[a], p[prior.active[a]]);
    em.design_cols_.push_back(fa);
  }
  em.inv_len2_.resize(prior.active.size());
  for (std::size_t a = 0; a < prior.active.size(); ++a) {
    em.inv_len2_[a] = 1.0 / (prior.corr.lengths[a] * prior.corr.lengths[a]);
  }
  em.prior_ = std::move(prior);
  em.design_ = std::move(design);
  em.data_ = std::move(data);
  em.data_var_ = std::move(data_var);
  return em;
}

void TrainedEmulator::cov_row(std::span<const double> x, std::vector<double>& frame_x, std::vector<double>& sq,
                              double* out) const {
  const std::size_t n = design_.size();
  const auto& kern = kernels::active();
  frame_x.resize(prior_.active.size());
  for (std::size_t a = 0; a < prior_.active.size(); ++a) {
    frame_x[a] = prior_.frame.map(prior_.active[a], x[prior_.active[a]]);
  }
  sq.resize(n);
  kern.weighted_sqdist(frame_x.data(), design_cols_.data(), design_cols_.stride(), n, frame_x.size(),
                       inv_len2_.data(), sq.data());
  kern.scaled_exp_neg(sq.data(), (1.0 - prior_.delta) * prior_.sigma2, out, n);
  if (prior_.delta > 0.0) {
    for (std::size_t k = 0; k < n; ++k) {
      if (sq[k] == 0.0 && std::equal(x.begin(), x.end(), design_.points[k].begin(), design_.points[k].end())) {
        out[k] += prior_.delta * prior_.sigma2;
      }
    }
  }
}

Prediction TrainedEmulator::predict(const std::vector<Point>& xs) const {
  Prediction out;
  out.mean.resize(xs.size());
  out.variance.resize(xs.size());
  const double sigma2 = prior_.sigma2;
  for (const auto& x : xs) {
    if (x.size() != prior_.dims()) throw DomainError("prediction point has wrong dimension");
  }
  const auto n = static_cast<Eigen::Index>(design_.size());
  if (n == 0) {
    for (std::size_t i = 0; i < xs.size(); ++i) {
      out.mean[i] = prior_.mean(xs[i]);
      out.variance[i] = sigma2;
    }
    return out;
  }

  constexpr std::size_t chunk = 256;
  std::vector<double> frame_x, sq;
  Eigen::MatrixXd cov;
  for (std::size_t start = 0; start < xs.size(); start += chunk) {
    const std::size_t count = std::min(chunk, xs.size() - start);
    cov.resize(n, static_cast<Eigen::Index>(count));
    for (std::size_t b = 0; b < count; ++b) {
      cov_row(xs[start + b], frame_x, sq, cov.col(static_cast<Eigen::Index>(b)).data());
    }
    const Eigen::VectorXd adj_mean = cov.transpose() * alpha_;
    llt_.matrixL().solveInPlace(cov);
    for (std::size_t b = 0; b < count; ++b) {
      const std::size_t i = start + b;
      out.mean[i] = prior_.mean(xs[i]) + adj_mean(static_cast<Eigen::Index>(b));
      double var = sigma2 - cov.col(static_cast<Eigen::Index>(b)).squaredNorm();
      if (var < -1e-8 * sigma2) {
        throw InternalError("materially negative adjusted variance " + format_double(var));
      }
      out.variance[i] = std::max(var, 0.0);
    }
  }
  return out;
}

double TrainedEmulator::adjusted_cov(std::span<const double> x, std::span<const double> y) const {
  const double prior_xy = prior_cov(prior_, x, y);
  const auto n = static_cast<Eigen::Index>(design_.size());
  if (n == 0) return prior_xy;
  std::vector<double> frame_x, sq;
  Eigen::VectorXd cx(n), cy(n);
  cov_row(x, frame_x, sq, cx.data());
  cov_row(y, frame_x, sq, cy.data());
  return prior_xy - cx.dot(llt_.solve(cy));
}

}  // namespace wavecal
