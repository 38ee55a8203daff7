#include "wavecal/implausibility.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>

#include "wavecal/csv.hpp"
#include "wavecal/error.hpp"

namespace wavecal {

Target Target::interval(std::string output, double lo, double hi, double disc_sd, double sigma_k) {
  Target t;
  t.output = std::move(output);
  t.form = TargetForm::interval;
  t.lo = lo;
  t.hi = hi;
  t.sigma_k = sigma_k;
  t.disc_sd = disc_sd;
  return t;
}

Target Target::mean_sd(std::string output, double mean, double sd, double disc_sd) {
  Target t;
  t.output = std::move(output);
  t.form = TargetForm::mean_sd;
  t.mean = mean;
  t.sd = sd;
  t.disc_sd = disc_sd;
  return t;
}

double Target::z() const { return form == TargetForm::interval ? 0.5 * (lo + hi) : mean; }

double Target::obs_sd() const { return form == TargetForm::interval ? 0.5 * (hi - lo) / sigma_k : sd; }

double implausibility_uni(double pred_mean, double pred_var, double stoch_var, const Target& target) {
  if (pred_var < 0.0 || stoch_var < 0.0) throw ImplausibilityError("negative variance for output '" + target.output + "'");
  const double total = pred_var + target.obs_var() + target.disc_var() + stoch_var;
  if (!(total > 0.0)) throw ImplausibilityError("zero total variance for output '" + target.output + "'");
  return std::abs(pred_mean - target.z()) / std::sqrt(total);
}

double combine_nth_max(std::span<const double> values, std::size_t n) {
  if (n == 0 || n > values.size()) {
    throw ImplausibilityError("nth maximum with n = " + std::to_string(n) + " over " +
                              std::to_string(values.size()) + " values");
  }
  std::vector<double> v(values.begin(), values.end());
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n - 1), v.end(), std::greater<>());
  return v[n - 1];
}

double implausibility_multi(const Eigen::VectorXd& pred_means, const Eigen::MatrixXd& pred_cov,
                            const Eigen::MatrixXd& stoch_cov, const std::vector<Target>& targets) {
  const auto m = static_cast<Eigen::Index>(targets.size());
  if (pred_means.size() != m || pred_cov.rows() != m || pred_cov.cols() != m || stoch_cov.rows() != m ||
      stoch_cov.cols() != m) {
    throw ImplausibilityError("multivariate implausibility inputs disagree in size");
  }
  Eigen::MatrixXd s = pred_cov + stoch_cov;
  Eigen::VectorXd r(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& t = targets[static_cast<std::size_t>(i)];
    s(i, i) += t.obs_var() + t.disc_var();
    r(i) = pred_means(i) - t.z();
  }
  const double trace = s.trace();
  for (double level : {0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6}) {
    Eigen::MatrixXd sj = s;
    sj.diagonal().array() += level * trace;
    Eigen::LLT<Eigen::MatrixXd> llt(sj);
    if (llt.info() != Eigen::Success || !(llt.matrixLLT().diagonal().array() > 0.0).all()) continue;
    const Eigen::VectorXd w = llt.matrixL().solve(r);
    return std::sqrt(w.squaredNorm());
  }
  std::string pairs;
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = i + 1; j < m; ++j) {
      const double c = s(i, j) / std::sqrt(s(i, i) * s(j, j));
      if (!(std::abs(c) < 0.999)) {
        if (!pairs.empty()) pairs += ", ";
        pairs += "(" + targets[static_cast<std::size_t>(i)].output + ", " + targets[static_cast<std::size_t>(j)].output + ")";
      }
    }
  }
  throw ImplausibilityError("singular implausibility covariance; near-degenerate output pairs: " +
                            (pairs.empty() ? std::string("none identified") : pairs));
}

double default_multivariate_cutoff(std::size_t m, double q) {
  if (m == 0) throw ImplausibilityError("multivariate cutoff needs at least one output");
  boost::math::chi_squared dist(static_cast<double>(m));
  return std::sqrt(boost::math::quantile(dist, q));
}

void WaveEmulators::check() const {
  if (emulators.size() != outputs.size() || targets.size() != outputs.size() ||
      fixed_stoch_var.size() != outputs.size()) {
    throw DomainError("wave emulator tables disagree in size");
  }
  for (std::size_t a = 0; a < outputs.size(); ++a) {
    if (targets[a].output != outputs[a]) throw DomainError("target order disagrees with outputs");
  }
}

Eigen::MatrixXd WaveEmulators::stoch_variances(const std::vector<Point>& xs) const {
  const auto m = static_cast<Eigen::Index>(outputs.size());
  Eigen::MatrixXd v(m, static_cast<Eigen::Index>(xs.size()));
  for (Eigen::Index a = 0; a < m; ++a) {
    const std::string& name = outputs[static_cast<std::size_t>(a)];
    std::optional<std::size_t> ci;
    if (cem) {
      auto it = std::find(cem->outputs.begin(), cem->outputs.end(), name);
      if (it != cem->outputs.end() && cem->has_variance(static_cast<std::size_t>(it - cem->outputs.begin()))) {
        ci = static_cast<std::size_t>(it - cem->outputs.begin());
      }
    }
    if (ci) {
      const auto pv = cem->predict_variance(*ci, xs);
      for (std::size_t k = 0; k < xs.size(); ++k) v(a, static_cast<Eigen::Index>(k)) = pv[k];
    } else {
      v.row(a).setConstant(fixed_stoch_var[static_cast<std::size_t>(a)]);
    }
  }
  return v;
}

std::vector<ImplausibilityResult> WaveEmulators::evaluate(const std::vector<Point>& xs) const {
  check();
  const std::size_t m = outputs.size();
  std::vector<ImplausibilityResult> out(xs.size());
  if (m == 0 || xs.empty()) return out;

  std::vector<Prediction> preds;
  preds.reserve(m);
  for (const auto& em : emulators) preds.push_back(em.predict(xs));
  const Eigen::MatrixXd stoch = stoch_variances(xs);

  std::vector<std::size_t> cem_index;
  bool multi_offdiag = false;
  if (spec.kind == ImplausibilitySpec::Kind::multivariate && cem) {
    for (const auto& name : outputs) {
      auto it = std::find(cem->outputs.begin(), cem->outputs.end(), name);
      cem_index.push_back(it == cem->outputs.end() ? cem->outputs.size() : static_cast<std::size_t>(it - cem->outputs.begin()));
    }
    for (const auto& p : cem->pairs) multi_offdiag = multi_offdiag || p.a != p.b;
  }

  for (std::size_t k = 0; k < xs.size(); ++k) {
    auto& res = out[k];
    res.per_output.resize(m);
    for (std::size_t a = 0; a < m; ++a) {
      res.per_output[a] = implausibility_uni(preds[a].mean[k], preds[a].variance[k],
                                             stoch(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(k)), targets[a]);
    }
    if (spec.kind == ImplausibilitySpec::Kind::nth_max) {
      res.combined = combine_nth_max(res.per_output, std::min(spec.n, m));
    } else {
      const auto mm = static_cast<Eigen::Index>(m);
      Eigen::VectorXd mean(mm);
      Eigen::MatrixXd pc = Eigen::MatrixXd::Zero(mm, mm);
      Eigen::MatrixXd sc = Eigen::MatrixXd::Zero(mm, mm);
      for (Eigen::Index a = 0; a < mm; ++a) {
        mean(a) = preds[static_cast<std::size_t>(a)].mean[k];
        pc(a, a) = preds[static_cast<std::size_t>(a)].variance[k];
        sc(a, a) = stoch(a, static_cast<Eigen::Index>(k));
      }
      if (multi_offdiag) {
        // Off-diagonal stochastic covariances from the emulated pairs, with
        // the diagonal taken from the per-output variances; repaired to PSD.
        for (Eigen::Index a = 0; a < mm; ++a) {
          for (Eigen::Index b = a + 1; b < mm; ++b) {
            const CovariancePair* p = nullptr;
            const std::size_t ia = cem_index[static_cast<std::size_t>(a)], ib = cem_index[static_cast<std::size_t>(b)];
            if (ia < cem->outputs.size() && ib < cem->outputs.size()) p = cem->find(ia, ib);
            if (!p) continue;
            const double c = p->em.predict({xs[k]}).mean[0];
            sc(a, b) = c;
            sc(b, a) = c;
          }
        }
        sc = psd_repair(sc);
      }
      res.combined = implausibility_multi(mean, pc, sc, targets);
    }
    res.pass = res.combined <= spec.cutoff;
  }
  return out;
}

std::vector<char> classify(const WaveEmulators& wave, const std::vector<Point>& xs) {
  const auto res = wave.evaluate(xs);
  std::vector<char> pass(res.size());
  for (std::size_t i = 0; i < res.size(); ++i) pass[i] = res[i].pass ? 1 : 0;
  return pass;
}

std::string classification_csv(const WaveEmulators& wave, const std::vector<Point>& xs,
                               const std::vector<ImplausibilityResult>& results,
                               const std::vector<std::string>& param_names) {
  std::vector<std::string> header = param_names;
  for (const auto& o : wave.outputs) header.push_back("I_" + o);
  header.push_back("I_combined");
  header.push_back("pass");
  CsvWriter w(header);
  for (std::size_t k = 0; k < xs.size(); ++k) {
    for (double v : xs[k]) w.cell(v);
    for (double v : results[k].per_output) w.cell(v);
    w.cell(results[k].combined).cell(results[k].pass ? 1 : 0).end_row();
  }
  return w.text();
}

}  // namespace wavecal
