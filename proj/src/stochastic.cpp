#include "wavecal/stochastic.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <map>

#include "wavecal/csv.hpp"
#include "wavecal/error.hpp"
#include "wavecal/rng.hpp"

namespace wavecal {
namespace {

std::size_t index_in(const std::vector<std::string>& names, const std::string& name) {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw DomainError("unknown output '" + name + "'");
  return static_cast<std::size_t>(it - names.begin());
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double cov_of(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() < 2) return 0.0;
  const double mx = mean_of(x), my = mean_of(y);
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - mx) * (y[i] - my);
  return s / static_cast<double>(x.size() - 1);
}

}  // namespace

std::size_t RunEnsemble::output_index(const std::string& name) const { return index_in(outputs, name); }

void RunEnsemble::check() const {
  if (values.size() != design.size()) throw DomainError("ensemble has values for the wrong number of points");
  for (const auto& point : values) {
    if (point.empty()) throw DomainError("ensemble point without repetitions");
    for (const auto& rep : point) {
      if (rep.size() != outputs.size()) throw DomainError("ensemble repetition has wrong output count");
    }
  }
}

std::string ensemble_to_csv(const RunEnsemble& ens) {
  CsvWriter w({"point_id", "rep", "output", "value"});
  for (std::size_t l = 0; l < ens.values.size(); ++l) {
    for (std::size_t r = 0; r < ens.values[l].size(); ++r) {
      for (std::size_t a = 0; a < ens.outputs.size(); ++a) {
        w.cell(l).cell(r).cell(std::string_view(ens.outputs[a])).cell(ens.values[l][r][a]).end_row();
      }
    }
  }
  return w.text();
}

RunEnsemble ensemble_from_csv(std::string_view text, DesignBatch design, std::vector<std::string> outputs) {
  const CsvTable t = parse_csv(text);
  const std::size_t c_point = t.column("point_id"), c_rep = t.column("rep"), c_out = t.column("output"),
                    c_val = t.column("value");
  RunEnsemble ens;
  ens.design = std::move(design);
  ens.outputs = std::move(outputs);
  const std::size_t m = ens.outputs.size();
  std::map<std::string, std::size_t> out_index;
  for (std::size_t a = 0; a < m; ++a) out_index[ens.outputs[a]] = a;

  std::vector<std::vector<std::vector<double>>> values(ens.design.size());
  std::vector<std::vector<std::vector<char>>> seen(ens.design.size());
  for (const auto& row : t.rows) {
    const long long l = parse_int(row[c_point]);
    const long long r = parse_int(row[c_rep]);
    if (l < 0 || static_cast<std::size_t>(l) >= values.size() || r < 0) {
      throw ParseError("run record with invalid point or rep index");
    }
    auto it = out_index.find(row[c_out]);
    if (it == out_index.end()) continue;  // outputs outside the schema are ignored
    auto& pv = values[static_cast<std::size_t>(l)];
    auto& ps = seen[static_cast<std::size_t>(l)];
    if (pv.size() <= static_cast<std::size_t>(r)) {
      pv.resize(static_cast<std::size_t>(r) + 1, std::vector<double>(m, 0.0));
      ps.resize(static_cast<std::size_t>(r) + 1, std::vector<char>(m, 0));
    }
    pv[static_cast<std::size_t>(r)][it->second] = parse_double(row[c_val]);
    ps[static_cast<std::size_t>(r)][it->second] = 1;
  }
  for (std::size_t l = 0; l < seen.size(); ++l) {
    if (seen[l].empty()) throw ParseError("no runs recorded for point " + std::to_string(l));
    for (const auto& rep : seen[l]) {
      if (std::find(rep.begin(), rep.end(), 0) != rep.end()) {
        throw ParseError("incomplete runs for point " + std::to_string(l));
      }
    }
  }
  ens.values = std::move(values);
  return ens;
}

std::size_t SampleStatistics::output_index(const std::string& name) const { return index_in(outputs, name); }

Eigen::VectorXd SampleStatistics::variances(std::size_t a) const {
  Eigen::VectorXd v(static_cast<Eigen::Index>(covs.size()));
  for (std::size_t l = 0; l < covs.size(); ++l) {
    v(static_cast<Eigen::Index>(l)) = covs[l](static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(a));
  }
  return v;
}

SampleStatistics summarize(const RunEnsemble& ens, bool with_covs) {
  ens.check();
  SampleStatistics s;
  s.design = ens.design;
  s.outputs = ens.outputs;
  const auto n_points = static_cast<Eigen::Index>(ens.design.size());
  const auto m = static_cast<Eigen::Index>(ens.outputs.size());
  s.means = Eigen::MatrixXd::Zero(n_points, m);
  s.reps.resize(ens.design.size());
  for (std::size_t l = 0; l < ens.design.size(); ++l) {
    const std::size_t n = ens.reps(l);
    s.reps[l] = n;
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(m);
    for (const auto& rep : ens.values[l]) {
      for (Eigen::Index a = 0; a < m; ++a) mu(a) += rep[static_cast<std::size_t>(a)];
    }
    mu /= static_cast<double>(n);
    s.means.row(static_cast<Eigen::Index>(l)) = mu.transpose();
    if (!with_covs) continue;
    if (n < 2) {
      throw InsufficientRepsError("point " + std::to_string(l) + " has a single repetition; covariances need two");
    }
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(m, m);
    for (const auto& rep : ens.values[l]) {
      for (Eigen::Index a = 0; a < m; ++a) {
        const double da = rep[static_cast<std::size_t>(a)] - mu(a);
        for (Eigen::Index b = a; b < m; ++b) c(a, b) += da * (rep[static_cast<std::size_t>(b)] - mu(b));
      }
    }
    c /= static_cast<double>(n - 1);
    c.triangularView<Eigen::StrictlyLower>() = c.transpose();
    s.covs.push_back(std::move(c));
  }
  return s;
}

double correction_variance(const FourthOrder& f, std::size_t n) {
  if (n < 2) throw InsufficientRepsError("finite-sample correction needs at least two repetitions");
  const double nd = static_cast<double>(n);
  return f.c_r / nd + (f.cov_m_aa_bb + f.c_aa * f.c_bb + f.c_ab_m + f.c_ab * f.c_ab) / (nd * (nd - 1.0));
}

FourthOrder estimate_fourth_order(const RunEnsemble& ens, const SampleStatistics& stats, std::size_t a,
                                  std::size_t b, std::size_t n_boot, std::uint64_t seed) {
  if (!stats.has_covs()) throw InsufficientRepsError("fourth-order estimates need sample covariances");
  const std::size_t n_points = stats.covs.size();
  const auto ia = static_cast<Eigen::Index>(a), ib = static_cast<Eigen::Index>(b);
  std::vector<double> q_ab(n_points), q_aa(n_points), q_bb(n_points);
  for (std::size_t l = 0; l < n_points; ++l) {
    q_ab[l] = stats.covs[l](ia, ib);
    q_aa[l] = stats.covs[l](ia, ia);
    q_bb[l] = stats.covs[l](ib, ib);
  }
  FourthOrder f;
  f.c_ab = mean_of(q_ab);
  f.c_aa = mean_of(q_aa);
  f.c_bb = mean_of(q_bb);
  f.c_ab_m = cov_of(q_ab, q_ab);
  f.cov_m_aa_bb = cov_of(q_aa, q_bb);

  Rng rng(derive_seed(seed, {tag(Stream::bootstrap), a, b}));
  double pooled = 0.0;
  std::vector<double> boot(n_boot);
  for (std::size_t l = 0; l < n_points; ++l) {
    const auto& reps = ens.values[l];
    const std::size_t n = reps.size();
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::vector<std::size_t> idx(n);
    for (std::size_t t = 0; t < n_boot; ++t) {
      for (auto& i : idx) i = pick(rng);
      double ma = 0.0, mb = 0.0;
      for (std::size_t i : idx) {
        ma += reps[i][a];
        mb += reps[i][b];
      }
      ma /= static_cast<double>(n);
      mb /= static_cast<double>(n);
      double s = 0.0;
      for (std::size_t i : idx) s += (reps[i][a] - ma) * (reps[i][b] - mb);
      boot[t] = s / static_cast<double>(n - 1);
    }
    pooled += static_cast<double>(n) * cov_of(boot, boot);
  }
  f.c_r = pooled / static_cast<double>(n_points);
  return f;
}

std::vector<std::pair<std::size_t, std::size_t>> select_pairs(const SampleStatistics& stats, double threshold) {
  const std::size_t m = stats.outputs.size();
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t a = 0; a < m; ++a) pairs.emplace_back(a, a);
  if (!stats.has_covs()) return pairs;
  Eigen::MatrixXd pooled = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
  for (const auto& c : stats.covs) pooled += c;
  pooled /= static_cast<double>(stats.covs.size());
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = a + 1; b < m; ++b) {
      const auto ia = static_cast<Eigen::Index>(a), ib = static_cast<Eigen::Index>(b);
      const double denom = std::sqrt(pooled(ia, ia) * pooled(ib, ib));
      if (denom > 0.0 && std::abs(pooled(ia, ib) / denom) > threshold) pairs.emplace_back(a, b);
    }
  }
  return pairs;
}

const CovariancePair* CovarianceEmulator::find(std::size_t a, std::size_t b) const {
  if (a > b) std::swap(a, b);
  for (const auto& p : pairs) {
    if (p.a == a && p.b == b) return &p;
  }
  return nullptr;
}

Eigen::MatrixXd CovarianceEmulator::predict(const Point& x, const std::vector<std::size_t>& outputs_sel,
                                            bool* repaired) const {
  const auto k = static_cast<Eigen::Index>(outputs_sel.size());
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(k, k);
  const std::vector<Point> xs{x};
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = i; j < k; ++j) {
      const CovariancePair* p = find(outputs_sel[static_cast<std::size_t>(i)], outputs_sel[static_cast<std::size_t>(j)]);
      if (!p) continue;
      double v = p->em.predict(xs).mean[0];
      if (i == j) v = std::max(v, 0.0);
      s(i, j) = v;
      s(j, i) = v;
    }
  }
  return psd_repair(s, repaired);
}

std::vector<double> CovarianceEmulator::predict_variance(std::size_t a, const std::vector<Point>& xs) const {
  const CovariancePair* p = find(a, a);
  if (!p) throw DomainError("no variance emulator for output '" + outputs.at(a) + "'");
  auto v = p->em.predict(xs).mean;
  for (auto& x : v) x = std::max(x, 0.0);
  return v;
}

CovarianceEmulator train_covariance_emulators(const RunEnsemble& ens, const SampleStatistics& stats,
                                              const ParameterSpace& space,
                                              const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
                                              const CovarianceOptions& opts) {
  if (!stats.has_covs()) throw InsufficientRepsError("covariance emulation needs sample covariances");
  CovarianceEmulator cem;
  cem.outputs = stats.outputs;
  const std::size_t n_points = stats.design.size();
  for (auto [a, b] : pairs) {
    if (a > b) std::swap(a, b);
    const std::string label = "(" + stats.outputs.at(a) + ", " + stats.outputs.at(b) + ")";
    try {
      CovariancePair cp;
      cp.a = a;
      cp.b = b;
      cp.fourth = estimate_fourth_order(ens, stats, a, b, opts.n_boot, opts.seed);
      std::vector<double> y(n_points), vt(n_points);
      for (std::size_t l = 0; l < n_points; ++l) {
        y[l] = stats.covs[l](static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
        vt[l] = correction_variance(cp.fourth, stats.reps[l]);
      }
      EmulatorPrior prior = fit_prior(stats.design.points, y, vt, space, opts.fit);
      Eigen::MatrixXd dv = prior_data_variance(prior, stats.design.points);
      for (std::size_t l = 0; l < n_points; ++l) dv(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(l)) += vt[l];
      Eigen::VectorXd d = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(n_points));
      cp.em = adjust(std::move(prior), stats.design, std::move(d), std::move(dv));
      cem.pairs.push_back(std::move(cp));
    } catch (const AdjustmentError& e) {
      throw AdjustmentError("covariance pair " + label + ": " + e.what());
    } catch (const FitError& e) {
      throw FitError("covariance pair " + label + ": " + e.what());
    }
  }
  return cem;
}

Eigen::MatrixXd psd_repair(const Eigen::MatrixXd& m, bool* repaired) {
  if (repaired) *repaired = false;
  if (m.size() == 0) return m;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
  const Eigen::VectorXd& lambda = eig.eigenvalues();
  const double tol = 1e-14 * lambda.cwiseAbs().maxCoeff();
  if (lambda.minCoeff() >= -tol) return m;
  Eigen::MatrixXd out = m;
  const Eigen::MatrixXd& v = eig.eigenvectors();
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    if (lambda(i) >= 0.0) continue;
    // Projector normalised by v'v so rounding in the eigenvector norm does
    // not leak into the result.
    const Eigen::VectorXd u = v.col(i);
    out.noalias() -= (lambda(i) / u.squaredNorm()) * u * u.transpose();
  }
  out = 0.5 * (out + out.transpose()).eval();
  if (repaired) *repaired = true;
  return out;
}

Eigen::MatrixXd inflate_mean_data_variance(const Eigen::MatrixXd& base, const std::vector<double>& v_star,
                                           const std::vector<std::size_t>& reps) {
  const auto n = base.rows();
  if (base.cols() != n || v_star.size() != static_cast<std::size_t>(n) || reps.size() != static_cast<std::size_t>(n)) {
    throw DomainError("inflation inputs disagree in size");
  }
  Eigen::MatrixXd out = base;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double v = v_star[static_cast<std::size_t>(i)];
    if (!(v >= 0.0)) throw InternalError("negative predicted stochastic variance " + format_double(v));
    if (reps[static_cast<std::size_t>(i)] == 0) throw DomainError("zero repetitions at a training point");
    out(i, i) += v / static_cast<double>(reps[static_cast<std::size_t>(i)]);
  }
  return out;
}

EmulatorPrior fit_prior(const SampleStatistics& stats, const ParameterSpace& space, std::size_t output,
                        const FitOptions& opts) {
  const std::size_t n = stats.design.size();
  std::vector<double> y(n), noise;
  for (std::size_t l = 0; l < n; ++l) y[l] = stats.means(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(output));
  if (stats.has_covs()) {
    noise.resize(n);
    for (std::size_t l = 0; l < n; ++l) {
      noise[l] = stats.covs[l](static_cast<Eigen::Index>(output), static_cast<Eigen::Index>(output)) /
                 static_cast<double>(stats.reps[l]);
    }
  }
  return fit_prior(stats.design.points, y, noise, space, opts);
}

}  // namespace wavecal
