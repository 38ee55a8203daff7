#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <random>

#include "wavecal/error.hpp"
#include "wavecal/simulator.hpp"
#include "wavecal/stochastic.hpp"

using namespace wavecal;

namespace {

ParameterSpace unit_box(std::size_t d) {
  std::vector<Dimension> dims;
  for (std::size_t j = 0; j < d; ++j) dims.push_back({"x" + std::to_string(j + 1), 0.0, 1.0});
  return ParameterSpace(dims);
}

double spearman(std::vector<double> a, std::vector<double> b) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
    std::vector<double> r(v.size());
    for (std::size_t k = 0; k < idx.size(); ++k) r[idx[k]] = static_cast<double>(k);
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (ra[i] - rb[i]) * (ra[i] - rb[i]);
  return 1.0 - 6.0 * s / (n * (n * n - 1.0));
}

}  // namespace

TEST(Summarize, IdenticalRepsGiveZeroCovariance) {
  RunEnsemble e;
  e.design.points = {{0.5}};
  e.outputs = {"a", "b"};
  e.values = {{{1.0, 2.0}, {1.0, 2.0}, {1.0, 2.0}}};
  const auto s = summarize(e);
  EXPECT_TRUE(s.covs[0].isZero(0.0));
  EXPECT_EQ(s.means(0, 1), 2.0);
}

TEST(Summarize, TwoRepsPlusMinus) {
  RunEnsemble e;
  e.design.points = {{0.5}};
  e.outputs = {"a"};
  e.values = {{{1.5}, {-1.5}}};
  EXPECT_DOUBLE_EQ(summarize(e).covs[0](0, 0), 2.0 * 1.5 * 1.5);
}

// Two-pass oracle over random small tensors.
TEST(Summarize, MatchesTwoPassOracle) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  for (int c = 0; c < 20; ++c) {
    const std::size_t pts = 1 + rng() % 4, reps = 2 + rng() % 5, m = 1 + rng() % 3;
    RunEnsemble e;
    e.outputs.resize(m);
    for (std::size_t a = 0; a < m; ++a) e.outputs[a] = "o" + std::to_string(a);
    for (std::size_t l = 0; l < pts; ++l) {
      e.design.points.push_back({double(l)});
      std::vector<std::vector<double>> r(reps, std::vector<double>(m));
      for (auto& row : r) {
        for (auto& v : row) v = g(rng) * 3 + 1;
      }
      e.values.push_back(r);
    }
    const auto s = summarize(e);
    for (std::size_t l = 0; l < pts; ++l) {
      for (std::size_t a = 0; a < m; ++a) {
        double ma = 0;
        for (std::size_t r = 0; r < reps; ++r) ma += e.values[l][r][a];
        ma /= double(reps);
        EXPECT_NEAR(s.means(l, a), ma, 1e-12);
        for (std::size_t b = 0; b < m; ++b) {
          double mb = 0;
          for (std::size_t r = 0; r < reps; ++r) mb += e.values[l][r][b];
          mb /= double(reps);
          double acc = 0;
          for (std::size_t r = 0; r < reps; ++r) acc += (e.values[l][r][a] - ma) * (e.values[l][r][b] - mb);
          EXPECT_NEAR(s.covs[l](a, b), acc / double(reps - 1), 1e-12);
        }
      }
    }
  }
}

TEST(Summarize, SingleRepCovariancesRejected) {
  RunEnsemble e;
  e.design.points = {{0.5}};
  e.outputs = {"a"};
  e.values = {{{1.0}}};
  EXPECT_THROW(summarize(e, true), InsufficientRepsError);
  EXPECT_NO_THROW(summarize(e, false));
}

TEST(CorrectionVariance, HandEvaluation) {
  FourthOrder f;
  f.c_r = 1.0;
  f.cov_m_aa_bb = 0.0;
  f.c_aa = 1.0;
  f.c_bb = 1.0;
  f.c_ab_m = 1.0;
  f.c_ab = 1.0;
  EXPECT_EQ(correction_variance(f, 2), 2.0);
  EXPECT_EQ(correction_variance(FourthOrder{}, 7), 0.0);
}

TEST(CorrectionVariance, DecreasesAndScales) {
  FourthOrder f{0.3, 0.2, 0.1, 1.2, 0.8, 2.5};
  double prev = INFINITY;
  for (std::size_t n = 2; n < 200; ++n) {
    const double v = correction_variance(f, n);
    EXPECT_LT(v, prev);
    prev = v;
  }
  EXPECT_NEAR(correction_variance(f, 1000000) * 1000000, f.c_r, 1e-5);
}

TEST(PsdRepair, HandComputedCase) {
  Eigen::MatrixXd m(2, 2);
  m << 1, 2, 2, 1;
  bool repaired = false;
  const auto r = psd_repair(m, &repaired);
  EXPECT_TRUE(repaired);
  EXPECT_EQ(r(0, 0), 1.5);
  EXPECT_EQ(r(0, 1), 1.5);
  EXPECT_EQ(r(1, 0), 1.5);
  EXPECT_EQ(r(1, 1), 1.5);
}

TEST(PsdRepair, IdempotentAndLeavesPsdAlone) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  for (int c = 0; c < 50; ++c) {
    const int n = 1 + static_cast<int>(rng() % 6);
    Eigen::MatrixXd a(n, n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) a(i, j) = g(rng);
    }
    const Eigen::MatrixXd sym = 0.5 * (a + a.transpose());
    const auto once = psd_repair(sym);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(once);
    EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-12);
    bool again = true;
    const auto twice = psd_repair(once, &again);
    EXPECT_LE((twice - once).cwiseAbs().maxCoeff(), 1e-10);
    const Eigen::MatrixXd psd = a * a.transpose();
    EXPECT_LE((psd_repair(psd) - psd).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Inflate, Arithmetic) {
  const Eigen::MatrixXd base = Eigen::MatrixXd::Identity(2, 2);
  EXPECT_EQ(inflate_mean_data_variance(base, {0.0, 0.0}, {16, 16}), base);
  const auto r = inflate_mean_data_variance(base, {4.0, 0.0}, {16, 16});
  EXPECT_EQ(r(0, 0), 1.25);
  EXPECT_EQ(r(1, 1), 1.0);
  const auto r2 = inflate_mean_data_variance(base, {4.0, 0.0}, {32, 16});
  EXPECT_EQ(r2(0, 0) - 1.0, 0.5 * (r(0, 0) - 1.0));
  EXPECT_THROW(inflate_mean_data_variance(base, {-1.0, 0.0}, {16, 16}), InternalError);
}

TEST(SelectPairs, DiagonalsAlwaysAndCorrelatedOffDiagonals) {
  auto sim = make_builtin("multiout-corr", {"a", "b", "c"}, 1,
                          {{"b", {0, 0, 0}}, {"a", {1, 1, 1}}, {"amp", {0, 0, 0}}, {"freq", {1, 1, 1}},
                           {"g", {1, 1, 1}}, {"sd", {1, 1, 1}}, {"rho", {0.8}}});
  const auto s = unit_box(1);
  const auto ev = evaluate(*sim, lhs_design(s, 20, 1), 32, 3);
  const auto pairs = select_pairs(summarize(ev.ensemble), 0.3);
  EXPECT_EQ(pairs.size(), 6u);
  auto indep = make_builtin("multiout-corr", {"a", "b"}, 1,
                            {{"b", {0, 0}}, {"a", {1, 1}}, {"amp", {0, 0}}, {"freq", {1, 1}}, {"g", {1, 1}},
                             {"sd", {1, 1}}, {"rho", {0.0}}});
  const auto ev2 = evaluate(*indep, lhs_design(s, 20, 1), 32, 3);
  EXPECT_EQ(select_pairs(summarize(ev2.ensemble), 0.3).size(), 2u);
}

TEST(CovarianceEmulator, HomoskedasticVarianceRecovered) {
  const auto s = unit_box(2);
  auto sim = make_builtin("linear-noise", {"y"}, 2, {{"A", {1, -1}}, {"b", {0}}, {"s0", {0.5}}, {"c", {0, 0}}});
  const auto ev = evaluate(*sim, lhs_design(s, 40, 2), 32, 11);
  const auto stats = summarize(ev.ensemble);
  CovarianceOptions co;
  co.seed = 9;
  const auto cem = train_covariance_emulators(ev.ensemble, stats, s, {{0, 0}}, co);
  const auto probe = lhs_design(s, 50, 77);
  for (double v : cem.predict_variance(0, probe.points)) EXPECT_NEAR(v, 0.25, 0.2 * 0.25);
}

TEST(CovarianceEmulator, DeterministicSimulatorGivesZeroVariance) {
  const auto s = unit_box(1);
  auto sim = make_builtin("linear-noise", {"y"}, 1, {{"A", {2}}, {"b", {1}}, {"s0", {0}}, {"c", {0}}});
  const auto ev = evaluate(*sim, lhs_design(s, 10, 2), 4, 1);
  const auto stats = summarize(ev.ensemble);
  const auto cem = train_covariance_emulators(ev.ensemble, stats, s, {{0, 0}}, CovarianceOptions{});
  for (double v : cem.predict_variance(0, {{0.1}, {0.55}, {0.9}})) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(CovarianceEmulator, TracksHeteroskedasticVariance) {
  const auto s = unit_box(2);
  // sd = |1 + x1| so the true variance is (1 + x1)^2.
  auto sim = make_builtin("linear-noise", {"y"}, 2, {{"A", {0, 0}}, {"b", {0}}, {"s0", {1}}, {"c", {1, 0}}});
  const auto ev = evaluate(*sim, lhs_design(s, 50, 4), 32, 5);
  const auto stats = summarize(ev.ensemble);
  const auto cem = train_covariance_emulators(ev.ensemble, stats, s, {{0, 0}}, CovarianceOptions{});
  const auto probe = lhs_design(s, 60, 6);
  const auto pred = cem.predict_variance(0, probe.points);
  std::vector<double> truth;
  for (const auto& x : probe.points) truth.push_back((1 + x[0]) * (1 + x[0]));
  EXPECT_GE(spearman(pred, truth), 0.8);
}

TEST(CovarianceEmulator, DiagonalOnlyPredictionIsDiagonal) {
  const auto s = unit_box(1);
  auto sim = make_builtin("multiout-corr", {"a", "b"}, 1,
                          {{"b", {0, 0}}, {"a", {1, 1}}, {"amp", {0, 0}}, {"freq", {1, 1}}, {"g", {1, 1}},
                           {"sd", {1, 2}}, {"rho", {0.0}}});
  const auto ev = evaluate(*sim, lhs_design(s, 15, 2), 16, 1);
  const auto stats = summarize(ev.ensemble);
  const auto cem = train_covariance_emulators(ev.ensemble, stats, s, {{0, 0}, {1, 1}}, CovarianceOptions{});
  const auto m = cem.predict({0.4}, {0, 1});
  EXPECT_EQ(m(0, 1), 0.0);
  EXPECT_EQ(m(1, 0), 0.0);
  EXPECT_GE(m(0, 0), 0.0);
  EXPECT_GE(m(1, 1), 0.0);
}

TEST(EnsembleCsv, RoundTrip) {
  const auto s = unit_box(2);
  auto sim = make_builtin("linear-noise", {"y", "z"}, 2,
                          {{"A", {1, 2, 3, 4}}, {"b", {0, 1}}, {"s0", {0.1, 0.2}}, {"c", {0, 0, 0, 0}}});
  const auto ev = evaluate(*sim, lhs_design(s, 5, 2), 3, 1);
  const auto back = ensemble_from_csv(ensemble_to_csv(ev.ensemble), ev.ensemble.design, ev.ensemble.outputs);
  EXPECT_EQ(back.values, ev.ensemble.values);
}
