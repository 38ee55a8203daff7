#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "wavecal/driver.hpp"
#include "wavecal/error.hpp"
#include "wavecal/simulator.hpp"

using namespace wavecal;

namespace {

ParameterSpace unit_box(std::size_t d) {
  std::vector<Dimension> dims;
  for (std::size_t j = 0; j < d; ++j) dims.push_back({"x" + std::to_string(j + 1), 0.0, 1.0});
  return ParameterSpace(dims);
}

std::unique_ptr<BuiltinSimulator> linear(double s0, double c = 0.0) {
  return make_builtin("linear-noise", {"y"}, 2, {{"A", {2, -1}}, {"b", {0.5}}, {"s0", {s0}}, {"c", {c, 0}}});
}

}  // namespace

TEST(Builtin, ZeroNoiseGivesExactMean) {
  auto sim = linear(0.0);
  const auto r = sim->run({{0.25, 0.5}}, {5}, 1, 1);
  ASSERT_TRUE(r[0].ok);
  for (const auto& rep : r[0].values) EXPECT_DOUBLE_EQ(rep[0], 2 * 0.25 - 0.5 + 0.5);
}

TEST(Builtin, DeterministicPerPointAndSeed) {
  auto sim = linear(1.0, 0.5);
  const std::vector<Point> xs{{0.1, 0.2}, {0.3, 0.4}};
  const auto a = sim->run(xs, {3, 3}, 7, 1);
  const auto b = sim->run({xs[1], xs[0]}, {3, 3}, 7, 2);
  EXPECT_EQ(a[0].values, b[1].values);
  EXPECT_EQ(a[1].values, b[0].values);
  const auto c = sim->run(xs, {3, 3}, 8, 1);
  EXPECT_NE(a[0].values, c[0].values);
}

TEST(Builtin, SampleMeanWithinFourStandardErrors) {
  auto sim = linear(0.7, 1.0);
  const Point x{0.4, 0.9};
  const std::size_t n = 10000;
  const auto r = sim->run({x}, {n}, 3, 1);
  double s = 0;
  for (const auto& rep : r[0].values) s += rep[0];
  const double mean = s / double(n);
  const double sd = std::sqrt(sim->true_cov(x)(0, 0));
  EXPECT_NEAR(sd, 0.7 * 1.4, 1e-12);
  EXPECT_NEAR(mean, sim->true_mean(x)(0), 4 * sd / std::sqrt(double(n)));
}

TEST(Builtin, MultiOutputCorrelation) {
  auto sim = make_builtin("multiout-corr", {"a", "b"}, 1,
                          {{"b", {0, 1}}, {"a", {1, 2}}, {"amp", {0.1, 0.2}}, {"freq", {1, 2}}, {"g", {1, 1}},
                           {"sd", {1, 3}}, {"rho", {0.6}}});
  const auto ev = evaluate(*sim, DesignBatch{{{0.3}}, Provenance::external}, 10000, 4);
  const auto st = summarize(ev.ensemble);
  const auto& c = st.covs[0];
  EXPECT_NEAR(c(0, 1) / std::sqrt(c(0, 0) * c(1, 1)), 0.6, 0.05);
}

// Moment error shrinks like 1/sqrt(points * reps).
TEST(Builtin, MomentsConvergeAtRootNRate) {
  auto sim = linear(1.0);
  const auto s = unit_box(2);
  const auto design = lhs_design(s, 50, 1);
  auto rms_err = [&](std::size_t reps) {
    double acc = 0;
    const int trials = 20;
    for (int t = 0; t < trials; ++t) {
      const auto ev = evaluate(*sim, design, reps, 100 + t);
      const auto st = summarize(ev.ensemble, false);
      double e = 0;
      for (std::size_t l = 0; l < design.size(); ++l) {
        const double d = st.means(l, 0) - sim->true_mean(design.points[l])(0);
        e += d * d;
      }
      acc += e / double(design.size());
    }
    return std::sqrt(acc / trials);
  };
  const double e4 = rms_err(4), e64 = rms_err(64);
  EXPECT_NEAR(e4, 1.0 / 2.0, 0.1);
  EXPECT_NEAR(e64, 1.0 / 8.0, 0.025);
}

TEST(Builtin, BananaTruth) {
  Banana b(2.0, 0.0);
  EXPECT_DOUBLE_EQ(b.true_mean({0.5, 0.3})(0), 0.3);
  EXPECT_DOUBLE_EQ(b.true_mean({1.0, 0.3})(0), 0.3 - 2.0 * 0.25);
}

TEST(Builtin, UnknownFamilyAndKeys) {
  EXPECT_THROW(make_builtin("nope", {"y"}, 1, {}), DomainError);
  EXPECT_THROW(make_builtin("banana", {"f"}, 2, {{"zzz", {1}}}), DomainError);
  EXPECT_THROW(make_builtin("linear-noise", {"y"}, 2, {{"A", {1}}, {"b", {0}}, {"s0", {0}}, {"c", {0, 0}}}),
               DomainError);
}

TEST(Evaluate, FailuresAreRecorded) {
  FunctionSimulator sim({"y"}, [](const Point& x, std::size_t, std::uint64_t) -> std::vector<double> {
    if (x[0] > 0.5) throw std::runtime_error("boom");
    return {x[0]};
  });
  DesignBatch b;
  b.points = {{0.1}, {0.9}, {0.2}};
  const auto ev = evaluate(sim, b, 2, 1);
  EXPECT_EQ(ev.ok_index, (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(ev.failed, (std::vector<std::size_t>{1}));
  EXPECT_NEAR(ev.failure_rate(), 1.0 / 3.0, 1e-15);
}

TEST(Baseline, QuadraticConvergesToArgmin) {
  FunctionSimulator sim({"y"}, [](const Point& x, std::size_t, std::uint64_t) {
    return std::vector<double>{(x[0] - 0.3) * (x[0] - 0.3) + (x[1] - 0.7) * (x[1] - 0.7)};
  });
  const auto s = unit_box(2);
  BaselineOptions o;
  o.budget = 1000;
  o.reps = 1;
  const auto r = baseline_optimize(sim, s, {Target::mean_sd("y", 0.0, 0.01, 0.0)}, o, 5);
  EXPECT_LE(r.evaluations, 1000u);
  EXPECT_NEAR(r.best[0], 0.3, 1e-2);
  EXPECT_NEAR(r.best[1], 0.7, 1e-2);
  EXPECT_FALSE(r.final_points.empty());
  EXPECT_LE(r.final_points.size(), o.restarts * o.keep_last);
}

TEST(Baseline, NoisyLossDoesNotFreezeRestarts) {
  // Noise sd 0.01 on a bowl: a lucky draw early on must not freeze a restart.
  FunctionSimulator sim({"y"}, [](const Point& x, std::size_t, std::uint64_t seed) {
    std::mt19937_64 g(seed);
    std::normal_distribution<double> n(0.0, 0.01);
    return std::vector<double>{(x[0] - 0.3) * (x[0] - 0.3) + (x[1] - 0.7) * (x[1] - 0.7) + n(g)};
  });
  const auto s = unit_box(2);
  BaselineOptions o;
  o.budget = 2000;
  o.reps = 2;
  for (std::uint64_t seed : {11, 12, 13, 14}) {
    const auto r = baseline_optimize(sim, s, {Target::mean_sd("y", 0.0, 0.01, 0.0)}, o, seed);
    ASSERT_EQ(r.final_points.size(), o.restarts * o.keep_last);
    // A frozen restart accepts fewer than keep_last points; a live one ends inside the noise floor.
    for (std::size_t b = 0; b < o.restarts; ++b) {
      const Point& end = r.final_points[(b + 1) * o.keep_last - 1];
      EXPECT_LT(std::hypot(end[0] - 0.3, end[1] - 0.7), 0.2) << "seed " << seed << " restart " << b;
    }
  }
}

TEST(Baseline, BudgetOfOne) {
  auto sim = linear(0.0);
  const auto s = unit_box(2);
  BaselineOptions o;
  o.budget = 1;
  o.reps = 1;
  const auto r = baseline_optimize(*sim, s, {Target::mean_sd("y", 1.0, 0.1, 0.0)}, o, 1);
  EXPECT_EQ(r.evaluations, 1u);
  ASSERT_EQ(r.final_points.size(), 1u);
  EXPECT_EQ(r.final_points[0], r.best);
  EXPECT_EQ(r.loss_trace.size(), 1u);
}

TEST(Yield, TrivialCases) {
  SampleStatistics st;
  st.outputs = {"a", "b"};
  st.means.resize(3, 2);
  st.means << 1, 5, 1, 5, 1, 5;
  const std::vector<Target> on{Target::interval("a", 0, 2, 0.1), Target::interval("b", 4, 6, 0.1)};
  EXPECT_EQ(compute_yield(st, on), 1.0);
  const std::vector<Target> off{Target::interval("a", 100, 102, 0.1), Target::interval("b", 4, 6, 0.1)};
  EXPECT_EQ(compute_yield(st, off), 0.0);
}

TEST(Stability, KsDistance) {
  EXPECT_EQ(ks_distance({1, 2, 3}, {1, 2, 3}), 0.0);
  EXPECT_EQ(ks_distance({1, 2, 3}, {4, 5, 6}), 1.0);
  EXPECT_NEAR(ks_distance({1, 2, 3, 4}, {3, 4, 5, 6}), 0.5, 1e-15);
}
