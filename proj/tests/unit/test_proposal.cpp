#include <gtest/gtest.h>

#include <cmath>

#include "wavecal/driver.hpp"
#include "wavecal/error.hpp"
#include "wavecal/proposal.hpp"

using namespace wavecal;

namespace {

ParameterSpace unit_box(std::size_t d) {
  std::vector<Dimension> dims;
  for (std::size_t j = 0; j < d; ++j) dims.push_back({"x" + std::to_string(j + 1), 0.0, 1.0});
  return ParameterSpace(dims);
}

OracleStage stage(std::function<double(const Point&)> f, double cutoff) {
  OracleStage s;
  s.cutoff = cutoff;
  s.measure = [f](const std::vector<Point>& xs) {
    std::vector<double> v;
    for (const auto& x : xs) v.push_back(f(x));
    return v;
  };
  return s;
}

RegionOracle oracle_of(std::vector<OracleStage> stages) {
  RegionOracle o;
  o.stages = std::move(stages);
  return o;
}

ProposalConfig small_config(std::size_t n_target) {
  ProposalConfig c;
  c.n_target = n_target;
  c.n_candidates = 2000;
  return c;
}

}  // namespace

TEST(Proposal, AllPassGivesSpaceFillingSample) {
  const auto s = unit_box(2);
  const auto o = oracle_of({stage([](const Point&) { return 0.0; }, 3.0)});
  const auto r = propose(o, s, small_config(30), 1);
  ASSERT_EQ(r.batch.size(), 30u);
  EXPECT_GT(min_pairwise_distance(r.batch.points, s), 0.08);
}

TEST(Proposal, HalfSpace) {
  const auto s = unit_box(2);
  const auto o = oracle_of({stage([](const Point& x) { return x[0]; }, 0.5)});
  const auto r = propose(o, s, small_config(40), 2);
  ASSERT_EQ(r.batch.size(), 40u);
  for (const auto& x : r.batch.points) EXPECT_LE(x[0], 0.5);
  EXPECT_GT(min_pairwise_distance(r.batch.points, s), 0.05);
}

TEST(Proposal, EveryPointPassesCascadeAndIsDeterministic) {
  const auto s = unit_box(3);
  const auto o = oracle_of({stage([](const Point& x) { return x[0] + x[1]; }, 1.0),
                            stage([](const Point& x) { return std::abs(x[2] - 0.5) * 10; }, 3.0)});
  const auto a = propose(o, s, small_config(25), 3);
  const auto b = propose(o, s, small_config(25), 3);
  EXPECT_EQ(a.batch.points, b.batch.points);
  const auto pass = o.pass(a.batch.points);
  for (char p : pass) EXPECT_TRUE(p);
  EXPECT_EQ(a.sources.size(), a.batch.size());
}

TEST(Proposal, EmptyRegionThrows) {
  const auto s = unit_box(2);
  const auto o = oracle_of({stage([](const Point&) { return 10.0; }, 3.0)});
  EXPECT_THROW(propose(o, s, small_config(10), 1), EmptyRegion);
}

TEST(Proposal, TinyRegionStillFound) {
  const auto s = unit_box(2);
  // A disc of radius 0.03: few or no LHS candidates land inside.
  const auto o = oracle_of(
      {stage([](const Point& x) { return std::hypot(x[0] - 0.3, x[1] - 0.7) / 0.01; }, 3.0)});
  const auto r = propose(o, s, small_config(20), 4);
  EXPECT_GE(r.batch.size(), 1u);
  for (char p : o.pass(r.batch.points)) EXPECT_TRUE(p);
}

TEST(Oracle, AnnealingSoundness) {
  const auto s = unit_box(2);
  const auto o = oracle_of({stage([](const Point& x) { return 4 * x[0] + x[1]; }, 3.0)});
  const auto probe = lhs_design(s, 500, 1).points;
  for (double c : {0.5, 1.0, 2.0}) {
    const auto tight = o.pass(probe, c), loose = o.pass(probe, c * 1.5);
    for (std::size_t i = 0; i < probe.size(); ++i) {
      if (tight[i]) EXPECT_TRUE(loose[i]);
    }
  }
}

TEST(Rays, IntervalBoundaries) {
  ParameterSpace s({{"x", 0.0, 1.0}});
  const auto o = oracle_of({stage([](const Point& x) { return std::abs(x[0] - 0.5); }, 0.3)});
  const auto pts = ray_boundary_points({{0.4}, {0.6}}, o, 0.3, s, 1, 1);
  ASSERT_EQ(pts.size(), 2u);
  double lo = std::min(pts[0][0], pts[1][0]), hi = std::max(pts[0][0], pts[1][0]);
  EXPECT_NEAR(lo, 0.2, 1e-3);
  EXPECT_NEAR(hi, 0.8, 1e-3);
  for (const auto& p : pts) EXPECT_LE(std::abs(p[0] - 0.5), 0.3);
}

TEST(Rays, DiscRadii) {
  const auto s = unit_box(2);
  const double r = 0.3;
  const auto o = oracle_of({stage([](const Point& x) { return std::hypot(x[0] - 0.5, x[1] - 0.5); }, r)});
  std::vector<Point> inside;
  for (const auto& p : lhs_design(s, 200, 3).points) {
    if (std::hypot(p[0] - 0.5, p[1] - 0.5) < r) inside.push_back(p);
  }
  const auto pts = ray_boundary_points(inside, o, r, s, 40, 5);
  ASSERT_FALSE(pts.empty());
  for (const auto& p : pts) {
    const double rad = std::hypot(p[0] - 0.5, p[1] - 0.5);
    EXPECT_LE(rad, r);
    EXPECT_GE(rad, r - 1e-3 * std::sqrt(2.0));
  }
}

TEST(Ellipsoid, SingleSeedWeightsAreOne) {
  const auto s = unit_box(2);
  const auto o = oracle_of({stage([](const Point&) { return 0.0; }, 1.0)});
  bool spherical = false;
  const auto w = ellipsoid_importance({{0.5, 0.5}}, o, 1.0, s, 500, 0.2, 1, &spherical);
  EXPECT_TRUE(spherical);
  ASSERT_FALSE(w.points.empty());
  for (double v : w.weights) EXPECT_EQ(v, 1.0);
  for (const auto& p : w.points) EXPECT_TRUE(s.contains(p));
}

TEST(Ellipsoid, OverlapHalvesWeights) {
  const auto s = unit_box(2);
  const auto o = oracle_of({stage([](const Point&) { return 0.0; }, 1.0)});
  const auto w = ellipsoid_importance({{0.45, 0.5}, {0.55, 0.5}}, o, 1.0, s, 4000, 1.5, 2);
  bool half = false, one = false;
  for (double v : w.weights) {
    EXPECT_TRUE(v == 1.0 || v == 0.5);
    half = half || v == 0.5;
    one = one || v == 1.0;
  }
  EXPECT_TRUE(half);
  EXPECT_TRUE(one);
}

TEST(Ellipsoid, WeightedCentroidOfBox) {
  const auto s = unit_box(2);
  // Region [0.2, 0.6] x [0.3, 0.7]; centroid (0.4, 0.5).
  const auto o = oracle_of({stage(
      [](const Point& x) { return (x[0] >= 0.2 && x[0] <= 0.6 && x[1] >= 0.3 && x[1] <= 0.7) ? 0.0 : 1.0; }, 0.5)});
  std::vector<Point> seeds;
  for (const auto& p : lhs_design(s, 400, 2).points) {
    if (o.pass({p})[0]) seeds.push_back(p);
  }
  const auto w = ellipsoid_importance(seeds, o, 0.5, s, 20000, 1.5, 3);
  double sw = 0, sx = 0, sy = 0, sxx = 0;
  for (std::size_t i = 0; i < w.points.size(); ++i) {
    sw += w.weights[i];
    sx += w.weights[i] * w.points[i][0];
    sy += w.weights[i] * w.points[i][1];
    sxx += w.weights[i] * w.points[i][0] * w.points[i][0];
  }
  const double mx = sx / sw, my = sy / sw;
  const double se = std::sqrt(0.4 * 0.4 / 12.0 / static_cast<double>(w.points.size()));
  EXPECT_NEAR(mx, 0.4, 3 * se * 2);
  EXPECT_NEAR(my, 0.5, 3 * se * 2);
}

TEST(Volume, AllPass) {
  const auto s = unit_box(3);
  const auto o = oracle_of({stage([](const Point&) { return 0.0; }, 1.0)});
  const auto v = estimate_volume_ratio(o, s, 5000, 1);
  EXPECT_EQ(v.ratio, 1.0);
  EXPECT_NEAR(v.bbox_bound, 1.0, 0.01);
  EXPECT_THROW(estimate_volume_ratio(o, s, 999, 1), DomainError);
}

TEST(Volume, HalfSpaceAndProductRule) {
  const auto s = unit_box(2);
  const auto half = oracle_of({stage([](const Point& x) { return x[0]; }, 0.5)});
  const auto v = estimate_volume_ratio(half, s, 20000, 2);
  EXPECT_NEAR(v.ratio, 0.5, 0.02);
  EXPECT_LE(v.lo, 0.5);
  EXPECT_GE(v.hi, 0.5);
  EXPECT_NEAR(v.bbox_bound, 0.5, 0.01);
  const auto nested = oracle_of({stage([](const Point& x) { return x[0]; }, 0.5),
                                 stage([](const Point& x) { return x[1]; }, 0.5)});
  EXPECT_NEAR(estimate_volume_ratio(nested, s, 20000, 3).ratio, 0.25, 0.02);
}

TEST(ProposalCsv, HasSourceColumn) {
  const auto s = unit_box(2);
  const auto o = oracle_of({stage([](const Point& x) { return x[0]; }, 0.5)});
  const auto r = propose(o, s, small_config(5), 2);
  const auto text = proposal_to_csv(r, s);
  EXPECT_EQ(text.substr(0, text.find('\n')), "x1,x2,source");
  EXPECT_EQ(design_from_csv(text, s).points, r.batch.points);
}
