#include "wavecal/proposal.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "wavecal/csv.hpp"
#include "wavecal/error.hpp"
#include "wavecal/kernels.hpp"
#include "wavecal/parallel.hpp"
#include "wavecal/rng.hpp"

namespace wavecal {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr std::size_t kChunk = 256;

enum : std::uint64_t { kLhsTag = 1, kRayTag = 2, kEllipsoidTag = 3 };

std::vector<Point> to_unit(const std::vector<Point>& xs, const ParameterSpace& space) {
  std::vector<Point> u;
  u.reserve(xs.size());
  for (const auto& x : xs) u.push_back(scale_to_unit(x, space));
  return u;
}

Point from_unit(Point u, const ParameterSpace& space) {
  for (auto& v : u) v = std::clamp(v, 0.0, 1.0);
  return unscale_from_unit(u, space);
}

double dist2(const Point& a, const Point& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

/// Distance along `dir` from `from` to the unit box boundary.
double exit_time(const Point& from, const Point& dir) {
  double t = kInf;
  for (std::size_t k = 0; k < from.size(); ++k) {
    if (dir[k] > 0.0) t = std::min(t, (1.0 - from[k]) / dir[k]);
    if (dir[k] < 0.0) t = std::min(t, -from[k] / dir[k]);
  }
  return t;
}

struct Draws {
  std::vector<Point> points;
  std::vector<double> weights;
  std::vector<double> values;
  std::size_t attempted = 0;
  bool spherical = false;
};

Draws ellipsoid_draws(const std::vector<Point>& seeds, const RegionOracle& oracle, double cutoff,
                      const ParameterSpace& space, std::size_t n, double radius_mult, std::uint64_t seed) {
  Draws out;
  const std::size_t d = space.size();
  const std::size_t k = seeds.size();
  if (k == 0 || n == 0) return out;
  const auto dd = static_cast<Eigen::Index>(d);
  const auto unit = to_unit(seeds, space);

  Eigen::MatrixXd s(static_cast<Eigen::Index>(k), dd);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < d; ++j) s(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = unit[i][j];
  }
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(dd, dd);
  if (k >= 2) {
    const Eigen::RowVectorXd mean = s.colwise().mean();
    const Eigen::MatrixXd c = s.rowwise() - mean;
    cov = c.transpose() * c / static_cast<double>(k - 1);
  }
  Eigen::MatrixXd l;
  bool spherical = k < d + 1;
  if (!spherical) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov, Eigen::EigenvaluesOnly);
    const auto& ev = eig.eigenvalues();
    spherical = !(ev.minCoeff() > 1e-12 * ev.maxCoeff()) || !(ev.maxCoeff() > 0.0);
    if (!spherical) {
      Eigen::LLT<Eigen::MatrixXd> llt(cov);
      if (llt.info() == Eigen::Success) {
        l = llt.matrixL();
      } else {
        spherical = true;
      }
    }
  }
  if (spherical) {
    double s2 = cov.trace() / static_cast<double>(d);
    if (!(s2 > 0.0)) s2 = 0.05 * 0.05;
    l = std::sqrt(s2) * Eigen::MatrixXd::Identity(dd, dd);
  }
  out.spherical = spherical;
  const double rho = radius_mult * std::sqrt(static_cast<double>(d) + 2.0) *
                     std::pow(static_cast<double>(k), -1.0 / static_cast<double>(d));
  const double rho2 = rho * rho;

  // Whitened centres, so containment is a Euclidean ball test.
  const Eigen::MatrixXd wc = l.triangularView<Eigen::Lower>().solve(s.transpose());
  kernels::PointColumns centres(d, k);
  std::vector<double> buf(d);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < d; ++j) buf[j] = wc(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i));
    centres.push_back(buf);
  }
  const auto& kern = kernels::active();
  const std::vector<double> ones(d, 1.0);
  std::vector<double> dist(k);

  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick(0, k - 1);
  std::vector<Point> cand;
  std::vector<double> cand_w;
  Eigen::VectorXd b(dd);
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t comp = pick(rng);
    double norm2 = 0.0;
    for (Eigen::Index j = 0; j < dd; ++j) {
      b(j) = normal(rng);
      norm2 += b(j) * b(j);
    }
    const double r = rho * std::pow(uniform01(rng), 1.0 / static_cast<double>(d));
    b *= r / std::sqrt(norm2);
    const Eigen::VectorXd x = s.row(static_cast<Eigen::Index>(comp)).transpose() + l * b;
    bool inside = true;
    for (Eigen::Index j = 0; j < dd; ++j) inside = inside && x(j) >= 0.0 && x(j) <= 1.0;
    if (!inside) continue;
    for (std::size_t j = 0; j < d; ++j) {
      buf[j] = wc(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(comp)) + b(static_cast<Eigen::Index>(j));
    }
    kern.weighted_sqdist(buf.data(), centres.data(), centres.stride(), k, d, ones.data(), dist.data());
    const std::size_t count = std::max<std::size_t>(1, kern.count_le(dist.data(), k, rho2));
    cand.push_back(from_unit(Point(x.data(), x.data() + dd), space));
    cand_w.push_back(1.0 / static_cast<double>(count));
  }
  out.attempted = n;
  const auto values = oracle.final_values(cand);
  for (std::size_t i = 0; i < cand.size(); ++i) {
    if (values[i] <= cutoff) {
      out.points.push_back(std::move(cand[i]));
      out.weights.push_back(cand_w[i]);
      out.values.push_back(values[i]);
    }
  }
  return out;
}

}  // namespace

RegionOracle RegionOracle::from_waves(const std::vector<std::shared_ptr<const WaveEmulators>>& waves,
                                      std::size_t workers) {
  RegionOracle oracle;
  oracle.workers = workers;
  for (const auto& w : waves) {
    OracleStage stage;
    stage.cutoff = w->spec.cutoff;
    stage.measure = [w](const std::vector<Point>& xs) {
      const auto res = w->evaluate(xs);
      std::vector<double> v(res.size());
      for (std::size_t i = 0; i < res.size(); ++i) v[i] = res[i].combined;
      return v;
    };
    oracle.stages.push_back(std::move(stage));
  }
  return oracle;
}

std::vector<double> RegionOracle::final_values(const std::vector<Point>& xs) const {
  std::vector<double> out(xs.size(), stages.empty() ? 0.0 : kInf);
  if (stages.empty() || xs.empty()) return out;
  const std::size_t chunks = (xs.size() + kChunk - 1) / kChunk;
  parallel_for(chunks, workers, [&](std::size_t c) {
    const std::size_t begin = c * kChunk, end = std::min(xs.size(), begin + kChunk);
    std::vector<std::size_t> alive;
    for (std::size_t i = begin; i < end; ++i) alive.push_back(i);
    for (std::size_t s = 0; s < stages.size() && !alive.empty(); ++s) {
      std::vector<Point> pts;
      pts.reserve(alive.size());
      for (std::size_t i : alive) pts.push_back(xs[i]);
      const auto v = stages[s].measure(pts);
      if (s + 1 == stages.size()) {
        for (std::size_t t = 0; t < alive.size(); ++t) out[alive[t]] = v[t];
      } else {
        std::vector<std::size_t> next;
        for (std::size_t t = 0; t < alive.size(); ++t) {
          if (v[t] <= stages[s].cutoff) next.push_back(alive[t]);
        }
        alive = std::move(next);
      }
    }
  });
  return out;
}

std::vector<char> RegionOracle::pass(const std::vector<Point>& xs, double cutoff) const {
  const auto v = final_values(xs);
  std::vector<char> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] <= cutoff ? 1 : 0;
  return out;
}

std::vector<char> RegionOracle::pass(const std::vector<Point>& xs) const {
  return pass(xs, stages.empty() ? kInf : final_cutoff());
}

std::vector<double> default_cutoff_schedule(double final_cutoff) {
  return {2.0 * final_cutoff, 1.5 * final_cutoff, 1.25 * final_cutoff, final_cutoff};
}

std::vector<Point> ray_boundary_points(const std::vector<Point>& survivors, const RegionOracle& oracle,
                                       double cutoff, const ParameterSpace& space, std::size_t pairs,
                                       std::uint64_t seed, double tol) {
  if (survivors.size() < 2 || pairs == 0) return {};
  const auto unit = to_unit(survivors, space);
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, unit.size() - 1);

  struct Task {
    Point lo, hi;  // lo accepted, hi rejected
  };
  std::vector<Task> pending;
  std::vector<Point> ends;
  for (std::size_t t = 0; t < pairs; ++t) {
    const std::size_t i = pick(rng);
    std::size_t j = pick(rng);
    while (j == i) j = pick(rng);
    const Point& p = unit[i];
    const Point& q = unit[j];
    Point v(p.size());
    for (std::size_t k = 0; k < p.size(); ++k) v[k] = q[k] - p[k];
    if (dist2(p, q) == 0.0) continue;
    for (int side = 0; side < 2; ++side) {
      const Point& from = side == 0 ? q : p;
      Point dir = v;
      if (side == 1) {
        for (auto& c : dir) c = -c;
      }
      const double te = exit_time(from, dir);
      Point end(from.size());
      for (std::size_t k = 0; k < from.size(); ++k) end[k] = std::clamp(from[k] + te * dir[k], 0.0, 1.0);
      if (dist2(from, end) <= tol * tol) continue;
      pending.push_back({from, end});
    }
  }
  if (pending.empty()) return {};

  // Box-edge endpoints that are accepted mean no crossing on that side.
  {
    std::vector<Point> xs;
    for (const auto& task : pending) xs.push_back(from_unit(task.hi, space));
    const auto ok = oracle.pass(xs, cutoff);
    std::vector<Task> kept;
    for (std::size_t i = 0; i < pending.size(); ++i) {
      if (!ok[i]) kept.push_back(std::move(pending[i]));
    }
    pending = std::move(kept);
  }

  // Lockstep bisection: one oracle call per halving for all rays.
  while (true) {
    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < pending.size(); ++i) {
      if (dist2(pending[i].lo, pending[i].hi) > tol * tol) active.push_back(i);
    }
    if (active.empty()) break;
    std::vector<Point> mids;
    std::vector<Point> mids_unit;
    for (std::size_t i : active) {
      Point m(pending[i].lo.size());
      for (std::size_t k = 0; k < m.size(); ++k) m[k] = 0.5 * (pending[i].lo[k] + pending[i].hi[k]);
      mids.push_back(from_unit(m, space));
      mids_unit.push_back(std::move(m));
    }
    const auto ok = oracle.pass(mids, cutoff);
    for (std::size_t t = 0; t < active.size(); ++t) {
      auto& task = pending[active[t]];
      (ok[t] ? task.lo : task.hi) = std::move(mids_unit[t]);
    }
  }
  std::vector<Point> out;
  out.reserve(pending.size());
  for (const auto& task : pending) out.push_back(from_unit(task.lo, space));
  return out;
}

WeightedPoints ellipsoid_importance(const std::vector<Point>& seeds, const RegionOracle& oracle, double cutoff,
                                    const ParameterSpace& space, std::size_t n, double radius_mult,
                                    std::uint64_t seed, bool* spherical) {
  Draws d = ellipsoid_draws(seeds, oracle, cutoff, space, n, radius_mult, seed);
  if (spherical) *spherical = d.spherical;
  return WeightedPoints{std::move(d.points), std::move(d.weights)};
}

std::string ProposalAudit::to_text() const {
  std::ostringstream os;
  os << "candidates = " << candidates << "\n";
  os << "lhs_survivors = " << lhs_survivors << "\n";
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const auto& st = stages[s];
    const std::string p = "stage" + std::to_string(s) + ".";
    os << p << "cutoff = " << format_double(st.cutoff) << "\n";
    os << p << "seeds = " << st.seeds << "\n";
    os << p << "ray_points = " << st.ray_points << "\n";
    os << p << "importance_draws = " << st.importance_draws << "\n";
    os << p << "importance_accepted = " << st.importance_accepted << "\n";
    os << p << "spherical = " << (st.spherical ? 1 : 0) << "\n";
    os << p << "pool = " << st.pool << "\n";
  }
  os << "returned = " << returned << "\n";
  return os.str();
}

ProposalResult propose(const RegionOracle& oracle, const ParameterSpace& space, const ProposalConfig& cfg,
                       std::uint64_t seed) {
  const std::size_t d = space.size();
  if (cfg.n_target == 0) throw DesignError("proposal with zero target points");
  ProposalResult result;

  const DesignBatch lhs = lhs_design(space, cfg.n_candidates, derive_seed(seed, {tag(Stream::proposal), kLhsTag}));
  result.audit.candidates = lhs.size();

  std::vector<Point> pool = lhs.points;
  std::vector<double> values = oracle.final_values(pool);
  std::vector<Provenance> sources(pool.size(), Provenance::lhs);

  const double final_cut = oracle.empty() ? kInf : oracle.final_cutoff();
  std::vector<double> schedule = cfg.cutoff_schedule;
  if (oracle.empty()) {
    schedule = {kInf};
  } else if (schedule.empty()) {
    schedule = default_cutoff_schedule(final_cut);
  }
  for (std::size_t s = 1; s < schedule.size(); ++s) {
    if (!(schedule[s] < schedule[s - 1])) throw DesignError("cutoff schedule must be strictly decreasing");
  }
  if (schedule.back() != final_cut) throw DesignError("cutoff schedule must end at the final cutoff");

  auto count_at = [&](double c) {
    return static_cast<std::size_t>(std::count_if(values.begin(), values.end(), [c](double v) { return v <= c; }));
  };
  result.audit.lhs_survivors = count_at(final_cut);

  // Start at the lowest cutoff with enough survivors to shape ellipsoids,
  // else the highest cutoff with any.
  std::size_t start = schedule.size();
  for (std::size_t s = schedule.size(); s-- > 0;) {
    if (count_at(schedule[s]) >= d + 1) {
      start = s;
      break;
    }
  }
  if (start == schedule.size()) {
    if (count_at(schedule.front()) == 0) {
      throw EmptyRegion("no candidate point survives even the most relaxed cutoff " + format_double(schedule.front()));
    }
    start = 0;
  }

  const std::size_t ray_pairs = cfg.ray_pairs ? cfg.ray_pairs : 20 * d;
  const std::size_t n_imp = cfg.n_importance ? cfg.n_importance : cfg.n_candidates;
  std::vector<Point> prev_seeds;
  for (std::size_t s = start; s < schedule.size(); ++s) {
    const double c = schedule[s];
    StageAudit st;
    st.cutoff = c;
    DesignBatch survivors;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (values[i] <= c) survivors.points.push_back(pool[i]);
    }
    std::vector<Point> seeds;
    if (!survivors.empty()) {
      seeds = maximin_thin(survivors, std::min(cfg.n_target, survivors.size()), space).points;
    } else {
      seeds = prev_seeds;
    }
    st.seeds = seeds.size();

    if (!oracle.empty()) {
      const auto rays = ray_boundary_points(survivors.empty() ? std::vector<Point>{} : seeds, oracle, c, space,
                                            ray_pairs, derive_seed(seed, {tag(Stream::proposal), kRayTag, s}));
      const auto ray_values = oracle.final_values(rays);
      for (std::size_t i = 0; i < rays.size(); ++i) {
        pool.push_back(rays[i]);
        values.push_back(ray_values[i]);
        sources.push_back(Provenance::ray);
      }
      st.ray_points = rays.size();

      Draws draws = ellipsoid_draws(seeds, oracle, c, space, n_imp, cfg.radius_mult,
                                    derive_seed(seed, {tag(Stream::proposal), kEllipsoidTag, s}));
      st.importance_draws = draws.attempted;
      st.importance_accepted = draws.points.size();
      st.spherical = draws.spherical;
      for (std::size_t i = 0; i < draws.points.size(); ++i) {
        pool.push_back(std::move(draws.points[i]));
        values.push_back(draws.values[i]);
        sources.push_back(Provenance::importance);
      }
    }
    st.pool = count_at(c);
    result.audit.stages.push_back(st);
    prev_seeds = std::move(seeds);
  }

  DesignBatch final_pool;
  std::vector<Provenance> final_sources;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (values[i] <= final_cut) {
      final_pool.points.push_back(pool[i]);
      final_sources.push_back(sources[i]);
    }
  }
  if (final_pool.empty()) {
    throw EmptyRegion("no point survives the final cutoff " + format_double(final_cut));
  }
  const std::size_t k = std::min(cfg.n_target, final_pool.size());
  std::vector<Point> unit = to_unit(final_pool.points, space);
  for (std::size_t idx : maximin_indices(unit, k)) {
    result.batch.points.push_back(final_pool.points[idx]);
    result.sources.push_back(final_sources[idx]);
  }
  result.batch.provenance = Provenance::importance;
  result.audit.returned = result.batch.size();
  return result;
}

std::string proposal_to_csv(const ProposalResult& result, const ParameterSpace& space) {
  auto header = space.names();
  header.push_back("source");
  CsvWriter w(header);
  for (std::size_t i = 0; i < result.batch.size(); ++i) {
    for (double v : result.batch.points[i]) w.cell(v);
    w.cell(std::string_view(to_string(result.sources[i]))).end_row();
  }
  return w.text();
}

}  // namespace wavecal
