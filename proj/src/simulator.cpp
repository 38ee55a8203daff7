#include "wavecal/simulator.hpp"

#include <cmath>
#include <cstring>
#include <numbers>

#include "wavecal/error.hpp"
#include "wavecal/parallel.hpp"

namespace wavecal {
namespace {

Eigen::VectorXd as_vector(const Point& x) {
  return Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
}

const std::vector<double>& require(const BuiltinParams& p, const std::string& key, std::size_t size,
                                   const std::string& family) {
  auto it = p.find(key);
  if (it == p.end()) throw DomainError(family + ": missing parameter '" + key + "'");
  if (it->second.size() != size) {
    throw DomainError(family + ": parameter '" + key + "' needs " + std::to_string(size) + " values, got " +
                      std::to_string(it->second.size()));
  }
  return it->second;
}

Eigen::MatrixXd row_major(const std::vector<double>& v, std::size_t rows, std::size_t cols) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v[r * cols + c];
  }
  return m;
}

Eigen::VectorXd vec(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

std::uint64_t point_seed(std::uint64_t seed, const Point& x) {
  std::uint64_t h = splitmix64(seed ^ 0x5bd1e995ULL);
  for (double v : x) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    h = splitmix64(h ^ bits);
  }
  return h;
}

std::vector<double> BuiltinSimulator::sample(const Point& x, std::size_t rep, std::uint64_t seed) const {
  Rng rng(derive_seed(point_seed(seed, x), {rep}));
  return draw(x, rng);
}

std::vector<PointRun> BuiltinSimulator::run(const std::vector<Point>& xs, const std::vector<std::size_t>& reps,
                                            std::uint64_t seed, std::size_t workers) {
  if (reps.size() != xs.size()) throw DomainError("one rep count per point is required");
  std::vector<PointRun> out(xs.size());
  parallel_for(xs.size(), workers, [&](std::size_t i) {
    if (xs[i].size() != dims()) {
      out[i].error = "point has " + std::to_string(xs[i].size()) + " coordinates, simulator expects " +
                     std::to_string(dims());
      return;
    }
    out[i].values.reserve(reps[i]);
    for (std::size_t r = 0; r < reps[i]; ++r) out[i].values.push_back(sample(xs[i], r, seed));
    out[i].ok = true;
  });
  return out;
}

LinearNoise::LinearNoise(std::vector<std::string> outputs, Eigen::MatrixXd a, Eigen::VectorXd b, Eigen::VectorXd s0,
                         Eigen::MatrixXd c)
    : BuiltinSimulator(std::move(outputs)), a_(std::move(a)), c_(std::move(c)), b_(std::move(b)), s0_(std::move(s0)) {
  const auto m = static_cast<Eigen::Index>(this->outputs().size());
  if (a_.rows() != m || b_.size() != m || s0_.size() != m || c_.rows() != m || c_.cols() != a_.cols()) {
    throw DomainError("linear-noise: parameter shapes disagree with the output count");
  }
}

Eigen::VectorXd LinearNoise::sd(const Point& x) const {
  return (s0_.array() * (1.0 + (c_ * as_vector(x)).array()).abs()).matrix();
}

Eigen::VectorXd LinearNoise::true_mean(const Point& x) const { return a_ * as_vector(x) + b_; }

Eigen::MatrixXd LinearNoise::true_cov(const Point& x) const {
  const Eigen::VectorXd s = sd(x);
  return s.array().square().matrix().asDiagonal();
}

std::vector<double> LinearNoise::draw(const Point& x, Rng& rng) const {
  const Eigen::VectorXd mu = true_mean(x), s = sd(x);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(mu.size()));
  for (Eigen::Index a = 0; a < mu.size(); ++a) v[static_cast<std::size_t>(a)] = mu(a) + s(a) * normal(rng);
  return v;
}

Banana::Banana(double a, double s0) : BuiltinSimulator({"f"}), a_(a), s0_(s0) {}

Eigen::VectorXd Banana::true_mean(const Point& x) const {
  Eigen::VectorXd m(1);
  m(0) = x[1] - a_ * (x[0] - 0.5) * (x[0] - 0.5);
  return m;
}

Eigen::MatrixXd Banana::true_cov(const Point&) const { return Eigen::MatrixXd::Constant(1, 1, s0_ * s0_); }

double Banana::true_implausibility(const Point& x, const Target& t) const {
  return implausibility_uni(true_mean(x)(0), 0.0, s0_ * s0_, t);
}

std::vector<double> Banana::draw(const Point& x, Rng& rng) const {
  std::normal_distribution<double> normal(0.0, 1.0);
  return {true_mean(x)(0) + s0_ * normal(rng)};
}

MultiOutCorr::MultiOutCorr(std::vector<std::string> outputs, Eigen::VectorXd b, Eigen::MatrixXd a, Eigen::VectorXd amp,
                           Eigen::VectorXd freq, Eigen::MatrixXd g, Eigen::VectorXd sd, double rho)
    : BuiltinSimulator(std::move(outputs)),
      b_(std::move(b)),
      amp_(std::move(amp)),
      freq_(std::move(freq)),
      sd_(std::move(sd)),
      a_(std::move(a)),
      g_(std::move(g)),
      rho_(rho) {
  const auto m = static_cast<Eigen::Index>(this->outputs().size());
  if (b_.size() != m || a_.rows() != m || amp_.size() != m || freq_.size() != m || g_.rows() != m ||
      g_.cols() != a_.cols() || sd_.size() != m) {
    throw DomainError("multiout-corr: parameter shapes disagree with the output count");
  }
  if (!(rho_ >= 0.0 && rho_ <= 1.0)) throw DomainError("multiout-corr: rho must lie in [0, 1]");
}

Eigen::VectorXd MultiOutCorr::true_mean(const Point& x) const {
  const Eigen::VectorXd xv = as_vector(x);
  const Eigen::VectorXd phase = 2.0 * std::numbers::pi * freq_.cwiseProduct(g_ * xv);
  return b_ + a_ * xv + amp_.cwiseProduct(phase.array().sin().matrix());
}

Eigen::MatrixXd MultiOutCorr::true_cov(const Point&) const {
  const auto m = sd_.size();
  Eigen::MatrixXd c = rho_ * sd_ * sd_.transpose();
  for (Eigen::Index a = 0; a < m; ++a) c(a, a) = sd_(a) * sd_(a);
  return c;
}

std::vector<double> MultiOutCorr::draw(const Point& x, Rng& rng) const {
  const Eigen::VectorXd mu = true_mean(x);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double common = normal(rng);
  std::vector<double> v(static_cast<std::size_t>(mu.size()));
  for (Eigen::Index a = 0; a < mu.size(); ++a) {
    const double e = std::sqrt(rho_) * common + std::sqrt(1.0 - rho_) * normal(rng);
    v[static_cast<std::size_t>(a)] = mu(a) + sd_(a) * e;
  }
  return v;
}

std::vector<PointRun> FunctionSimulator::run(const std::vector<Point>& xs, const std::vector<std::size_t>& reps,
                                             std::uint64_t seed, std::size_t workers) {
  if (reps.size() != xs.size()) throw DomainError("one rep count per point is required");
  std::vector<PointRun> out(xs.size());
  parallel_for(xs.size(), workers, [&](std::size_t i) {
    try {
      for (std::size_t r = 0; r < reps[i]; ++r) {
        auto v = fn_(xs[i], r, seed);
        if (v.size() != outputs_.size()) throw SimulatorError("function returned the wrong number of outputs");
        out[i].values.push_back(std::move(v));
      }
      out[i].ok = true;
    } catch (const std::exception& e) {
      out[i].values.clear();
      out[i].error = e.what();
    }
  });
  return out;
}

std::unique_ptr<BuiltinSimulator> make_builtin(const std::string& family, const std::vector<std::string>& outputs,
                                               std::size_t dims, const BuiltinParams& params) {
  const std::size_t m = outputs.size();
  auto check_keys = [&](std::initializer_list<const char*> allowed) {
    for (const auto& [k, v] : params) {
      bool ok = false;
      for (const char* a : allowed) ok = ok || k == a;
      if (!ok) throw DomainError(family + ": unknown parameter '" + k + "'");
    }
  };
  if (family == "linear-noise") {
    check_keys({"A", "b", "s0", "c"});
    return std::make_unique<LinearNoise>(outputs, row_major(require(params, "A", m * dims, family), m, dims),
                                         vec(require(params, "b", m, family)), vec(require(params, "s0", m, family)),
                                         row_major(require(params, "c", m * dims, family), m, dims));
  }
  if (family == "banana") {
    check_keys({"a", "s0"});
    if (dims != 2) throw DomainError("banana: needs exactly 2 parameters");
    if (outputs != std::vector<std::string>{"f"}) throw DomainError("banana: the single output is named 'f'");
    const double a = params.count("a") ? require(params, "a", 1, family)[0] : 2.0;
    const double s0 = params.count("s0") ? require(params, "s0", 1, family)[0] : 0.0;
    return std::make_unique<Banana>(a, s0);
  }
  if (family == "multiout-corr") {
    check_keys({"b", "a", "amp", "freq", "g", "sd", "rho"});
    return std::make_unique<MultiOutCorr>(
        outputs, vec(require(params, "b", m, family)), row_major(require(params, "a", m * dims, family), m, dims),
        vec(require(params, "amp", m, family)), vec(require(params, "freq", m, family)),
        row_major(require(params, "g", m * dims, family), m, dims), vec(require(params, "sd", m, family)),
        require(params, "rho", 1, family)[0]);
  }
  throw DomainError("unknown builtin simulator '" + family + "'");
}

double Evaluation::failure_rate() const {
  const std::size_t total = failed.size() + ok_index.size();
  return total == 0 ? 0.0 : static_cast<double>(failed.size()) / static_cast<double>(total);
}

Evaluation evaluate(Simulator& sim, const DesignBatch& batch, std::size_t reps, std::uint64_t seed,
                    std::size_t workers) {
  if (reps == 0) throw DomainError("at least one repetition is required");
  Evaluation ev;
  ev.ensemble.outputs = sim.outputs();
  ev.ensemble.design.provenance = batch.provenance;
  auto runs = sim.run(batch.points, std::vector<std::size_t>(batch.size(), reps), seed, workers);
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (runs[i].ok) {
      ev.ok_index.push_back(i);
      ev.ensemble.design.points.push_back(batch.points[i]);
      ev.ensemble.values.push_back(std::move(runs[i].values));
    } else {
      ev.failed.push_back(i);
      ev.errors.push_back(runs[i].error);
    }
  }
  return ev;
}

}  // namespace wavecal
