#pragma once

#include <Eigen/Core>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "wavecal/implausibility.hpp"
#include "wavecal/param_space.hpp"
#include "wavecal/rng.hpp"
#include "wavecal/stochastic.hpp"

namespace wavecal {

/// Outcome of running one point: values[rep][output], or an error.
struct PointRun {
  bool ok = false;
  std::string error;
  std::vector<std::vector<double>> values;
};

class Simulator {
 public:
  virtual ~Simulator() = default;
  virtual const std::vector<std::string>& outputs() const = 0;
  /// One entry per point. Implementations never throw for per-point
  /// failures; they report them in PointRun.
  virtual std::vector<PointRun> run(const std::vector<Point>& xs, const std::vector<std::size_t>& reps,
                                    std::uint64_t seed, std::size_t workers) = 0;
};

/// Seed for one point: depends on the run seed and the point's bit pattern,
/// not on its position in the batch.
std::uint64_t point_seed(std::uint64_t seed, const Point& x);

/// Builtin with closed-form first and second moments.
class BuiltinSimulator : public Simulator {
 public:
  const std::vector<std::string>& outputs() const override { return outputs_; }
  std::vector<PointRun> run(const std::vector<Point>& xs, const std::vector<std::size_t>& reps,
                            std::uint64_t seed, std::size_t workers) override;

  virtual std::size_t dims() const = 0;
  virtual Eigen::VectorXd true_mean(const Point& x) const = 0;
  virtual Eigen::MatrixXd true_cov(const Point& x) const = 0;
  /// One realisation; deterministic in (x, rep, seed).
  std::vector<double> sample(const Point& x, std::size_t rep, std::uint64_t seed) const;

 protected:
  explicit BuiltinSimulator(std::vector<std::string> outputs) : outputs_(std::move(outputs)) {}
  virtual std::vector<double> draw(const Point& x, Rng& rng) const = 0;

 private:
  std::vector<std::string> outputs_;
};

/// mean_a = A_a . x + b_a, sd_a = s0_a |1 + c_a . x|, independent outputs.
class LinearNoise : public BuiltinSimulator {
 public:
  LinearNoise(std::vector<std::string> outputs, Eigen::MatrixXd a, Eigen::VectorXd b, Eigen::VectorXd s0,
              Eigen::MatrixXd c);
  std::size_t dims() const override { return static_cast<std::size_t>(a_.cols()); }
  Eigen::VectorXd true_mean(const Point& x) const override;
  Eigen::MatrixXd true_cov(const Point& x) const override;
  Eigen::VectorXd sd(const Point& x) const;

 protected:
  std::vector<double> draw(const Point& x, Rng& rng) const override;

 private:
  Eigen::MatrixXd a_, c_;
  Eigen::VectorXd b_, s0_;
};

/// Single output f = x2 - a (x1 - 0.5)^2 plus N(0, s0^2) noise on [0,1]^2.
/// Matching f to a target gives a curved band with two arms.
class Banana : public BuiltinSimulator {
 public:
  explicit Banana(double a = 2.0, double s0 = 0.0);
  std::size_t dims() const override { return 2; }
  Eigen::VectorXd true_mean(const Point& x) const override;
  Eigen::MatrixXd true_cov(const Point& x) const override;
  /// Implausibility of x with exact mean and variance known.
  double true_implausibility(const Point& x, const Target& t) const;
  double curvature() const { return a_; }

 protected:
  std::vector<double> draw(const Point& x, Rng& rng) const override;

 private:
  double a_, s0_;
};

/// mean_a = b_a + a_a . x + amp_a sin(2 pi freq_a g_a . x); noise sd sd_a
/// with common correlation rho >= 0 between outputs.
class MultiOutCorr : public BuiltinSimulator {
 public:
  MultiOutCorr(std::vector<std::string> outputs, Eigen::VectorXd b, Eigen::MatrixXd a, Eigen::VectorXd amp,
               Eigen::VectorXd freq, Eigen::MatrixXd g, Eigen::VectorXd sd, double rho);
  std::size_t dims() const override { return static_cast<std::size_t>(a_.cols()); }
  Eigen::VectorXd true_mean(const Point& x) const override;
  Eigen::MatrixXd true_cov(const Point& x) const override;
  double rho() const { return rho_; }

 protected:
  std::vector<double> draw(const Point& x, Rng& rng) const override;

 private:
  Eigen::VectorXd b_, amp_, freq_, sd_;
  Eigen::MatrixXd a_, g_;
  double rho_;
};

/// Deterministic function wrapper, mainly for tests.
class FunctionSimulator : public Simulator {
 public:
  using Fn = std::function<std::vector<double>(const Point&, std::size_t rep, std::uint64_t seed)>;
  FunctionSimulator(std::vector<std::string> outputs, Fn fn) : outputs_(std::move(outputs)), fn_(std::move(fn)) {}
  const std::vector<std::string>& outputs() const override { return outputs_; }
  std::vector<PointRun> run(const std::vector<Point>& xs, const std::vector<std::size_t>& reps,
                            std::uint64_t seed, std::size_t workers) override;

 private:
  std::vector<std::string> outputs_;
  Fn fn_;
};

/// Builtin parameters by key; see each family for the expected keys.
using BuiltinParams = std::map<std::string, std::vector<double>>;

/// Families: "linear-noise" (A, b, s0, c), "banana" (a, s0),
/// "multiout-corr" (b, a, amp, freq, g, sd, rho). Matrices are row-major
/// with one row per output. Throws DomainError on bad shapes.
std::unique_ptr<BuiltinSimulator> make_builtin(const std::string& family, const std::vector<std::string>& outputs,
                                               std::size_t dims, const BuiltinParams& params);

struct ExternalOptions {
  std::string command;  // run through /bin/sh -c
  std::vector<std::string> param_names;
  std::vector<std::string> outputs;
  std::map<std::string, std::string> env;
  std::chrono::milliseconds timeout{600000};
  std::size_t retries = 2;
  std::size_t max_in_flight = 8;  // per process
};

/// Line-delimited JSON over a child's stdin/stdout. Request:
/// {"id", "params": {name: value}, "reps", "seed"}; response:
/// {"id", "outputs": {name: [v_1..v_reps]}}. Responses may arrive in any
/// order. One child per worker.
class ExternalSimulator : public Simulator {
 public:
  explicit ExternalSimulator(ExternalOptions opts);
  const std::vector<std::string>& outputs() const override { return opts_.outputs; }
  std::vector<PointRun> run(const std::vector<Point>& xs, const std::vector<std::size_t>& reps,
                            std::uint64_t seed, std::size_t workers) override;

 private:
  ExternalOptions opts_;
};

struct Evaluation {
  RunEnsemble ensemble;               // successful points only
  std::vector<std::size_t> ok_index;  // position of each ensemble point in the batch
  std::vector<std::size_t> failed;
  std::vector<std::string> errors;    // one per failed point

  double failure_rate() const;
};

/// Runs every point of the batch with the given reps.
Evaluation evaluate(Simulator& sim, const DesignBatch& batch, std::size_t reps, std::uint64_t seed,
                    std::size_t workers = 1);

struct BaselineOptions {
  std::size_t budget = 1000;  // simulator realisations
  std::size_t reps = 2;       // per evaluation
  std::size_t restarts = 5;
  std::size_t keep_last = 10;
  double initial_step = 0.1;  // unit-scaled
};

struct BaselineResult {
  std::vector<Point> final_points;  // last accepted points of each restart
  std::vector<double> loss_trace;   // loss of every evaluation, in order
  Point best;
  double best_loss = 0.0;
  std::size_t evaluations = 0;
};

/// Random-restart (1+1) evolution strategy with the one-fifth success rule,
/// minimising sum_a ((mean_a - z_a) / sqrt(obs_a + disc_a))^2.
BaselineResult baseline_optimize(Simulator& sim, const ParameterSpace& space, const std::vector<Target>& targets,
                                 const BaselineOptions& opts, std::uint64_t seed);

}  // namespace wavecal
