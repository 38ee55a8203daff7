#include <algorithm>
#include <cmath>
#include <limits>

#include "wavecal/error.hpp"
#include "wavecal/rng.hpp"
#include "wavecal/simulator.hpp"

namespace wavecal {

BaselineResult baseline_optimize(Simulator& sim, const ParameterSpace& space, const std::vector<Target>& targets,
                                 const BaselineOptions& opts, std::uint64_t seed) {
  if (opts.budget == 0 || opts.reps == 0) throw DomainError("optimizer budget and reps must be positive");
  const std::size_t evals = std::max<std::size_t>(1, opts.budget / opts.reps);
  const std::size_t restarts = std::max<std::size_t>(1, std::min(opts.restarts, evals));
  const std::size_t d = space.size();

  std::vector<std::size_t> out_index;
  for (const auto& t : targets) {
    const auto& outs = sim.outputs();
    auto it = std::find(outs.begin(), outs.end(), t.output);
    if (it == outs.end()) throw DomainError("target output '" + t.output + "' not produced by the simulator");
    out_index.push_back(static_cast<std::size_t>(it - outs.begin()));
  }

  BaselineResult res;
  res.best_loss = std::numeric_limits<double>::infinity();
  Rng rng(derive_seed(seed, {tag(Stream::optimizer)}));
  std::normal_distribution<double> normal(0.0, 1.0);

  auto loss_at = [&](const Point& unit) {
    const Point x = unscale_from_unit(unit, space);
    const auto runs = sim.run({x}, {opts.reps}, derive_seed(seed, {tag(Stream::optimizer), res.evaluations}), 1);
    ++res.evaluations;
    double loss = std::numeric_limits<double>::infinity();
    if (runs[0].ok) {
      loss = 0.0;
      for (std::size_t t = 0; t < targets.size(); ++t) {
        double mean = 0.0;
        for (const auto& rep : runs[0].values) mean += rep[out_index[t]];
        mean /= static_cast<double>(runs[0].values.size());
        const double scale = targets[t].obs_var() + targets[t].disc_var();
        loss += (mean - targets[t].z()) * (mean - targets[t].z()) / scale;
      }
    }
    res.loss_trace.push_back(loss);
    if (loss < res.best_loss) {
      res.best_loss = loss;
      res.best = x;
    }
    return loss;
  };

  for (std::size_t r = 0; r < restarts; ++r) {
    const std::size_t quota = evals / restarts + (r < evals % restarts ? 1 : 0);
    Point cur(d);
    for (auto& u : cur) u = uniform01(rng);
    // The incumbent is re-evaluated every iteration and judged on its running mean, so a single lucky
    // draw cannot freeze the search.
    double cur_sum = loss_at(cur);
    std::size_t cur_n = 1;
    std::vector<Point> accepted{cur};
    double step = opts.initial_step;
    for (std::size_t used = 1; used < quota;) {
      if (used + 1 < quota && std::isfinite(cur_sum)) {
        cur_sum += loss_at(cur);
        ++cur_n;
        ++used;
      }
      Point cand(d);
      for (std::size_t j = 0; j < d; ++j) cand[j] = std::clamp(cur[j] + step * normal(rng), 0.0, 1.0);
      const double l = loss_at(cand);
      ++used;
      if (l <= cur_sum / static_cast<double>(cur_n)) {
        cur = std::move(cand);
        cur_sum = l;
        cur_n = 1;
        accepted.push_back(cur);
        step *= 1.5;
      } else {
        step *= std::pow(1.5, -0.25);
      }
      step = std::clamp(step, 1e-6, 0.5);
    }
    const std::size_t keep = std::min(opts.keep_last, accepted.size());
    for (std::size_t i = accepted.size() - keep; i < accepted.size(); ++i) {
      res.final_points.push_back(unscale_from_unit(accepted[i], space));
    }
  }
  return res;
}

}  // namespace wavecal
