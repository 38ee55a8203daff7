#pragma once

// Run configuration: an INI-like text with sections [run], [parameters],
// [targets], [waves] and [simulator]. Parsing is strict: unknown sections
// or keys, duplicates and malformed values are errors with line context.
//
//   [parameters]
//   beta = [0.02, 0.25]
//   [targets]
//   cancer202015.0 = interval [1, 38], disc_sd 0.812
//   y = mean 2.5, sd 0.1, disc_sd 0.05
//
// Per-wave lists (reps, measure, cutoff, covariance) repeat their last
// entry for later waves.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "wavecal/emulator.hpp"
#include "wavecal/implausibility.hpp"
#include "wavecal/param_space.hpp"
#include "wavecal/simulator.hpp"

namespace wavecal {

struct SimulatorDecl {
  std::string kind = "builtin";  // builtin | external
  std::vector<std::string> outputs;
  // builtin
  std::string family;
  BuiltinParams params;
  // external
  std::string command;
  double timeout_s = 600.0;
  std::size_t max_in_flight = 8;
  std::map<std::string, std::string> env;

  friend bool operator==(const SimulatorDecl&, const SimulatorDecl&) = default;
};

struct WaveConfig {
  std::size_t n_design = 495;
  double train_fraction = 2.0 / 3.0;
  std::vector<std::size_t> reps{16};
  /// "max", "maxN" (N-th maximum) or "multivariate".
  std::vector<std::string> measure{"max2"};
  /// Empty entry: the measure's default (3, or the chi-squared rule).
  std::vector<std::optional<double>> cutoff{3.0};
  std::vector<bool> covariance{false};
  /// Outputs included in a wave (1-based); waves not listed use all.
  std::map<std::size_t, std::vector<std::string>> outputs;
  std::size_t max_waves = 16;

  std::size_t n_candidates = 10000;
  std::size_t n_importance = 0;
  std::size_t ray_pairs = 0;
  double radius_mult = 1.5;
  std::vector<double> anneal{2.0, 1.5, 1.25, 1.0};
  std::size_t n_volume = 10000;

  int max_degree = 2;
  double f_threshold = 4.0;
  double delta = 0.05;

  double yield_threshold = 0.25;
  double variance_share_threshold = 0.05;
  double failure_threshold = 0.1;
  std::string stability_output;

  std::size_t reps_for(std::size_t wave) const;
  bool covariance_for(std::size_t wave) const;
  /// Measure and cutoff of a wave with m included outputs.
  ImplausibilitySpec spec_for(std::size_t wave, std::size_t m) const;

  friend bool operator==(const WaveConfig&, const WaveConfig&) = default;
};

struct RunConfig {
  ParameterSpace space;
  std::vector<Target> targets;
  WaveConfig waves;
  SimulatorDecl simulator;
  std::uint64_t seed = 1;
  std::size_t workers = 0;  // 0: machine parallelism
  std::string dir = "run";

  /// Non-fatal remarks from parsing (degenerate intervals and the like).
  std::vector<std::string> warnings;

  const Target& target(const std::string& output) const;

  friend bool operator==(const RunConfig& a, const RunConfig& b) {
    return a.space == b.space && a.targets == b.targets && a.waves == b.waves && a.simulator == b.simulator &&
           a.seed == b.seed && a.workers == b.workers && a.dir == b.dir;
  }
};

RunConfig parse_config_text(std::string_view text, const std::string& source = "<config>");
RunConfig parse_config(const std::filesystem::path& path);
/// Canonical text; parse_config_text(serialize_config(c)) == c.
std::string serialize_config(const RunConfig& cfg);

std::unique_ptr<Simulator> make_simulator(const RunConfig& cfg);

}  // namespace wavecal
