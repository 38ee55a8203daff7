#pragma once

// History-matching driver: one wave is design -> simulate -> summarise ->
// fit and validate emulators -> classify and propose. State lives in a run
// directory so a killed driver resumes at the first incomplete wave:
//
//   config.cfg            copy of the configuration
//   run.lock              guards against concurrent drivers
//   wave_k/design.csv     design with a train/validation role column
//   wave_k/runs.csv       point_id, rep, output, value
//   wave_k/emulators.v1.txt
//   wave_k/validation.csv
//   wave_k/proposal.csv   next wave's design
//   wave_k/proposal_runs.csv  runs at the proposal (yield; reused by wave k+1)
//   wave_k/audit.txt      proposal step counts
//   wave_k/metrics.txt    written last; marks the wave complete

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "wavecal/config.hpp"
#include "wavecal/diagnostics.hpp"
#include "wavecal/proposal.hpp"
#include "wavecal/simulator.hpp"

namespace wavecal {

struct VolumeEstimate {
  double ratio = 0.0;  // pass fraction of uniform draws over the initial box
  double lo = 0.0, hi = 0.0;  // 95% Wilson interval
  double bbox_bound = 0.0;    // product of retained-range / initial-range
  std::size_t n = 0, passed = 0;
};

/// Monte Carlo volume of the region relative to the initial box. The bound
/// uses the bounding box of the passing draws, or of `retained` when no draw
/// passes. Throws DomainError for n_mc < 1000.
VolumeEstimate estimate_volume_ratio(const RegionOracle& oracle, const ParameterSpace& space, std::size_t n_mc,
                                     std::uint64_t seed, const std::vector<Point>& retained = {});

/// Fraction of points whose sample mean lies in every target's 3-sigma
/// observation band.
double compute_yield(const SampleStatistics& stats, const std::vector<Target>& targets);

/// Two-sample Kolmogorov-Smirnov distance.
double ks_distance(std::vector<double> a, std::vector<double> b);

struct WaveMetrics {
  std::size_t wave = 0;
  std::size_t n_design = 0, n_train = 0, n_validation = 0, reps = 0, failed_runs = 0;
  std::vector<std::string> outputs;  // emulated and kept
  std::vector<std::string> dropped;  // failed validation, re-queued
  std::string measure;
  double cutoff = 0.0;
  VolumeEstimate volume;
  std::size_t proposed = 0;
  double yield = 0.0;
  double var_share_mean = 0.0, var_share_min = 0.0, var_share_max = 0.0;
  double adj_share_mean = 0.0;
  std::optional<double> stability_distance;
  std::vector<std::string> stops;

  std::string to_text() const;
  static WaveMetrics from_text(std::string_view text);
};

struct StoppingReport {
  std::size_t waves_completed = 0;
  std::vector<std::string> conditions;  // empty_region, yield_threshold, ...

  bool empty_region() const;
};

class RunLock;

class Driver {
 public:
  /// Creates the run directory if needed. An existing config.cfg must match.
  Driver(RunConfig cfg, std::filesystem::path dir, std::size_t workers, std::unique_ptr<Simulator> sim);
  ~Driver();
  Driver(const Driver&) = delete;
  Driver& operator=(const Driver&) = delete;

  /// Runs waves from the first incomplete one until a stopping condition.
  StoppingReport run();
  /// Runs wave k (1-based); waves before k must be complete.
  WaveMetrics run_wave(std::size_t k);

  /// Number of consecutive complete waves from wave 1.
  std::size_t completed_waves() const;

  const RunConfig& config() const { return cfg_; }
  const std::filesystem::path& dir() const { return dir_; }

 private:
  RunConfig cfg_;
  std::filesystem::path dir_;
  std::size_t workers_;
  std::unique_ptr<Simulator> sim_;
  std::unique_ptr<RunLock> lock_;
};

std::filesystem::path wave_dir(const std::filesystem::path& run_dir, std::size_t k);
bool wave_complete(const std::filesystem::path& run_dir, std::size_t k);
std::size_t count_complete_waves(const std::filesystem::path& run_dir);

/// Wave emulators as persisted; targets come from the configuration.
void save_wave_emulators(const std::filesystem::path& path, const WaveEmulators& wave, std::size_t k,
                         const std::vector<std::string>& dropped);
std::shared_ptr<WaveEmulators> load_wave_emulators(const std::filesystem::path& path, const RunConfig& cfg);

/// Cascade of waves 1..upto from a run directory.
std::vector<std::shared_ptr<const WaveEmulators>> load_cascade(const std::filesystem::path& run_dir,
                                                               const RunConfig& cfg, std::size_t upto);

/// Design of wave k and its train/validation roles.
struct WaveDesign {
  DesignBatch design;
  std::vector<char> train;  // 1 for training points
};
WaveDesign load_wave_design(const std::filesystem::path& run_dir, std::size_t k, const ParameterSpace& space);
RunEnsemble load_wave_runs(const std::filesystem::path& run_dir, std::size_t k, const RunConfig& cfg);

}  // namespace wavecal
