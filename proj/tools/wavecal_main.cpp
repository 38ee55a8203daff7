// wavecal command-line front end. Exit codes: 0 success, 2 empty
// non-implausible region, 1 any other error.

#include <CLI11.hpp>
#include <iostream>
#include <optional>
#include <sstream>

#include "wavecal/config.hpp"
#include "wavecal/csv.hpp"
#include "wavecal/diagnostics.hpp"
#include "wavecal/driver.hpp"
#include "wavecal/error.hpp"
#include "wavecal/parallel.hpp"
#include "wavecal/proposal.hpp"
#include "wavecal/rng.hpp"

namespace fs = std::filesystem;
using namespace wavecal;

namespace {

constexpr int kExitEmpty = 2;

struct Common {
  std::optional<std::uint64_t> seed;
  std::size_t workers = 0;
};

std::size_t resolve_workers(const Common& c, const RunConfig& cfg) {
  if (c.workers) return c.workers;
  if (cfg.workers) return cfg.workers;
  return default_workers();
}

RunConfig load_config(const std::string& path, const Common& c) {
  RunConfig cfg = parse_config(path);
  for (const auto& w : cfg.warnings) std::cerr << "warning: " << w << '\n';
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

RunConfig load_run_config(const fs::path& run_dir, const Common& c) {
  return load_config((run_dir / "config.cfg").string(), c);
}

int cmd_run(const std::string& cfg_path, const std::string& dir, const Common& c) {
  RunConfig cfg = load_config(cfg_path, c);
  const fs::path run_dir = dir.empty() ? fs::path(cfg.dir) : fs::path(dir);
  Driver driver(cfg, run_dir, resolve_workers(c, cfg), make_simulator(cfg));
  const StoppingReport r = driver.run();
  std::cout << "waves_completed = " << r.waves_completed << '\n';
  std::cout << "stops =";
  for (const auto& s : r.conditions) std::cout << ' ' << s;
  std::cout << '\n';
  return r.empty_region() ? kExitEmpty : 0;
}

int cmd_wave(const std::string& cfg_path, const std::string& dir, std::size_t k, const Common& c) {
  RunConfig cfg = load_config(cfg_path, c);
  const fs::path run_dir = dir.empty() ? fs::path(cfg.dir) : fs::path(dir);
  Driver driver(cfg, run_dir, resolve_workers(c, cfg), make_simulator(cfg));
  const WaveMetrics m = driver.run_wave(k);
  std::cout << m.to_text();
  for (const auto& s : m.stops) {
    if (s == "empty_region") return kExitEmpty;
  }
  return 0;
}

int cmd_propose(const fs::path& run_dir, std::size_t n, std::optional<double> cutoff, const std::string& out,
                const Common& c) {
  const RunConfig cfg = load_run_config(run_dir, c);
  const std::size_t k = count_complete_waves(run_dir);
  if (k == 0) throw IoError(run_dir.string() + " has no completed wave");
  RegionOracle oracle = RegionOracle::from_waves(load_cascade(run_dir, cfg, k), resolve_workers(c, cfg));
  if (cutoff) oracle.stages.back().cutoff = *cutoff;
  ProposalConfig pc;
  pc.n_target = n;
  pc.n_candidates = cfg.waves.n_candidates;
  for (double a : cfg.waves.anneal) pc.cutoff_schedule.push_back(a * oracle.final_cutoff());
  pc.ray_pairs = cfg.waves.ray_pairs;
  pc.radius_mult = cfg.waves.radius_mult;
  pc.n_importance = cfg.waves.n_importance;
  try {
    const auto result = propose(oracle, cfg.space, pc, derive_seed(cfg.seed, {k + 1, tag(Stream::proposal), n}));
    const fs::path path = out.empty() ? run_dir / "proposal.csv" : run_dir / out;
    write_file_atomic(path, proposal_to_csv(result, cfg.space));
    std::cout << "proposed = " << result.batch.size() << "\npath = " << path.string() << '\n';
    return 0;
  } catch (const EmptyRegion& e) {
    std::cerr << "empty region: " << e.what() << '\n';
    return kExitEmpty;
  }
}

int cmd_validate(const fs::path& run_dir, std::size_t k, const Common& c) {
  const RunConfig cfg = load_run_config(run_dir, c);
  if (!wave_complete(run_dir, k)) throw IoError("wave " + std::to_string(k) + " is not complete");
  const auto wave = load_wave_emulators(wave_dir(run_dir, k) / "emulators.v1.txt", cfg);
  const auto wd = load_wave_design(run_dir, k, cfg.space);
  const RunEnsemble ens = load_wave_runs(run_dir, k, cfg);
  RunEnsemble hold;
  hold.outputs = ens.outputs;
  for (std::size_t l = 0; l < ens.values.size(); ++l) {
    if (wd.train[l]) continue;
    hold.design.points.push_back(ens.design.points[l]);
    hold.values.push_back(ens.values[l]);
  }
  const bool with_covs = !hold.values.empty() && hold.reps(0) >= 2;
  const ValidationReport report = validate(*wave, summarize(hold, with_covs));
  std::cout << report.to_csv();
  return 0;
}

int cmd_report(const fs::path& run_dir, const Common& c) {
  const RunConfig cfg = load_run_config(run_dir, c);
  const std::size_t waves = count_complete_waves(run_dir);
  if (waves == 0) throw IoError(run_dir.string() + " has no completed wave");
  const fs::path out = run_dir / "report";
  std::ostringstream summary;
  summary << "waves = " << waves << '\n';
  std::vector<WaveValues> values;
  for (std::size_t k = 1; k <= waves; ++k) {
    const auto m = WaveMetrics::from_text(read_file(wave_dir(run_dir, k) / "metrics.txt"));
    const std::string p = "wave_" + std::to_string(k) + ".";
    summary << p << "volume_ratio = " << format_double(m.volume.ratio) << '\n'
            << p << "volume_ratio_lo = " << format_double(m.volume.lo) << '\n'
            << p << "volume_ratio_hi = " << format_double(m.volume.hi) << '\n'
            << p << "volume_bbox_bound = " << format_double(m.volume.bbox_bound) << '\n'
            << p << "yield = " << format_double(m.yield) << '\n'
            << p << "variance_share_mean = " << format_double(m.var_share_mean) << '\n'
            << p << "variance_share_min = " << format_double(m.var_share_min) << '\n'
            << p << "variance_share_max = " << format_double(m.var_share_max) << '\n'
            << p << "outputs = " << m.outputs.size() << '\n'
            << p << "stops = ";
    for (std::size_t i = 0; i < m.stops.size(); ++i) summary << (i ? "," : "") << m.stops[i];
    summary << '\n';

    const auto wave = load_wave_emulators(wave_dir(run_dir, k) / "emulators.v1.txt", cfg);
    const auto eff = effect_strength(wave->outputs, wave->emulators, cfg.space.names());
    write_file_atomic(out / ("effect_strength_wave_" + std::to_string(k) + ".csv"), eff.to_csv());

    const RunEnsemble ens = load_wave_runs(run_dir, k, cfg);
    WaveValues wv;
    wv.wave = k;
    wv.stats = summarize(ens, false);
    wv.outputs = m.outputs;
    for (const auto& d : m.dropped) wv.outputs.push_back(d);
    values.push_back(std::move(wv));
  }
  write_file_atomic(out / "metrics_summary.txt", summary.str());
  write_file_atomic(out / "wave_values.csv", export_wave_values(values));
  write_file_atomic(out / "targets.csv", export_targets(cfg.targets));
  std::cout << summary.str();
  return 0;
}

int cmd_baseline(const std::string& cfg_path, const std::string& dir, std::size_t budget, std::size_t reps,
                 const Common& c) {
  RunConfig cfg = load_config(cfg_path, c);
  const fs::path run_dir = dir.empty() ? fs::path(cfg.dir) : fs::path(dir);
  auto sim = make_simulator(cfg);
  BaselineOptions bo;
  bo.budget = budget;
  bo.reps = reps;
  const BaselineResult r = baseline_optimize(*sim, cfg.space, cfg.targets, bo, cfg.seed);
  DesignBatch batch;
  batch.points = r.final_points;
  write_file_atomic(run_dir / "baseline" / "points.csv", design_to_csv(batch, cfg.space));
  CsvWriter w({"evaluation", "loss"});
  for (std::size_t i = 0; i < r.loss_trace.size(); ++i) w.cell(i).cell(r.loss_trace[i]).end_row();
  write_file_atomic(run_dir / "baseline" / "loss_trace.csv", w.text());
  std::cout << "evaluations = " << r.evaluations << "\nbest_loss = " << format_double(r.best_loss) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"wavecal: Bayes linear emulation and history matching for stochastic simulators"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Override the configured seed");
  app.add_option("--workers", common.workers, "Worker threads (default: machine parallelism)");

  std::string cfg_path, dir, out;
  fs::path run_dir;
  std::size_t k = 0, n = 0, budget = 1000, reps = 2;
  double cutoff = 0.0;

  auto* run = app.add_subcommand("run", "Run waves until a stopping condition");
  run->add_option("config", cfg_path)->required()->check(CLI::ExistingFile);
  run->add_option("--dir", dir, "Run directory (default: from config)");

  auto* wave = app.add_subcommand("wave", "Run a single wave");
  wave->add_option("config", cfg_path)->required()->check(CLI::ExistingFile);
  wave->add_option("--k", k, "Wave number, from 1")->required()->check(CLI::PositiveNumber);
  wave->add_option("--dir", dir, "Run directory (default: from config)");

  auto* prop = app.add_subcommand("propose", "Propose points from the current region");
  prop->add_option("rundir", run_dir)->required()->check(CLI::ExistingDirectory);
  prop->add_option("--n", n, "Number of points")->required()->check(CLI::PositiveNumber);
  auto* cutoff_opt = prop->add_option("--cutoff", cutoff, "Cutoff of the last wave");
  prop->add_option("--out", out, "File name inside the run directory (default: proposal.csv)");

  auto* val = app.add_subcommand("validate", "Recompute a wave's validation diagnostics");
  val->add_option("rundir", run_dir)->required()->check(CLI::ExistingDirectory);
  val->add_option("--wave", k, "Wave number")->required()->check(CLI::PositiveNumber);

  auto* rep = app.add_subcommand("report", "Write metrics, effect strengths and wave-values exports");
  rep->add_option("rundir", run_dir)->required()->check(CLI::ExistingDirectory);

  auto* base = app.add_subcommand("baseline-opt", "Random-restart optimiser for comparison");
  base->add_option("config", cfg_path)->required()->check(CLI::ExistingFile);
  base->add_option("--dir", dir, "Run directory (default: from config)");
  base->add_option("--budget", budget, "Simulator realisations")->check(CLI::PositiveNumber);
  base->add_option("--reps", reps, "Realisations per evaluation")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  if (seed_opt->count()) common.seed = seed;

  try {
    if (*run) return cmd_run(cfg_path, dir, common);
    if (*wave) return cmd_wave(cfg_path, dir, k, common);
    if (*prop) {
      return cmd_propose(run_dir, n, cutoff_opt->count() ? std::optional<double>(cutoff) : std::nullopt, out,
                         common);
    }
    if (*val) return cmd_validate(run_dir, k, common);
    if (*rep) return cmd_report(run_dir, common);
    if (*base) return cmd_baseline(cfg_path, dir, budget, reps, common);
  } catch (const EmptyRegion& e) {
    std::cerr << "empty region: " << e.what() << '\n';
    return kExitEmpty;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
