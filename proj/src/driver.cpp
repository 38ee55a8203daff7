#include "wavecal/driver.hpp"

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <limits>
#include <map>
#include <nlohmann/json.hpp>
#include <numeric>
#include <set>
#include <sstream>

#include "wavecal/csv.hpp"
#include "wavecal/emulator_io.hpp"
#include "wavecal/error.hpp"
#include "wavecal/rng.hpp"

namespace wavecal {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kWaveFormatVersion = 1;
constexpr const char* kEmulatorFile = "emulators.v1.txt";

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += v[i];
  }
  return s;
}

std::vector<std::string> split_list(std::string_view s) {
  if (trim(s).empty()) return {};
  return split(s, ',');
}

std::string measure_name(const ImplausibilitySpec& spec) {
  if (spec.kind == ImplausibilitySpec::Kind::multivariate) return "multivariate";
  return spec.n == 1 ? "max" : "max" + std::to_string(spec.n);
}

json fourth_to_json(const FourthOrder& f) {
  return json{{"c_ab", f.c_ab}, {"c_ab_m", f.c_ab_m}, {"cov_m_aa_bb", f.cov_m_aa_bb},
              {"c_aa", f.c_aa}, {"c_bb", f.c_bb},     {"c_r", f.c_r}};
}

FourthOrder fourth_from_json(const json& j) {
  FourthOrder f;
  f.c_ab = j.at("c_ab").get<double>();
  f.c_ab_m = j.at("c_ab_m").get<double>();
  f.cov_m_aa_bb = j.at("cov_m_aa_bb").get<double>();
  f.c_aa = j.at("c_aa").get<double>();
  f.c_bb = j.at("c_bb").get<double>();
  f.c_r = j.at("c_r").get<double>();
  return f;
}

// Split of n successful points; at least one hold-out point when n > 3.
std::vector<char> split_roles(std::size_t n, double train_fraction, std::uint64_t seed) {
  std::size_t n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  n_train = std::min(n_train, n > 3 ? n - 1 : n);
  n_train = std::max(n_train, std::min<std::size_t>(n, 3));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<char> train(n, 0);
  for (std::size_t i = 0; i < n_train; ++i) train[idx[i]] = 1;
  return train;
}

RunEnsemble subset(const RunEnsemble& ens, const std::vector<char>& keep, char want) {
  RunEnsemble out;
  out.outputs = ens.outputs;
  out.design.provenance = ens.design.provenance;
  for (std::size_t l = 0; l < ens.values.size(); ++l) {
    if (keep[l] != want) continue;
    out.design.points.push_back(ens.design.points[l]);
    out.values.push_back(ens.values[l]);
  }
  return out;
}

std::string design_with_roles(const DesignBatch& design, const std::vector<char>& train,
                              const ParameterSpace& space) {
  auto header = space.names();
  header.push_back("role");
  CsvWriter w(header);
  for (std::size_t i = 0; i < design.size(); ++i) {
    for (double v : design.points[i]) w.cell(v);
    w.cell(std::string_view(train[i] ? "train" : "validation"));
    w.end_row();
  }
  return w.text();
}

std::string failures_csv(const DesignBatch& batch, const Evaluation& ev, const ParameterSpace& space) {
  auto header = space.names();
  header.push_back("error");
  CsvWriter w(header);
  for (std::size_t i = 0; i < ev.failed.size(); ++i) {
    for (double v : batch.points[ev.failed[i]]) w.cell(v);
    std::string msg = ev.errors[i];
    std::replace(msg.begin(), msg.end(), ',', ';');
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    w.cell(std::string_view(msg));
    w.end_row();
  }
  return w.text();
}

struct OutputFit {
  bool ok = false;
  TrainedEmulator em;
  double fixed_stoch = 0.0;
  OutputValidation validation;
  std::string note;
};

}  // namespace

class RunLock {
 public:
  explicit RunLock(fs::path path) : path_(std::move(path)) {
    for (int attempt = 0; attempt < 2; ++attempt) {
      const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
      if (fd >= 0) {
        const std::string pid = std::to_string(::getpid()) + "\n";
        const auto written = ::write(fd, pid.data(), pid.size());
        ::close(fd);
        if (written != static_cast<ssize_t>(pid.size())) throw IoError("cannot write " + path_.string());
        return;
      }
      if (errno != EEXIST) throw IoError("cannot create " + path_.string());
      // A lock whose owner is gone is stale (a killed driver); take it over.
      long long owner = 0;
      try {
        owner = parse_int(read_file(path_));
      } catch (const Error&) {
        owner = 0;
      }
      const bool alive = owner > 0 && (::kill(static_cast<pid_t>(owner), 0) == 0 || errno == EPERM);
      if (alive) {
        throw IoError("run directory is locked by process " + std::to_string(owner) + " (" + path_.string() + ")");
      }
      fs::remove(path_);
    }
    throw IoError("cannot acquire " + path_.string());
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
};

// ---------------------------------------------------------------------------

VolumeEstimate estimate_volume_ratio(const RegionOracle& oracle, const ParameterSpace& space, std::size_t n_mc,
                                     std::uint64_t seed, const std::vector<Point>& retained) {
  if (n_mc < 1000) throw DomainError("volume estimate needs at least 1000 draws");
  const std::size_t d = space.size();
  Rng rng(seed);
  std::vector<Point> xs(n_mc, Point(d));
  for (auto& x : xs) {
    for (std::size_t j = 0; j < d; ++j) x[j] = space[j].lo + uniform01(rng) * (space[j].hi - space[j].lo);
  }
  const auto pass = oracle.pass(xs);
  VolumeEstimate v;
  v.n = n_mc;
  std::vector<const Point*> inside;
  for (std::size_t i = 0; i < n_mc; ++i) {
    if (pass[i]) inside.push_back(&xs[i]);
  }
  v.passed = inside.size();
  const double n = static_cast<double>(n_mc);
  const double p = static_cast<double>(v.passed) / n;
  v.ratio = p;
  const double z = 1.959963984540054;
  const double denom = 1.0 + z * z / n;
  const double centre = (p + z * z / (2.0 * n)) / denom;
  const double half = z / denom * std::sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n));
  v.lo = std::max(0.0, centre - half);
  v.hi = std::min(1.0, centre + half);

  if (inside.empty()) {
    for (const auto& r : retained) inside.push_back(&r);
  }
  if (inside.empty()) {
    v.bbox_bound = 0.0;
    return v;
  }
  double bound = 1.0;
  for (std::size_t j = 0; j < d; ++j) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const Point* x : inside) {
      lo = std::min(lo, (*x)[j]);
      hi = std::max(hi, (*x)[j]);
    }
    bound *= (hi - lo) / (space[j].hi - space[j].lo);
  }
  v.bbox_bound = bound;
  return v;
}

double compute_yield(const SampleStatistics& stats, const std::vector<Target>& targets) {
  const auto n = static_cast<std::size_t>(stats.means.rows());
  if (n == 0) throw DomainError("yield of an empty proposal");
  std::vector<std::size_t> cols;
  for (const auto& t : targets) cols.push_back(stats.output_index(t.output));
  std::size_t hits = 0;
  for (std::size_t l = 0; l < n; ++l) {
    bool all = true;
    for (std::size_t t = 0; t < targets.size() && all; ++t) {
      const double m = stats.means(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(cols[t]));
      all = m >= targets[t].band_lo() && m <= targets[t].band_hi();
    }
    hits += all ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

double ks_distance(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw DomainError("distribution distance needs two non-empty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double best = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    const double fa = static_cast<double>(i) / static_cast<double>(a.size());
    const double fb = static_cast<double>(j) / static_cast<double>(b.size());
    best = std::max(best, std::abs(fa - fb));
  }
  return best;
}

// ---------------------------------------------------------------------------

std::string WaveMetrics::to_text() const {
  std::ostringstream s;
  auto kv = [&](const char* k, const std::string& v) { s << k << " = " << v << '\n'; };
  kv("wave", std::to_string(wave));
  kv("n_design", std::to_string(n_design));
  kv("n_train", std::to_string(n_train));
  kv("n_validation", std::to_string(n_validation));
  kv("reps", std::to_string(reps));
  kv("failed_runs", std::to_string(failed_runs));
  kv("outputs", join(outputs));
  kv("dropped", join(dropped));
  kv("measure", measure);
  kv("cutoff", format_double(cutoff));
  kv("volume_ratio", format_double(volume.ratio));
  kv("volume_ratio_lo", format_double(volume.lo));
  kv("volume_ratio_hi", format_double(volume.hi));
  kv("volume_bbox_bound", format_double(volume.bbox_bound));
  kv("volume_draws", std::to_string(volume.n));
  kv("volume_passed", std::to_string(volume.passed));
  kv("proposed", std::to_string(proposed));
  kv("yield", format_double(yield));
  kv("variance_share_mean", format_double(var_share_mean));
  kv("variance_share_min", format_double(var_share_min));
  kv("variance_share_max", format_double(var_share_max));
  kv("adjusted_variance_share_mean", format_double(adj_share_mean));
  if (stability_distance) kv("stability_distance", format_double(*stability_distance));
  kv("stops", join(stops));
  return s.str();
}

WaveMetrics WaveMetrics::from_text(std::string_view text) {
  std::map<std::string, std::string> kv;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("metrics line without '=': " + line);
    kv[trim(std::string_view(line).substr(0, eq))] = trim(std::string_view(line).substr(eq + 1));
  }
  auto get = [&](const std::string& k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) throw ParseError("metrics missing key '" + k + "'");
    return it->second;
  };
  auto count = [&](const std::string& k) { return static_cast<std::size_t>(parse_int(get(k))); };
  WaveMetrics m;
  m.wave = count("wave");
  m.n_design = count("n_design");
  m.n_train = count("n_train");
  m.n_validation = count("n_validation");
  m.reps = count("reps");
  m.failed_runs = count("failed_runs");
  m.outputs = split_list(get("outputs"));
  m.dropped = split_list(get("dropped"));
  m.measure = get("measure");
  m.cutoff = parse_double(get("cutoff"));
  m.volume.ratio = parse_double(get("volume_ratio"));
  m.volume.lo = parse_double(get("volume_ratio_lo"));
  m.volume.hi = parse_double(get("volume_ratio_hi"));
  m.volume.bbox_bound = parse_double(get("volume_bbox_bound"));
  m.volume.n = count("volume_draws");
  m.volume.passed = count("volume_passed");
  m.proposed = count("proposed");
  m.yield = parse_double(get("yield"));
  m.var_share_mean = parse_double(get("variance_share_mean"));
  m.var_share_min = parse_double(get("variance_share_min"));
  m.var_share_max = parse_double(get("variance_share_max"));
  m.adj_share_mean = parse_double(get("adjusted_variance_share_mean"));
  if (kv.count("stability_distance")) m.stability_distance = parse_double(kv["stability_distance"]);
  m.stops = split_list(get("stops"));
  return m;
}

bool StoppingReport::empty_region() const {
  return std::find(conditions.begin(), conditions.end(), "empty_region") != conditions.end();
}

// ---------------------------------------------------------------------------

fs::path wave_dir(const fs::path& run_dir, std::size_t k) { return run_dir / ("wave_" + std::to_string(k)); }

bool wave_complete(const fs::path& run_dir, std::size_t k) { return fs::exists(wave_dir(run_dir, k) / "metrics.txt"); }

std::size_t count_complete_waves(const fs::path& run_dir) {
  std::size_t k = 0;
  while (wave_complete(run_dir, k + 1)) ++k;
  return k;
}

void save_wave_emulators(const fs::path& path, const WaveEmulators& wave, std::size_t k,
                         const std::vector<std::string>& dropped) {
  json j;
  j["format"] = "wavecal-wave";
  j["version"] = kWaveFormatVersion;
  j["wave"] = k;
  j["outputs"] = wave.outputs;
  j["dropped"] = dropped;
  j["spec"] = {{"kind", wave.spec.kind == ImplausibilitySpec::Kind::multivariate ? "multivariate" : "nth_max"},
               {"n", wave.spec.n},
               {"cutoff", wave.spec.cutoff}};
  j["fixed_stoch_var"] = wave.fixed_stoch_var;
  j["emulators"] = json::array();
  for (const auto& em : wave.emulators) j["emulators"].push_back(emulator_to_json(em));
  if (wave.cem) {
    json c;
    c["outputs"] = wave.cem->outputs;
    c["pairs"] = json::array();
    for (const auto& p : wave.cem->pairs) {
      c["pairs"].push_back({{"a", p.a}, {"b", p.b}, {"fourth", fourth_to_json(p.fourth)},
                            {"emulator", emulator_to_json(p.em)}});
    }
    j["cem"] = std::move(c);
  } else {
    j["cem"] = nullptr;
  }
  write_file_atomic(path, j.dump(1) + "\n");
}

std::shared_ptr<WaveEmulators> load_wave_emulators(const fs::path& path, const RunConfig& cfg) {
  json j;
  try {
    j = json::parse(read_file(path));
    if (j.at("format").get<std::string>() != "wavecal-wave") throw ParseError("not a wave emulator file");
    if (j.at("version").get<int>() != kWaveFormatVersion) {
      throw ParseError("unsupported wave emulator version " + std::to_string(j.at("version").get<int>()));
    }
    auto w = std::make_shared<WaveEmulators>();
    w->outputs = j.at("outputs").get<std::vector<std::string>>();
    for (const auto& name : w->outputs) w->targets.push_back(cfg.target(name));
    const auto& s = j.at("spec");
    w->spec.kind = s.at("kind").get<std::string>() == "multivariate" ? ImplausibilitySpec::Kind::multivariate
                                                                       : ImplausibilitySpec::Kind::nth_max;
    w->spec.n = s.at("n").get<std::size_t>();
    w->spec.cutoff = s.at("cutoff").get<double>();
    w->fixed_stoch_var = j.at("fixed_stoch_var").get<std::vector<double>>();
    for (const auto& e : j.at("emulators")) w->emulators.push_back(emulator_from_json(e));
    if (!j.at("cem").is_null()) {
      CovarianceEmulator cem;
      cem.outputs = j["cem"].at("outputs").get<std::vector<std::string>>();
      for (const auto& p : j["cem"].at("pairs")) {
        CovariancePair cp;
        cp.a = p.at("a").get<std::size_t>();
        cp.b = p.at("b").get<std::size_t>();
        cp.fourth = fourth_from_json(p.at("fourth"));
        cp.em = emulator_from_json(p.at("emulator"));
        cem.pairs.push_back(std::move(cp));
      }
      w->cem = std::move(cem);
    }
    w->check();
    return w;
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::vector<std::shared_ptr<const WaveEmulators>> load_cascade(const fs::path& run_dir, const RunConfig& cfg,
                                                               std::size_t upto) {
  std::vector<std::shared_ptr<const WaveEmulators>> out;
  for (std::size_t k = 1; k <= upto; ++k) out.push_back(load_wave_emulators(wave_dir(run_dir, k) / kEmulatorFile, cfg));
  return out;
}

WaveDesign load_wave_design(const fs::path& run_dir, std::size_t k, const ParameterSpace& space) {
  const std::string text = read_file(wave_dir(run_dir, k) / "design.csv");
  WaveDesign wd;
  wd.design = design_from_csv(text, space);
  const CsvTable t = parse_csv(text);
  const std::size_t c = t.column("role");
  for (const auto& row : t.rows) {
    if (row[c] != "train" && row[c] != "validation") throw ParseError("unknown design role '" + row[c] + "'");
    wd.train.push_back(row[c] == "train" ? 1 : 0);
  }
  return wd;
}

RunEnsemble load_wave_runs(const fs::path& run_dir, std::size_t k, const RunConfig& cfg) {
  auto wd = load_wave_design(run_dir, k, cfg.space);
  return ensemble_from_csv(read_file(wave_dir(run_dir, k) / "runs.csv"), std::move(wd.design),
                           cfg.simulator.outputs);
}

// ---------------------------------------------------------------------------

Driver::Driver(RunConfig cfg, fs::path dir, std::size_t workers, std::unique_ptr<Simulator> sim)
    : cfg_(std::move(cfg)), dir_(std::move(dir)), workers_(std::max<std::size_t>(workers, 1)), sim_(std::move(sim)) {
  if (!sim_) throw DomainError("driver needs a simulator");
  fs::create_directories(dir_);
  lock_ = std::make_unique<RunLock>(dir_ / "run.lock");
  const std::string text = serialize_config(cfg_);
  const fs::path copy = dir_ / "config.cfg";
  if (fs::exists(copy)) {
    if (read_file(copy) != text) {
      throw IoError(dir_.string() + " holds a run with a different configuration");
    }
  } else {
    write_file_atomic(copy, text);
  }
}

Driver::~Driver() = default;

std::size_t Driver::completed_waves() const { return count_complete_waves(dir_); }

StoppingReport Driver::run() {
  StoppingReport report;
  std::size_t k = completed_waves();
  if (k > 0) {
    const auto last = WaveMetrics::from_text(read_file(wave_dir(dir_, k) / "metrics.txt"));
    if (!last.stops.empty()) {
      report.waves_completed = k;
      report.conditions = last.stops;
      return report;
    }
  }
  while (true) {
    ++k;
    const WaveMetrics m = run_wave(k);
    if (!m.stops.empty()) {
      report.waves_completed = k;
      report.conditions = m.stops;
      return report;
    }
  }
}

WaveMetrics Driver::run_wave(std::size_t k) {
  if (k == 0) throw DomainError("waves are numbered from 1");
  for (std::size_t j = 1; j < k; ++j) {
    if (!wave_complete(dir_, j)) throw IoError("wave " + std::to_string(j) + " is not complete");
  }
  const WaveConfig& wc = cfg_.waves;
  const ParameterSpace& space = cfg_.space;
  const fs::path wdir = wave_dir(dir_, k);
  fs::create_directories(wdir);
  const std::size_t reps = wc.reps_for(k);

  WaveMetrics metrics;
  metrics.wave = k;
  metrics.reps = reps;

  // Design and runs. Later waves reuse the yield runs of the previous
  // proposal, which were made with this wave's reps and seed.
  DesignBatch design;
  RunEnsemble ens;
  bool reused = false;
  if (k == 1) {
    design = lhs_design(space, wc.n_design, derive_seed(cfg_.seed, {1, tag(Stream::design)}));
  } else {
    const fs::path prev = wave_dir(dir_, k - 1);
    design = load_design(prev / "proposal.csv", space);
    const fs::path pruns = prev / "proposal_runs.csv";
    if (fs::exists(pruns) && !fs::exists(prev / "proposal_failures.csv")) {
      ens = ensemble_from_csv(read_file(pruns), design, sim_->outputs());
      ens.check();
      reused = !ens.values.empty() && ens.reps(0) == reps;
    }
  }
  if (!reused) {
    Evaluation ev = evaluate(*sim_, design, reps, derive_seed(cfg_.seed, {k, tag(Stream::simulate)}), workers_);
    metrics.failed_runs = ev.failed.size();
    if (!ev.failed.empty()) write_file_atomic(wdir / "failures.csv", failures_csv(design, ev, space));
    if (ev.failure_rate() > wc.failure_threshold) {
      write_file_atomic(wdir / "design.csv",
                        design_with_roles(ev.ensemble.design, std::vector<char>(ev.ensemble.design.size(), 1), space));
      write_file_atomic(wdir / "runs.csv", ensemble_to_csv(ev.ensemble));
      throw SimulatorError("wave " + std::to_string(k) + " aborted: " + std::to_string(ev.failed.size()) + " of " +
                           std::to_string(design.size()) + " points failed; partial results in " + wdir.string());
    }
    ens = std::move(ev.ensemble);
  }
  const std::size_t n = ens.values.size();
  if (n < 3) throw DomainError("wave " + std::to_string(k) + " has fewer than 3 usable design points");
  metrics.n_design = n;

  const auto train_flags = split_roles(n, wc.train_fraction, derive_seed(cfg_.seed, {k, tag(Stream::split)}));
  write_file_atomic(wdir / "design.csv", design_with_roles(ens.design, train_flags, space));
  write_file_atomic(wdir / "runs.csv", ensemble_to_csv(ens));
  const RunEnsemble train = subset(ens, train_flags, 1);
  const RunEnsemble hold = subset(ens, train_flags, 0);
  metrics.n_train = train.values.size();
  metrics.n_validation = hold.values.size();

  // Outputs of this wave: the configured list plus outputs re-queued by the
  // previous wave, or every target.
  std::vector<std::string> included;
  {
    std::vector<std::string> wanted;
    auto it = wc.outputs.find(k);
    if (it != wc.outputs.end()) {
      wanted = it->second;
      if (k > 1) {
        const auto prev = WaveMetrics::from_text(read_file(wave_dir(dir_, k - 1) / "metrics.txt"));
        for (const auto& d : prev.dropped) wanted.push_back(d);
      }
    } else {
      for (const auto& t : cfg_.targets) wanted.push_back(t.output);
    }
    std::set<std::string> want(wanted.begin(), wanted.end());
    for (const auto& t : cfg_.targets) {
      if (want.count(t.output)) included.push_back(t.output);
    }
  }

  const bool stochastic = reps >= 2;
  const SampleStatistics train_stats = summarize(train, stochastic);
  const SampleStatistics hold_stats = summarize(hold, stochastic);
  const double cutoff = wc.spec_for(k, included.size()).cutoff;

  std::optional<CovarianceEmulator> cem;
  if (stochastic && wc.covariance_for(k) && !included.empty()) {
    std::set<std::size_t> idx;
    for (const auto& name : included) idx.insert(train_stats.output_index(name));
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (const auto& p : select_pairs(train_stats, 0.3)) {
      if (idx.count(p.first) && idx.count(p.second)) pairs.push_back(p);
    }
    CovarianceOptions co;
    co.fit.max_degree = wc.max_degree;
    co.fit.f_threshold = wc.f_threshold;
    co.fit.delta = wc.delta;
    co.seed = derive_seed(cfg_.seed, {k, tag(Stream::bootstrap)});
    cem = train_covariance_emulators(train, train_stats, space, pairs, co);
  }

  auto fit_output = [&](std::size_t ai, const Target& target) {
    OutputFit best;
    std::vector<double> v_train(train.values.size(), 0.0), v_hold(hold.values.size(), 0.0);
    if (cem) {
      v_train = cem->predict_variance(ai, train.design.points);
      v_hold = cem->predict_variance(ai, hold.design.points);
    } else if (stochastic) {
      const Eigen::VectorXd s2 = train_stats.variances(ai);
      const double pooled = s2.mean();
      best.fixed_stoch = s2.maxCoeff();
      std::fill(v_train.begin(), v_train.end(), pooled);
      std::fill(v_hold.begin(), v_hold.end(), best.fixed_stoch);
    }
    std::vector<double> y(train.values.size());
    for (std::size_t l = 0; l < y.size(); ++l) {
      y[l] = train_stats.means(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(ai));
    }

    // Fixed ladder: as configured, then sigma2 x2, then the other basis degree.
    for (int rung = 0; rung < 3; ++rung) {
      FitOptions fo;
      fo.max_degree = rung == 2 ? (wc.max_degree >= 2 ? 1 : 2) : wc.max_degree;
      fo.f_threshold = wc.f_threshold;
      fo.delta = wc.delta;
      fo.sigma2_inflation = rung == 0 ? 1.0 : 2.0;
      try {
        EmulatorPrior prior = fit_prior(train_stats, space, ai, fo);
        Eigen::MatrixXd dv = inflate_mean_data_variance(prior_data_variance(prior, train.design.points), v_train,
                                                        train_stats.reps);
        TrainedEmulator em = adjust(std::move(prior), train.design,
                                    Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size())),
                                    std::move(dv));
        OutputValidation val;
        if (hold.values.empty()) {
          val.output = target.output;
          val.pass = true;
        } else {
          val = validate_output(em, target, cutoff, v_hold, hold_stats, ai);
        }
        best.validation = val;
        best.em = std::move(em);
        if (val.pass) {
          best.ok = true;
          return best;
        }
      } catch (const FitError& e) {
        best.note = e.what();
      } catch (const AdjustmentError& e) {
        best.note = e.what();
      }
    }
    best.validation.output = target.output;
    return best;
  };

  auto wave = std::make_shared<WaveEmulators>();
  std::vector<OutputValidation> rows;
  for (const auto& name : included) {
    const Target& target = cfg_.target(name);
    OutputFit f = fit_output(train_stats.output_index(name), target);
    rows.push_back(f.validation);
    if (!f.ok) {
      metrics.dropped.push_back(name);
      continue;
    }
    wave->outputs.push_back(name);
    wave->emulators.push_back(std::move(f.em));
    wave->targets.push_back(target);
    wave->fixed_stoch_var.push_back(f.fixed_stoch);
  }
  wave->cem = std::move(cem);
  wave->spec = wc.spec_for(k, wave->outputs.size());
  metrics.outputs = wave->outputs;
  metrics.measure = measure_name(wave->spec);
  metrics.cutoff = wave->spec.cutoff;
  write_file_atomic(wdir / "validation.csv", ValidationReport{rows}.to_csv());

  // The cascade always uses reloaded emulators so a resumed run sees exactly
  // the same numbers as an uninterrupted one.
  save_wave_emulators(wdir / kEmulatorFile, *wave, k, metrics.dropped);
  auto cascade = load_cascade(dir_, cfg_, k);
  const RegionOracle oracle = RegionOracle::from_waves(cascade, workers_);

  ProposalConfig pc;
  pc.n_target = wc.n_design;
  pc.n_candidates = wc.n_candidates;
  for (double a : wc.anneal) pc.cutoff_schedule.push_back(a * oracle.final_cutoff());
  pc.ray_pairs = wc.ray_pairs;
  pc.radius_mult = wc.radius_mult;
  pc.n_importance = wc.n_importance;

  std::optional<ProposalResult> prop;
  try {
    prop = propose(oracle, space, pc, derive_seed(cfg_.seed, {k, tag(Stream::proposal)}));
  } catch (const EmptyRegion&) {
    metrics.stops.push_back("empty_region");
  }
  metrics.volume = estimate_volume_ratio(oracle, space, wc.n_volume, derive_seed(cfg_.seed, {tag(Stream::volume)}),
                                         prop ? prop->batch.points : std::vector<Point>{});

  // Prior emulator variance relative to observation and discrepancy variance.
  if (!wave->outputs.empty()) {
    std::vector<double> share;
    for (std::size_t a = 0; a < wave->outputs.size(); ++a) {
      const Target& t = wave->targets[a];
      share.push_back(wave->emulators[a].prior().sigma2 / (t.obs_var() + t.disc_var()));
    }
    metrics.var_share_mean = std::accumulate(share.begin(), share.end(), 0.0) / static_cast<double>(share.size());
    metrics.var_share_min = *std::min_element(share.begin(), share.end());
    metrics.var_share_max = *std::max_element(share.begin(), share.end());
  }

  if (prop) {
    write_file_atomic(wdir / "proposal.csv", proposal_to_csv(*prop, space));
    write_file_atomic(wdir / "audit.txt", prop->audit.to_text());
    metrics.proposed = prop->batch.size();

    if (!wave->outputs.empty()) {
      double acc = 0.0;
      for (std::size_t a = 0; a < wave->outputs.size(); ++a) {
        const Target& t = wave->targets[a];
        const auto pred = wave->emulators[a].predict(prop->batch.points);
        for (double v : pred.variance) acc += v / (t.obs_var() + t.disc_var());
      }
      metrics.adj_share_mean = acc / static_cast<double>(wave->outputs.size() * prop->batch.size());
    }

    const std::size_t next_reps = wc.reps_for(k + 1);
    Evaluation ev =
        evaluate(*sim_, prop->batch, next_reps, derive_seed(cfg_.seed, {k + 1, tag(Stream::simulate)}), workers_);
    if (ev.failed.empty()) {
      write_file_atomic(wdir / "proposal_runs.csv", ensemble_to_csv(ev.ensemble));
    } else {
      write_file_atomic(wdir / "proposal_failures.csv", failures_csv(prop->batch, ev, space));
    }
    if (!ev.ensemble.values.empty()) {
      const SampleStatistics ps = summarize(ev.ensemble, false);
      metrics.yield = compute_yield(ps, cfg_.targets) * static_cast<double>(ev.ensemble.values.size()) /
                      static_cast<double>(prop->batch.size());

      if (!wc.stability_output.empty() && k > 1) {
        const fs::path prev = wave_dir(dir_, k - 1) / "proposal_runs.csv";
        if (fs::exists(prev)) {
          const auto prev_ens = ensemble_from_csv(read_file(prev), load_design(wave_dir(dir_, k - 1) / "proposal.csv", space),
                                                  sim_->outputs());
          const SampleStatistics qs = summarize(prev_ens, false);
          const auto a = ps.output_index(wc.stability_output);
          std::vector<double> cur, old;
          for (Eigen::Index l = 0; l < ps.means.rows(); ++l) cur.push_back(ps.means(l, static_cast<Eigen::Index>(a)));
          for (Eigen::Index l = 0; l < qs.means.rows(); ++l) old.push_back(qs.means(l, static_cast<Eigen::Index>(a)));
          metrics.stability_distance = ks_distance(std::move(cur), std::move(old));
        }
      }
    }
    if (metrics.yield >= wc.yield_threshold) metrics.stops.push_back("yield_threshold");
    if (!wave->outputs.empty() && metrics.var_share_mean <= wc.variance_share_threshold) {
      metrics.stops.push_back("emulator_variance_subdominant");
    }
  }
  if (k >= wc.max_waves) metrics.stops.push_back("max_waves");

  write_file_atomic(wdir / "metrics.txt", metrics.to_text());
  return metrics;
}

}  // namespace wavecal
