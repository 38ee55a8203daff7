#include "wavecal/config.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "wavecal/csv.hpp"
#include "wavecal/error.hpp"

namespace wavecal {
namespace {

struct Ctx {
  std::string source;
  std::size_t line = 0;

  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError(source + ":" + std::to_string(line) + ": " + msg);
  }
};

double number(const Ctx& ctx, std::string_view s) {
  try {
    const double v = parse_double(s);
    if (!std::isfinite(v)) ctx.fail("non-finite number '" + std::string(s) + "'");
    return v;
  } catch (const ParseError&) {
    ctx.fail("expected a number, got '" + trim(s) + "'");
  }
}

std::size_t count(const Ctx& ctx, std::string_view s) {
  try {
    const long long v = parse_int(s);
    if (v < 0) ctx.fail("expected a non-negative integer, got '" + trim(s) + "'");
    return static_cast<std::size_t>(v);
  } catch (const ParseError&) {
    ctx.fail("expected an integer, got '" + trim(s) + "'");
  }
}

bool boolean(const Ctx& ctx, std::string_view s) {
  const std::string t = trim(s);
  if (t == "true" || t == "yes" || t == "1") return true;
  if (t == "false" || t == "no" || t == "0") return false;
  ctx.fail("expected true or false, got '" + t + "'");
}

std::vector<std::string> list(std::string_view s) {
  std::string t = trim(s);
  if (t.size() >= 2 && t.front() == '[' && t.back() == ']') t = t.substr(1, t.size() - 2);
  if (trim(t).empty()) return {};
  return split(t, ',');
}

std::vector<double> numbers(const Ctx& ctx, std::string_view s) {
  std::vector<double> out;
  for (const auto& item : list(s)) out.push_back(number(ctx, item));
  return out;
}

/// "[lo, hi]" with exactly two entries.
std::pair<double, double> range(const Ctx& ctx, std::string_view s) {
  const std::string t = trim(s);
  if (t.size() < 2 || t.front() != '[' || t.back() != ']') ctx.fail("expected a range '[lo, hi]', got '" + t + "'");
  const auto v = numbers(ctx, t);
  if (v.size() != 2) ctx.fail("a range needs exactly two bounds");
  return {v[0], v[1]};
}

bool valid_measure(const std::string& m) {
  if (m == "max" || m == "multivariate") return true;
  if (m.size() > 3 && m.rfind("max", 0) == 0) {
    return std::all_of(m.begin() + 3, m.end(), [](char c) { return c >= '0' && c <= '9'; }) && std::stoul(m.substr(3)) >= 1;
  }
  return false;
}

Target parse_target(const Ctx& ctx, const std::string& name, const std::string& value) {
  const std::string v = trim(value);
  if (v.rfind("interval", 0) == 0) {
    const auto open = v.find('['), close = v.find(']');
    if (open == std::string::npos || close == std::string::npos || close < open) {
      ctx.fail("target '" + name + "': interval needs '[lo, hi]'");
    }
    if (trim(v.substr(8, open - 8)) != "") ctx.fail("target '" + name + "': unexpected text before the interval");
    const auto [lo, hi] = range(ctx, v.substr(open, close - open + 1));
    if (lo > hi) ctx.fail("target '" + name + "': interval lower bound exceeds upper bound");
    std::optional<double> disc, k;
    std::string rest = trim(v.substr(close + 1));
    if (!rest.empty()) {
      if (rest.front() != ',') ctx.fail("target '" + name + "': expected ',' after the interval");
      for (const auto& field : split(rest.substr(1), ',')) {
        const auto sp = field.find(' ');
        const std::string key = field.substr(0, sp);
        const std::string val = sp == std::string::npos ? "" : trim(field.substr(sp));
        if (key == "disc_sd" && !disc) {
          disc = number(ctx, val);
        } else if (key == "sigma_k" && !k) {
          k = number(ctx, val);
        } else {
          ctx.fail("target '" + name + "': unexpected field '" + field + "'");
        }
      }
    }
    if (!disc) ctx.fail("target '" + name + "': missing disc_sd");
    if (*disc < 0.0) ctx.fail("target '" + name + "': negative disc_sd");
    if (k && !(*k > 0.0)) ctx.fail("target '" + name + "': sigma_k must be positive");
    return Target::interval(name, lo, hi, *disc, k.value_or(3.0));
  }
  if (v.rfind("mean", 0) == 0) {
    std::optional<double> mean, sd, disc;
    for (const auto& field : split(v, ',')) {
      const auto sp = field.find(' ');
      const std::string key = field.substr(0, sp);
      const std::string val = sp == std::string::npos ? "" : trim(field.substr(sp));
      std::optional<double>* slot = key == "mean" ? &mean : key == "sd" ? &sd : key == "disc_sd" ? &disc : nullptr;
      if (!slot || slot->has_value()) ctx.fail("target '" + name + "': unexpected field '" + field + "'");
      *slot = number(ctx, val);
    }
    if (!mean || !sd || !disc) ctx.fail("target '" + name + "': mean form needs mean, sd and disc_sd");
    if (*sd < 0.0) ctx.fail("target '" + name + "': negative sd");
    if (*disc < 0.0) ctx.fail("target '" + name + "': negative disc_sd");
    return Target::mean_sd(name, *mean, *sd, *disc);
  }
  ctx.fail("target '" + name + "': expected 'interval [lo, hi], disc_sd s' or 'mean m, sd s, disc_sd s'");
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? ", " : "") + items[i];
  return out;
}

std::string join_numbers(const std::vector<double>& v) {
  std::vector<std::string> s;
  for (double x : v) s.push_back(format_double(x));
  return join(s);
}

}  // namespace

std::size_t WaveConfig::reps_for(std::size_t wave) const {
  return reps.at(std::min(wave, reps.size()) - 1);
}

bool WaveConfig::covariance_for(std::size_t wave) const {
  return covariance.at(std::min(wave, covariance.size()) - 1);
}

ImplausibilitySpec WaveConfig::spec_for(std::size_t wave, std::size_t m) const {
  const std::string& mname = measure.at(std::min(wave, measure.size()) - 1);
  const auto& cut = cutoff.at(std::min(wave, cutoff.size()) - 1);
  ImplausibilitySpec spec;
  if (mname == "multivariate") {
    spec.kind = ImplausibilitySpec::Kind::multivariate;
    spec.cutoff = cut ? *cut : default_multivariate_cutoff(std::max<std::size_t>(m, 1));
  } else {
    spec.kind = ImplausibilitySpec::Kind::nth_max;
    spec.n = mname == "max" ? 1 : std::stoul(mname.substr(3));
    spec.cutoff = cut ? *cut : 3.0;
  }
  return spec;
}

const Target& RunConfig::target(const std::string& output) const {
  for (const auto& t : targets) {
    if (t.output == output) return t;
  }
  throw DomainError("no target for output '" + output + "'");
}

RunConfig parse_config_text(std::string_view text, const std::string& source) {
  RunConfig cfg;
  Ctx ctx{source, 0};
  std::string section;
  std::set<std::string> sections_seen;
  std::set<std::string> keys_seen;
  std::vector<Dimension> dims;
  std::set<std::string> target_names;

  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++ctx.line;
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[' && line.back() == ']' && line.find('=') == std::string::npos) {
      section = trim(line.substr(1, line.size() - 2));
      static const std::set<std::string> known{"run", "parameters", "targets", "waves", "simulator"};
      if (!known.count(section)) ctx.fail("unknown section [" + section + "]");
      if (!sections_seen.insert(section).second) ctx.fail("duplicate section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) ctx.fail("expected 'key = value'");
    if (section.empty()) ctx.fail("key outside any section");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) ctx.fail("empty key");
    if (!keys_seen.insert(section + "." + key).second) ctx.fail("duplicate key '" + key + "' in [" + section + "]");

    if (section == "parameters") {
      const auto [lo, hi] = range(ctx, value);
      if (!(lo < hi)) ctx.fail("parameter '" + key + "': lower bound must be below upper bound");
      dims.push_back({key, lo, hi});
    } else if (section == "targets") {
      Target t = parse_target(ctx, key, value);
      if (t.form == TargetForm::interval && t.lo == t.hi) {
        if (!(t.disc_sd > 0.0)) ctx.fail("target '" + key + "': degenerate interval needs disc_sd > 0");
        cfg.warnings.push_back(source + ":" + std::to_string(ctx.line) + ": target '" + key +
                               "' has a zero-width interval (zero observation variance)");
      }
      if (t.form == TargetForm::mean_sd && t.sd == 0.0 && !(t.disc_sd > 0.0)) {
        ctx.fail("target '" + key + "': zero sd needs disc_sd > 0");
      }
      target_names.insert(key);
      cfg.targets.push_back(std::move(t));
    } else if (section == "run") {
      if (key == "seed") {
        try {
          std::size_t pos = 0;
          cfg.seed = std::stoull(value, &pos);
          if (pos != value.size() || value.front() == '-') throw std::invalid_argument("seed");
        } catch (const std::exception&) {
          ctx.fail("seed must be a non-negative integer");
        }
      } else if (key == "workers") {
        cfg.workers = count(ctx, value);
      } else if (key == "dir") {
        if (value.empty()) ctx.fail("dir must not be empty");
        cfg.dir = value;
      } else {
        ctx.fail("unknown key '" + key + "' in [run]");
      }
    } else if (section == "waves") {
      auto& w = cfg.waves;
      if (key == "n_design") {
        w.n_design = count(ctx, value);
      } else if (key == "train_fraction") {
        w.train_fraction = number(ctx, value);
        if (!(w.train_fraction > 0.0 && w.train_fraction < 1.0)) ctx.fail("train_fraction must lie in (0, 1)");
      } else if (key == "reps") {
        w.reps.clear();
        for (const auto& item : list(value)) {
          const std::size_t r = count(ctx, item);
          if (r == 0) ctx.fail("reps must be positive");
          w.reps.push_back(r);
        }
        if (w.reps.empty()) ctx.fail("reps needs at least one entry");
      } else if (key == "measure") {
        w.measure = list(value);
        if (w.measure.empty()) ctx.fail("measure needs at least one entry");
        for (const auto& m : w.measure) {
          if (!valid_measure(m)) ctx.fail("unknown measure '" + m + "' (use max, maxN or multivariate)");
        }
      } else if (key == "cutoff") {
        w.cutoff.clear();
        for (const auto& item : list(value)) {
          if (item == "auto") {
            w.cutoff.emplace_back();
          } else {
            const double c = number(ctx, item);
            if (!(c > 0.0)) ctx.fail("cutoff must be positive");
            w.cutoff.emplace_back(c);
          }
        }
        if (w.cutoff.empty()) ctx.fail("cutoff needs at least one entry");
      } else if (key == "covariance") {
        w.covariance.clear();
        for (const auto& item : list(value)) w.covariance.push_back(boolean(ctx, item));
        if (w.covariance.empty()) ctx.fail("covariance needs at least one entry");
      } else if (key.rfind("outputs.", 0) == 0) {
        const std::size_t k = count(ctx, key.substr(8));
        if (k == 0) ctx.fail("wave numbers start at 1");
        w.outputs[k] = list(value);
      } else if (key == "max_waves") {
        w.max_waves = count(ctx, value);
        if (w.max_waves == 0) ctx.fail("max_waves must be positive");
      } else if (key == "n_candidates") {
        w.n_candidates = count(ctx, value);
      } else if (key == "n_importance") {
        w.n_importance = count(ctx, value);
      } else if (key == "ray_pairs") {
        w.ray_pairs = count(ctx, value);
      } else if (key == "radius_mult") {
        w.radius_mult = number(ctx, value);
        if (!(w.radius_mult > 0.0)) ctx.fail("radius_mult must be positive");
      } else if (key == "anneal") {
        w.anneal = numbers(ctx, value);
        if (w.anneal.empty() || w.anneal.back() != 1.0) ctx.fail("anneal factors must end at 1");
        for (std::size_t i = 1; i < w.anneal.size(); ++i) {
          if (!(w.anneal[i] < w.anneal[i - 1])) ctx.fail("anneal factors must be strictly decreasing");
        }
      } else if (key == "n_volume") {
        w.n_volume = count(ctx, value);
      } else if (key == "max_degree") {
        w.max_degree = static_cast<int>(count(ctx, value));
      } else if (key == "f_threshold") {
        w.f_threshold = number(ctx, value);
      } else if (key == "delta") {
        w.delta = number(ctx, value);
        if (!(w.delta >= 0.0 && w.delta <= 1.0)) ctx.fail("delta must lie in [0, 1]");
      } else if (key == "yield_threshold") {
        w.yield_threshold = number(ctx, value);
      } else if (key == "variance_share_threshold") {
        w.variance_share_threshold = number(ctx, value);
      } else if (key == "failure_threshold") {
        w.failure_threshold = number(ctx, value);
      } else if (key == "stability_output") {
        w.stability_output = value;
      } else {
        ctx.fail("unknown key '" + key + "' in [waves]");
      }
    } else if (section == "simulator") {
      auto& s = cfg.simulator;
      if (key == "kind") {
        if (value != "builtin" && value != "external") ctx.fail("simulator kind must be builtin or external");
        s.kind = value;
      } else if (key == "outputs") {
        s.outputs = list(value);
      } else if (key == "family") {
        s.family = value;
      } else if (key.rfind("param.", 0) == 0) {
        s.params[key.substr(6)] = numbers(ctx, value);
      } else if (key == "command") {
        s.command = value;
      } else if (key == "timeout") {
        s.timeout_s = number(ctx, value);
        if (!(s.timeout_s > 0.0)) ctx.fail("timeout must be positive");
      } else if (key == "max_in_flight") {
        s.max_in_flight = count(ctx, value);
      } else if (key.rfind("env.", 0) == 0) {
        s.env[key.substr(4)] = value;
      } else {
        ctx.fail("unknown key '" + key + "' in [simulator]");
      }
    }
  }

  ctx.line = 0;
  if (dims.empty()) ctx.fail("empty parameter table");
  try {
    cfg.space = ParameterSpace(std::move(dims));
  } catch (const DomainError& e) {
    ctx.fail(e.what());
  }
  if (cfg.targets.empty()) ctx.fail("empty target table");
  if (cfg.simulator.outputs.empty()) ctx.fail("simulator declares no outputs");
  {
    std::set<std::string> outs(cfg.simulator.outputs.begin(), cfg.simulator.outputs.end());
    if (outs.size() != cfg.simulator.outputs.size()) ctx.fail("duplicate simulator output names");
    for (const auto& t : cfg.targets) {
      if (!outs.count(t.output)) ctx.fail("target '" + t.output + "' is not a simulator output");
    }
    for (const auto& [k, names] : cfg.waves.outputs) {
      for (const auto& n : names) {
        if (!target_names.count(n)) ctx.fail("wave " + std::to_string(k) + " includes '" + n + "', which has no target");
      }
    }
    if (!cfg.waves.stability_output.empty() && !outs.count(cfg.waves.stability_output)) {
      ctx.fail("stability_output '" + cfg.waves.stability_output + "' is not a simulator output");
    }
  }
  if (cfg.simulator.kind == "builtin" && cfg.simulator.family.empty()) ctx.fail("builtin simulator needs a family");
  if (cfg.simulator.kind == "external" && cfg.simulator.command.empty()) ctx.fail("external simulator needs a command");
  if (cfg.waves.n_design < 3) ctx.fail("n_design must be at least 3");
  return cfg;
}

RunConfig parse_config(const std::filesystem::path& path) {
  return parse_config_text(read_file(path), path.string());
}

std::string serialize_config(const RunConfig& cfg) {
  std::ostringstream os;
  os << "[run]\n";
  os << "seed = " << cfg.seed << "\n";
  os << "workers = " << cfg.workers << "\n";
  os << "dir = " << cfg.dir << "\n\n";

  os << "[parameters]\n";
  for (const auto& d : cfg.space.dims()) {
    os << d.name << " = [" << format_double(d.lo) << ", " << format_double(d.hi) << "]\n";
  }
  os << "\n[targets]\n";
  for (const auto& t : cfg.targets) {
    os << t.output << " = ";
    if (t.form == TargetForm::interval) {
      os << "interval [" << format_double(t.lo) << ", " << format_double(t.hi) << "], disc_sd "
         << format_double(t.disc_sd);
      if (t.sigma_k != 3.0) os << ", sigma_k " << format_double(t.sigma_k);
    } else {
      os << "mean " << format_double(t.mean) << ", sd " << format_double(t.sd) << ", disc_sd "
         << format_double(t.disc_sd);
    }
    os << "\n";
  }

  const auto& w = cfg.waves;
  os << "\n[waves]\n";
  os << "n_design = " << w.n_design << "\n";
  os << "train_fraction = " << format_double(w.train_fraction) << "\n";
  {
    std::vector<std::string> r;
    for (auto v : w.reps) r.push_back(std::to_string(v));
    os << "reps = " << join(r) << "\n";
  }
  os << "measure = " << join(w.measure) << "\n";
  {
    std::vector<std::string> c;
    for (const auto& v : w.cutoff) c.push_back(v ? format_double(*v) : "auto");
    os << "cutoff = " << join(c) << "\n";
  }
  {
    std::vector<std::string> c;
    for (bool b : w.covariance) c.push_back(b ? "true" : "false");
    os << "covariance = " << join(c) << "\n";
  }
  for (const auto& [k, names] : w.outputs) os << "outputs." << k << " = " << join(names) << "\n";
  os << "max_waves = " << w.max_waves << "\n";
  os << "n_candidates = " << w.n_candidates << "\n";
  os << "n_importance = " << w.n_importance << "\n";
  os << "ray_pairs = " << w.ray_pairs << "\n";
  os << "radius_mult = " << format_double(w.radius_mult) << "\n";
  os << "anneal = " << join_numbers(w.anneal) << "\n";
  os << "n_volume = " << w.n_volume << "\n";
  os << "max_degree = " << w.max_degree << "\n";
  os << "f_threshold = " << format_double(w.f_threshold) << "\n";
  os << "delta = " << format_double(w.delta) << "\n";
  os << "yield_threshold = " << format_double(w.yield_threshold) << "\n";
  os << "variance_share_threshold = " << format_double(w.variance_share_threshold) << "\n";
  os << "failure_threshold = " << format_double(w.failure_threshold) << "\n";
  if (!w.stability_output.empty()) os << "stability_output = " << w.stability_output << "\n";

  const auto& s = cfg.simulator;
  os << "\n[simulator]\n";
  os << "kind = " << s.kind << "\n";
  os << "outputs = " << join(s.outputs) << "\n";
  if (!s.family.empty()) os << "family = " << s.family << "\n";
  for (const auto& [k, v] : s.params) os << "param." << k << " = " << join_numbers(v) << "\n";
  if (!s.command.empty()) os << "command = " << s.command << "\n";
  os << "timeout = " << format_double(s.timeout_s) << "\n";
  os << "max_in_flight = " << s.max_in_flight << "\n";
  for (const auto& [k, v] : s.env) os << "env." << k << " = " << v << "\n";
  return os.str();
}

std::unique_ptr<Simulator> make_simulator(const RunConfig& cfg) {
  const auto& s = cfg.simulator;
  if (s.kind == "builtin") return make_builtin(s.family, s.outputs, cfg.space.size(), s.params);
  ExternalOptions opts;
  opts.command = s.command;
  opts.param_names = cfg.space.names();
  opts.outputs = s.outputs;
  opts.env = s.env;
  opts.timeout = std::chrono::milliseconds(static_cast<long long>(s.timeout_s * 1000.0));
  opts.max_in_flight = s.max_in_flight;
  return std::make_unique<ExternalSimulator>(std::move(opts));
}

}  // namespace wavecal
