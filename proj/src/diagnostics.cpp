#include "wavecal/diagnostics.hpp"

#include <cmath>

#include "wavecal/csv.hpp"
#include "wavecal/error.hpp"

namespace wavecal {

bool validation_pass(const OutputValidation& v) {
  if (v.n == 0) return false;
  const double n = static_cast<double>(v.n);
  return static_cast<double>(v.comparison_failures) <= 0.10 * n && v.classification_failures == 0 &&
         static_cast<double>(v.large_errors) <= 0.05 * n;
}

bool ValidationReport::all_pass() const {
  for (const auto& o : outputs) {
    if (!o.pass) return false;
  }
  return true;
}

const OutputValidation& ValidationReport::find(const std::string& output) const {
  for (const auto& o : outputs) {
    if (o.output == output) return o;
  }
  throw DomainError("no validation for output '" + output + "'");
}

std::string ValidationReport::to_csv() const {
  CsvWriter w({"output", "n", "comparison_failures", "classification_failures", "large_errors", "pass"});
  for (const auto& o : outputs) {
    w.cell(std::string_view(o.output)).cell(o.n).cell(o.comparison_failures).cell(o.classification_failures);
    w.cell(o.large_errors).cell(o.pass ? 1 : 0).end_row();
  }
  return w.text();
}

OutputValidation validate_output(const TrainedEmulator& em, const Target& target, double cutoff,
                                 const std::vector<double>& stoch_var, const SampleStatistics& holdout,
                                 std::size_t holdout_output) {
  const std::size_t n = holdout.design.size();
  if (n == 0) throw ValidationError("empty hold-out set for output '" + target.output + "'");
  if (stoch_var.size() != n) throw DomainError("one stochastic variance per hold-out point is required");
  OutputValidation v;
  v.output = target.output;
  v.n = n;
  const Prediction pred = em.predict(holdout.design.points);
  for (std::size_t l = 0; l < n; ++l) {
    const double mu = holdout.means(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(holdout_output));
    const double sv = stoch_var[l];
    const double se = std::sqrt(pred.variance[l] + sv / static_cast<double>(holdout.reps[l]));
    const double diff = mu - pred.mean[l];
    const double e = se > 0.0 ? diff / se : (diff == 0.0 ? 0.0 : std::copysign(INFINITY, diff));
    v.std_errors.push_back(e);
    if (std::abs(e) > 3.0) ++v.large_errors;
    // The comparison band uses the point's own sample variance when the
    // hold-out has one, so it checks the data rather than the stochastic model.
    const double sv_cmp = holdout.has_covs()
                              ? holdout.covs[l](static_cast<Eigen::Index>(holdout_output), static_cast<Eigen::Index>(holdout_output))
                              : sv;
    if (std::abs(diff) > 3.0 * std::sqrt(pred.variance[l] + sv_cmp / static_cast<double>(holdout.reps[l]))) {
      ++v.comparison_failures;
    }
    const double i_em = implausibility_uni(pred.mean[l], pred.variance[l], sv, target);
    const double i_sim = implausibility_uni(mu, 0.0, sv, target);
    if (i_em > cutoff && i_sim <= cutoff) ++v.classification_failures;
  }
  v.pass = validation_pass(v);
  return v;
}

ValidationReport validate(const WaveEmulators& wave, const SampleStatistics& holdout) {
  wave.check();
  if (holdout.design.empty()) throw ValidationError("empty hold-out set");
  ValidationReport report;
  const Eigen::MatrixXd stoch = wave.stoch_variances(holdout.design.points);
  for (std::size_t a = 0; a < wave.outputs.size(); ++a) {
    const Eigen::RowVectorXd row = stoch.row(static_cast<Eigen::Index>(a));
    std::vector<double> sv(row.data(), row.data() + row.size());
    report.outputs.push_back(validate_output(wave.emulators[a], wave.targets[a], wave.spec.cutoff, sv, holdout,
                                             holdout.output_index(wave.outputs[a])));
  }
  return report;
}

std::string EffectStrength::to_csv() const {
  CsvWriter w({"output", "parameter", "linear", "quadratic"});
  for (std::size_t a = 0; a < outputs.size(); ++a) {
    for (std::size_t j = 0; j < parameters.size(); ++j) {
      w.cell(std::string_view(outputs[a])).cell(std::string_view(parameters[j]));
      w.cell(linear(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(j)));
      w.cell(quadratic(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(j))).end_row();
    }
  }
  return w.text();
}

EffectStrength effect_strength(const std::vector<std::string>& outputs, const std::vector<TrainedEmulator>& ems,
                               const std::vector<std::string>& parameters) {
  if (outputs.size() != ems.size()) throw DomainError("one emulator per output is required");
  EffectStrength es;
  es.outputs = outputs;
  es.parameters = parameters;
  const auto m = static_cast<Eigen::Index>(outputs.size());
  const auto d = static_cast<Eigen::Index>(parameters.size());
  es.linear = Eigen::MatrixXd::Zero(m, d);
  es.quadratic = Eigen::MatrixXd::Zero(m, d);
  for (Eigen::Index a = 0; a < m; ++a) {
    const auto& prior = ems[static_cast<std::size_t>(a)].prior();
    for (std::size_t t = 0; t < prior.basis.size(); ++t) {
      const auto& exps = prior.basis.terms[t];
      int total = 0;
      std::size_t var = 0;
      int nonzero = 0;
      for (std::size_t k = 0; k < exps.size(); ++k) {
        total += exps[k];
        if (exps[k] > 0) {
          ++nonzero;
          var = prior.active[k];
        }
      }
      if (nonzero != 1) continue;
      if (total == 1) es.linear(a, static_cast<Eigen::Index>(var)) = prior.beta_mean[t];
      if (total == 2) es.quadratic(a, static_cast<Eigen::Index>(var)) = std::abs(prior.beta_mean[t]);
    }
  }
  return es;
}

std::string export_wave_values(const std::vector<WaveValues>& waves) {
  CsvWriter w({"wave", "point_id", "output", "mean"});
  for (const auto& wv : waves) {
    std::vector<std::size_t> cols;
    for (const auto& o : wv.outputs) cols.push_back(wv.stats.output_index(o));
    for (std::size_t l = 0; l < wv.stats.design.size(); ++l) {
      for (std::size_t c = 0; c < cols.size(); ++c) {
        w.cell(wv.wave).cell(l).cell(std::string_view(wv.outputs[c]));
        w.cell(wv.stats.means(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(cols[c]))).end_row();
      }
    }
  }
  return w.text();
}

std::string export_targets(const std::vector<Target>& targets) {
  CsvWriter w({"output", "lo", "hi", "disc_sd"});
  for (const auto& t : targets) {
    const double lo = t.form == TargetForm::interval ? t.lo : t.band_lo();
    const double hi = t.form == TargetForm::interval ? t.hi : t.band_hi();
    w.cell(std::string_view(t.output)).cell(lo).cell(hi).cell(t.disc_sd).end_row();
  }
  return w.text();
}

}  // namespace wavecal
