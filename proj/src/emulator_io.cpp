#include "wavecal/emulator_io.hpp"

#include "wavecal/error.hpp"

namespace wavecal {
namespace {

using nlohmann::json;

template <typename T>
T get_field(const json& j, const char* key) {
  if (!j.contains(key)) throw ParseError(std::string("emulator document missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("emulator field '") + key + "': " + e.what());
  }
}

}  // namespace

json prior_to_json(const EmulatorPrior& prior) {
  json j;
  j["frame"] = {{"center", prior.frame.center}, {"half_width", prior.frame.half_width}};
  j["active"] = prior.active;
  j["basis"] = prior.basis.terms;
  j["beta_mean"] = prior.beta_mean;
  j["sigma2"] = prior.sigma2;
  j["delta"] = prior.delta;
  j["correlation"] = {{"family", "squared_exponential"}, {"lengths", prior.corr.lengths}};
  return j;
}

EmulatorPrior prior_from_json(const json& j) {
  EmulatorPrior p;
  const json frame = get_field<json>(j, "frame");
  p.frame.center = get_field<std::vector<double>>(frame, "center");
  p.frame.half_width = get_field<std::vector<double>>(frame, "half_width");
  p.active = get_field<std::vector<std::size_t>>(j, "active");
  p.basis.terms = get_field<std::vector<std::vector<int>>>(j, "basis");
  p.beta_mean = get_field<std::vector<double>>(j, "beta_mean");
  p.sigma2 = get_field<double>(j, "sigma2");
  p.delta = get_field<double>(j, "delta");
  const json corr = get_field<json>(j, "correlation");
  if (get_field<std::string>(corr, "family") != "squared_exponential") {
    throw ParseError("unsupported correlation family");
  }
  p.corr.lengths = get_field<std::vector<double>>(corr, "lengths");
  try {
    p.check();
  } catch (const FitError& e) {
    throw ParseError(std::string("inconsistent emulator prior: ") + e.what());
  }
  return p;
}

json emulator_to_json(const TrainedEmulator& em) {
  json j;
  j["format"] = "wavecal-emulator";
  j["version"] = kEmulatorFormatVersion;
  j["prior"] = prior_to_json(em.prior());
  j["provenance"] = to_string(em.design().provenance);
  j["design"] = em.design().points;
  j["data"] = std::vector<double>(em.data().data(), em.data().data() + em.data().size());

  const Eigen::MatrixXd& v = em.data_var();
  Eigen::MatrixXd base = prior_data_variance(em.prior(), em.design().points);
  base.diagonal() = v.diagonal();
  std::vector<double> diag(static_cast<std::size_t>(v.rows()));
  for (Eigen::Index i = 0; i < v.rows(); ++i) diag[static_cast<std::size_t>(i)] = v(i, i);
  if (base == v) {
    j["data_var"] = {{"diagonal", diag}};
  } else {
    std::vector<std::vector<double>> rows(static_cast<std::size_t>(v.rows()));
    for (Eigen::Index r = 0; r < v.rows(); ++r) {
      for (Eigen::Index c = 0; c < v.cols(); ++c) rows[static_cast<std::size_t>(r)].push_back(v(r, c));
    }
    j["data_var"] = {{"full", rows}};
  }
  return j;
}

TrainedEmulator emulator_from_json(const json& j) {
  if (get_field<std::string>(j, "format") != "wavecal-emulator") throw ParseError("not an emulator document");
  const int version = get_field<int>(j, "version");
  if (version != kEmulatorFormatVersion) {
    throw ParseError("unsupported emulator format version " + std::to_string(version));
  }
  EmulatorPrior prior = prior_from_json(get_field<json>(j, "prior"));
  DesignBatch design;
  design.provenance = provenance_from_string(get_field<std::string>(j, "provenance"));
  design.points = get_field<std::vector<Point>>(j, "design");
  const auto data = get_field<std::vector<double>>(j, "data");
  if (data.size() != design.size()) throw ParseError("emulator data length disagrees with design");
  Eigen::VectorXd d = Eigen::Map<const Eigen::VectorXd>(data.data(), static_cast<Eigen::Index>(data.size()));

  const json dv = get_field<json>(j, "data_var");
  const auto n = static_cast<Eigen::Index>(design.size());
  Eigen::MatrixXd v;
  if (dv.contains("diagonal")) {
    const auto diag = get_field<std::vector<double>>(dv, "diagonal");
    if (diag.size() != design.size()) throw ParseError("data variance diagonal has wrong length");
    v = prior_data_variance(prior, design.points);
    for (Eigen::Index i = 0; i < n; ++i) v(i, i) = diag[static_cast<std::size_t>(i)];
  } else {
    const auto rows = get_field<std::vector<std::vector<double>>>(dv, "full");
    if (rows.size() != design.size()) throw ParseError("data variance matrix has wrong shape");
    v.resize(n, n);
    for (Eigen::Index r = 0; r < n; ++r) {
      if (rows[static_cast<std::size_t>(r)].size() != design.size()) throw ParseError("data variance matrix has wrong shape");
      for (Eigen::Index c = 0; c < n; ++c) v(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
    }
  }
  return adjust(std::move(prior), std::move(design), std::move(d), std::move(v));
}

}  // namespace wavecal
