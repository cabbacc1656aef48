#include "darkfig/offenses.hpp"

#include "darkfig/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace darkfig {

namespace {
constexpr std::string_view kModule = "reweight";
}

OffenseSetBuilder::OffenseSetBuilder(std::vector<std::string> z_names, std::vector<std::string> x_names)
    : z_names_(std::move(z_names)), x_names_(std::move(x_names)) {}

void OffenseSetBuilder::reserve(Index incidents, Index offenders) {
  ids_.reserve(incidents);
  offsets_.reserve(incidents + 1);
  z_.reserve(incidents * z_names_.size());
  x_.reserve(offenders * x_names_.size());
  a_.reserve(offenders);
}

void OffenseSetBuilder::add_incident(const std::string& id, const VectorXd& z, const MatrixXd& x, const VectorXd& a) {
  const Index dz = static_cast<Index>(z_names_.size());
  const Index dx = static_cast<Index>(x_names_.size());
  if (z.size() != dz || x.cols() != dx) {
    throw Error(ErrorCode::FeatureMismatch, kModule, "incident " + id + " covariates do not match declared features");
  }
  if (x.rows() < 1 || x.rows() != a.size()) {
    throw Error(ErrorCode::InvalidInput, kModule, "incident " + id + " needs K >= 1 offender rows aligned with arrests");
  }
  ids_.push_back(id);
  z_.insert(z_.end(), z.data(), z.data() + dz);
  for (Index k = 0; k < x.rows(); ++k) {
    for (Index j = 0; j < dx; ++j) x_.push_back(x(k, j));
    a_.push_back(a(k));
  }
  offsets_.push_back(offsets_.back() + x.rows());
}

OffenseSet OffenseSetBuilder::build() {
  OffenseSet out;
  const Index n = incidents();
  const Index m = offsets_.back();
  const Index dz = static_cast<Index>(z_names_.size());
  const Index dx = static_cast<Index>(x_names_.size());
  out.z_names_ = std::move(z_names_);
  out.x_names_ = std::move(x_names_);
  out.ids_ = std::move(ids_);
  out.z_ = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(z_.data(), n, dz);
  out.x_ = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(x_.data(), m, dx);
  out.a_ = Eigen::Map<const VectorXd>(a_.data(), m);
  out.offsets_ = std::move(offsets_);
  z_.clear();
  x_.clear();
  a_.clear();
  offsets_ = {0};
  return out;
}

OffenseSet OffenseSet::from_records(std::vector<std::string> z_names, std::vector<std::string> x_names,
                                   std::span<const OffenseRecord> records) {
  OffenseSetBuilder b(std::move(z_names), std::move(x_names));
  for (const auto& r : records) b.add_incident(r.incident_id, r.z, r.x, r.a);
  return b.build();
}

Index OffenseSet::max_cluster_size() const {
  Index k = 0;
  for (Index i = 0; i < incidents(); ++i) k = std::max(k, cluster_size(i));
  return k;
}

VectorXd OffenseSet::incident_arrests() const {
  VectorXd out(incidents());
  for (Index i = 0; i < incidents(); ++i) out(i) = a_.segment(offsets_[i], cluster_size(i)).maxCoeff();
  return out;
}

std::vector<Index> OffenseSet::offender_incident() const {
  std::vector<Index> out(offenders());
  for (Index i = 0; i < incidents(); ++i) {
    for (Index r = offsets_[i]; r < offsets_[i + 1]; ++r) out[r] = i;
  }
  return out;
}

OffenseSet OffenseSet::subset(std::span<const Index> incidents) const {
  OffenseSetBuilder b(z_names_, x_names_);
  Index rows = 0;
  for (Index i : incidents) rows += cluster_size(i);
  b.reserve(static_cast<Index>(incidents.size()), rows);
  for (Index i : incidents) {
    b.add_incident(ids_[i], z_.row(i).transpose(), x_.middleRows(offsets_[i], cluster_size(i)),
                   a_.segment(offsets_[i], cluster_size(i)));
  }
  OffenseSet out = b.build();
  if (external_pi) {
    VectorXd pi(incidents.size());
    for (size_t k = 0; k < incidents.size(); ++k) pi(k) = (*external_pi)(incidents[k]);
    out.external_pi = std::move(pi);
  }
  for (const auto& [name, values] : labels) {
    std::vector<std::string> sub;
    sub.reserve(incidents.size());
    for (Index i : incidents) sub.push_back(values[i]);
    out.labels.emplace(name, std::move(sub));
  }
  return out;
}

OffenseSet OffenseSet::drop_x_columns(std::span<const Index> columns) const {
  std::vector<Index> keep;
  std::vector<std::string> names;
  for (Index j = 0; j < static_cast<Index>(x_names_.size()); ++j) {
    if (std::find(columns.begin(), columns.end(), j) == columns.end()) {
      keep.push_back(j);
      names.push_back(x_names_[j]);
    }
  }
  OffenseSet out = *this;
  out.x_names_ = std::move(names);
  out.x_ = x_(Eigen::all, keep);
  return out;
}

void OffenseSet::validate(double covariate_bound) const {
  for (Index r = 0; r < offenders(); ++r) {
    if (a_(r) != 0.0 && a_(r) != 1.0) {
      throw Error(ErrorCode::InvalidInput, kModule, "arrest indicator must be 0 or 1 (offender row " + std::to_string(r) + ")");
    }
    for (Index j = 0; j < x_.cols(); ++j) {
      if (!std::isfinite(x_(r, j)) || std::abs(x_(r, j)) >= covariate_bound) {
        throw Error(ErrorCode::InvalidInput, kModule, "offender covariate " + x_names_[j] + " out of bound");
      }
    }
  }
  for (Index i = 0; i < incidents(); ++i) {
    for (Index j = 0; j < z_.cols(); ++j) {
      if (!std::isfinite(z_(i, j)) || std::abs(z_(i, j)) >= covariate_bound) {
        throw Error(ErrorCode::InvalidInput, kModule, "incident covariate " + z_names_[j] + " out of bound");
      }
    }
  }
  if (external_pi && external_pi->size() != incidents()) {
    throw Error(ErrorCode::SchemaError, kModule, "external propensities do not cover every incident");
  }
  for (const auto& [name, values] : labels) {
    if (static_cast<Index>(values.size()) != incidents()) {
      throw Error(ErrorCode::SchemaError, kModule, "label column " + name + " does not cover every incident");
    }
  }
}

FirstStage FirstStage::from_model(const PiModel& model, const OffenseSet& data) {
  if (data.z_names() != model.feature_names) {
    throw Error(ErrorCode::ModelMismatch, kModule, "incident covariates are not aligned with the reporting model features");
  }
  FirstStage fs;
  const Index n = data.incidents();
  fs.pi.resize(n);
  fs.inv_pi_gradient.resize(n, model.dim());
  for (Index i = 0; i < n; ++i) {
    const double eta = data.z().row(i).dot(model.gamma_hat);
    fs.pi(i) = expit(eta);
    // 1/pi = 1 + exp(-eta)
    fs.inv_pi_gradient.row(i) = -std::exp(-eta) * data.z().row(i);
  }
  fs.sigma_v = model.sigma_v;
  fs.n_survey = model.n_survey;
  return fs;
}

FirstStage FirstStage::from_external(VectorXd pi) {
  FirstStage fs;
  fs.pi = std::move(pi);
  fs.external = true;
  return fs;
}

FirstStage FirstStage::known(VectorXd pi) {
  FirstStage fs;
  fs.pi = std::move(pi);
  fs.exact = true;
  return fs;
}

FirstStage FirstStage::known(Index incidents) { return known(VectorXd::Ones(incidents)); }

double FirstStage::kappa(Index n) const {
  return n_survey > 0 ? static_cast<double>(n) / static_cast<double>(n_survey) : 0.0;
}

FirstStage FirstStage::subset(std::span<const Index> incidents) const {
  FirstStage out;
  out.pi.resize(incidents.size());
  for (size_t k = 0; k < incidents.size(); ++k) out.pi(k) = pi(incidents[k]);
  if (inv_pi_gradient.size() > 0) {
    out.inv_pi_gradient.resize(incidents.size(), inv_pi_gradient.cols());
    for (size_t k = 0; k < incidents.size(); ++k) out.inv_pi_gradient.row(k) = inv_pi_gradient.row(incidents[k]);
  }
  out.sigma_v = sigma_v;
  out.n_survey = n_survey;
  out.external = external;
  out.exact = exact;
  return out;
}

void require_positivity(const FirstStage& first_stage, double floor, std::string_view module) {
  for (Index i = 0; i < first_stage.pi.size(); ++i) {
    const double p = first_stage.pi(i);
    if (!(p >= floor) || !(p <= 1.0)) {
      throw Error(ErrorCode::PositivityViolation, module,
                  "propensity " + std::to_string(p) + " on incident " + std::to_string(i) + " is outside [" +
                      std::to_string(floor) + ", 1]");
    }
  }
}

}  // namespace darkfig
