#pragma once

// Reported incidents and the first-stage propensities attached to them.

#include "darkfig/design_glm.hpp"
#include "darkfig/numeric.hpp"

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace darkfig {

/// One reported incident. Rows of x are offenders; a holds their arrest
/// indicators. Single-offender data have exactly one row.
struct OffenseRecord {
  std::string incident_id;
  VectorXd z;
  MatrixXd x;
  VectorXd a;
};

/// Reported incidents in columnar form. Offender rows of incident i are
/// offset(i) .. offset(i + 1) - 1. Built through OffenseSetBuilder.
class OffenseSet {
 public:
  OffenseSet() = default;

  static OffenseSet from_records(std::vector<std::string> z_names, std::vector<std::string> x_names,
                                 std::span<const OffenseRecord> records);

  Index incidents() const { return static_cast<Index>(ids_.size()); }
  Index offenders() const { return x_.rows(); }
  Index cluster_size(Index i) const { return offsets_[i + 1] - offsets_[i]; }
  Index offset(Index i) const { return offsets_[i]; }
  Index max_cluster_size() const;
  bool has_clusters() const { return max_cluster_size() > 1; }

  const std::vector<std::string>& z_names() const { return z_names_; }
  const std::vector<std::string>& x_names() const { return x_names_; }
  const std::vector<std::string>& incident_ids() const { return ids_; }
  const MatrixXd& z() const { return z_; }
  const MatrixXd& x() const { return x_; }
  const VectorXd& a() const { return a_; }

  /// Incident-level arrest: 1 when any offender of the incident was arrested.
  VectorXd incident_arrests() const;
  /// Incident index of every offender row.
  std::vector<Index> offender_incident() const;

  /// Optional per-incident propensities supplied from outside the library.
  std::optional<VectorXd> external_pi;
  /// Incident-level labels (grouping columns), keyed by column name.
  std::map<std::string, std::vector<std::string>> labels;

  OffenseSet subset(std::span<const Index> incidents) const;
  /// Same incidents with the listed x columns removed.
  OffenseSet drop_x_columns(std::span<const Index> columns) const;

  /// Binary arrests, |x|, |z| < covariate_bound, aligned label lengths.
  void validate(double covariate_bound) const;

 private:
  friend class OffenseSetBuilder;

  std::vector<std::string> z_names_;
  std::vector<std::string> x_names_;
  std::vector<std::string> ids_;
  MatrixXd z_;
  MatrixXd x_;
  VectorXd a_;
  std::vector<Index> offsets_{0};
};

class OffenseSetBuilder {
 public:
  OffenseSetBuilder(std::vector<std::string> z_names, std::vector<std::string> x_names);

  void reserve(Index incidents, Index offenders);
  /// x is K x d_x, a has length K.
  void add_incident(const std::string& id, const VectorXd& z, const MatrixXd& x, const VectorXd& a);
  Index incidents() const { return static_cast<Index>(ids_.size()); }
  OffenseSet build();

 private:
  std::vector<std::string> z_names_;
  std::vector<std::string> x_names_;
  std::vector<std::string> ids_;
  std::vector<double> z_;
  std::vector<double> x_;
  std::vector<double> a_;
  std::vector<Index> offsets_{0};
};

/// Per-incident reporting propensities plus what is needed to propagate
/// first-stage uncertainty into second-stage variances.
struct FirstStage {
  VectorXd pi;
  /// Row i holds d(1 / pi_i) / d(gamma); empty for external propensities.
  MatrixXd inv_pi_gradient;
  /// Covariance of sqrt(n_survey) (gamma_hat - gamma_0).
  std::optional<MatrixXd> sigma_v;
  Index n_survey = 0;
  bool external = false;
  /// Propensities are treated as known constants, so no first-stage term
  /// applies and none is reported missing.
  bool exact = false;

  /// Fails with ModelMismatch when the incident covariates are not aligned
  /// with the model's feature names.
  static FirstStage from_model(const PiModel& model, const OffenseSet& data);
  static FirstStage from_external(VectorXd pi);
  static FirstStage known(VectorXd pi);
  static FirstStage known(Index incidents);  // pi == 1

  bool has_first_stage_variance() const { return sigma_v.has_value() && inv_pi_gradient.size() > 0; }
  /// True when estimated propensities are used without their covariance.
  bool first_stage_omitted() const { return !exact && !has_first_stage_variance(); }
  /// n / n_survey for n reported incidents.
  double kappa(Index n) const;

  FirstStage subset(std::span<const Index> incidents) const;
};

/// Throws PositivityViolation when any propensity is below floor.
void require_positivity(const FirstStage& first_stage, double floor, std::string_view module);

}  // namespace darkfig
