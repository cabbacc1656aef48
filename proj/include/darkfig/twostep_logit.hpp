#pragma once

// Arrest model q(x; theta) fitted on reported incidents through the
// propensity-corrected estimating equation
//
//   sum_i (a_i - q(x_i; theta) / pi_i) x_i = 0,
//
// and its two-step sandwich covariance J^-1 (E[h h^T] + kappa J_g Sv J_g^T) J^-1.
// Multi-offender incidents contribute the sum of their offender terms
// (working independence with incident-level clustering).

#include "darkfig/logistic_solver.hpp"
#include "darkfig/offenses.hpp"

#include <string>
#include <vector>

namespace darkfig {

struct CoefficientRow {
  std::string name;
  double estimate = 0.0;
  double odds_ratio = 0.0;
  double se = 0.0;
  double odds_ratio_se = 0.0;  // delta method, OR * se
  double z_value = 0.0;
  double p_value = 1.0;
};

std::vector<CoefficientRow> coefficient_rows(const std::vector<std::string>& names, const VectorXd& estimate,
                                             const VectorXd& se);

struct ArrestFit {
  std::vector<std::string> names;
  VectorXd theta_hat;
  /// Covariance of sqrt(n) (theta_hat - theta_0); empty until
  /// arrest_sandwich_covariance.
  MatrixXd sigma;
  MatrixXd j_theta;
  MatrixXd j_gamma;
  MatrixXd xi;
  int iterations = 0;
  Index n = 0;  // reported incidents
  double kappa = 0.0;
  bool covariance_ready = false;
  bool first_stage_included = false;
  bool first_stage_omitted = false;  // estimated propensities without their covariance
  Index q_over_pi_count = 0;         // offender rows with q_hat / pi_hat > 1
  std::vector<std::string> warnings;

  VectorXd standard_errors() const;
  std::vector<CoefficientRow> coefficients() const;
};

struct ArrestOptions {
  SolverOptions solver;
  double positivity_floor = 0.01;
  bool allow_positivity_violation = false;
  /// Share of rows with q / pi > 1 above which a warning is attached.
  double nonmonotone_warning_share = 0.01;
};

ArrestFit fit_arrest_model(const OffenseSet& data, const FirstStage& first_stage, const ArrestOptions& options = {});
ArrestFit fit_arrest_model(const OffenseSet& data, const PiModel& model, const ArrestOptions& options = {});

ArrestFit arrest_sandwich_covariance(ArrestFit fit, const OffenseSet& data, const FirstStage& first_stage);

/// Plain logistic regression of a on x over reported incidents, with the
/// incident-clustered sandwich covariance.
ArrestFit compare_unadjusted(const OffenseSet& data, const ArrestOptions& options = {});

/// Estimating function sum_i (a_i - q_i / pi_i) x_i over offender rows.
VectorXd arrest_score(const OffenseSet& data, const VectorXd& pi, const VectorXd& theta);
/// d(arrest_score)/d(theta) = -sum_i q_i (1 - q_i) / pi_i x_i x_i^T
MatrixXd arrest_score_jacobian(const OffenseSet& data, const VectorXd& pi, const VectorXd& theta);

/// Throws SingularDesign for constant x columns other than "intercept".
void reject_constant_columns(const MatrixXd& x, const std::vector<std::string>& names, std::string_view module);

}  // namespace darkfig
