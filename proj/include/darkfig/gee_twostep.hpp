#pragma once

// Propensity-corrected generalized estimating equations for multi-offender
// incidents with an exchangeable working correlation:
//
//   sum_i X_i^T D_i W_i(theta, alpha)^-1 (a_i - q_i(theta) / pi_i) = 0,
//   W_i = D_i^1/2 C_i(alpha) D_i^1/2,  D_i = diag(q (1 - q)).

#include "darkfig/logistic_solver.hpp"
#include "darkfig/offenses.hpp"
#include "darkfig/twostep_logit.hpp"

#include <optional>
#include <string>
#include <vector>

namespace darkfig {

/// Closed-form inverse of the K x K exchangeable correlation matrix,
/// (1 - alpha)^-1 [I - alpha / (1 + (K - 1) alpha) J]. Throws
/// InvalidCorrelation unless -1/(K-1) < alpha < 1.
MatrixXd exchangeable_inverse(Index k, double alpha);

struct AlphaEstimate {
  double alpha = 0.0;
  Index pairs = 0;
  bool fallback = false;  // no multi-offender incidents
};

/// Moment estimator on propensity-adjusted Pearson residuals
/// e_ij = (a_ij - q_ij / pi_i) / sqrt(q_ij (1 - q_ij)), pooled over all
/// within-incident pairs and clamped to keep every C_i(alpha) positive definite.
AlphaEstimate estimate_exchangeable_alpha(const OffenseSet& data, const VectorXd& theta, const VectorXd& pi);

/// Admissible alpha interval for clusters up to size k_max.
std::pair<double, double> alpha_bounds(Index k_max);

struct GEEOptions {
  SolverOptions solver;
  double positivity_floor = 0.01;
  bool allow_positivity_violation = false;
  std::optional<double> fixed_alpha;
};

struct GEEFit {
  std::vector<std::string> names;
  VectorXd theta_hat;
  double alpha_hat = 0.0;
  /// Covariance of sqrt(n) (theta_hat - theta_0).
  MatrixXd sigma_gee;
  MatrixXd j_theta;
  MatrixXd j_gamma;
  MatrixXd xi;
  int iterations = 0;
  Index n = 0;
  double kappa = 0.0;
  bool first_stage_included = false;
  bool first_stage_omitted = false;
  std::vector<std::string> warnings;

  VectorXd standard_errors() const;
  std::vector<CoefficientRow> coefficients() const;
};

/// Alternates Fisher-scoring updates of theta with alpha updates until both
/// converge, then assembles the two-step sandwich covariance.
GEEFit fit_arrest_gee(const OffenseSet& data, const FirstStage& first_stage, const GEEOptions& options = {});
GEEFit fit_arrest_gee(const OffenseSet& data, const PiModel& model, const GEEOptions& options = {});

VectorXd gee_score(const OffenseSet& data, const VectorXd& pi, const VectorXd& theta, double alpha);
/// Exact derivative of gee_score with respect to theta at fixed alpha.
MatrixXd gee_score_jacobian(const OffenseSet& data, const VectorXd& pi, const VectorXd& theta, double alpha);

}  // namespace darkfig
