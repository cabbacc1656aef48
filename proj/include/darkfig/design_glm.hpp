#pragma once

// Survey-weighted logistic model for the reporting propensity, with a
// design-based covariance under stratified PSU-clustered sampling.

#include "darkfig/logistic_solver.hpp"
#include "darkfig/numeric.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace darkfig {

struct SurveyRecord {
  VectorXd z;  // z(0) is the intercept
  int r = 0;
  double weight = 1.0;
  std::string stratum;
  std::string psu;
};

/// Column-major view of a survey sample; rows are respondents.
struct SurveyData {
  std::vector<std::string> feature_names;
  MatrixXd z;
  VectorXd r;
  VectorXd weight;
  std::vector<std::string> stratum;
  std::vector<std::string> psu;

  static SurveyData from_records(std::vector<std::string> feature_names, std::span<const SurveyRecord> records);

  Index size() const { return z.rows(); }
  Index dim() const { return z.cols(); }

  /// Checks positive finite weights, binary outcomes, label arity, and
  /// |z(j)| < covariate_bound. Throws InvalidInput or SchemaError.
  void validate(double covariate_bound) const;

  SurveyData scaled_weights(double c) const;
};

struct PiModel {
  VectorXd gamma_hat;
  /// Covariance of sqrt(n_survey) (gamma_hat - gamma_0); empty until
  /// design_covariance has been attached.
  std::optional<MatrixXd> sigma_v;
  Index n_survey = 0;
  std::vector<std::string> feature_names;
  double lambda = 0.0;  // surveyed fraction of the finite population
  int iterations = 0;

  Index dim() const { return gamma_hat.size(); }
};

enum class LonelyPsu { Fail, CenterAtGrandMean };

struct DesignOptions {
  LonelyPsu lonely_psu = LonelyPsu::Fail;
};

/// Solves sum_i w_i (r_i - expit(gamma^T z_i)) z_i = 0.
PiModel fit_weighted_logit(const SurveyData& data, const SolverOptions& options = {});

/// Stratified between-PSU linearization of the weighted score sandwiched by
/// the inverse weighted information, scaled to estimate the covariance of
/// sqrt(n) (gamma_hat - gamma_0). Adds lambda * J^-1 Xi_s J^-1 when the model
/// carries lambda > 0.
MatrixXd design_covariance(const PiModel& model, const SurveyData& data, const DesignOptions& options = {});

/// fit_weighted_logit followed by design_covariance, stored in sigma_v.
PiModel fit_reporting_model(const SurveyData& data, const SolverOptions& solver = {},
                            const DesignOptions& design = {}, double lambda = 0.0);

double predict_pi(const PiModel& model, const VectorXd& z);
double predict_pi(const PiModel& model, const VectorXd& z, std::span<const std::string> names);
VectorXd predict_pi(const PiModel& model, const MatrixXd& z);

VectorXd weighted_score(const SurveyData& data, const VectorXd& gamma);
/// d(weighted_score)/d(gamma) = -sum_i w_i p_i (1 - p_i) z_i z_i^T
MatrixXd weighted_score_jacobian(const SurveyData& data, const VectorXd& gamma);

}  // namespace darkfig
