#pragma once

// Synthetic surveys and offense populations with known parameters, and a
// Monte Carlo harness measuring bias, RMSE and interval coverage.
//
// Covariates are discrete. Incident covariates z = (intercept, injury,
// weapon, stranger); offender covariates x = (z, offender_black,
// offender_age). Reporting follows expit(gamma0' z); arrest follows
// q(x) = expit(theta0' x + interaction * offender_black * stranger), and a
// reported offender is arrested with probability q / pi.

#include "darkfig/design_glm.hpp"
#include "darkfig/offenses.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace darkfig {

struct ScenarioSpec {
  std::vector<double> gamma0{0.5, 0.8, 0.4, -0.3};
  std::vector<double> theta0{-2.0, 0.6, 0.3, -0.4, 0.3, 0.2};
  double p_injury = 0.3;
  double p_weapon = 0.25;
  double p_stranger = 0.5;
  double p_black = 0.35;
  std::vector<double> age_levels{-1.0, -0.5, 0.0, 0.5, 1.0};
  double interaction = 0.0;

  // survey design
  int strata = 4;
  int psus_per_stratum = 25;
  int units_per_psu = 20;
  double psu_effect_sd = 0.3;      // logit-scale PSU shift of covariate probabilities
  double oversample_injury = 2.0;  // relative acceptance of injured respondents
  double stratum_weight_ratio = 1.5;  // base weight of stratum h is 100 * ratio^h

  // offense population
  Index population_size = 50000;
  std::vector<double> cluster_probs{1.0};  // P(K = 1), P(K = 2), ...
  double latent_correlation = 0.0;
  bool always_report = false;

  double positivity_floor = 0.01;
  bool enforce_positivity = true;
  double covariate_bound = 10.0;
  std::uint64_t seed = 20240501;

  static std::vector<std::string> z_names();
  static std::vector<std::string> x_names();

  /// Multiplies PSU count per stratum and population size by `factor`.
  ScenarioSpec scaled(int factor) const;
  /// Throws SpecInvalid.
  void validate() const;
};

struct ScenarioTruth {
  Index population_size = 0;
  double pi_star = 0.0;  // P(R = 1)
  double q_star = 0.0;   // P(incident has an arrest)
  VectorXd gamma0;
  VectorXd theta0;
  double alpha0 = 0.0;   // limit of the exchangeable moment estimator
  double min_pi = 0.0;
  double max_q_over_pi = 0.0;
};

/// Exact truths by enumeration of the covariate distribution. Throws
/// SpecInvalid when q > pi somewhere or positivity fails.
ScenarioTruth scenario_truth(const ScenarioSpec& spec);

/// Probabilities of the 2^K joint outcomes (bit k of the index is offender
/// k) under the one-factor Gaussian threshold model with marginals m.
std::vector<double> joint_outcome_probabilities(const VectorXd& marginals, double rho);

SurveyData generate_survey(const ScenarioSpec& spec, std::uint64_t seed);

struct OffensePopulation {
  OffenseSet reported;
  VectorXd reported_pi;          // pi(z; gamma0) per reported incident
  MatrixXd population_x;         // first offender row of every incident
  std::vector<char> population_reported;
  Index population_size = 0;
  Index population_arrests = 0;  // incidents with an arrest
};

OffensePopulation generate_offenses(const ScenarioSpec& spec, std::uint64_t seed);

struct CoverageOptions {
  int replications = 500;
  bool reporting = true;  // gamma
  bool rates = true;      // N, pi*, q*
  bool twostep = true;
  bool gee = false;
  /// Pass the generator's propensities as known rather than fitting the survey.
  bool oracle_first_stage = false;
  int threads = 0;        // 0: hardware concurrency
};

struct ParameterCoverage {
  std::string name;
  double truth = 0.0;
  Index replications = 0;
  double mean = 0.0;
  double bias = 0.0;
  double sd = 0.0;
  double mc_se = 0.0;  // sd / sqrt(replications)
  double rmse = 0.0;
  double mean_se = 0.0;
  double coverage = 0.0;
  double coverage_se = 0.0;
};

struct CoverageReport {
  ScenarioTruth truth;
  int replications = 0;
  std::vector<ParameterCoverage> parameters;
  std::map<std::string, Index> failures;

  const ParameterCoverage& at(const std::string& name) const;
};

/// Regenerates data per replication (seeds derived from spec.seed and the
/// replication index), runs the selected estimators and tallies coverage of
/// 95% Wald intervals. Estimator failures are counted, not fatal.
CoverageReport run_coverage(const ScenarioSpec& spec, const CoverageOptions& options);

}  // namespace darkfig
