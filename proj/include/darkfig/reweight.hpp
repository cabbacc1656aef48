#pragma once

// Horvitz-Thompson population total and ratio estimates of the reporting and
// arrest rates from reported incidents, with plug-in delta-method variances
// that include the first-stage (survey) uncertainty.

#include "darkfig/offenses.hpp"

#include <string>
#include <vector>

namespace darkfig {

struct RateEstimate {
  double value = 0.0;
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double kappa = 0.0;  // n / n_survey used in the variance
};

RateEstimate wald_estimate(double value, double se, double kappa);

struct RateOptions {
  double positivity_floor = 0.01;
  bool allow_positivity_violation = false;
};

struct PopulationTotal {
  RateEstimate total;       // N_hat
  RateEstimate per_record;  // N_hat / n
  double v_n = 0.0;         // asymptotic variance of sqrt(n) (N_hat / N - 1)
  Index n = 0;
  bool first_stage_included = false;
};

struct RateSummary {
  PopulationTotal total;
  RateEstimate notification;  // pi*
  RateEstimate arrest;        // q*
  double alpha_star = 0.0;    // share of reported incidents with an arrest
  Index n = 0;
  bool first_stage_included = false;
};

PopulationTotal estimate_population_total(const OffenseSet& data, const FirstStage& first_stage,
                                          const RateOptions& options = {});
PopulationTotal estimate_population_total(const OffenseSet& data, const PiModel& model,
                                          const RateOptions& options = {});

/// pi* = n / N_hat and q* = (sum of incident arrests) / N_hat.
RateSummary estimate_rates(const OffenseSet& data, const FirstStage& first_stage, const RateOptions& options = {});
RateSummary estimate_rates(const OffenseSet& data, const PiModel& model, const RateOptions& options = {});

struct GroupRates {
  std::string group;
  RateSummary rates;
};

/// estimate_rates within each distinct value of the composite label formed by
/// group_columns ("col=value" parts joined with '|'), in lexicographic group order.
std::vector<GroupRates> grouped_rates(const OffenseSet& data, const FirstStage& first_stage,
                                      const std::vector<std::string>& group_columns, const RateOptions& options = {});

/// Reported-sample estimate of a full-population mean, pi_hat* times the
/// reported mean of f / pi_hat (a Hajek-normalized inverse-propensity mean).
double reweighted_mean(const VectorXd& f, const VectorXd& pi);

}  // namespace darkfig
