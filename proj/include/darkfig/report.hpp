#pragma once

// Plain-text and CSV renderings of estimates. Text uses six significant
// digits; CSV keeps full precision.

#include "darkfig/diagnostics.hpp"
#include "darkfig/reweight.hpp"
#include "darkfig/simgen.hpp"
#include "darkfig/twostep_logit.hpp"

#include <string>
#include <vector>

namespace darkfig {

/// "***" p < 0.001, "**" p < 0.01, "*" p < 0.05, "." p < 0.1, else "".
std::string significance_code(double p);
std::string significance_legend();

std::string coefficient_table_text(const std::string& title, const std::vector<CoefficientRow>& rows);
std::string coefficient_table_csv(const std::vector<CoefficientRow>& rows);

/// Adjusted and unadjusted arrest coefficients side by side.
std::string comparison_table_text(const std::vector<CoefficientRow>& adjusted,
                                  const std::vector<CoefficientRow>& unadjusted);

struct NamedRates {
  std::string group;
  RateSummary rates;
};

std::string rates_text(const std::vector<NamedRates>& rates);
std::string rates_csv(const std::vector<NamedRates>& rates);

std::string positivity_text(const PositivityReport& report);
std::string positivity_csv(const PositivityReport& report);

std::string calibration_csv(const std::vector<CalibrationBin>& bins);
std::string calibration_text(double auc, const std::vector<CalibrationBin>& bins);

std::string focal_slope_csv(const FocalSlopeReport& report);
std::string focal_slope_text(const FocalSlopeReport& report);

std::string coverage_csv(const CoverageReport& report);
std::string coverage_text(const CoverageReport& report);

}  // namespace darkfig
