#pragma once

// Model evaluation and misspecification probes.

#include "darkfig/design_glm.hpp"
#include "darkfig/logistic_solver.hpp"
#include "darkfig/offenses.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace darkfig {

/// Weighted probability that a random positive outranks a random negative,
/// ties counted 1/2. Throws DegenerateOutcomes without both classes.
double weighted_auc(const VectorXd& predictions, const VectorXd& outcomes, const VectorXd& weights);

struct CalibrationBin {
  double lower = 0.0;
  double upper = 0.0;
  double mean_predicted = 0.0;
  double observed = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double weight = 0.0;
  Index count = 0;
};

/// Equal-width bins on [0, 1]; empty bins are omitted. Intervals use the
/// Kish effective sample size of each bin.
std::vector<CalibrationBin> weighted_calibration(const VectorXd& predictions, const VectorXd& outcomes,
                                                 const VectorXd& weights, int bins = 10);

struct PositivitySummary {
  std::string group;
  Index count = 0;
  double min = 0.0;
  double q05 = 0.0;
  double q25 = 0.0;
  double median = 0.0;
  Index below_floor = 0;
  bool passed = true;
};

struct PositivityReport {
  double floor = 0.01;
  bool passed = true;
  PositivitySummary overall;
  std::vector<PositivitySummary> groups;  // lexicographic order
};

/// Fails when any propensity is strictly below the floor. `groups` may be
/// empty (overall summary only) or label every propensity.
PositivityReport positivity_report(const VectorXd& pi, const std::vector<std::string>& groups, double floor = 0.01);
PositivityReport positivity_report(const OffenseSet& data, const FirstStage& first_stage,
                                   const std::vector<std::string>& group_columns, double floor = 0.01);

/// Indices drawn with replacement, probability proportional to weight.
std::vector<Index> weighted_resample(const VectorXd& weights, Index size, std::mt19937_64& rng);

/// Out-of-fold reporting propensities; folds are formed from whole PSUs.
VectorXd cross_validated_pi(const SurveyData& data, int folds, std::uint64_t seed, const SolverOptions& solver = {});

struct FocalSlopeConfig {
  std::string focal;
  std::vector<std::string> features;  // empty: every non-intercept column except the focal one
  int replicates = 50;
  Index resample_size = 10000;
  std::uint64_t seed = 1;
  SolverOptions solver;
};

struct FocalCell {
  std::string feature;
  Index cell = 0;
  double center = 0.0;
  Index population = 0;
  std::vector<double> estimates;
  Index failures = 0;
  double mean = 0.0;
  double sd = 0.0;
};

struct FocalSlopeReport {
  std::string focal;
  std::vector<FocalCell> cells;
  std::vector<std::string> notices;
};

/// Offender rows are assigned to the nearest grid value of each probed
/// feature (five evenly spaced values over its range, or {0, 1} for binary
/// features; ties go to the lower cell). Each nonempty cell is resampled
/// `replicates` times and the propensity-corrected arrest model refitted.
FocalSlopeReport focal_slope(const OffenseSet& data, const FirstStage& first_stage, const FocalSlopeConfig& config);

/// Replicate seed derived from (master, feature, cell, replicate).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

}  // namespace darkfig
