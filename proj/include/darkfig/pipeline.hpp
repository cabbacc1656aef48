#pragma once

// End-to-end estimation over CSV inputs: reporting model, positivity audit,
// totals and rates, arrest models and diagnostics, rendered as a bundle of
// text and CSV reports.

#include "darkfig/design_glm.hpp"
#include "darkfig/io.hpp"
#include "darkfig/offenses.hpp"
#include "darkfig/simgen.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace darkfig {

enum class GeeMode { Auto, Always, Never };

struct FocalConfig {
  std::string coefficient;
  std::vector<std::string> features;
  int replicates = 50;
  Index resample_size = 10000;
};

struct PipelineConfig {
  std::string survey_csv;
  std::string offense_csv;
  std::string propensity_csv;
  std::vector<FeatureSpec> reporting_features;
  std::vector<FeatureSpec> arrest_features;
  std::vector<std::string> group_by;
  double positivity_floor = 0.01;
  bool allow_positivity_violation = false;
  double covariate_bound = 1e6;
  SolverOptions solver;
  LonelyPsu lonely_psu = LonelyPsu::Fail;
  double lambda = 0.0;
  GeeMode gee = GeeMode::Auto;
  int cv_folds = 5;
  int calibration_bins = 10;
  std::optional<FocalConfig> focal;
  std::uint64_t seed = 1;
  std::string output_dir = "report";

  /// Relative paths are resolved against base_dir. Throws SchemaError.
  static PipelineConfig from_json_text(const std::string& text, const std::string& base_dir);
  static PipelineConfig load(const std::string& path);
};

struct PipelineInputs {
  std::optional<SurveyData> survey;
  OffenseSet offenses;  // external_pi and group labels attached when present
};

PipelineInputs load_inputs(const PipelineConfig& config);

namespace stage {
inline constexpr unsigned reporting = 1;
inline constexpr unsigned rates = 2;
inline constexpr unsigned arrest = 4;
inline constexpr unsigned gee = 8;
inline constexpr unsigned diagnostics = 16;
inline constexpr unsigned all = 31;
}  // namespace stage

struct Bundle {
  std::map<std::string, std::string> files;  // file name -> contents
  std::vector<std::string> warnings;
};

Bundle run_pipeline(const PipelineConfig& config, unsigned stages = stage::all);
Bundle run_pipeline(const PipelineConfig& config, const PipelineInputs& inputs, unsigned stages = stage::all);

/// Writes every file plus warnings.txt into dir (created if needed).
void write_bundle(const Bundle& bundle, const std::string& dir);

ScenarioSpec scenario_from_json_text(const std::string& text);
ScenarioSpec load_scenario(const std::string& path);

/// Writes survey.csv, offenses.csv, truth.json and a ready-to-run
/// config.json for the pipeline. With external_pi the offense file carries
/// the generator's propensities in a pi_hat column.
void write_simulation(const ScenarioSpec& spec, std::uint64_t seed, const std::string& dir, bool external_pi = false);

}  // namespace darkfig
