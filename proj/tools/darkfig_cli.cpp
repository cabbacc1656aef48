// darkfig command-line tool.

#include "darkfig/error.hpp"
#include "darkfig/pipeline.hpp"
#include "darkfig/report.hpp"
#include "darkfig/simgen.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace {

using namespace darkfig;

struct RunArgs {
  std::string config;
  std::string out;
};

void add_run_options(CLI::App* cmd, RunArgs& args) {
  cmd->add_option("-c,--config", args.config, "pipeline configuration (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("-o,--out", args.out, "output directory (overrides output_dir)");
}

int run_stages(const RunArgs& args, unsigned stages, bool force_gee = false) {
  PipelineConfig config = PipelineConfig::load(args.config);
  if (!args.out.empty()) config.output_dir = args.out;
  if (force_gee) config.gee = GeeMode::Always;
  const Bundle bundle = run_pipeline(config, stages);
  write_bundle(bundle, config.output_dir);
  std::cout << bundle.files.at("report.txt");
  for (const auto& w : bundle.warnings) std::cerr << "warning: " << w << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Estimate offense totals, reporting and arrest rates from police records corrected by survey-based "
               "reporting propensities"};
  app.require_subcommand(1);

  RunArgs reporting, rates, arrest, gee, diagnose, pipeline;
  auto* c_reporting = app.add_subcommand("fit-reporting", "fit the survey-weighted reporting model");
  add_run_options(c_reporting, reporting);
  auto* c_rates = app.add_subcommand("estimate-rates", "estimate N, notification and arrest rates");
  add_run_options(c_rates, rates);
  auto* c_arrest = app.add_subcommand("fit-arrest", "fit adjusted and unadjusted arrest models");
  add_run_options(c_arrest, arrest);
  auto* c_gee = app.add_subcommand("fit-arrest-gee", "fit the multi-offender GEE arrest model");
  add_run_options(c_gee, gee);
  auto* c_diag = app.add_subcommand("diagnose", "positivity audit, calibration, AUC and focal slopes");
  add_run_options(c_diag, diagnose);
  auto* c_pipe = app.add_subcommand("pipeline", "run every estimation step and write the report bundle");
  add_run_options(c_pipe, pipeline);

  std::string sim_scenario, sim_out;
  std::uint64_t sim_seed = 1;
  bool sim_external = false;
  auto* c_sim = app.add_subcommand("simulate", "write a synthetic survey and offense file with known truths");
  c_sim->add_option("-s,--scenario", sim_scenario, "scenario (JSON); defaults apply otherwise")
      ->check(CLI::ExistingFile);
  c_sim->add_option("--seed", sim_seed, "random seed");
  c_sim->add_option("-o,--out", sim_out, "output directory")->required();
  c_sim->add_flag("--external-pi", sim_external, "write true propensities as a pi_hat column instead of a survey");

  std::string cov_scenario, cov_out;
  int cov_reps = 500;
  int cov_threads = 0;
  std::vector<std::string> cov_estimators{"reporting", "rates", "twostep"};
  bool cov_oracle = false;
  auto* c_cov = app.add_subcommand("coverage", "Monte Carlo bias, RMSE and interval coverage");
  c_cov->add_option("-s,--scenario", cov_scenario, "scenario (JSON)")->check(CLI::ExistingFile);
  c_cov->add_option("-r,--reps", cov_reps, "replications")->check(CLI::PositiveNumber);
  c_cov->add_option("-e,--estimators", cov_estimators, "subset of reporting, rates, twostep, gee")
      ->check(CLI::IsMember({"reporting", "rates", "twostep", "gee"}));
  c_cov->add_flag("--oracle-first-stage", cov_oracle, "use the generator's propensities as known");
  c_cov->add_option("-t,--threads", cov_threads, "worker threads (0: all cores)");
  c_cov->add_option("-o,--out", cov_out, "directory for coverage.csv and coverage.txt");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*c_reporting) return run_stages(reporting, stage::reporting);
    if (*c_rates) return run_stages(rates, stage::rates);
    if (*c_arrest) return run_stages(arrest, stage::arrest);
    if (*c_gee) return run_stages(gee, stage::gee, true);
    if (*c_diag) return run_stages(diagnose, stage::diagnostics);
    if (*c_pipe) return run_stages(pipeline, stage::all);
    if (*c_sim) {
      const ScenarioSpec spec = sim_scenario.empty() ? ScenarioSpec{} : load_scenario(sim_scenario);
      write_simulation(spec, sim_seed, sim_out, sim_external);
      std::cout << "wrote simulated inputs to " << sim_out << '\n';
      return 0;
    }
    if (*c_cov) {
      const ScenarioSpec spec = cov_scenario.empty() ? ScenarioSpec{} : load_scenario(cov_scenario);
      CoverageOptions opts;
      opts.replications = cov_reps;
      opts.threads = cov_threads;
      opts.oracle_first_stage = cov_oracle;
      auto has = [&](const char* e) { return std::find(cov_estimators.begin(), cov_estimators.end(), e) != cov_estimators.end(); };
      opts.reporting = has("reporting");
      opts.rates = has("rates");
      opts.twostep = has("twostep");
      opts.gee = has("gee");
      const CoverageReport rep = run_coverage(spec, opts);
      std::cout << coverage_text(rep);
      if (!cov_out.empty()) {
        std::filesystem::create_directories(cov_out);
        std::ofstream(std::filesystem::path(cov_out) / "coverage.csv", std::ios::binary) << coverage_csv(rep);
        std::ofstream(std::filesystem::path(cov_out) / "coverage.txt", std::ios::binary) << coverage_text(rep);
      }
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
