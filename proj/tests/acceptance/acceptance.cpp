// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on failure.
//
//   darkfig_acceptance [--golden-dir DIR] [--only N]...

#include "darkfig/design_glm.hpp"
#include "darkfig/diagnostics.hpp"
#include "darkfig/error.hpp"
#include "darkfig/gee_twostep.hpp"
#include "darkfig/pipeline.hpp"
#include "darkfig/reweight.hpp"
#include "darkfig/simgen.hpp"
#include "darkfig/twostep_logit.hpp"
#include "oracles.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

using namespace darkfig;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

/// Collects failed checks with a short description.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok) failures_.push_back(what);
  }
  Outcome outcome(const std::string& summary) const {
    Outcome o{failures_.empty(), summary};
    for (size_t i = 0; i < failures_.size() && i < 6; ++i) o.detail += "; failed: " + failures_[i];
    if (failures_.size() > 6) o.detail += "; +" + std::to_string(failures_.size() - 6) + " more";
    return o;
  }

 private:
  std::vector<std::string> failures_;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double rel_err(const MatrixXd& a, const MatrixXd& b) { return (a - b).norm() / std::max(b.norm(), 1e-300); }

bool sym_psd(const MatrixXd& m) {
  return (m - m.transpose()).lpNorm<Eigen::Infinity>() <= 1e-12 * std::max(1.0, m.lpNorm<Eigen::Infinity>()) &&
         min_eigenvalue(m) > -1e-10;
}

oracle::Mat rows_of(const MatrixXd& x) { return oracle::to_mat(x); }

// 1. With pi = 1 the two-step estimator is the logistic MLE and the GEE on
//    single-offender incidents is the two-step fit.
Outcome reduction() {
  ScenarioSpec spec;
  spec.population_size = 20000;
  spec.always_report = true;
  const OffensePopulation pop = generate_offenses(spec, 101);
  const OffenseSet& d = pop.reported;
  const FirstStage ones = FirstStage::known(d.incidents());
  const ArrestFit two = arrest_sandwich_covariance(fit_arrest_model(d, ones), d, ones);
  const oracle::Vec mle = oracle::newton_logit(rows_of(d.x()), oracle::to_vec(d.a()), oracle::Vec(d.offenders(), 1.0));
  const double d_mle = oracle::max_abs_diff(mle, two.theta_hat);

  ScenarioSpec single;
  single.population_size = 20000;
  const OffensePopulation sp = generate_offenses(single, 102);
  const FirstStage fs = FirstStage::known(sp.reported_pi);
  const ArrestFit t = arrest_sandwich_covariance(fit_arrest_model(sp.reported, fs), sp.reported, fs);
  const GEEFit g = fit_arrest_gee(sp.reported, fs);
  const double d_gee = (g.theta_hat - t.theta_hat).lpNorm<Eigen::Infinity>();

  Checks c;
  c.expect(d_mle < 1e-8, "two-step vs MLE " + fmt("%.2e", d_mle));
  c.expect(d_gee < 1e-6, "GEE vs two-step " + fmt("%.2e", d_gee));
  return c.outcome("max|two-step - MLE| = " + fmt("%.1e", d_mle) + ", max|GEE(K=1) - two-step| = " + fmt("%.1e", d_gee));
}

// 2. Four-record Horvitz-Thompson example.
Outcome hand_oracle() {
  OffenseSetBuilder b({"intercept"}, {"intercept", "x"});
  const double xs[4] = {0.1, 0.4, -0.3, 0.8};
  const double as[4] = {1, 0, 1, 0};
  for (int i = 0; i < 4; ++i) {
    MatrixXd x(1, 2);
    x << 1.0, xs[i];
    b.add_incident("r" + std::to_string(i), VectorXd::Ones(1), x, VectorXd::Constant(1, as[i]));
  }
  VectorXd pi(4);
  pi << 1.0, 0.5, 0.2, 1.0;
  const RateSummary r = estimate_rates(b.build(), FirstStage::known(pi));
  Checks c;
  c.expect(r.total.total.value == 9.0, "N_hat");
  c.expect(r.notification.value == 4.0 / 9.0, "pi_star");
  c.expect(r.arrest.value == 2.0 / 9.0, "q_star");
  return c.outcome("N_hat = " + fmt("%.17g", r.total.total.value) + ", pi* = " + fmt("%.17g", r.notification.value) +
                   ", q* = " + fmt("%.17g", r.arrest.value));
}

// 3. Bias within Monte Carlo error and root-n scaling of the RMSE.
Outcome consistency() {
  ScenarioSpec spec;
  CoverageOptions o;
  o.replications = 200;
  o.rates = false;
  const CoverageReport base = run_coverage(spec, o);
  const CoverageReport big = run_coverage(spec.scaled(4), o);
  Checks c;
  double worst_z = 0.0;
  for (const auto& p : base.parameters) {
    const double z = std::abs(p.bias) / p.mc_se;
    worst_z = std::max(worst_z, z);
    c.expect(z < 3.0, p.name + " bias/mcse " + fmt("%.2f", z));
  }
  double lo = 1e9, hi = 0.0, se_lo = 1e9, se_hi = 0.0;
  for (const auto& p : base.parameters) {
    const ParameterCoverage& q = big.at(p.name);
    const double ratio = q.rmse / p.rmse;
    lo = std::min(lo, ratio);
    hi = std::max(hi, ratio);
    se_lo = std::min(se_lo, q.mean_se / p.mean_se);
    se_hi = std::max(se_hi, q.mean_se / p.mean_se);
    c.expect(ratio >= 0.4 && ratio <= 0.6, p.name + " RMSE ratio " + fmt("%.3f", ratio));
  }
  Index failures = 0;
  for (const auto& [k, v] : base.failures) failures += v;
  c.expect(failures == 0, "estimator failures " + std::to_string(failures));
  return c.outcome("200 reps, max |bias|/MC SE = " + fmt("%.2f", worst_z) + ", RMSE ratio at 4n in [" +
                   fmt("%.3f", lo) + ", " + fmt("%.3f", hi) + "], mean SE ratio in [" + fmt("%.3f", se_lo) + ", " +
                   fmt("%.3f", se_hi) + "]");
}

ScenarioSpec clustered_scenario() {
  ScenarioSpec s;
  s.cluster_probs = {0.4, 0.3, 0.2, 0.1};
  s.latent_correlation = 0.4;
  return s;
}

// 4. Wald interval coverage.
Outcome coverage() {
  CoverageOptions o;
  o.replications = 500;
  const CoverageReport base = run_coverage(ScenarioSpec{}, o);
  CoverageOptions g;
  g.replications = 500;
  g.rates = false;
  g.reporting = false;
  g.gee = true;
  const CoverageReport clus = run_coverage(clustered_scenario(), g);
  Checks c;
  double lo = 1.0, hi = 0.0;
  for (const auto* rep : {&base, &clus}) {
    for (const auto& p : rep->parameters) {
      lo = std::min(lo, p.coverage);
      hi = std::max(hi, p.coverage);
      c.expect(p.coverage >= 0.92 && p.coverage <= 0.98,
               (rep == &clus ? "clustered " : "") + p.name + " coverage " + fmt("%.3f", p.coverage));
    }
  }
  return c.outcome("500 reps, " + std::to_string(base.parameters.size() + clus.parameters.size()) +
                   " parameters, coverage in [" + fmt("%.3f", lo) + ", " + fmt("%.3f", hi) + "]");
}

// 5. Reweighted reported-sample means recover population means.
Outcome change_of_measure() {
  const ScenarioSpec spec;
  const int reps = 500;
  const std::vector<std::function<double(const VectorXd&)>> fns{
      [](const VectorXd& x) { return x(1); },                                  // injury
      [](const VectorXd& x) { return expit(x(5) + x(3)); },                    // age and stranger
      [](const VectorXd& x) { return std::cos(2.0 * x(5)) * (1.0 + x(2)); },  // weapon-modulated age
  };
  std::vector<std::vector<double>> diff(fns.size(), std::vector<double>(reps));
  std::atomic<int> next{0};
  std::atomic<int> errors{0};
  auto worker = [&] {
    for (int r; (r = next++) < reps;) {
      try {
        const std::uint64_t seed = derive_seed(spec.seed, 5, static_cast<std::uint64_t>(r));
        const PiModel m = fit_weighted_logit(generate_survey(spec, derive_seed(seed, 1)));
        const OffensePopulation pop = generate_offenses(spec, derive_seed(seed, 2));
        const OffenseSet& d = pop.reported;
        const VectorXd pi = predict_pi(m, d.z());
        for (size_t f = 0; f < fns.size(); ++f) {
          VectorXd fr(d.incidents());
          for (Index i = 0; i < d.incidents(); ++i) fr(i) = fns[f](d.x().row(d.offset(i)).transpose());
          double pop_mean = 0.0;
          for (Index i = 0; i < pop.population_size; ++i) pop_mean += fns[f](pop.population_x.row(i).transpose());
          pop_mean /= static_cast<double>(pop.population_size);
          diff[f][r] = reweighted_mean(fr, pi) - pop_mean;
        }
      } catch (const Error&) {
        ++errors;
      }
    }
  };
  std::vector<std::thread> pool;
  const unsigned n_threads = std::max(1u, std::thread::hardware_concurrency());
  for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  Checks c;
  c.expect(errors == 0, "replication errors");
  std::string summary = std::to_string(reps) + " reps, |mean diff|/MC SE:";
  for (size_t f = 0; f < fns.size(); ++f) {
    double mean = 0.0;
    for (double v : diff[f]) mean += v / reps;
    double ss = 0.0;
    for (double v : diff[f]) ss += (v - mean) * (v - mean);
    const double se = std::sqrt(ss / (reps - 1) / reps);
    const double z = std::abs(mean) / se;
    summary += " f" + std::to_string(f + 1) + " " + fmt("%.2f", z);
    c.expect(z < 3.0, "f" + std::to_string(f + 1) + " z " + fmt("%.2f", z));
  }
  return c.outcome(summary);
}

// 6. Exchangeable inverse identities and PSD sandwiches.
Outcome linear_algebra() {
  Checks c;
  double worst = 0.0;
  for (Index k = 1; k <= 6; ++k) {
    for (double alpha : {-0.2, 0.0, 0.3, 0.5, 0.9}) {
      if (k > 1 && alpha <= -1.0 / static_cast<double>(k - 1)) {
        // -0.2 is the singular boundary for K = 6
        bool threw = false;
        try {
          exchangeable_inverse(k, alpha);
        } catch (const Error& e) {
          threw = e.code() == ErrorCode::InvalidCorrelation;
        }
        c.expect(threw, "K=" + std::to_string(k) + " alpha=" + fmt("%.1f", alpha) + " not rejected");
        continue;
      }
      MatrixXd r = MatrixXd::Constant(k, k, alpha);
      r.diagonal().setOnes();
      const double e = (exchangeable_inverse(k, alpha) - r.inverse()).lpNorm<Eigen::Infinity>();
      worst = std::max(worst, e);
      c.expect(e < 1e-10, "inverse K=" + std::to_string(k) + " alpha=" + fmt("%.1f", alpha));
    }
  }
  ScenarioSpec spec = clustered_scenario();
  spec.population_size = 20000;
  const PiModel m = fit_reporting_model(generate_survey(spec, 61));
  const OffensePopulation pop = generate_offenses(spec, 62);
  const FirstStage fs = FirstStage::from_model(m, pop.reported);
  const ArrestFit two = arrest_sandwich_covariance(fit_arrest_model(pop.reported, fs), pop.reported, fs);
  const GEEFit gee = fit_arrest_gee(pop.reported, fs);
  const ArrestFit un = compare_unadjusted(pop.reported);
  c.expect(sym_psd(*m.sigma_v), "survey covariance");
  c.expect(sym_psd(two.sigma), "two-step covariance");
  c.expect(sym_psd(gee.sigma_gee), "GEE covariance");
  c.expect(sym_psd(un.sigma), "unadjusted covariance");
  const double min_eig = std::min({min_eigenvalue(*m.sigma_v), min_eigenvalue(two.sigma), min_eigenvalue(gee.sigma_gee)});
  return c.outcome("max inverse error " + fmt("%.1e", worst) + ", smallest sandwich eigenvalue " + fmt("%.3g", min_eig));
}

// 7. Analytic Jacobians against central differences.
Outcome gradients() {
  ScenarioSpec spec = clustered_scenario();
  spec.population_size = 3000;
  const OffensePopulation pop = generate_offenses(spec, 71);
  const OffenseSet& d = pop.reported;
  const VectorXd& pi = pop.reported_pi;
  const SurveyData survey = generate_survey(spec, 72);
  std::mt19937_64 rng(73);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Checks c;
  double worst_two = 0.0, worst_gee = 0.0, worst_design = 0.0;
  for (int p = 0; p < 20; ++p) {
    VectorXd theta(6);
    for (Index j = 0; j < 6; ++j) theta(j) = spec.theta0[j] + 0.5 * u(rng);
    const double alpha = 0.4 * u(rng) + 0.2;
    const MatrixXd a2 = arrest_score_jacobian(d, pi, theta);
    const MatrixXd n2 = oracle::finite_jacobian([&](const VectorXd& t) { return arrest_score(d, pi, t); }, theta);
    const MatrixXd ag = gee_score_jacobian(d, pi, theta, alpha);
    const MatrixXd ng = oracle::finite_jacobian([&](const VectorXd& t) { return gee_score(d, pi, t, alpha); }, theta);
    VectorXd gamma(4);
    for (Index j = 0; j < 4; ++j) gamma(j) = spec.gamma0[j] + 0.5 * u(rng);
    const MatrixXd ad = weighted_score_jacobian(survey, gamma);
    const MatrixXd nd = oracle::finite_jacobian([&](const VectorXd& g) { return weighted_score(survey, g); }, gamma);
    worst_two = std::max(worst_two, rel_err(a2, n2));
    worst_gee = std::max(worst_gee, rel_err(ag, ng));
    worst_design = std::max(worst_design, rel_err(ad, nd));
  }
  c.expect(worst_two < 1e-6, "two-step " + fmt("%.2e", worst_two));
  c.expect(worst_gee < 1e-6, "GEE " + fmt("%.2e", worst_gee));
  c.expect(worst_design < 1e-6, "survey score " + fmt("%.2e", worst_design));
  return c.outcome("20 points, max relative error two-step " + fmt("%.1e", worst_two) + ", GEE " +
                   fmt("%.1e", worst_gee) + ", survey score " + fmt("%.1e", worst_design));
}

// 8. Invariances.
Outcome invariances() {
  Checks c;
  const ScenarioSpec spec;
  const SurveyData s = generate_survey(spec, 81);
  const PiModel base = fit_reporting_model(s);
  double worst = 0.0;
  for (double k : {0.01, 3.0, 1000.0}) {
    const PiModel m = fit_reporting_model(s.scaled_weights(k));
    worst = std::max({worst, (m.gamma_hat - base.gamma_hat).lpNorm<Eigen::Infinity>(),
                      (*m.sigma_v - *base.sigma_v).lpNorm<Eigen::Infinity>()});
  }
  c.expect(worst < 1e-10, "weight scaling " + fmt("%.2e", worst));

  const VectorXd pred = predict_pi(base, s.z);
  const double auc = weighted_auc(pred, s.r, s.weight);
  const VectorXd logit = pred.unaryExpr([](double p) { return std::log(p / (1.0 - p)); });
  const VectorXd cubic = pred.unaryExpr([](double p) { return std::pow(p, 3) + 2.0 * p; });
  const double d_auc = std::max(std::abs(weighted_auc(logit, s.r, s.weight) - auc),
                                std::abs(weighted_auc(cubic, s.r, s.weight) - auc));
  c.expect(d_auc < 1e-12, "AUC transform " + fmt("%.2e", d_auc));

  const OffensePopulation pop = generate_offenses(spec, 82);
  const FirstStage fs = FirstStage::from_model(base, pop.reported);
  bool monotone = true;
  std::vector<std::string> groups = pop.reported.labels.at("weapon");
  bool prev = true;
  for (double floor = 0.0; floor <= 1.0 + 1e-12; floor += 0.005) {
    const bool now = positivity_report(fs.pi, groups, floor).passed;
    if (now && !prev) monotone = false;
    prev = now;
  }
  c.expect(monotone, "positivity floor monotonicity");
  return c.outcome("weight scaling max change " + fmt("%.1e", worst) + ", AUC change " + fmt("%.1e", d_auc) +
                   ", positivity monotone " + (monotone ? "yes" : "no"));
}

// 9. Adjusted injury coefficient exceeds the unadjusted one.
Outcome injury_pattern() {
  const ScenarioSpec spec;  // reporting increases with injury
  const PiModel m = fit_reporting_model(generate_survey(spec, 91));
  const OffensePopulation pop = generate_offenses(spec, 92);
  const ArrestFit adj = fit_arrest_model(pop.reported, m);
  const ArrestFit un = compare_unadjusted(pop.reported);
  Checks c;
  c.expect(spec.gamma0[1] > 0.0 && m.gamma_hat(1) > 0.0, "reporting does not increase with injury");
  c.expect(adj.theta_hat(1) > un.theta_hat(1), "adjusted injury coefficient not larger");
  return c.outcome("injury: adjusted " + fmt("%.4f", adj.theta_hat(1)) + " > unadjusted " + fmt("%.4f", un.theta_hat(1)));
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// 10. Fixed-seed pipeline reproduces the committed bundle byte for byte.
Outcome golden(const fs::path& golden_dir) {
  Checks c;
  const ScenarioSpec spec = load_scenario((golden_dir / "scenario.json").string());
  std::set<std::string> seen;
  for (int run = 0; run < 2; ++run) {
    const fs::path work = fs::temp_directory_path() / ("darkfig_acceptance_golden_" + std::to_string(run));
    fs::remove_all(work);
    write_simulation(spec, spec.seed, work.string());
    fs::copy_file(golden_dir / "config.json", work / "config.json", fs::copy_options::overwrite_existing);
    const PipelineConfig config = PipelineConfig::load((work / "config.json").string());
    write_bundle(run_pipeline(config), config.output_dir);
    for (const auto& e : fs::directory_iterator(golden_dir / "expected")) {
      const std::string name = e.path().filename().string();
      seen.insert(name);
      const fs::path got = fs::path(config.output_dir) / name;
      c.expect(fs::exists(got) && slurp(got) == slurp(e.path()), "run " + std::to_string(run + 1) + " " + name);
    }
    for (const auto& e : fs::directory_iterator(config.output_dir)) {
      const std::string name = e.path().filename().string();
      c.expect(fs::exists(golden_dir / "expected" / name), "unexpected file " + name);
    }
    fs::remove_all(work);
  }
  return c.outcome(std::to_string(seen.size()) + " files compared over two runs");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string golden_dir = DARKFIG_GOLDEN_DIR;
  std::vector<int> only;
  app.add_option("--golden-dir", golden_dir, "directory with scenario.json, config.json and expected/");
  app.add_option("--only", only, "run only these criteria")->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);

  struct Criterion {
    int id;
    const char* name;
    double limit_seconds;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "reduction equivalence", 5.0, reduction},
      {2, "hand oracle", 0.0, hand_oracle},
      {3, "consistency", 600.0, consistency},
      {4, "coverage", 1800.0, coverage},
      {5, "change of measure", 0.0, change_of_measure},
      {6, "linear-algebra identities", 0.0, linear_algebra},
      {7, "gradient checks", 0.0, gradients},
      {8, "invariance suite", 0.0, invariances},
      {9, "injury coefficient pattern", 0.0, injury_pattern},
      {10, "golden bundle determinism", 0.0, [&] { return golden(golden_dir); }},
  };

  int failed = 0;
  for (const auto& cr : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), cr.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = cr.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (cr.limit_seconds > 0.0 && sec >= cr.limit_seconds) {
      o.pass = false;
      o.detail += "; runtime limit " + fmt("%.0f", cr.limit_seconds) + " s exceeded";
    }
    std::printf("[%s] %2d %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", cr.id, cr.name, o.detail.c_str(), sec);
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
