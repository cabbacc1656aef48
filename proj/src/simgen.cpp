#include "darkfig/simgen.hpp"

#include "darkfig/diagnostics.hpp"
#include "darkfig/error.hpp"
#include "darkfig/gee_twostep.hpp"
#include "darkfig/reweight.hpp"
#include "darkfig/twostep_logit.hpp"

#include <boost/math/distributions/normal.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/random/bernoulli_distribution.hpp>
#include <boost/random/discrete_distribution.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_int_distribution.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <optional>
#include <random>
#include <thread>

namespace darkfig {

namespace {

constexpr std::string_view kModule = "simgen";
constexpr int kZCells = 8;

struct Cells {
  // z cell c: injury = c & 1, weapon = (c >> 1) & 1, stranger = (c >> 2) & 1
  std::vector<VectorXd> z;
  std::vector<double> z_prob;
  std::vector<double> pi;
  // offender cell o = black * levels + age index
  std::vector<double> o_prob;
  std::vector<double> black;
  std::vector<double> age;
  // per (z cell, offender cell)
  MatrixXd q;
};

double bern(double p, int v) { return v ? p : 1.0 - p; }

Cells enumerate(const ScenarioSpec& s) {
  Cells c;
  const VectorXd gamma = Eigen::Map<const VectorXd>(s.gamma0.data(), s.gamma0.size());
  const VectorXd theta = Eigen::Map<const VectorXd>(s.theta0.data(), s.theta0.size());
  for (int k = 0; k < kZCells; ++k) {
    const int inj = k & 1, wpn = (k >> 1) & 1, str = (k >> 2) & 1;
    VectorXd z(4);
    z << 1.0, inj, wpn, str;
    c.z.push_back(z);
    c.z_prob.push_back(bern(s.p_injury, inj) * bern(s.p_weapon, wpn) * bern(s.p_stranger, str));
    c.pi.push_back(s.always_report ? 1.0 : expit(gamma.dot(z)));
  }
  const int levels = static_cast<int>(s.age_levels.size());
  for (int b = 0; b < 2; ++b) {
    for (int a = 0; a < levels; ++a) {
      c.o_prob.push_back(bern(s.p_black, b) / levels);
      c.black.push_back(b);
      c.age.push_back(s.age_levels[a]);
    }
  }
  const Index no = static_cast<Index>(c.o_prob.size());
  c.q.resize(kZCells, no);
  for (int k = 0; k < kZCells; ++k) {
    for (Index o = 0; o < no; ++o) {
      VectorXd x(6);
      x << c.z[k], c.black[o], c.age[o];
      c.q(k, o) = expit(theta.dot(x) + s.interaction * c.black[o] * c.z[k](3));
    }
  }
  return c;
}

/// P(A = 1 | U = u) for threshold model with marginal m.
double conditional_arrest(double m, double rho, double u) {
  static const boost::math::normal_distribution<double> std_normal;
  const double t = boost::math::quantile(std_normal, m);
  return normal_cdf((t - std::sqrt(rho) * u) / std::sqrt(1.0 - rho));
}

template <class F>
double integrate_normal(F f) {
  auto g = [&](double u) { return f(u) * std::exp(-0.5 * u * u) / std::sqrt(2.0 * M_PI); };
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
      g, -std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(), 15, 1e-13);
}

}  // namespace

std::vector<std::string> ScenarioSpec::z_names() { return {"intercept", "injury", "weapon", "stranger"}; }

std::vector<std::string> ScenarioSpec::x_names() {
  return {"intercept", "injury", "weapon", "stranger", "offender_black", "offender_age"};
}

ScenarioSpec ScenarioSpec::scaled(int factor) const {
  ScenarioSpec out = *this;
  out.psus_per_stratum *= factor;
  out.population_size *= factor;
  return out;
}

void ScenarioSpec::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::SpecInvalid, kModule, m); };
  if (gamma0.size() != 4) fail("gamma0 must have 4 entries (intercept, injury, weapon, stranger)");
  if (theta0.size() != 6) fail("theta0 must have 6 entries");
  for (double p : {p_injury, p_weapon, p_stranger, p_black}) {
    if (!(p > 0.0 && p < 1.0)) fail("covariate probabilities must lie in (0, 1)");
  }
  if (age_levels.empty()) fail("age_levels is empty");
  for (double a : age_levels) {
    if (!(std::abs(a) < covariate_bound)) fail("age level exceeds the covariate bound");
  }
  if (strata < 1 || psus_per_stratum < 2 || units_per_psu < 1) fail("survey needs >= 1 stratum, >= 2 PSUs, >= 1 unit");
  if (!(psu_effect_sd >= 0.0)) fail("psu_effect_sd must be nonnegative");
  if (!(oversample_injury >= 1.0)) fail("oversample_injury must be >= 1");
  if (!(stratum_weight_ratio > 0.0)) fail("stratum_weight_ratio must be positive");
  if (population_size < 1) fail("population_size must be positive");
  if (cluster_probs.empty()) fail("cluster_probs is empty");
  double total = 0.0;
  for (double p : cluster_probs) {
    if (!(p >= 0.0)) fail("cluster_probs must be nonnegative");
    total += p;
  }
  if (!(total > 0.0)) fail("cluster_probs sum to zero");
  if (!(latent_correlation >= 0.0 && latent_correlation < 1.0)) fail("latent_correlation must lie in [0, 1)");
}

std::vector<double> joint_outcome_probabilities(const VectorXd& m, double rho) {
  const Index k = m.size();
  const std::size_t patterns = std::size_t{1} << k;
  std::vector<double> out(patterns);
  for (std::size_t s = 0; s < patterns; ++s) {
    if (rho == 0.0) {
      double p = 1.0;
      for (Index j = 0; j < k; ++j) p *= (s >> j) & 1 ? m(j) : 1.0 - m(j);
      out[s] = p;
    } else {
      out[s] = integrate_normal([&](double u) {
        double p = 1.0;
        for (Index j = 0; j < k; ++j) {
          const double pj = conditional_arrest(m(j), rho, u);
          p *= (s >> j) & 1 ? pj : 1.0 - pj;
        }
        return p;
      });
    }
  }
  return out;
}

namespace {

/// Throws SpecInvalid when q > pi in some cell or, if enforced, pi falls
/// below the floor. Returns max q / pi.
double require_admissible(const ScenarioSpec& spec, const Cells& c) {
  double worst = 0.0;
  for (int k = 0; k < kZCells; ++k) {
    for (Index o = 0; o < c.q.cols(); ++o) worst = std::max(worst, c.q(k, o) / c.pi[k]);
  }
  if (worst > 1.0) {
    throw Error(ErrorCode::SpecInvalid, kModule, "arrest probability exceeds reporting probability for some covariates");
  }
  if (spec.enforce_positivity && *std::min_element(c.pi.begin(), c.pi.end()) < spec.positivity_floor) {
    throw Error(ErrorCode::SpecInvalid, kModule, "implied reporting propensity falls below the positivity floor");
  }
  return worst;
}

}  // namespace

ScenarioTruth scenario_truth(const ScenarioSpec& spec) {
  spec.validate();
  const Cells c = enumerate(spec);
  const Index no = static_cast<Index>(c.o_prob.size());
  const double rho = spec.latent_correlation;

  ScenarioTruth t;
  t.population_size = spec.population_size;
  t.gamma0 = Eigen::Map<const VectorXd>(spec.gamma0.data(), 4);
  t.theta0 = Eigen::Map<const VectorXd>(spec.theta0.data(), 6);
  t.min_pi = *std::min_element(c.pi.begin(), c.pi.end());
  t.max_q_over_pi = require_admissible(spec, c);
  for (int k = 0; k < kZCells; ++k) t.pi_star += c.z_prob[k] * c.pi[k];

  double kp_total = 0.0;
  for (double p : spec.cluster_probs) kp_total += p;
  double pair_mass = 0.0;
  for (size_t j = 1; j < spec.cluster_probs.size(); ++j) pair_mass += spec.cluster_probs[j];

  double alpha_num = 0.0;
  double alpha_den = 0.0;
  for (int k = 0; k < kZCells; ++k) {
    const double pi = c.pi[k];
    // E over offenders of P(no arrest | U = u), offenders i.i.d. given z
    auto none = [&](double u) {
      double e = 0.0;
      for (Index o = 0; o < no; ++o) {
        const double m = c.q(k, o) / pi;
        e += c.o_prob[o] * (1.0 - (rho == 0.0 ? m : conditional_arrest(m, rho, u)));
      }
      return e;
    };
    for (size_t j = 0; j < spec.cluster_probs.size(); ++j) {
      const double pk = spec.cluster_probs[j] / kp_total;
      if (pk == 0.0) continue;
      const int size = static_cast<int>(j) + 1;
      const double p_none = rho == 0.0 ? std::pow(none(0.0), size)
                                       : integrate_normal([&](double u) { return std::pow(none(u), size); });
      t.q_star += pk * c.z_prob[k] * pi * (1.0 - p_none);
    }
    if (pair_mass > 0.0) {
      double e = 0.0;
      for (Index o1 = 0; o1 < no; ++o1) {
        for (Index o2 = 0; o2 < no; ++o2) {
          const double q1 = c.q(k, o1);
          const double q2 = c.q(k, o2);
          VectorXd m(2);
          m << q1 / pi, q2 / pi;
          const std::vector<double> joint = joint_outcome_probabilities(m, rho);
          const double cov = joint[3] - m(0) * m(1);
          e += c.o_prob[o1] * c.o_prob[o2] * cov / std::sqrt(q1 * (1.0 - q1) * q2 * (1.0 - q2));
        }
      }
      alpha_num += c.z_prob[k] * pi * e;
      alpha_den += c.z_prob[k] * pi;
    }
  }
  t.alpha0 = alpha_den > 0.0 ? alpha_num / alpha_den : 0.0;
  return t;
}

SurveyData generate_survey(const ScenarioSpec& spec, std::uint64_t seed) {
  spec.validate();
  const VectorXd gamma = Eigen::Map<const VectorXd>(spec.gamma0.data(), 4);
  std::mt19937_64 rng(seed);
  boost::random::normal_distribution<double> normal;
  const Index n = static_cast<Index>(spec.strata) * spec.psus_per_stratum * spec.units_per_psu;

  SurveyData d;
  d.feature_names = ScenarioSpec::z_names();
  d.z.resize(n, 4);
  d.r.resize(n);
  d.weight.resize(n);
  d.stratum.reserve(n);
  d.psu.reserve(n);
  auto shift = [](double p, double u) { return expit(std::log(p / (1.0 - p)) + u); };

  Index i = 0;
  for (int h = 0; h < spec.strata; ++h) {
    const double c_h = 100.0 * std::pow(spec.stratum_weight_ratio, h);
    for (int p = 0; p < spec.psus_per_stratum; ++p) {
      const double u = spec.psu_effect_sd * normal(rng);
      boost::random::bernoulli_distribution<double> inj(shift(spec.p_injury, u));
      boost::random::bernoulli_distribution<double> wpn(shift(spec.p_weapon, u));
      boost::random::bernoulli_distribution<double> str(shift(spec.p_stranger, u));
      boost::random::bernoulli_distribution<double> keep_uninjured(1.0 / spec.oversample_injury);
      for (int accepted = 0; accepted < spec.units_per_psu;) {
        const int a = inj(rng), b = wpn(rng), c = str(rng);
        if (!a && !keep_uninjured(rng)) continue;
        const double f = a ? 1.0 : 1.0 / spec.oversample_injury;
        d.z.row(i) << 1.0, a, b, c;
        const double pi = spec.always_report ? 1.0 : expit(gamma.dot(d.z.row(i).transpose()));
        d.r(i) = boost::random::bernoulli_distribution<double>(pi)(rng);
        d.weight(i) = c_h / f;
        d.stratum.push_back("s" + std::to_string(h + 1));
        d.psu.push_back("p" + std::to_string(p + 1));
        ++accepted;
        ++i;
      }
    }
  }
  return d;
}

OffensePopulation generate_offenses(const ScenarioSpec& spec, std::uint64_t seed) {
  spec.validate();
  const Cells c = enumerate(spec);
  require_admissible(spec, c);
  const Index no = static_cast<Index>(c.o_prob.size());
  const int levels = static_cast<int>(spec.age_levels.size());
  const double rho = spec.latent_correlation;

  // Latent thresholds per (z cell, offender cell).
  const boost::math::normal_distribution<double> std_normal;
  MatrixXd threshold(kZCells, no);
  for (int k = 0; k < kZCells; ++k) {
    for (Index o = 0; o < no; ++o) threshold(k, o) = boost::math::quantile(std_normal, c.q(k, o) / c.pi[k]);
  }

  std::mt19937_64 rng(seed);
  boost::random::bernoulli_distribution<double> inj(spec.p_injury), wpn(spec.p_weapon), str(spec.p_stranger),
      blk(spec.p_black);
  boost::random::uniform_int_distribution<int> age(0, levels - 1);
  boost::random::discrete_distribution<int> cluster(spec.cluster_probs.begin(), spec.cluster_probs.end());
  boost::random::normal_distribution<double> normal;

  OffensePopulation out;
  out.population_size = spec.population_size;
  out.population_x.resize(spec.population_size, 6);
  out.population_reported.assign(spec.population_size, 0);
  OffenseSetBuilder builder(ScenarioSpec::z_names(), ScenarioSpec::x_names());
  std::vector<double> reported_pi;
  std::vector<std::string> lab_inj, lab_wpn, lab_str;
  const double load = std::sqrt(rho);
  const double spread = std::sqrt(1.0 - rho);

  for (Index i = 0; i < spec.population_size; ++i) {
    const int a = inj(rng), b = wpn(rng), s = str(rng);
    const int zc = a | (b << 1) | (s << 2);
    const int k = cluster(rng) + 1;
    std::vector<Index> oc(k);
    for (int j = 0; j < k; ++j) {
      const int bl = blk(rng);
      oc[j] = bl * levels + age(rng);
    }
    const double pi = c.pi[zc];
    const bool reported = spec.always_report || boost::random::bernoulli_distribution<double>(pi)(rng);
    out.population_x.row(i) << 1.0, a, b, s, c.black[oc[0]], c.age[oc[0]];
    if (!reported) continue;

    out.population_reported[i] = 1;
    MatrixXd x(k, 6);
    VectorXd arrest(k);
    const double u = normal(rng);
    for (int j = 0; j < k; ++j) {
      x.row(j) << 1.0, a, b, s, c.black[oc[j]], c.age[oc[j]];
      arrest(j) = load * u + spread * normal(rng) < threshold(zc, oc[j]) ? 1.0 : 0.0;
    }
    if (arrest.maxCoeff() > 0.0) ++out.population_arrests;
    builder.add_incident("inc" + std::to_string(i + 1), c.z[zc], x, arrest);
    reported_pi.push_back(pi);
    lab_inj.push_back(std::to_string(a));
    lab_wpn.push_back(std::to_string(b));
    lab_str.push_back(std::to_string(s));
  }
  out.reported = builder.build();
  out.reported.labels.emplace("injury", std::move(lab_inj));
  out.reported.labels.emplace("weapon", std::move(lab_wpn));
  out.reported.labels.emplace("stranger", std::move(lab_str));
  out.reported_pi = Eigen::Map<const VectorXd>(reported_pi.data(), static_cast<Index>(reported_pi.size()));
  return out;
}

const ParameterCoverage& CoverageReport::at(const std::string& name) const {
  for (const auto& p : parameters) {
    if (p.name == name) return p;
  }
  throw Error(ErrorCode::InvalidInput, kModule, "no coverage entry named " + name);
}

namespace {

struct Draw {
  double estimate = 0.0;
  double se = 0.0;
};

struct Replicate {
  std::vector<std::optional<Draw>> draws;
  std::vector<std::string> failures;
};

}  // namespace

CoverageReport run_coverage(const ScenarioSpec& spec, const CoverageOptions& options) {
  if (options.replications < 1) throw Error(ErrorCode::InvalidInput, kModule, "replications must be positive");
  CoverageReport report;
  report.truth = scenario_truth(spec);
  report.replications = options.replications;
  const ScenarioTruth& truth = report.truth;

  std::vector<std::string> names;
  std::vector<double> truths;
  const auto zn = ScenarioSpec::z_names();
  const auto xn = ScenarioSpec::x_names();
  const bool fit_survey = options.reporting && !spec.always_report;
  const std::size_t gamma_at = names.size();
  if (fit_survey) {
    for (size_t j = 0; j < zn.size(); ++j) {
      names.push_back("gamma:" + zn[j]);
      truths.push_back(truth.gamma0(j));
    }
  }
  const std::size_t rates_at = names.size();
  if (options.rates) {
    names.insert(names.end(), {"N", "pi_star", "q_star"});
    truths.insert(truths.end(), {static_cast<double>(truth.population_size), truth.pi_star, truth.q_star});
  }
  const std::size_t theta_at = names.size();
  if (options.twostep) {
    for (size_t j = 0; j < xn.size(); ++j) {
      names.push_back("theta:" + xn[j]);
      truths.push_back(truth.theta0(j));
    }
  }
  const std::size_t gee_at = names.size();
  if (options.gee) {
    for (size_t j = 0; j < xn.size(); ++j) {
      names.push_back("gee:" + xn[j]);
      truths.push_back(truth.theta0(j));
    }
  }

  const bool oracle = options.oracle_first_stage || spec.always_report;
  auto run_one = [&](int rep) {
    Replicate out;
    out.draws.assign(names.size(), std::nullopt);
    const std::uint64_t rep_seed = derive_seed(spec.seed, static_cast<std::uint64_t>(rep));
    std::optional<PiModel> model;
    if (!oracle) {
      try {
        const SurveyData survey = generate_survey(spec, derive_seed(rep_seed, 1));
        model = fit_reporting_model(survey);
        if (fit_survey) {
          const double nv = static_cast<double>(model->n_survey);
          for (size_t j = 0; j < zn.size(); ++j) {
            out.draws[gamma_at + j] = Draw{model->gamma_hat(j), std::sqrt((*model->sigma_v)(j, j) / nv)};
          }
        }
      } catch (const Error& e) {
        out.failures.push_back("reporting:" + std::string(to_string(e.code())));
        return out;
      }
    }
    const OffensePopulation pop = generate_offenses(spec, derive_seed(rep_seed, 2));
    FirstStage fs;
    try {
      fs = oracle ? FirstStage::known(pop.reported_pi) : FirstStage::from_model(*model, pop.reported);
    } catch (const Error& e) {
      out.failures.push_back("first_stage:" + std::string(to_string(e.code())));
      return out;
    }
    if (options.rates) {
      try {
        const RateSummary r = estimate_rates(pop.reported, fs);
        out.draws[rates_at] = Draw{r.total.total.value, r.total.total.se};
        out.draws[rates_at + 1] = Draw{r.notification.value, r.notification.se};
        out.draws[rates_at + 2] = Draw{r.arrest.value, r.arrest.se};
      } catch (const Error& e) {
        out.failures.push_back("rates:" + std::string(to_string(e.code())));
      }
    }
    if (options.twostep) {
      try {
        const ArrestFit fit = arrest_sandwich_covariance(fit_arrest_model(pop.reported, fs), pop.reported, fs);
        const VectorXd se = fit.standard_errors();
        for (size_t j = 0; j < xn.size(); ++j) out.draws[theta_at + j] = Draw{fit.theta_hat(j), se(j)};
      } catch (const Error& e) {
        out.failures.push_back("twostep:" + std::string(to_string(e.code())));
      }
    }
    if (options.gee) {
      try {
        const GEEFit fit = fit_arrest_gee(pop.reported, fs);
        const VectorXd se = fit.standard_errors();
        for (size_t j = 0; j < xn.size(); ++j) out.draws[gee_at + j] = Draw{fit.theta_hat(j), se(j)};
      } catch (const Error& e) {
        out.failures.push_back("gee:" + std::string(to_string(e.code())));
      }
    }
    return out;
  };

  std::vector<Replicate> results(options.replications);
  const int threads = std::max(1, options.threads > 0 ? options.threads
                                                      : static_cast<int>(std::thread::hardware_concurrency()));
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&]() {
    for (int rep = next++; rep < options.replications; rep = next++) {
      try {
        results[rep] = run_one(rep);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < std::min(threads, options.replications); ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);

  for (const auto& r : results) {
    for (const auto& f : r.failures) ++report.failures[f];
  }
  for (size_t p = 0; p < names.size(); ++p) {
    ParameterCoverage pc;
    pc.name = names[p];
    pc.truth = truths[p];
    double sum = 0.0, sum_se = 0.0, sq = 0.0;
    Index covered = 0;
    std::vector<double> est;
    for (const auto& r : results) {
      if (!r.draws[p]) continue;
      const Draw& d = *r.draws[p];
      est.push_back(d.estimate);
      sum += d.estimate;
      sum_se += d.se;
      sq += (d.estimate - pc.truth) * (d.estimate - pc.truth);
      if (std::abs(d.estimate - pc.truth) <= kWaldZ * d.se) ++covered;
    }
    pc.replications = static_cast<Index>(est.size());
    if (pc.replications > 0) {
      const double k = static_cast<double>(pc.replications);
      pc.mean = sum / k;
      pc.bias = pc.mean - pc.truth;
      double ss = 0.0;
      for (double e : est) ss += (e - pc.mean) * (e - pc.mean);
      pc.sd = pc.replications > 1 ? std::sqrt(ss / (k - 1.0)) : 0.0;
      pc.mc_se = pc.sd / std::sqrt(k);
      pc.rmse = std::sqrt(sq / k);
      pc.mean_se = sum_se / k;
      pc.coverage = static_cast<double>(covered) / k;
      pc.coverage_se = std::sqrt(pc.coverage * (1.0 - pc.coverage) / k);
    }
    report.parameters.push_back(pc);
  }
  return report;
}

}  // namespace darkfig
