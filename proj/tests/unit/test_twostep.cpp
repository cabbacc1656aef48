#include "darkfig/error.hpp"
#include "darkfig/simgen.hpp"
#include "darkfig/twostep_logit.hpp"
#include "fixtures.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace darkfig;

namespace {

struct Sample {
  oracle::Mat x;
  oracle::Vec a;
  OffenseSet data;
};

Sample sample(Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u;
  Sample s;
  for (Index i = 0; i < n; ++i) {
    const oracle::Vec row{1.0, z(rng), u(rng) < 0.4 ? 1.0 : 0.0};
    s.x.push_back(row);
    s.a.push_back(u(rng) < oracle::sigmoid(-0.8 + 0.5 * row[1] + 0.4 * row[2]) ? 1.0 : 0.0);
  }
  s.data = fixture::single_offenders(s.x, s.a);
  return s;
}

PiModel model_for(const OffenseSet& d, double scale = 1.0) {
  PiModel m;
  m.gamma_hat = VectorXd(3);
  m.gamma_hat << 1.2, 0.3, -0.5;
  m.feature_names = d.z_names();
  MatrixXd s(3, 3);
  s << 2.0, 0.4, 0.1, 0.4, 1.2, -0.2, 0.1, -0.2, 1.6;
  m.sigma_v = scale * s;
  m.n_survey = 120;
  return m;
}

/// Hand-assembled J^-1 (mean h h^T) J^-1 for incident clusters with known pi.
oracle::Mat sandwich_oracle(const OffenseSet& d, const VectorXd& pi, const VectorXd& theta) {
  const Index p = theta.size();
  oracle::Mat j(p, oracle::Vec(p, 0.0)), m(p, oracle::Vec(p, 0.0));
  for (Index i = 0; i < d.incidents(); ++i) {
    oracle::Vec h(p, 0.0);
    for (Index r = d.offset(i); r < d.offset(i) + d.cluster_size(i); ++r) {
      const double q = oracle::sigmoid(d.x().row(r).dot(theta));
      for (Index a = 0; a < p; ++a) {
        h[a] += (d.a()(r) - q / pi(i)) * d.x()(r, a);
        for (Index b = 0; b < p; ++b) j[a][b] += q * (1 - q) / pi(i) * d.x()(r, a) * d.x()(r, b);
      }
    }
    for (Index a = 0; a < p; ++a)
      for (Index b = 0; b < p; ++b) m[a][b] += h[a] * h[b];
  }
  const oracle::Mat ji = oracle::inverse(j);
  oracle::Mat out = oracle::matmul(oracle::matmul(ji, m), ji);
  for (auto& row : out)
    for (double& e : row) e *= static_cast<double>(d.incidents());
  return out;
}

}  // namespace

TEST_CASE("full reporting reduces to ordinary logistic regression") {
  const Sample s = sample(300, 1);
  const FirstStage fs = FirstStage::known(s.data.incidents());
  const ArrestFit fit = arrest_sandwich_covariance(fit_arrest_model(s.data, fs), s.data, fs);
  const oracle::Vec ref = oracle::newton_logit(s.x, s.a, oracle::Vec(s.x.size(), 1.0));
  CHECK(oracle::max_abs_diff(ref, fit.theta_hat) < 1e-8);
  const oracle::Mat cov = oracle::logistic_sandwich(s.x, s.a, oracle::to_vec(fit.theta_hat));
  CHECK(oracle::max_abs_diff(cov, fit.sigma) < 1e-8);
  CHECK(fit.q_over_pi_count == 0);
  CHECK(!fit.first_stage_omitted);
  CHECK(fit.warnings.empty());

  const ArrestFit un = compare_unadjusted(s.data);
  CHECK((un.theta_hat - fit.theta_hat).norm() == 0.0);
  CHECK((un.sigma - fit.sigma).norm() == 0.0);
}

TEST_CASE("propensity-corrected fit matches the scaled Newton oracle") {
  const Sample s = sample(400, 2);
  const FirstStage fs = FirstStage::from_model(model_for(s.data), s.data);
  const ArrestFit fit = fit_arrest_model(s.data, fs);
  oracle::Vec scale;
  for (Index i = 0; i < fs.pi.size(); ++i) scale.push_back(1.0 / fs.pi(i));
  const oracle::Vec ref = oracle::newton_logit(s.x, s.a, oracle::Vec(s.x.size(), 1.0), scale);
  CHECK(oracle::max_abs_diff(ref, fit.theta_hat) < 1e-8);
  CHECK(arrest_score(s.data, fs.pi, fit.theta_hat).lpNorm<Eigen::Infinity>() < 1e-8 * 400);
}

TEST_CASE("arrest score Jacobian matches finite differences") {
  const Sample s = sample(120, 3);
  const VectorXd pi = FirstStage::from_model(model_for(s.data), s.data).pi;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (int rep = 0; rep < 20; ++rep) {
    VectorXd t(3);
    t << u(rng), u(rng), u(rng);
    const MatrixXd analytic = arrest_score_jacobian(s.data, pi, t);
    const MatrixXd numeric =
        oracle::finite_jacobian([&](const VectorXd& th) { return arrest_score(s.data, pi, th); }, t);
    CHECK((analytic - numeric).norm() / analytic.norm() < 1e-6);
  }
}

TEST_CASE("sandwich without first-stage covariance") {
  const Sample s = sample(250, 4);
  const VectorXd pi = FirstStage::from_model(model_for(s.data), s.data).pi;
  const FirstStage fs = FirstStage::known(pi);
  const ArrestFit fit = arrest_sandwich_covariance(fit_arrest_model(s.data, fs), s.data, fs);
  CHECK(oracle::max_abs_diff(sandwich_oracle(s.data, pi, fit.theta_hat), fit.sigma) < 1e-8);
  CHECK(!fit.first_stage_included);
  CHECK(fit.standard_errors()(1) == doctest::Approx(std::sqrt(fit.sigma(1, 1) / 250.0)));

  const FirstStage ext = FirstStage::from_external(pi);
  const ArrestFit e = arrest_sandwich_covariance(fit_arrest_model(s.data, ext), s.data, ext);
  CHECK(e.first_stage_omitted);
  REQUIRE(e.warnings.size() == 1);
  CHECK(e.warnings[0].rfind("MissingFirstStageCovariance", 0) == 0);
  CHECK((e.sigma - fit.sigma).norm() < 1e-14);
}

TEST_CASE("first-stage term of the sandwich") {
  const Sample s = sample(200, 6);
  const PiModel m = model_for(s.data);
  const FirstStage fs = FirstStage::from_model(m, s.data);
  const ArrestFit fit = arrest_sandwich_covariance(fit_arrest_model(s.data, fs), s.data, fs);
  REQUIRE(fit.first_stage_included);

  // J_gamma = d mean(h) / d gamma at fixed theta
  auto mean_score = [&](const VectorXd& g) {
    PiModel mm = m;
    mm.gamma_hat = g;
    return VectorXd(arrest_score(s.data, FirstStage::from_model(mm, s.data).pi, fit.theta_hat) / 200.0);
  };
  const MatrixXd jg = oracle::finite_jacobian(mean_score, m.gamma_hat);
  CHECK((jg - fit.j_gamma).norm() < 1e-7);

  const FirstStage known = FirstStage::known(fs.pi);
  const ArrestFit base = arrest_sandwich_covariance(fit, s.data, known);
  const double kappa = 200.0 / 120.0;
  const MatrixXd xi = base.xi + kappa * jg * (*m.sigma_v) * jg.transpose();
  CHECK((xi - fit.xi).norm() < 1e-6);
  const MatrixXd ji = fit.j_theta.inverse();
  CHECK((ji * xi * ji - fit.sigma).norm() < 1e-5);
  CHECK(fit.kappa == doctest::Approx(kappa));
}

TEST_CASE("covariance grows with the first-stage covariance") {
  const Sample s = sample(200, 7);
  MatrixXd prev;
  for (double scale : {0.0, 0.5, 1.0, 4.0}) {
    const FirstStage fs = FirstStage::from_model(model_for(s.data, scale), s.data);
    const ArrestFit fit = arrest_sandwich_covariance(fit_arrest_model(s.data, fs), s.data, fs);
    CHECK(min_eigenvalue(fit.sigma) > 0.0);
    if (prev.size() > 0) CHECK(min_eigenvalue(fit.sigma - prev) > -1e-12);
    prev = fit.sigma;
  }
}

TEST_CASE("clustered incidents sum their offender contributions") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> z;
  std::bernoulli_distribution coin(0.35);
  OffenseSetBuilder b({"intercept", "z1"}, {"intercept", "z1", "x2"});
  for (int i = 0; i < 150; ++i) {
    const int k = 1 + i % 3;
    VectorXd zi(2);
    zi << 1.0, z(rng);
    MatrixXd x(k, 3);
    VectorXd a(k);
    for (int j = 0; j < k; ++j) {
      x.row(j) << 1.0, zi(1), z(rng);
      a(j) = coin(rng) ? 1.0 : 0.0;
    }
    b.add_incident("c" + std::to_string(i), zi, x, a);
  }
  const OffenseSet d = b.build();
  VectorXd pi(d.incidents());
  for (Index i = 0; i < pi.size(); ++i) pi(i) = expit(0.8 + 0.5 * d.z()(i, 1));
  const FirstStage fs = FirstStage::known(pi);
  const ArrestFit fit = arrest_sandwich_covariance(fit_arrest_model(d, fs), d, fs);
  CHECK(arrest_score(d, pi, fit.theta_hat).norm() < 1e-8 * 150);
  CHECK(oracle::max_abs_diff(sandwich_oracle(d, pi, fit.theta_hat), fit.sigma) < 1e-8);
}

TEST_CASE("arrest fitting errors") {
  SUBCASE("every offender arrested under full reporting") {
    const Sample s = sample(30, 9);
    const OffenseSet all = fixture::single_offenders(s.x, oracle::Vec(30, 1.0));
    try {
      fit_arrest_model(all, FirstStage::known(30));
      FAIL("expected Separation");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::Separation);
    }
  }
  SUBCASE("constant covariate") {
    oracle::Mat x;
    for (int i = 0; i < 20; ++i) x.push_back({1.0, 0.1 * i, 2.0});
    const OffenseSet d = fixture::single_offenders(x, oracle::Vec{1, 0, 1, 0, 0, 1, 1, 0, 1, 0, 0, 0, 1, 1, 0, 1, 0, 0, 1, 0});
    try {
      fit_arrest_model(d, FirstStage::known(20));
      FAIL("expected SingularDesign");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::SingularDesign);
    }
  }
  SUBCASE("propensities below the floor") {
    const Sample s = sample(30, 10);
    VectorXd pi = VectorXd::Constant(30, 0.5);
    pi(4) = 0.001;
    CHECK_THROWS_AS(fit_arrest_model(s.data, FirstStage::known(pi)), Error);
    ArrestOptions o;
    o.allow_positivity_violation = true;
    CHECK_NOTHROW(fit_arrest_model(s.data, FirstStage::known(pi), o));
  }
  SUBCASE("misaligned propensities") { CHECK_THROWS_AS(fit_arrest_model(sample(10, 11).data, FirstStage::known(9)), Error); }
}

TEST_CASE("coefficient rows") {
  VectorXd est(2), se(2);
  est << 0.5, -1.0;
  se << 0.25, 0.5;
  const auto rows = coefficient_rows({"intercept", "b"}, est, se);
  CHECK(rows[0].odds_ratio == doctest::Approx(std::exp(0.5)));
  CHECK(rows[0].odds_ratio_se == doctest::Approx(std::exp(0.5) * 0.25));
  CHECK(rows[1].z_value == doctest::Approx(-2.0));
  CHECK(rows[1].p_value == doctest::Approx(0.0455003).epsilon(1e-5));
}

TEST_CASE("estimation error shrinks with sample size") {
  auto rmse = [](Index population) {
    ScenarioSpec spec;
    spec.population_size = population;
    double sum = 0.0;
    int reps = 0;
    for (std::uint64_t r = 0; r < 30; ++r) {
      const OffensePopulation pop = generate_offenses(spec, 1000 + r);
      const ArrestFit fit = fit_arrest_model(pop.reported, FirstStage::known(pop.reported_pi));
      for (Index j = 0; j < fit.theta_hat.size(); ++j) sum += std::pow(fit.theta_hat(j) - spec.theta0[j], 2);
      ++reps;
    }
    return std::sqrt(sum / reps);
  };
  const double small = rmse(770);
  const double large = rmse(6150);
  CHECK(large < small);
  CHECK(large / small < 0.6);
}
