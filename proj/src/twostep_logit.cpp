#include "darkfig/twostep_logit.hpp"

#include "darkfig/error.hpp"

#include <cmath>
#include <string>

namespace darkfig {

namespace {

constexpr std::string_view kModule = "twostep_logit";

/// Per-offender 1/pi scale from incident-level propensities.
VectorXd offender_scale(const OffenseSet& data, const VectorXd& pi) {
  VectorXd s(data.offenders());
  for (Index i = 0; i < data.incidents(); ++i) {
    s.segment(data.offset(i), data.cluster_size(i)).setConstant(1.0 / pi(i));
  }
  return s;
}

ArrestFit solve(const OffenseSet& data, const FirstStage& fs, const ArrestOptions& options) {
  if (fs.pi.size() != data.incidents()) {
    throw Error(ErrorCode::ModelMismatch, kModule, "propensities do not cover every incident");
  }
  if (!options.allow_positivity_violation) require_positivity(fs, options.positivity_floor, kModule);
  reject_constant_columns(data.x(), data.x_names(), kModule);
  if (data.offenders() < data.x().cols()) {
    throw Error(ErrorCode::SingularDesign, kModule, "fewer offender rows than covariates");
  }

  const VectorXd ones = VectorXd::Ones(data.offenders());
  const VectorXd scale = offender_scale(data, fs.pi);

  const VectorXd zero = VectorXd::Zero(data.x().cols());
  ArrestFit fit;
  fit.names = data.x_names();
  fit.n = data.incidents();
  if ((scale.array() == 1.0).all()) {
    LogisticSolution sol = solve_logistic({data.x(), data.a(), ones, ones}, zero, options.solver, kModule);
    fit.theta_hat = std::move(sol.theta);
    fit.iterations = sol.iterations;
    return fit;  // q / pi <= 1 trivially
  }
  // Start from the unadjusted logistic fit when it exists.
  VectorXd start = zero;
  try {
    start = solve_logistic({data.x(), data.a(), ones, ones}, zero, options.solver, kModule).theta;
  } catch (const Error&) {
    start = zero;
  }
  LogisticSolution sol = solve_logistic({data.x(), data.a(), ones, scale}, start, options.solver, kModule);
  fit.theta_hat = std::move(sol.theta);
  fit.iterations = sol.iterations;

  const VectorXd eta = data.x() * fit.theta_hat;
  for (Index r = 0; r < eta.size(); ++r) {
    if (expit(eta(r)) * scale(r) > 1.0) ++fit.q_over_pi_count;
  }
  const double share = static_cast<double>(fit.q_over_pi_count) / static_cast<double>(data.offenders());
  if (share > options.nonmonotone_warning_share) {
    fit.warnings.push_back("NonmonotoneFit: " + std::to_string(fit.q_over_pi_count) +
                           " offender rows have fitted q / pi above 1");
  }
  return fit;
}

}  // namespace

std::vector<CoefficientRow> coefficient_rows(const std::vector<std::string>& names, const VectorXd& estimate,
                                             const VectorXd& se) {
  std::vector<CoefficientRow> rows;
  for (Index j = 0; j < estimate.size(); ++j) {
    CoefficientRow r;
    r.name = names[j];
    r.estimate = estimate(j);
    r.odds_ratio = std::exp(estimate(j));
    r.se = se.size() > j ? se(j) : std::nan("");
    r.odds_ratio_se = r.odds_ratio * r.se;
    r.z_value = r.estimate / r.se;
    r.p_value = wald_p_value(r.z_value);
    rows.push_back(std::move(r));
  }
  return rows;
}

VectorXd ArrestFit::standard_errors() const {
  if (!covariance_ready) return VectorXd();
  return (sigma.diagonal().array().max(0.0) / static_cast<double>(n)).sqrt();
}

std::vector<CoefficientRow> ArrestFit::coefficients() const {
  return coefficient_rows(names, theta_hat, standard_errors());
}

void reject_constant_columns(const MatrixXd& x, const std::vector<std::string>& names, std::string_view module) {
  if (x.rows() == 0) return;
  for (Index j = 0; j < x.cols(); ++j) {
    if (names[j] == "intercept") continue;
    if ((x.col(j).array() == x(0, j)).all()) {
      throw Error(ErrorCode::SingularDesign, module, "covariate " + names[j] + " is constant across the data");
    }
  }
}

ArrestFit fit_arrest_model(const OffenseSet& data, const FirstStage& first_stage, const ArrestOptions& options) {
  return solve(data, first_stage, options);
}

ArrestFit fit_arrest_model(const OffenseSet& data, const PiModel& model, const ArrestOptions& options) {
  return fit_arrest_model(data, FirstStage::from_model(model, data), options);
}

ArrestFit arrest_sandwich_covariance(ArrestFit fit, const OffenseSet& data, const FirstStage& fs) {
  const Index n = data.incidents();
  const Index d = fit.theta_hat.size();
  const bool with_gamma = fs.has_first_stage_variance();
  const Index dz = with_gamma ? fs.inv_pi_gradient.cols() : 0;

  MatrixXd j_theta = MatrixXd::Zero(d, d);
  MatrixXd j_gamma = MatrixXd::Zero(d, dz);
  MatrixXd meat = MatrixXd::Zero(d, d);
  for (Index i = 0; i < n; ++i) {
    const double inv_pi = 1.0 / fs.pi(i);
    VectorXd h = VectorXd::Zero(d);
    VectorXd qx = VectorXd::Zero(d);
    for (Index r = data.offset(i); r < data.offset(i) + data.cluster_size(i); ++r) {
      const auto xr = data.x().row(r).transpose();
      const double q = expit(xr.dot(fit.theta_hat));
      h += (data.a()(r) - q * inv_pi) * xr;
      j_theta.noalias() += (q * (1.0 - q) * inv_pi) * xr * xr.transpose();
      qx += q * xr;
    }
    meat.noalias() += h * h.transpose();
    if (with_gamma) j_gamma.noalias() -= qx * fs.inv_pi_gradient.row(i);
  }
  const double nd = static_cast<double>(n);
  j_theta /= nd;
  meat /= nd;

  fit.kappa = fs.kappa(n);
  fit.xi = meat;
  if (with_gamma) {
    j_gamma /= nd;
    fit.xi += fit.kappa * j_gamma * (*fs.sigma_v) * j_gamma.transpose();
  }
  fit.j_theta = symmetrize(j_theta);
  fit.j_gamma = std::move(j_gamma);
  fit.xi = symmetrize(fit.xi);
  const MatrixXd j_inv = spd_inverse(fit.j_theta, kModule);
  fit.sigma = symmetrize(j_inv * fit.xi * j_inv);
  fit.covariance_ready = true;
  fit.first_stage_included = with_gamma;
  fit.first_stage_omitted = fs.first_stage_omitted();
  if (fit.first_stage_omitted) {
    fit.warnings.push_back("MissingFirstStageCovariance: first-stage uncertainty omitted from the covariance");
  }
  return fit;
}

ArrestFit compare_unadjusted(const OffenseSet& data, const ArrestOptions& options) {
  const FirstStage fs = FirstStage::known(data.incidents());
  return arrest_sandwich_covariance(fit_arrest_model(data, fs, options), data, fs);
}

VectorXd arrest_score(const OffenseSet& data, const VectorXd& pi, const VectorXd& theta) {
  const VectorXd ones = VectorXd::Ones(data.offenders());
  const VectorXd scale = offender_scale(data, pi);
  return logistic_gradient({data.x(), data.a(), ones, scale}, theta);
}

MatrixXd arrest_score_jacobian(const OffenseSet& data, const VectorXd& pi, const VectorXd& theta) {
  const VectorXd ones = VectorXd::Ones(data.offenders());
  const VectorXd scale = offender_scale(data, pi);
  return -logistic_information({data.x(), data.a(), ones, scale}, theta);
}

}  // namespace darkfig
