#include "darkfig/gee_twostep.hpp"

#include "darkfig/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace darkfig {

namespace {

constexpr std::string_view kModule = "gee_twostep";
constexpr double kAlphaMargin = 1e-6;

/// Per-incident quantities at (theta, alpha).
struct Cluster {
  MatrixXd x;     // K x d
  VectorXd q;
  VectorXd s;     // sqrt(q (1 - q))
  VectorXd r;     // a - q / pi
  MatrixXd cinv;
};

Cluster cluster_at(const OffenseSet& data, Index i, const VectorXd& theta, double pi, double alpha) {
  const Index k = data.cluster_size(i);
  Cluster c;
  c.x = data.x().middleRows(data.offset(i), k);
  c.q.resize(k);
  for (Index r = 0; r < k; ++r) c.q(r) = expit(c.x.row(r).dot(theta));
  c.s = (c.q.array() * (1.0 - c.q.array())).sqrt();
  c.r = data.a().segment(data.offset(i), k) - c.q / pi;
  c.cinv = exchangeable_inverse(k, alpha);
  return c;
}

/// X^T S C^-1 S^-1, the d x K weight applied to the adjusted residual.
MatrixXd lead(const Cluster& c) {
  return c.x.transpose() * c.s.asDiagonal() * c.cinv * c.s.cwiseInverse().asDiagonal();
}

MatrixXd fisher_information(const OffenseSet& data, const VectorXd& pi, const VectorXd& theta, double alpha) {
  const Index d = theta.size();
  MatrixXd j = MatrixXd::Zero(d, d);
  for (Index i = 0; i < data.incidents(); ++i) {
    const Cluster c = cluster_at(data, i, theta, pi(i), alpha);
    const MatrixXd sx = c.s.asDiagonal() * c.x;
    j.noalias() += sx.transpose() * c.cinv * sx / pi(i);
  }
  return symmetrize(j);
}

void check_separation(const OffenseSet& data, const VectorXd& theta, const SolverOptions& options) {
  if (theta.cwiseAbs().maxCoeff() > options.max_abs_coefficient) {
    throw Error(ErrorCode::Separation, kModule, "coefficients diverge; the outcomes are separated by the covariates");
  }
  const VectorXd eta = data.x() * theta;
  for (Index r = 0; r < eta.size(); ++r) {
    const double q = expit(eta(r));
    if (q < options.separation_eps || q > 1.0 - options.separation_eps) {
      throw Error(ErrorCode::Separation, kModule, "fitted arrest probability reached 0 or 1");
    }
  }
}

}  // namespace

MatrixXd exchangeable_inverse(Index k, double alpha) {
  if (k < 1) throw Error(ErrorCode::InvalidInput, kModule, "cluster size must be positive");
  if (k == 1) return MatrixXd::Ones(1, 1);
  const double lower = -1.0 / static_cast<double>(k - 1);
  if (!(alpha > lower) || !(alpha < 1.0)) {
    throw Error(ErrorCode::InvalidCorrelation, kModule,
                "exchangeable correlation " + std::to_string(alpha) + " is not positive definite for K = " +
                    std::to_string(k));
  }
  const double c = alpha / (1.0 + static_cast<double>(k - 1) * alpha);
  MatrixXd out = MatrixXd::Constant(k, k, -c);
  out.diagonal().array() += 1.0;
  return out / (1.0 - alpha);
}

std::pair<double, double> alpha_bounds(Index k_max) {
  const double lower = k_max > 1 ? -1.0 / static_cast<double>(k_max - 1) + kAlphaMargin : -1.0 + kAlphaMargin;
  return {lower, 1.0 - kAlphaMargin};
}

AlphaEstimate estimate_exchangeable_alpha(const OffenseSet& data, const VectorXd& theta, const VectorXd& pi) {
  AlphaEstimate out;
  double sum = 0.0;
  for (Index i = 0; i < data.incidents(); ++i) {
    const Index k = data.cluster_size(i);
    if (k < 2) continue;
    VectorXd e(k);
    for (Index r = 0; r < k; ++r) {
      const Index row = data.offset(i) + r;
      const double q = expit(data.x().row(row).dot(theta));
      e(r) = (data.a()(row) - q / pi(i)) / std::sqrt(q * (1.0 - q));
    }
    // sum over j < l of e_j e_l
    const double total = e.sum();
    sum += 0.5 * (total * total - e.squaredNorm());
    out.pairs += k * (k - 1) / 2;
  }
  if (out.pairs == 0) {
    out.fallback = true;
    return out;
  }
  const auto [lo, hi] = alpha_bounds(data.max_cluster_size());
  out.alpha = std::clamp(sum / static_cast<double>(out.pairs), lo, hi);
  return out;
}

VectorXd gee_score(const OffenseSet& data, const VectorXd& pi, const VectorXd& theta, double alpha) {
  VectorXd u = VectorXd::Zero(theta.size());
  for (Index i = 0; i < data.incidents(); ++i) {
    const Cluster c = cluster_at(data, i, theta, pi(i), alpha);
    u.noalias() += lead(c) * c.r;
  }
  return u;
}

MatrixXd gee_score_jacobian(const OffenseSet& data, const VectorXd& pi, const VectorXd& theta, double alpha) {
  const Index d = theta.size();
  MatrixXd jac = MatrixXd::Zero(d, d);
  for (Index i = 0; i < data.incidents(); ++i) {
    const Cluster c = cluster_at(data, i, theta, pi(i), alpha);
    const Index k = c.q.size();
    // ds_k/dtheta = s_k (1 - 2 q_k) / 2 x_k;  d(1/s_l)/dtheta = -(1 - 2 q_l) / (2 s_l) x_l;
    // dr_l/dtheta = -q_l (1 - q_l) / pi x_l.
    for (Index a = 0; a < k; ++a) {
      const auto xa = c.x.row(a).transpose();
      const double half_a = 0.5 * (1.0 - 2.0 * c.q(a));
      for (Index b = 0; b < k; ++b) {
        const double w = c.cinv(a, b);
        if (w == 0.0) continue;
        const auto xb = c.x.row(b).transpose();
        const double ratio = c.s(a) / c.s(b);
        const double half_b = 0.5 * (1.0 - 2.0 * c.q(b));
        jac.noalias() += (w * ratio * c.r(b) * half_a) * xa * xa.transpose();
        jac.noalias() -= (w * ratio * (c.r(b) * half_b + c.s(b) * c.s(b) / pi(i))) * xa * xb.transpose();
      }
    }
  }
  return jac;
}

VectorXd GEEFit::standard_errors() const {
  if (sigma_gee.size() == 0) return VectorXd();
  return (sigma_gee.diagonal().array().max(0.0) / static_cast<double>(n)).sqrt();
}

std::vector<CoefficientRow> GEEFit::coefficients() const {
  return coefficient_rows(names, theta_hat, standard_errors());
}

GEEFit fit_arrest_gee(const OffenseSet& data, const FirstStage& fs, const GEEOptions& options) {
  ArrestOptions independence;
  independence.solver = options.solver;
  independence.positivity_floor = options.positivity_floor;
  independence.allow_positivity_violation = options.allow_positivity_violation;
  // Working-independence root: validates inputs and seeds theta.
  const ArrestFit start = fit_arrest_model(data, fs, independence);

  GEEFit fit;
  fit.names = data.x_names();
  fit.n = data.incidents();
  const VectorXd& pi = fs.pi;
  const SolverOptions& so = options.solver;

  VectorXd theta = start.theta_hat;
  double alpha = 0.0;
  if (options.fixed_alpha) {
    alpha = *options.fixed_alpha;
    exchangeable_inverse(data.max_cluster_size(), alpha);  // validates the range
  } else {
    const AlphaEstimate est = estimate_exchangeable_alpha(data, theta, pi);
    alpha = est.alpha;
    if (est.fallback) fit.warnings.push_back("NoMultiOffenderClusters: working correlation set to 0");
  }

  bool converged = false;
  int it = 0;
  for (; it < so.max_iterations && !converged; ++it) {
    const VectorXd u = gee_score(data, pi, theta, alpha);
    const MatrixXd j = fisher_information(data, pi, theta, alpha);
    const VectorXd step = j.llt().solve(u);
    if (!step.allFinite()) throw Error(ErrorCode::SingularDesign, kModule, "GEE information matrix is singular");

    VectorXd next = theta + step;
    const double base = u.lpNorm<Eigen::Infinity>();
    for (int h = 0; h < so.max_halvings; ++h) {
      if (gee_score(data, pi, next, alpha).lpNorm<Eigen::Infinity>() <= base) break;
      next = theta + std::ldexp(1.0, -(h + 1)) * step;
    }
    check_separation(data, next, so);

    double next_alpha = alpha;
    if (!options.fixed_alpha) next_alpha = estimate_exchangeable_alpha(data, next, pi).alpha;

    const double dtheta = (next - theta).lpNorm<Eigen::Infinity>();
    converged = dtheta < so.tolerance * (1.0 + next.lpNorm<Eigen::Infinity>()) &&
                std::abs(next_alpha - alpha) < so.tolerance;
    theta = std::move(next);
    alpha = next_alpha;
  }
  if (!converged) {
    throw Error(ErrorCode::NoConvergence, kModule,
                "GEE did not converge within " + std::to_string(so.max_iterations) + " iterations");
  }
  fit.theta_hat = theta;
  fit.alpha_hat = alpha;
  fit.iterations = it;

  // Sandwich at (theta_hat, alpha_hat, gamma_hat).
  const Index n = data.incidents();
  const Index d = theta.size();
  const bool with_gamma = fs.has_first_stage_variance();
  const Index dz = with_gamma ? fs.inv_pi_gradient.cols() : 0;
  MatrixXd j_theta = MatrixXd::Zero(d, d);
  MatrixXd j_gamma = MatrixXd::Zero(d, dz);
  MatrixXd meat = MatrixXd::Zero(d, d);
  for (Index i = 0; i < n; ++i) {
    const Cluster c = cluster_at(data, i, theta, pi(i), alpha);
    const MatrixXd l = lead(c);
    const VectorXd h = l * c.r;
    meat.noalias() += h * h.transpose();
    const MatrixXd sx = c.s.asDiagonal() * c.x;
    j_theta.noalias() += sx.transpose() * c.cinv * sx / pi(i);
    if (with_gamma) j_gamma.noalias() -= (l * c.q) * fs.inv_pi_gradient.row(i);
  }
  const double nd = static_cast<double>(n);
  fit.kappa = fs.kappa(n);
  fit.j_theta = symmetrize(j_theta / nd);
  fit.xi = meat / nd;
  if (with_gamma) {
    j_gamma /= nd;
    fit.xi += fit.kappa * j_gamma * (*fs.sigma_v) * j_gamma.transpose();
  }
  fit.xi = symmetrize(fit.xi);
  fit.j_gamma = std::move(j_gamma);
  const MatrixXd j_inv = spd_inverse(fit.j_theta, kModule);
  fit.sigma_gee = symmetrize(j_inv * fit.xi * j_inv);
  fit.first_stage_included = with_gamma;
  fit.first_stage_omitted = fs.first_stage_omitted();
  if (fit.first_stage_omitted) {
    fit.warnings.push_back("MissingFirstStageCovariance: first-stage uncertainty omitted from the covariance");
  }
  return fit;
}

GEEFit fit_arrest_gee(const OffenseSet& data, const PiModel& model, const GEEOptions& options) {
  return fit_arrest_gee(data, FirstStage::from_model(model, data), options);
}

}  // namespace darkfig
