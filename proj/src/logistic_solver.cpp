#include "darkfig/logistic_solver.hpp"

#include "darkfig/error.hpp"

#include <string>

namespace darkfig {

namespace {

VectorXd fitted(const LogisticProblem& p, const VectorXd& theta) {
  VectorXd eta = p.x * theta;
  VectorXd q(eta.size());
  for (Index i = 0; i < eta.size(); ++i) q(i) = expit(eta(i));
  return q;
}

void check_separation(const VectorXd& q, const VectorXd& theta, const SolverOptions& o, std::string_view module) {
  if (theta.cwiseAbs().maxCoeff() > o.max_abs_coefficient) {
    throw Error(ErrorCode::Separation, module,
                "coefficient magnitude exceeds " + std::to_string(o.max_abs_coefficient) + "; estimate does not exist");
  }
  for (Index i = 0; i < q.size(); ++i) {
    if (q(i) < o.separation_eps || q(i) > 1.0 - o.separation_eps) {
      throw Error(ErrorCode::Separation, module,
                  "fitted probability within " + std::to_string(o.separation_eps) + " of 0 or 1 (record " +
                      std::to_string(i) + "); estimate does not exist");
    }
  }
}

}  // namespace

double logistic_objective(const LogisticProblem& p, const VectorXd& theta) {
  VectorXd eta = p.x * theta;
  double total = 0.0;
  for (Index i = 0; i < eta.size(); ++i) {
    total += p.case_weight(i) * (p.y(i) * eta(i) - p.mean_scale(i) * log1pexp(eta(i)));
  }
  return total;
}

VectorXd logistic_gradient(const LogisticProblem& p, const VectorXd& theta) {
  VectorXd q = fitted(p, theta);
  VectorXd resid(q.size());
  for (Index i = 0; i < q.size(); ++i) resid(i) = p.case_weight(i) * (p.y(i) - p.mean_scale(i) * q(i));
  return p.x.transpose() * resid;
}

MatrixXd logistic_information(const LogisticProblem& p, const VectorXd& theta) {
  VectorXd q = fitted(p, theta);
  VectorXd w(q.size());
  for (Index i = 0; i < q.size(); ++i) w(i) = p.case_weight(i) * p.mean_scale(i) * q(i) * (1.0 - q(i));
  MatrixXd wx = p.x.array().colwise() * w.array();
  return symmetrize(p.x.transpose() * wx);
}

LogisticSolution solve_logistic(const LogisticProblem& p, VectorXd start, const SolverOptions& o,
                                std::string_view module) {
  {
    MatrixXd cx = p.x.array().colwise() * p.case_weight.array();
    require_full_rank(p.x.transpose() * cx, module);
  }
  VectorXd theta = std::move(start);
  double objective = logistic_objective(p, theta);
  for (int it = 1; it <= o.max_iterations; ++it) {
    VectorXd grad = logistic_gradient(p, theta);
    MatrixXd info = logistic_information(p, theta);
    Eigen::LLT<MatrixXd> llt(info);
    if (llt.info() != Eigen::Success) {
      throw Error(ErrorCode::SingularDesign, module, "working information matrix is singular");
    }
    VectorXd step = llt.solve(grad);

    double scale = 1.0;
    VectorXd next = theta + step;
    double next_objective = logistic_objective(p, next);
    for (int h = 0; h < o.max_halvings && !(next_objective >= objective - 1e-12 * std::abs(objective)); ++h) {
      scale *= 0.5;
      next = theta + scale * step;
      next_objective = logistic_objective(p, next);
    }

    const double change = (next - theta).cwiseAbs().maxCoeff();
    theta = std::move(next);
    objective = next_objective;
    check_separation(fitted(p, theta), theta, o, module);
    if (change < o.tolerance * (1.0 + theta.cwiseAbs().maxCoeff())) {
      return {theta, it};
    }
  }
  throw Error(ErrorCode::NoConvergence, module,
              "iteration cap of " + std::to_string(o.max_iterations) + " reached without convergence");
}

}  // namespace darkfig
