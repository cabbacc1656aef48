#pragma once

#include "darkfig/numeric.hpp"

#include <string_view>

namespace darkfig {

struct SolverOptions {
  double tolerance = 1e-8;        // relative coefficient change
  int max_iterations = 100;
  int max_halvings = 10;
  double max_abs_coefficient = 1e3;
  double separation_eps = 1e-10;  // fitted probability distance from 0 or 1
};

/// Concave objective shared by every logistic-type estimating equation here:
///
///   L(theta) = sum_i c_i [ y_i eta_i - s_i log(1 + exp(eta_i)) ],  eta = X theta
///
/// whose gradient is sum_i c_i (y_i - s_i q_i) x_i. Survey-weighted logistic
/// regression has c = w, s = 1; the propensity-corrected arrest equation has
/// c = 1, s = 1 / pi.
struct LogisticProblem {
  const MatrixXd& x;
  const VectorXd& y;
  const VectorXd& case_weight;
  const VectorXd& mean_scale;
};

struct LogisticSolution {
  VectorXd theta;
  int iterations = 0;
};

double logistic_objective(const LogisticProblem& p, const VectorXd& theta);
VectorXd logistic_gradient(const LogisticProblem& p, const VectorXd& theta);
/// Negative Hessian, sum_i c_i s_i q_i (1 - q_i) x_i x_i^T.
MatrixXd logistic_information(const LogisticProblem& p, const VectorXd& theta);

/// IRWLS (Newton on L) with step-halving whenever L decreases.
LogisticSolution solve_logistic(const LogisticProblem& p, VectorXd start, const SolverOptions& options,
                                std::string_view module);

}  // namespace darkfig
