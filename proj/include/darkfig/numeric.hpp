#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string_view>

namespace darkfig {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Two-sided 97.5% standard normal quantile used for every Wald interval.
inline constexpr double kWaldZ = 1.959964;

inline double expit(double eta) {
  if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

/// log(1 + exp(eta)) without overflow.
inline double log1pexp(double eta) {
  if (eta > 35.0) return eta;
  if (eta < -35.0) return std::exp(eta);
  return std::log1p(std::exp(eta));
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// Two-sided Wald p-value for a z statistic.
inline double wald_p_value(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

double normal_quantile(double p);

/// (M + M^T) / 2
MatrixXd symmetrize(const MatrixXd& m);

double min_eigenvalue(const MatrixXd& symmetric);

/// Inverse of a symmetric positive definite matrix. Throws SingularDesign
/// (attributed to `module`) when the matrix is numerically singular.
MatrixXd spd_inverse(const MatrixXd& m, std::string_view module);

/// Throws SingularDesign when the Gram matrix X^T diag(c) X is rank deficient.
void require_full_rank(const MatrixXd& gram, std::string_view module);

}  // namespace darkfig
