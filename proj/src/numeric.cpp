#include "darkfig/numeric.hpp"

#include "darkfig/error.hpp"

#include <boost/math/distributions/normal.hpp>

namespace darkfig {

double normal_quantile(double p) {
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

MatrixXd symmetrize(const MatrixXd& m) { return 0.5 * (m + m.transpose()); }

double min_eigenvalue(const MatrixXd& symmetric) {
  if (symmetric.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(symmetrize(symmetric), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

void require_full_rank(const MatrixXd& gram, std::string_view module) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(symmetrize(gram), Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();
  const double top = ev.maxCoeff();
  if (!(top > 0.0) || !(ev.minCoeff() > 1e-12 * top)) {
    throw Error(ErrorCode::SingularDesign, module, "design matrix is rank deficient on the weighted sample");
  }
}

MatrixXd spd_inverse(const MatrixXd& m, std::string_view module) {
  Eigen::LLT<MatrixXd> llt(symmetrize(m));
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::SingularDesign, module, "information matrix is not positive definite");
  }
  MatrixXd inv = llt.solve(MatrixXd::Identity(m.rows(), m.cols()));
  if (!inv.allFinite()) {
    throw Error(ErrorCode::SingularDesign, module, "information matrix inverse is not finite");
  }
  return symmetrize(inv);
}

}  // namespace darkfig
