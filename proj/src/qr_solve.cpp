#include "occp/qr_solve.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace occp {

QrFactor::QrFactor(const Eigen::MatrixXd& A) {
  if (A.rows() < A.cols())
    throw std::invalid_argument("qr_solve: system is underdetermined");
  qr_.compute(A);

  const double norm_inf = A.cwiseAbs().rowwise().sum().maxCoeff();
  const double tol = 1e-12 * std::max(norm_inf, 1e-300);
  const auto& R = qr_.matrixQR();
  double rmax = 0.0, rmin = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < A.cols(); ++i) {
    const double r = std::abs(R(i, i));
    rmax = std::max(rmax, r);
    rmin = std::min(rmin, r);
  }
  cond_ = rmin > 0.0 ? rmax / rmin : std::numeric_limits<double>::infinity();
  if (A.cols() > 0 && !(rmin >= tol)) {
    std::ostringstream msg;
    msg << "qr_solve: matrix is rank deficient (min |R_ii| = " << rmin
        << ", condition estimate " << cond_ << ")";
    throw SingularSystemError(msg.str(), cond_);
  }
}

Eigen::MatrixXd QrFactor::solve(const Eigen::MatrixXd& b) const {
  if (b.rows() != qr_.rows())
    throw std::invalid_argument("qr_solve: right-hand side has wrong number of rows");
  const Eigen::Index n = qr_.cols();
  Eigen::MatrixXd qtb = qr_.householderQ().adjoint() * b;
  return qr_.matrixQR()
      .topLeftCorner(n, n)
      .triangularView<Eigen::Upper>()
      .solve(qtb.topRows(n));
}

Eigen::MatrixXd qr_solve(const Eigen::MatrixXd& A, const Eigen::MatrixXd& b) {
  if (A.rows() != b.rows())
    throw std::invalid_argument("qr_solve: A and b row counts differ");
  return QrFactor(A).solve(b);
}

}  // namespace occp
