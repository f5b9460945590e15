#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace occp {

/// Raised when a stacked system loses full column rank.
class SingularSystemError : public std::runtime_error {
 public:
  SingularSystemError(const std::string& what, double condition_estimate)
      : std::runtime_error(what), condition_estimate_(condition_estimate) {}
  double condition_estimate() const { return condition_estimate_; }

 private:
  double condition_estimate_;
};

/// Householder QR factorisation kept around so one matrix can be solved
/// against many right-hand sides (the ADMM subproblem matrices are constant
/// within a planning cycle).
class QrFactor {
 public:
  QrFactor() = default;
  explicit QrFactor(const Eigen::MatrixXd& A);

  /// Least-squares solution of A x = b via R x = Q^T b and back substitution.
  Eigen::MatrixXd solve(const Eigen::MatrixXd& b) const;

  Eigen::Index rows() const { return qr_.rows(); }
  Eigen::Index cols() const { return qr_.cols(); }
  /// Ratio of largest to smallest |R_ii|; a cheap lower bound on cond(A).
  double condition_estimate() const { return cond_; }

 private:
  Eigen::HouseholderQR<Eigen::MatrixXd> qr_;
  double cond_ = 1.0;
};

/// One-shot solve. Throws SingularSystemError when |R_ii| < 1e-12 ||A||_inf
/// for some i, and std::invalid_argument on a row-count mismatch.
Eigen::MatrixXd qr_solve(const Eigen::MatrixXd& A, const Eigen::MatrixXd& b);

}  // namespace occp
