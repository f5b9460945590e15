#pragma once

#include <Eigen/Dense>

#include <vector>

namespace occp {

struct QpResult {
  Eigen::VectorXd x;
  Eigen::VectorXd multipliers;  // one per inequality row, zero when inactive
  std::vector<int> active;      // active inequality rows
  bool feasible = true;
  int iterations = 0;
};

/// Strictly convex dense QP
///   min 1/2 x'Hx - b'x  s.t.  Aeq x = beq,  Ain x <= bin
/// solved by a dual active-set method that starts from the unconstrained
/// minimiser and adds violated rows one at a time. The Cholesky factor of H is
/// computed once, so a DenseQp can be reused for many right-hand sides.
class DenseQp {
 public:
  DenseQp() = default;
  /// Throws std::invalid_argument when H is not positive definite.
  explicit DenseQp(const Eigen::MatrixXd& H);

  int size() const { return static_cast<int>(J0_.rows()); }

  /// feasible = false when the rows are inconsistent or the iteration budget
  /// runs out; x is then the last iterate, which satisfies the equalities and
  /// the rows added so far.
  QpResult solve(const Eigen::VectorXd& b, const Eigen::MatrixXd& Aeq, const Eigen::VectorXd& beq,
                 const Eigen::MatrixXd& Ain, const Eigen::VectorXd& bin) const;

 private:
  Eigen::MatrixXd H_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::MatrixXd J0_;  // L^-T
  double c1_ = 0.0, c2_ = 0.0;
};

}  // namespace occp
