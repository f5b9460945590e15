#pragma once

#include <Eigen/Dense>

#include <array>
#include <utility>

namespace occp {

/// Control points of one axis for both trajectories; column 0 is the
/// exploration trajectory, column 1 the fallback trajectory.
using ControlMatrix = Eigen::Matrix<double, Eigen::Dynamic, 2>;

/// Bernstein polynomial B_{i,n}(nu). Throws std::domain_error when i is outside
/// [0, n] or nu outside [0, 1].
double bernstein(int i, int n, double nu);

/// d-th derivative of B_{i,n} with respect to nu. Indices outside [0, n]
/// evaluate to zero so the recursion can walk off the ends.
double bernstein_derivative(int i, int n, double nu, int d);

/// Precomputed Bernstein basis over a discrete horizon.
///
/// Column k of every matrix corresponds to nu_k = k / N (k = 0 .. N-1). The
/// terminal sample nu = 1 is stored separately in `terminal`, because the
/// horizon grid stops one step short of it. Derivative matrices are taken with
/// respect to time, so the d-th derivative carries a factor T^-d.
class BasisSet {
 public:
  BasisSet(int order, int steps, double horizon);

  int order() const { return order_; }
  int steps() const { return steps_; }
  double horizon() const { return horizon_; }
  double dt() const { return horizon_ / steps_; }
  int num_points() const { return order_ + 1; }

  /// W_B, dW_B, ddW_B, dddW_B for d = 0..3, each (n+1) x N.
  const Eigen::MatrixXd& matrix(int derivative) const { return mats_.at(derivative); }
  const Eigen::MatrixXd& W() const { return mats_[0]; }
  const Eigen::MatrixXd& dW() const { return mats_[1]; }
  const Eigen::MatrixXd& ddW() const { return mats_[2]; }
  const Eigen::MatrixXd& dddW() const { return mats_[3]; }

  /// Basis column at nu = 1 for derivative d (time-scaled).
  const Eigen::VectorXd& terminal(int derivative) const { return terminal_.at(derivative); }

  /// Basis column for an arbitrary nu in [0, 1].
  Eigen::VectorXd column(double nu, int derivative = 0) const;

 private:
  int order_;
  int steps_;
  double horizon_;
  std::array<Eigen::MatrixXd, 4> mats_;
  std::array<Eigen::VectorXd, 4> terminal_;
};

BasisSet build_basis(int order, int steps, double horizon);

/// Control points for x, y and heading.
struct ControlPoints {
  ControlMatrix x;
  ControlMatrix y;
  ControlMatrix theta;

  static ControlPoints zeros(int num_points);
  bool all_finite() const;
};

/// Per-step samples of one trajectory over the horizon.
struct DiscreteTrajectory {
  Eigen::VectorXd x, y, theta;
  Eigen::VectorXd vx, vy;
  Eigen::VectorXd ax, ay;
  Eigen::VectorXd jx, jy;

  Eigen::Index size() const { return x.size(); }
  Eigen::VectorXd speed() const;
};

/// Samples both trajectories. Throws std::invalid_argument on a dimension
/// mismatch between the control points and the basis.
std::pair<DiscreteTrajectory, DiscreteTrajectory> evaluate(const ControlPoints& cp,
                                                           const BasisSet& basis);

/// Least-squares fit of control points to samples at the given nu values.
/// Used to shift a previous plan forward in time for warm starts.
Eigen::VectorXd fit_control_points(const Eigen::VectorXd& nu, const Eigen::VectorXd& values,
                                   int order);

}  // namespace occp
