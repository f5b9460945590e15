#include "occp/bezier.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace occp {

namespace {

double binomial(int n, int k) {
  double r = 1.0;
  for (int j = 1; j <= k; ++j) r = r * (n - k + j) / j;
  return r;
}

double bernstein_unchecked(int i, int n, double nu) {
  if (i < 0 || i > n) return 0.0;
  return binomial(n, i) * std::pow(nu, i) * std::pow(1.0 - nu, n - i);
}

}  // namespace

double bernstein(int i, int n, double nu) {
  if (n < 0 || i < 0 || i > n)
    throw std::domain_error("bernstein: index " + std::to_string(i) + " outside [0, " +
                            std::to_string(n) + "]");
  if (!(nu >= 0.0 && nu <= 1.0))
    throw std::domain_error("bernstein: nu outside [0, 1]");
  return bernstein_unchecked(i, n, nu);
}

double bernstein_derivative(int i, int n, double nu, int d) {
  if (d < 0) throw std::domain_error("bernstein_derivative: negative order");
  if (i < 0 || i > n || n < 0) return 0.0;
  if (d == 0) return bernstein_unchecked(i, n, nu);
  // dB_{i,n}/dnu = n (B_{i-1,n-1} - B_{i,n-1})
  return n * (bernstein_derivative(i - 1, n - 1, nu, d - 1) -
              bernstein_derivative(i, n - 1, nu, d - 1));
}

BasisSet::BasisSet(int order, int steps, double horizon)
    : order_(order), steps_(steps), horizon_(horizon) {
  if (order < 3) throw std::invalid_argument("build_basis: order must be >= 3");
  if (steps < 2) throw std::invalid_argument("build_basis: steps must be >= 2");
  if (!(horizon > 0.0)) throw std::invalid_argument("build_basis: horizon must be > 0");

  for (int d = 0; d < 4; ++d) {
    mats_[d].resize(order + 1, steps);
    for (int k = 0; k < steps; ++k) mats_[d].col(k) = column(static_cast<double>(k) / steps, d);
    terminal_[d] = column(1.0, d);
  }
}

Eigen::VectorXd BasisSet::column(double nu, int derivative) const {
  if (!(nu >= 0.0 && nu <= 1.0)) throw std::domain_error("BasisSet::column: nu outside [0, 1]");
  const double scale = std::pow(horizon_, -derivative);
  Eigen::VectorXd c(order_ + 1);
  for (int i = 0; i <= order_; ++i) c(i) = scale * bernstein_derivative(i, order_, nu, derivative);
  return c;
}

BasisSet build_basis(int order, int steps, double horizon) {
  return BasisSet(order, steps, horizon);
}

ControlPoints ControlPoints::zeros(int num_points) {
  return {ControlMatrix::Zero(num_points, 2), ControlMatrix::Zero(num_points, 2),
          ControlMatrix::Zero(num_points, 2)};
}

bool ControlPoints::all_finite() const {
  return x.allFinite() && y.allFinite() && theta.allFinite();
}

Eigen::VectorXd DiscreteTrajectory::speed() const {
  return (vx.array().square() + vy.array().square()).sqrt().matrix();
}

std::pair<DiscreteTrajectory, DiscreteTrajectory> evaluate(const ControlPoints& cp,
                                                           const BasisSet& basis) {
  const int m = basis.num_points();
  if (cp.x.rows() != m || cp.y.rows() != m || cp.theta.rows() != m)
    throw std::invalid_argument("evaluate: control points have " + std::to_string(cp.x.rows()) +
                                " rows, basis expects " + std::to_string(m));

  auto sample = [&](int j) {
    DiscreteTrajectory t;
    t.x = basis.W().transpose() * cp.x.col(j);
    t.y = basis.W().transpose() * cp.y.col(j);
    t.theta = basis.W().transpose() * cp.theta.col(j);
    t.vx = basis.dW().transpose() * cp.x.col(j);
    t.vy = basis.dW().transpose() * cp.y.col(j);
    t.ax = basis.ddW().transpose() * cp.x.col(j);
    t.ay = basis.ddW().transpose() * cp.y.col(j);
    t.jx = basis.dddW().transpose() * cp.x.col(j);
    t.jy = basis.dddW().transpose() * cp.y.col(j);
    return t;
  };
  return {sample(0), sample(1)};
}

Eigen::VectorXd fit_control_points(const Eigen::VectorXd& nu, const Eigen::VectorXd& values,
                                   int order) {
  if (nu.size() != values.size() || nu.size() < order + 1)
    throw std::invalid_argument("fit_control_points: need at least order+1 matching samples");
  Eigen::MatrixXd A(nu.size(), order + 1);
  for (Eigen::Index r = 0; r < nu.size(); ++r)
    for (int i = 0; i <= order; ++i) A(r, i) = bernstein(i, order, nu(r));
  return A.colPivHouseholderQr().solve(values);
}

}  // namespace occp
