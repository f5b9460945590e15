#include "occp/bezier.hpp"

#include <doctest.h>

#include <random>

using namespace occp;

TEST_CASE("bernstein values") {
  CHECK(bernstein(0, 3, 0.0) == 1.0);
  CHECK(bernstein(3, 3, 1.0) == 1.0);
  CHECK(bernstein(1, 3, 0.5) == doctest::Approx(0.375));
  CHECK(bernstein(2, 4, 0.25) == doctest::Approx(6.0 * 0.0625 * 0.5625));
  CHECK_THROWS_AS(bernstein(4, 3, 0.5), std::domain_error);
  CHECK_THROWS_AS(bernstein(-1, 3, 0.5), std::domain_error);
  CHECK_THROWS_AS(bernstein(1, 3, 1.5), std::domain_error);
}

TEST_CASE("bernstein basis is a partition of unity") {
  for (int n : {3, 5, 10})
    for (double nu = 0.0; nu <= 1.0; nu += 0.05) {
      double sum = 0.0;
      for (int i = 0; i <= n; ++i) sum += bernstein(i, n, nu);
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("basis layout") {
  const BasisSet b(3, 2, 1.0);
  CHECK(b.W().rows() == 4);
  CHECK(b.W().cols() == 2);
  Eigen::Vector4d w0(1, 0, 0, 0), dw0(-3, 3, 0, 0);
  CHECK((b.W().col(0) - w0).norm() < 1e-15);
  CHECK((b.dW().col(0) - dw0).norm() < 1e-12);
  CHECK(b.dt() == 0.5);
  // nu = 1 is not on the grid; it has its own column.
  Eigen::Vector4d wf(0, 0, 0, 1);
  CHECK((b.terminal(0) - wf).norm() < 1e-15);
  CHECK_THROWS_AS(BasisSet(2, 10, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(BasisSet(5, 1, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(BasisSet(5, 10, 0.0), std::invalid_argument);
}

TEST_CASE("derivative matrices match finite differences") {
  const double T = 4.0;
  const BasisSet b(10, 40, T);
  const double h = 1e-5;
  double worst = 0.0;
  for (int d = 1; d <= 3; ++d)
    for (int k = 0; k <= b.steps(); ++k) {
      const double nu = static_cast<double>(k) / b.steps();
      const Eigen::VectorXd exact = k == b.steps() ? b.terminal(d) : Eigen::VectorXd(b.matrix(d).col(k));
      Eigen::VectorXd fd;
      if (k == 0)
        fd = (-3.0 * b.column(0.0, d - 1) + 4.0 * b.column(h, d - 1) - b.column(2 * h, d - 1)) / (2 * h * T);
      else if (k == b.steps())
        fd = (3.0 * b.column(1.0, d - 1) - 4.0 * b.column(1.0 - h, d - 1) + b.column(1.0 - 2 * h, d - 1)) /
             (2 * h * T);
      else
        fd = (b.column(nu + h, d - 1) - b.column(nu - h, d - 1)) / (2 * h * T);
      worst = std::max(worst, (fd - exact).cwiseAbs().maxCoeff() / exact.cwiseAbs().maxCoeff());
    }
  CHECK(worst < 1e-5);
}

TEST_CASE("sampled trajectories differentiate consistently") {
  const double T = 4.0;
  const BasisSet b(10, 40, T);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd c(11);
    for (auto& v : c) v = u(rng);
    const double h = 1e-5;
    for (int k = 1; k < b.steps(); ++k) {
      const double nu = static_cast<double>(k) / b.steps();
      const double x_p = b.column(nu + h).dot(c), x_m = b.column(nu - h).dot(c);
      const double v = b.dW().col(k).dot(c);
      const double fd = (x_p - x_m) / (2 * h * T);
      CHECK(std::abs(fd - v) <= 1e-5 * std::max(1.0, std::abs(v)));
    }
  }
}

TEST_CASE("evaluate reproduces endpoint properties") {
  const double T = 4.0;
  const BasisSet b(10, 40, T);
  ControlPoints cp = ControlPoints::zeros(11);
  cp.x.col(0).setConstant(3.0);
  for (int i = 0; i <= 10; ++i) cp.x(i, 1) = 0.5 * i;
  cp.theta.col(0).setConstant(0.2);
  const auto [a, f] = evaluate(cp, b);
  CHECK(a.x.cwiseAbs().maxCoeff() == doctest::Approx(3.0));
  CHECK(a.vx.cwiseAbs().maxCoeff() < 1e-12);
  CHECK(a.theta(0) == doctest::Approx(0.2));
  // Linear control polygon: constant velocity n (P1 - P0) / T.
  CHECK(f.x(0) == 0.0);
  for (Eigen::Index k = 0; k < f.size(); ++k) CHECK(f.vx(k) == doctest::Approx(10 * 0.5 / T));
  CHECK(f.ax.cwiseAbs().maxCoeff() < 1e-9);
  CHECK(f.speed()(3) == doctest::Approx(1.25));

  ControlPoints bad = ControlPoints::zeros(7);
  CHECK_THROWS_AS(evaluate(bad, b), std::invalid_argument);
}

TEST_CASE("fit_control_points recovers a polynomial") {
  Eigen::VectorXd c(6);
  c << 1, -2, 0.5, 3, 0, 2;
  const Eigen::VectorXd nu = Eigen::VectorXd::LinSpaced(30, 0.0, 1.0);
  Eigen::VectorXd vals(30);
  for (int r = 0; r < 30; ++r) {
    vals(r) = 0.0;
    for (int i = 0; i <= 5; ++i) vals(r) += c(i) * bernstein(i, 5, nu(r));
  }
  CHECK((fit_control_points(nu, vals, 5) - c).norm() < 1e-9);
  CHECK_THROWS_AS(fit_control_points(nu.head(3), vals.head(3), 5), std::invalid_argument);
}
