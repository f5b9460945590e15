#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace occp::oracle {

double phantom_count(double s, const PhantomVehicleSet& pvs, const RiskParams& params, int n) {
  const double ds0 = (pvs.s_e - pvs.s_s) / n, dv = params.v_pv_max / n;
  const double T = params.horizon;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    // Start-position cell clipped to s0 <= s, sampled at its midpoint.
    const double a = pvs.s_s + i * ds0, b = std::min(a + ds0, s);
    if (b <= a) continue;
    const double s0 = 0.5 * (a + b);
    int count = 0;
    for (int k = 0; k < n; ++k) {
      const double v = (k + 0.5) * dv;
      if (s0 + v * T >= s) ++count;
    }
    sum += count * (b - a);
  }
  return sum * dv;
}

Eigen::VectorXd gauss_solve(const Eigen::MatrixXd& A0, const Eigen::VectorXd& b0) {
  using MatL = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
  using VecL = Eigen::Matrix<long double, Eigen::Dynamic, 1>;
  MatL A = A0.cast<long double>();
  VecL b = b0.cast<long double>();
  const Eigen::Index n = A.rows();
  for (Eigen::Index c = 0; c < n; ++c) {
    Eigen::Index p = c;
    for (Eigen::Index r = c + 1; r < n; ++r)
      if (std::abs(A(r, c)) > std::abs(A(p, c))) p = r;
    A.row(c).swap(A.row(p));
    std::swap(b(c), b(p));
    for (Eigen::Index r = c + 1; r < n; ++r) {
      const long double f = A(r, c) / A(c, c);
      for (Eigen::Index k = c; k < n; ++k) A(r, k) -= f * A(c, k);
      b(r) -= f * b(c);
    }
  }
  VecL x(n);
  for (Eigen::Index r = n - 1; r >= 0; --r) {
    long double acc = b(r);
    for (Eigen::Index k = r + 1; k < n; ++k) acc -= A(r, k) * x(k);
    x(r) = acc / A(r, r);
  }
  return x.cast<double>();
}

Eigen::MatrixXd conditioned_matrix(int n, double cond, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  auto random_orthogonal = [&] {
    Eigen::MatrixXd R(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) R(i, j) = g(rng);
    return Eigen::MatrixXd(Eigen::HouseholderQR<Eigen::MatrixXd>(R).householderQ());
  };
  Eigen::VectorXd sv(n);
  for (int i = 0; i < n; ++i) sv(i) = std::pow(cond, -static_cast<double>(i) / (n - 1));
  return random_orthogonal() * sv.asDiagonal() * random_orthogonal();
}

Quadratic identify_quadratic(const std::function<double(const Eigen::VectorXd&)>& f, int n) {
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(n);
  const double f0 = f(zero);
  std::vector<double> fp(n), fm(n);
  Quadratic q;
  q.g.resize(n);
  q.H.resize(n, n);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd e = zero;
    e(i) = 1.0;
    fp[i] = f(e);
    fm[i] = f(-e);
    q.g(i) = 0.5 * (fp[i] - fm[i]);
    q.H(i, i) = fp[i] + fm[i] - 2.0 * f0;
  }
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      Eigen::VectorXd e = zero;
      e(i) = 1.0;
      e(j) = 1.0;
      q.H(i, j) = q.H(j, i) = f(e) - fp[i] - fp[j] + f0;
    }
  return q;
}

Eigen::VectorXd kkt_solve(const Eigen::MatrixXd& H, const Eigen::VectorXd& g,
                          const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
  const Eigen::Index n = H.rows(), m = A.rows();
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n + m, n + m);
  K.topLeftCorner(n, n) = H;
  K.topRightCorner(n, m) = A.transpose();
  K.bottomLeftCorner(m, n) = A;
  Eigen::VectorXd rhs(n + m);
  rhs << -g, b;
  return Eigen::FullPivLU<Eigen::MatrixXd>(K).solve(rhs).head(n);
}

EnumeratedQp enumerate_qp(const Eigen::MatrixXd& H, const Eigen::VectorXd& b,
                          const Eigen::MatrixXd& Aeq, const Eigen::VectorXd& beq,
                          const Eigen::MatrixXd& Ain, const Eigen::VectorXd& bin) {
  const Eigen::Index n = H.rows(), e = Aeq.rows(), m = Ain.rows();
  EnumeratedQp best;
  double best_f = std::numeric_limits<double>::infinity();
  for (unsigned mask = 0; mask < (1u << m); ++mask) {
    std::vector<Eigen::Index> act;
    for (Eigen::Index r = 0; r < m; ++r)
      if (mask & (1u << r)) act.push_back(r);
    const Eigen::Index k = e + static_cast<Eigen::Index>(act.size());
    if (k > n) continue;
    Eigen::MatrixXd A(k, n);
    Eigen::VectorXd rhs(k);
    A.topRows(e) = Aeq;
    rhs.head(e) = beq;
    for (std::size_t i = 0; i < act.size(); ++i) {
      A.row(e + static_cast<Eigen::Index>(i)) = Ain.row(act[i]);
      rhs(e + static_cast<Eigen::Index>(i)) = bin(act[i]);
    }
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n + k, n + k);
    K.topLeftCorner(n, n) = H;
    K.topRightCorner(n, k) = A.transpose();
    K.bottomLeftCorner(k, n) = A;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
    if (lu.rank() < n + k) continue;
    Eigen::VectorXd r(n + k);
    r << b, rhs;
    const Eigen::VectorXd sol = lu.solve(r);
    const Eigen::VectorXd x = sol.head(n);
    if (m > 0 && ((Ain * x - bin).array() > 1e-9).any()) continue;
    bool dual_ok = true;
    for (std::size_t i = 0; i < act.size(); ++i)
      if (sol(n + e + static_cast<Eigen::Index>(i)) < -1e-9) dual_ok = false;
    if (!dual_ok) continue;
    const double f = 0.5 * x.dot(H * x) - b.dot(x);
    if (f < best_f) {
      best_f = f;
      best.x = x;
      best.feasible = true;
    }
  }
  return best;
}

namespace {

ControlMatrix split(const Eigen::VectorXd& z) {
  const Eigen::Index m = z.size() / 2;
  ControlMatrix c(m, 2);
  c.col(0) = z.head(m);
  c.col(1) = z.tail(m);
  return c;
}

// Augmented term lam'(A'c - t) + rho/2 |A'c - t|^2.
double augmented(const Eigen::VectorXd& lam, const Eigen::MatrixXd& A, const Eigen::VectorXd& c,
                 const Eigen::VectorXd& target, double rho) {
  const Eigen::VectorXd r = A.transpose() * c - target;
  return lam.dot(r) + 0.5 * rho * r.squaredNorm();
}

// Boundary rows applied to each trajectory plus the shared-segment rows.
void joint_rows(const Eigen::MatrixXd& B, const Eigen::VectorXd& rhs, const Eigen::MatrixXd& Ac,
                double tol, Eigen::MatrixXd& A, Eigen::VectorXd& b) {
  const Eigen::MatrixXd S = shared_segment_rows(Ac, B, tol);
  const Eigen::Index m = B.cols(), e = B.rows(), k = S.rows();
  A = Eigen::MatrixXd::Zero(2 * e + k, 2 * m);
  b = Eigen::VectorXd::Zero(2 * e + k);
  A.block(0, 0, e, m) = B;
  A.block(e, m, e, m) = B;
  A.block(2 * e, 0, k, m) = S;
  A.block(2 * e, m, k, m) = -S;
  b.head(e) = rhs;
  b.segment(e, e) = rhs;
}

ControlMatrix minimise(const std::function<double(const ControlMatrix&)>& f, int m,
                       const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
  const Quadratic q = identify_quadratic([&](const Eigen::VectorXd& z) { return f(split(z)); }, 2 * m);
  return split(kkt_solve(q.H, q.g, A, b));
}

}  // namespace

ControlMatrix x_subproblem(const AdmmState& s, const ProblemData& d) {
  const auto& cfg = d.cfg;
  const auto& W = d.basis->W();
  const auto& dW = d.basis->dW();
  const auto& ddW = d.basis->ddW();
  const Matrix2Col th = W.transpose() * s.c.theta;
  const Matrix2Col vcos = s.V.array() * th.array().cos();
  auto f = [&](const ControlMatrix& c) {
    double v = 0.0;
    for (int j = 0; j < 2; ++j) {
      const Eigen::VectorXd cj = c.col(j);
      v += 0.5 * cfg.q_x * (ddW.transpose() * cj).squaredNorm();
      v += 0.5 * cfg.q1 * (dW.transpose() * cj - d.vxd).squaredNorm();
      v += augmented(s.lam_vx.col(j), dW, cj, vcos.col(j), cfg.rho_theta);
      v += augmented(s.lam_cx.col(j), d.Acx, cj, s.Zx.col(j), cfg.rho_cx);
    }
    return v;
  };
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  Eigen::MatrixXd B(2, d.num_points());
  B << d.basis->column(0.0, 0).transpose(), d.basis->column(0.0, 1).transpose();
  joint_rows(B, d.E_x0, d.Acx, cfg.shared_rank_tol, A, b);
  return minimise(f, d.num_points(), A, b);
}

ControlMatrix y_subproblem(const AdmmState& s, const ProblemData& d) {
  const auto& cfg = d.cfg;
  const auto& W = d.basis->W();
  const auto& dW = d.basis->dW();
  const auto& ddW = d.basis->ddW();
  const Matrix2Col th = W.transpose() * s.c.theta;
  const Matrix2Col vsin = s.V.array() * th.array().sin();
  const int lead = cfg.n_s + cfg.n_d;
  auto f = [&](const ControlMatrix& c) {
    double v = 0.0;
    for (int j = 0; j < 2; ++j) {
      const Eigen::VectorXd cj = c.col(j);
      v += 0.5 * cfg.q_y * (ddW.transpose() * cj).squaredNorm();
      const Eigen::VectorXd py = W.transpose() * cj;
      v += 0.5 * cfg.q2 * (py.tail(py.size() - lead) - d.pyd).squaredNorm();
      v += augmented(s.lam_vy.col(j), dW, cj, vsin.col(j), cfg.rho_theta);
      v += augmented(s.lam_cy.col(j), d.Acy, cj, s.Zy.col(j), cfg.rho_cy);
    }
    return v;
  };
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  Eigen::MatrixXd B(3, d.num_points());
  B << d.basis->column(0.0, 0).transpose(), d.basis->column(0.0, 1).transpose(),
      d.basis->column(1.0, 0).transpose();
  Eigen::Vector3d rhs(d.E_y0(0), d.E_y0(1), d.E_yf);
  joint_rows(B, rhs, d.Acy, cfg.shared_rank_tol, A, b);
  return minimise(f, d.num_points(), A, b);
}

ControlMatrix theta_subproblem(const AdmmState& s, const ProblemData& d) {
  const auto& cfg = d.cfg;
  const auto& W = d.basis->W();
  const auto& dW = d.basis->dW();
  const Matrix2Col psi = path_heading(d, s.c);
  auto f = [&](const ControlMatrix& c) {
    double v = 0.0;
    for (int j = 0; j < 2; ++j) {
      const Eigen::VectorXd cj = c.col(j);
      v += 0.5 * cfg.q_theta * (dW.transpose() * cj).squaredNorm();
      v += augmented(s.lam_th.col(j), W, cj, psi.col(j), cfg.rho_theta);
      v += augmented(s.lam_cth.col(j), d.Acth, cj, s.Zth.col(j), cfg.rho_ctheta);
    }
    return v;
  };
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  Eigen::MatrixXd B(4, d.num_points());
  B << d.basis->column(0.0, 0).transpose(), d.basis->column(0.0, 1).transpose(),
      d.basis->column(1.0, 0).transpose(), d.basis->column(1.0, 1).transpose();
  Eigen::Vector4d rhs(d.E_th0(0), d.E_th0(1), d.E_thf(0), d.E_thf(1));
  joint_rows(B, rhs, d.Acth, cfg.shared_rank_tol, A, b);
  return minimise(f, d.num_points(), A, b);
}

double rel_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(1.0, b.cwiseAbs().maxCoeff());
}

}  // namespace occp::oracle
