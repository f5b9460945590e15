#include "occp/contingency_solver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <future>
#include <limits>
#include <stdexcept>
#include <string>

#include <time.h>

namespace occp {

void SolverConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("solver config: " + m); };
  if (order < 3) fail("order must be >= 3");
  if (steps < 2) fail("steps must be >= 2");
  if (!(horizon > 0.0)) fail("horizon must be > 0");
  if (n_s < 1 || n_d < 0 || n_s + n_d >= steps) fail("need N_s >= 1, N_d >= 0 and N_s + N_d < N");
  if (slots < 0 || slots > 16) fail("slots must lie in [0, 16]");
  for (double w : {q_theta, q_x, q_y, q1, q2})
    if (!(w >= 0.0)) fail("weights must be >= 0");
  for (double r : {rho_theta, rho_cx, rho_cy, rho_ctheta, rho_obs})
    if (!(r > 0.0)) fail("penalties must be > 0");
  if (!(eps_pri > 0.0) || max_iter < 1) fail("need eps_pri > 0 and max_iter >= 1");
  if (!(l_x > 0.0 && l_y > 0.0)) fail("ellipse axes must be > 0");
  if (!(alpha_start > 0.0 && alpha_start <= alpha_end && alpha_end <= 1.0))
    fail("need 0 < alpha_start <= alpha_end <= 1");
  if (!(x_min < x_max && y_min < y_max && v_min < v_max)) fail("empty state range");
  if (!(ax_min < 0.0 && ax_max > 0.0 && ay_min < 0.0 && ay_max > 0.0)) fail("bad accel range");
  if (!(jx_max > 0.0 && jy_max > 0.0)) fail("bad jerk range");
  if (!(bound_decel > 0.0)) fail("bound_decel must be > 0");
  if (!(v_floor > 0.0)) fail("v_floor must be > 0");
  if (!(shared_rank_tol > 0.0 && shared_rank_tol < 1.0)) fail("shared_rank_tol must lie in (0, 1)");
}

namespace {

Eigen::MatrixXd stack_rows(std::initializer_list<Eigen::MatrixXd> blocks) {
  Eigen::Index rows = 0, cols = blocks.begin()->cols();
  for (const auto& b : blocks) rows += b.rows();
  Eigen::MatrixXd out(rows, cols);
  Eigen::Index r = 0;
  for (const auto& b : blocks) {
    out.middleRows(r, b.rows()) = b;
    r += b.rows();
  }
  return out;
}

// Equality rows are scaled to the magnitude of H so the KKT matrix stays well
// conditioned; the multiplier absorbs the factor and the primal part is exact.
double kkt_row_scale(const Eigen::MatrixXd& H, const Eigen::MatrixXd& Aeq) {
  const double h = H.cwiseAbs().rowwise().sum().maxCoeff();
  const double a = Aeq.cwiseAbs().rowwise().sum().maxCoeff();
  return a > 0.0 ? h / a : 1.0;
}

Eigen::MatrixXd kkt(const Eigen::MatrixXd& H, const Eigen::MatrixXd& Aeq, double sc) {
  const Eigen::Index m = H.rows(), e = Aeq.rows();
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(m + e, m + e);
  K.topLeftCorner(m, m) = H;
  K.topRightCorner(m, e) = sc * Aeq.transpose();
  K.bottomLeftCorner(e, m) = sc * Aeq;
  return K;
}

Eigen::VectorXd ramp(int n, double a, double b) {
  Eigen::VectorXd v(n);
  for (int k = 0; k < n; ++k) v(k) = n > 1 ? a + (b - a) * k / (n - 1) : b;
  return v;
}

Matrix2Col speed_floor(const ProblemData& d, const ControlPoints& c) {
  Matrix2Col vx = d.basis->dW().transpose() * c.x;
  Matrix2Col vy = d.basis->dW().transpose() * c.y;
  Matrix2Col v = (vx.array().square() + vy.array().square()).sqrt();
  return v.cwiseMax(d.cfg.v_floor);
}

// Speed change after t seconds of a ramp to acceleration a at jerk j.
double ramp_change(double t, double a, double j) {
  const double t1 = a / j;
  return t <= t1 ? 0.5 * j * t * t : 0.5 * a * t1 + a * (t - t1);
}

// Keeps the phased velocity rows off the initial-speed equality.
constexpr double kPhaseMargin = 0.05;

Eigen::MatrixXd masked(const Eigen::MatrixXd& Ah, const Eigen::VectorXd& active) {
  return active.asDiagonal() * Ah;
}

}  // namespace

ProblemData assemble(const PlanningInput& in, std::shared_ptr<const BasisSet> basis,
                     const SolverConfig& cfg) {
  cfg.validate();
  if (!basis || basis->order() != cfg.order || basis->steps() != cfg.steps ||
      std::abs(basis->horizon() - cfg.horizon) > 1e-12)
    throw std::invalid_argument("assemble: basis does not match solver config");
  if (static_cast<int>(in.obstacles.size()) > cfg.slots)
    throw std::invalid_argument("assemble: more obstacles than slots");

  ProblemData d;
  d.basis = basis;
  d.cfg = cfg;
  const int N = cfg.steps, M = cfg.slots, m = cfg.order + 1;
  const auto& W = basis->W();
  const auto& dW = basis->dW();
  const auto& ddW = basis->ddW();
  const auto& dddW = basis->dddW();
  const double dt = basis->dt();

  d.vxd = Eigen::VectorXd::Constant(N, in.vx_desired);
  const int nyd = N - cfg.n_s - cfg.n_d;
  d.A_yd = W.middleCols(cfg.n_s + cfg.n_d, nyd);
  d.pyd = Eigen::VectorXd::Constant(nyd, in.py_desired - in.py);

  d.A0.resize(2, m);
  d.A0.row(0) = W.col(0).transpose();
  d.A0.row(1) = dW.col(0).transpose();
  d.Af_y = basis->terminal(0).transpose();
  d.Af_th.resize(2, m);
  d.Af_th.row(0) = basis->terminal(0).transpose();
  d.Af_th.row(1) = basis->terminal(1).transpose();
  d.E_x0 = {0.0, in.v * std::cos(in.theta)};
  d.E_y0 = {0.0, in.v * std::sin(in.theta)};
  d.E_th0 = {in.theta, in.theta_rate};
  d.E_yf = in.py_desired - in.py;
  d.E_thf = Eigen::Vector2d::Zero();

  const Eigen::MatrixXd Wt = W.transpose(), dWt = dW.transpose(), ddWt = ddW.transpose(),
                        dddWt = dddW.transpose();
  d.Gx = stack_rows({Wt, -Wt, dWt, -dWt, ddWt, -ddWt, dddWt, -dddWt});
  d.Gy = stack_rows({Wt, -Wt, ddWt, -ddWt, dddWt, -dddWt});

  // Velocity rows: occlusion caps, phased in from the current speed along a
  // jerk-limited profile so that the rows stay satisfiable.
  const Eigen::VectorXd t = Eigen::VectorXd::LinSpaced(N, 0.0, (N - 1) * dt);
  d.Fx.resize(8 * N, 2);
  for (int j = 0; j < 2; ++j) {
    double cap = cfg.v_max, floor_v = cfg.v_min;
    if (in.bounds) {
      cap = std::min(cfg.v_max, j == 0 ? in.bounds->v0_occ : in.bounds->v1_occ);
      floor_v = std::max(cfg.v_min, in.v_occ_min);
      if (floor_v > cap)
        throw std::invalid_argument("assemble: v_occ_min exceeds the occlusion velocity cap");
    }
    Eigen::VectorXd vmax(N), vmin(N);
    for (int k = 0; k < N; ++k) {
      const double down = in.v + kPhaseMargin - ramp_change(t(k), cfg.bound_decel, 0.5 * cfg.jx_max);
      const double up = in.v - kPhaseMargin + ramp_change(t(k), 0.5 * cfg.ax_max, 0.5 * cfg.jx_max);
      vmax(k) = std::min(cfg.v_max, std::max(cap, down));
      vmin(k) = std::max(cfg.v_min, std::min({floor_v, up, vmax(k)}));
    }
    d.Fx.col(j) << Eigen::VectorXd::Constant(N, cfg.x_max - in.px),
        Eigen::VectorXd::Constant(N, -(cfg.x_min - in.px)), vmax, -vmin,
        Eigen::VectorXd::Constant(N, cfg.ax_max), Eigen::VectorXd::Constant(N, -cfg.ax_min),
        Eigen::VectorXd::Constant(N, cfg.jx_max), Eigen::VectorXd::Constant(N, cfg.jx_max);
  }
  d.Fy.resize(6 * N, 2);
  for (int j = 0; j < 2; ++j)
    d.Fy.col(j) << Eigen::VectorXd::Constant(N, cfg.y_max - in.py),
        Eigen::VectorXd::Constant(N, -(cfg.y_min - in.py)),
        Eigen::VectorXd::Constant(N, cfg.ay_max), Eigen::VectorXd::Constant(N, -cfg.ay_min),
        Eigen::VectorXd::Constant(N, cfg.jy_max), Eigen::VectorXd::Constant(N, cfg.jy_max);

  // Rows are brought to unit norm so that one feasibility tolerance fits
  // position, velocity, acceleration and jerk alike.
  auto normalise = [&](Eigen::MatrixXd& G, Matrix2Col& F, Eigen::VectorXd& scale) {
    scale.resize(G.rows());
    for (Eigen::Index r = 0; r < G.rows(); ++r) {
      scale(r) = 1.0 / G.row(r).norm();
      G.row(r) *= scale(r);
      F.row(r) *= scale(r);
    }
  };
  normalise(d.Gx, d.Fx, d.gx_scale);
  normalise(d.Gy, d.Fy, d.gy_scale);

  d.Ah.resize(N * M, m);
  d.Ox.setConstant(N * M, 2, 1e3);
  d.Oy.setConstant(N * M, 2, 1e3);
  d.Lx.setConstant(N * M, 2, cfg.l_x);
  d.Ly.setConstant(N * M, 2, cfg.l_y);
  d.active.setZero(N * M);
  d.alpha.resize(N * M, 2);
  const Eigen::VectorXd alpha = ramp(N, cfg.alpha_start, cfg.alpha_end);
  for (int k = 0; k < N; ++k)
    for (int i = 0; i < M; ++i) {
      const int r = k * M + i;
      d.Ah.row(r) = Wt.row(k);
      d.alpha.row(r).setConstant(alpha(k));
      if (i < static_cast<int>(in.obstacles.size())) {
        const auto& ob = in.obstacles[i];
        if (ob.x.size() != N || ob.y.size() != N)
          throw std::invalid_argument("assemble: obstacle track length differs from N");
        d.Ox.row(r).setConstant(ob.x(k) - in.px);
        d.Oy.row(r).setConstant(ob.y(k) - in.py);
        d.active(r) = 1.0;
      }
    }

  const int ns = cfg.n_s;
  d.Acx.resize(m, 3 * ns);
  d.Acx << W.leftCols(ns), dW.leftCols(ns), ddW.leftCols(ns);
  d.Acy = d.Acx;
  d.Acth = W.leftCols(ns);
  return d;
}

AdmmState AdmmState::init(const ProblemData& d, const ControlPoints& c0) {
  const int N = d.steps(), NM = N * d.slots(), ns = d.cfg.n_s;
  AdmmState s;
  s.c = c0;
  s.omega.setZero(NM, 2);
  s.xi.setOnes(NM, 2);
  s.lam_th.setZero(N, 2);
  s.lam_vx.setZero(N, 2);
  s.lam_vy.setZero(N, 2);
  s.lam_x.setZero(d.Gx.rows(), 2);
  s.lam_y.setZero(d.Gy.rows(), 2);
  s.lam_obs_x.setZero(NM, 2);
  s.lam_obs_y.setZero(NM, 2);
  s.lam_cx.setZero(3 * ns, 2);
  s.lam_cy.setZero(3 * ns, 2);
  s.lam_cth.setZero(ns, 2);
  s.V = speed_floor(d, c0);
  update_polar(s, d);
  update_consensus(s, d);
  update_slack(s, d);
  return s;
}

namespace {

Eigen::MatrixXd block_diag2(const Eigen::MatrixXd& A) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(2 * A.rows(), 2 * A.cols());
  out.topLeftCorner(A.rows(), A.cols()) = A;
  out.bottomRightCorner(A.rows(), A.cols()) = A;
  return out;
}

// Boundary rows for each trajectory plus equality of the two trajectories on
// the shared-segment rows.
Eigen::MatrixXd coupled_rows(const Eigen::MatrixXd& Aeq, const Eigen::MatrixXd& shared) {
  const Eigen::Index m = Aeq.cols(), e = Aeq.rows(), k = shared.rows();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(2 * e + k, 2 * m);
  out.block(0, 0, e, m) = Aeq;
  out.block(e, m, e, m) = Aeq;
  out.block(2 * e, 0, k, m) = shared;
  out.block(2 * e, m, k, m) = -shared;
  return out;
}

Eigen::VectorXd coupled_rhs(const Eigen::VectorXd& e, Eigen::Index shared) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(2 * e.size() + shared);
  out.head(e.size()) = e;
  out.segment(e.size(), e.size()) = e;
  return out;
}

Eigen::VectorXd stack_cols(const Matrix2Col& b) {
  Eigen::VectorXd out(2 * b.rows());
  out << b.col(0), b.col(1);
  return out;
}

ControlMatrix split_cols(const Eigen::VectorXd& z) {
  const Eigen::Index m = z.size() / 2;
  ControlMatrix out(m, 2);
  out.col(0) = z.head(m);
  out.col(1) = z.tail(m);
  return out;
}

}  // namespace

Eigen::MatrixXd shared_segment_rows(const Eigen::MatrixXd& Ac, const Eigen::MatrixXd& boundary,
                                    double rel_tol) {
  const Eigen::Index m = Ac.rows();
  if (Ac.cols() == 0) return Eigen::MatrixXd(0, m);
  Eigen::MatrixXd P = Eigen::MatrixXd::Identity(m, m);
  if (boundary.rows() > 0) {
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(boundary.transpose());
    const Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(m, boundary.rows());
    P -= Q * Q.transpose();
  }
  const double top = Eigen::JacobiSVD<Eigen::MatrixXd>(Ac.transpose()).singularValues()(0);
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(Ac.transpose() * P, Eigen::ComputeFullV);
  const Eigen::VectorXd& sv = svd.singularValues();
  Eigen::Index k = 0;
  while (k < sv.size() && sv(k) > rel_tol * top) ++k;
  return svd.matrixV().leftCols(k).transpose();
}

SubproblemSystems::SubproblemSystems(const ProblemData& d) {
  const auto& cfg = d.cfg;
  const auto& W = d.basis->W();
  const auto& dW = d.basis->dW();
  const auto& ddW = d.basis->ddW();
  const Eigen::MatrixXd Ahm = masked(d.Ah, d.active);

  H_th_ = cfg.q_theta * dW * dW.transpose() + cfg.rho_theta * W * W.transpose() +
          cfg.rho_ctheta * d.Acth * d.Acth.transpose();
  H_x_ = cfg.q_x * ddW * ddW.transpose() + (cfg.q1 + cfg.rho_theta) * dW * dW.transpose() +
         cfg.rho_obs * Ahm.transpose() * Ahm + cfg.rho_cx * d.Acx * d.Acx.transpose();
  H_y_ = cfg.q_y * ddW * ddW.transpose() + cfg.q2 * d.A_yd * d.A_yd.transpose() +
         cfg.rho_theta * dW * dW.transpose() + cfg.rho_obs * Ahm.transpose() * Ahm +
         cfg.rho_cy * d.Acy * d.Acy.transpose();

  Eigen::MatrixXd eq_th(4, d.num_points()), eq_y(3, d.num_points());
  eq_th << d.A0, d.Af_th;
  eq_y << d.A0, d.Af_y;
  const Eigen::MatrixXd sh_x = shared_segment_rows(d.Acx, d.A0, cfg.shared_rank_tol);
  const Eigen::MatrixXd sh_y = shared_segment_rows(d.Acy, eq_y, cfg.shared_rank_tol);
  const Eigen::MatrixXd sh_th = shared_segment_rows(d.Acth, eq_th, cfg.shared_rank_tol);
  eq_x_ = coupled_rows(d.A0, sh_x);
  eq_y_ = coupled_rows(eq_y, sh_y);
  eq_th_ = coupled_rows(eq_th, sh_th);
  Eigen::Vector3d ey;
  ey << d.E_y0, d.E_yf;
  Eigen::Vector4d et;
  et << d.E_th0, d.E_thf;
  rhs_x_ = coupled_rhs(d.E_x0, sh_x.rows());
  rhs_y_ = coupled_rhs(ey, sh_y.rows());
  rhs_th_ = coupled_rhs(et, sh_th.rows());

  const Eigen::MatrixXd Hth2 = block_diag2(H_th_);
  sc_th_ = kkt_row_scale(Hth2, eq_th_);
  kkt_th_ = QrFactor(kkt(Hth2, eq_th_, sc_th_));
  qp_x_ = DenseQp(block_diag2(H_x_));
  qp_y_ = DenseQp(block_diag2(H_y_));
  gx2_ = block_diag2(d.Gx);
  gy2_ = block_diag2(d.Gy);
  fx2_ = stack_cols(d.Fx);
  fy2_ = stack_cols(d.Fy);
  AhmT_ = Ahm.transpose();
}

Matrix2Col path_heading(const ProblemData& d, const ControlPoints& c) {
  const Matrix2Col vx = d.basis->dW().transpose() * c.x;
  const Matrix2Col vy = d.basis->dW().transpose() * c.y;
  const Matrix2Col th = d.basis->W().transpose() * c.theta;
  Matrix2Col psi = th;
  for (Eigen::Index k = 0; k < th.rows(); ++k)
    for (int j = 0; j < 2; ++j) {
      if (std::hypot(vx(k, j), vy(k, j)) < d.cfg.v_floor) continue;
      psi(k, j) = th(k, j) + wrap_angle(std::atan2(vy(k, j), vx(k, j)) - th(k, j));
    }
  return psi;
}

ControlMatrix update_theta(const AdmmState& s, const ProblemData& d, const SubproblemSystems& sys) {
  const auto& cfg = d.cfg;
  const Matrix2Col psi = path_heading(d, s.c);
  const Matrix2Col b = d.basis->W() * (cfg.rho_theta * psi - s.lam_th) - d.Acth * s.lam_cth +
                       cfg.rho_ctheta * d.Acth * s.Zth;
  const Eigen::VectorXd& e = sys.rhs_theta();
  Eigen::VectorXd rhs(2 * b.rows() + e.size());
  rhs << stack_cols(b), sys.scale_theta() * e;
  const Eigen::MatrixXd sol = sys.kkt_theta().solve(rhs);
  return split_cols(sol.col(0).head(2 * b.rows()));
}

namespace {

AxisUpdate solve_axis(const DenseQp& qp, const Matrix2Col& b, const Eigen::MatrixXd& Aeq,
                      const Eigen::VectorXd& beq, const Eigen::MatrixXd& G,
                      const Eigen::VectorXd& F, Eigen::Index base_rows) {
  const QpResult r = qp.solve(stack_cols(b), Aeq, beq, G, F);
  AxisUpdate out;
  out.c = split_cols(r.x);
  const Eigen::Index rows = base_rows / 2;
  out.lam.resize(rows, 2);
  out.lam.col(0) = r.multipliers.head(rows);
  out.lam.col(1) = r.multipliers.segment(rows, rows);
  out.feasible = r.feasible;
  return out;
}

Eigen::MatrixXd stack2(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  Eigen::MatrixXd out(A.rows() + B.rows(), A.cols());
  out << A, B;
  return out;
}

Eigen::VectorXd stack2(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  Eigen::VectorXd out(a.size() + b.size());
  out << a, b;
  return out;
}

}  // namespace

BarrierRows longitudinal_barrier_rows(const AdmmState& s, const ProblemData& d, std::uint32_t flip,
                                      std::uint32_t drop) {
  const int N = d.steps(), M = d.slots(), m = d.num_points();
  const auto& W = d.basis->W();
  const Matrix2Col px = W.transpose() * s.c.x;
  const Matrix2Col py = W.transpose() * s.c.y;
  std::vector<Eigen::VectorXd> rows;
  std::vector<double> rhs;
  std::uint32_t groups = 0;
  for (int j = 0; j < 2; ++j)
    for (int i = 0; i < M; ++i) {
      const std::uint32_t bit = 1u << (j * M + i);
      if (drop & bit) continue;
      struct Need {
        int k;
        double clear;
      };
      std::vector<Need> needs;
      double behind = 0.0, ahead = 0.0;
      for (int k = 1; k < N; ++k) {
        const int r = k * M + i;
        if (d.active(r) == 0.0) continue;
        const double xi_req = barrier_floor(s.xi(r - M, j), d.alpha(r, j));
        const double ly = d.Ly(r, j) * xi_req;
        const double q = (py(k, j) - d.Oy(r, j)) / ly;
        if (std::abs(q) >= 1.0) continue;
        const double clear = d.Lx(r, j) * xi_req * std::sqrt(1.0 - q * q);
        needs.push_back({k, clear});
        behind += std::max(0.0, px(k, j) - (d.Ox(r, j) - clear));
        ahead += std::max(0.0, d.Ox(r, j) + clear - px(k, j));
      }
      if (needs.empty()) continue;
      groups |= bit;
      const bool pass = (ahead < behind) != ((flip & bit) != 0);
      for (const auto& n : needs) {
        const int r = n.k * M + i;
        Eigen::VectorXd g = Eigen::VectorXd::Zero(2 * m);
        const double norm = W.col(n.k).norm();
        // pass: x >= O + clear, yield: x <= O - clear
        if (pass) {
          g.segment(j * m, m) = -W.col(n.k) / norm;
          rhs.push_back(-(d.Ox(r, j) + n.clear) / norm);
        } else {
          g.segment(j * m, m) = W.col(n.k) / norm;
          rhs.push_back((d.Ox(r, j) - n.clear) / norm);
        }
        rows.push_back(std::move(g));
      }
    }
  BarrierRows out;
  out.groups = groups;
  out.G.resize(static_cast<Eigen::Index>(rows.size()), 2 * m);
  out.F.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.G.row(static_cast<Eigen::Index>(r)) = rows[r].transpose();
    out.F(static_cast<Eigen::Index>(r)) = rhs[r];
  }
  return out;
}

AxisUpdate update_x(const AdmmState& s, const ProblemData& d, const SubproblemSystems& sys) {
  const auto& cfg = d.cfg;
  const auto& dW = d.basis->dW();
  const Eigen::MatrixXd& AhmT = sys.masked_AhT();
  const Matrix2Col th = d.basis->W().transpose() * s.c.theta;
  const Matrix2Col target =
      d.Ox.array() + d.Lx.array() * s.xi.array() * s.omega.array().cos();
  Matrix2Col b = (cfg.q1 * dW * d.vxd).replicate(1, 2);
  b += -dW * s.lam_vx - AhmT * s.lam_obs_x;
  b += cfg.rho_theta * dW * Matrix2Col(s.V.array() * th.array().cos());
  b += cfg.rho_obs * AhmT * target;
  b += cfg.rho_cx * d.Acx * s.Zx - d.Acx * s.lam_cx;

  const Eigen::Index base = sys.G_x().rows();
  auto attempt = [&](std::uint32_t flip, std::uint32_t drop) -> std::optional<AxisUpdate> {
    const BarrierRows br = longitudinal_barrier_rows(s, d, flip, drop);
    AxisUpdate u = solve_axis(sys.qp_x(), b, sys.eq_x(), sys.rhs_x(), stack2(sys.G_x(), br.G),
                              stack2(sys.F_x(), br.F), base);
    if (u.feasible) return u;
    return std::nullopt;
  };
  if (cfg.barrier_rows) {
    const std::uint32_t groups = longitudinal_barrier_rows(s, d).groups;
    if (groups != 0) {
      // Nearer side of every obstacle first. When that is out of reach, the
      // groups in turn try the other side and otherwise give up their rows.
      if (auto u = attempt(0, 0)) return *u;
      std::uint32_t drop = 0;
      for (std::uint32_t bit = 1; bit != 0 && bit <= groups; bit <<= 1) {
        if (!(groups & bit)) continue;
        if (auto u = attempt(bit, drop)) return *u;
        drop |= bit;
        if (drop == groups) break;
        if (auto u = attempt(0, drop)) return *u;
      }
    }
  }
  return solve_axis(sys.qp_x(), b, sys.eq_x(), sys.rhs_x(), sys.G_x(), sys.F_x(), base);
}

AxisUpdate update_y(const AdmmState& s, const ProblemData& d, const SubproblemSystems& sys) {
  const auto& cfg = d.cfg;
  const auto& dW = d.basis->dW();
  const Eigen::MatrixXd& AhmT = sys.masked_AhT();
  const Matrix2Col th = d.basis->W().transpose() * s.c.theta;
  const Matrix2Col target =
      d.Oy.array() + d.Ly.array() * s.xi.array() * s.omega.array().sin();
  Matrix2Col b = (cfg.q2 * d.A_yd * d.pyd).replicate(1, 2);
  b += -dW * s.lam_vy - AhmT * s.lam_obs_y;
  b += cfg.rho_theta * dW * Matrix2Col(s.V.array() * th.array().sin());
  b += cfg.rho_obs * AhmT * target;
  b += cfg.rho_cy * d.Acy * s.Zy - d.Acy * s.lam_cy;
  return solve_axis(sys.qp_y(), b, sys.eq_y(), sys.rhs_y(), sys.G_y(), sys.F_y(), sys.G_y().rows());
}

double barrier_floor(double xi_prev, double alpha) {
  return std::max(1.0, 1.0 + (1.0 - alpha) * (xi_prev - 1.0));
}

void update_polar(AdmmState& s, const ProblemData& d) {
  const int N = d.steps(), M = d.slots();
  const Matrix2Col px = d.Ah * s.c.x;
  const Matrix2Col py = d.Ah * s.c.y;
  for (int j = 0; j < 2; ++j)
    for (int i = 0; i < M; ++i)
      for (int k = 0; k < N; ++k) {
        const int r = k * M + i;
        const double dx = px(r, j) - d.Ox(r, j);
        const double dy = py(r, j) - d.Oy(r, j);
        const double lx = d.Lx(r, j), ly = d.Ly(r, j);
        if (dx != 0.0 || dy != 0.0) s.omega(r, j) = std::atan2(lx * dy, ly * dx);
        const double free = std::hypot(dx / lx, dy / ly);
        const double floor_v = k == 0 ? 1.0 : barrier_floor(s.xi(r - M, j), d.alpha(r, j));
        s.xi(r, j) = std::max({1.0, free, floor_v});
      }
}

void update_consensus(AdmmState& s, const ProblemData& d) {
  auto avg = [](const Eigen::MatrixXd& A, const ControlMatrix& c) {
    const Eigen::VectorXd z = 0.5 * A.transpose() * (c.col(0) + c.col(1));
    return Matrix2Col(z.replicate(1, 2));
  };
  s.Zx = avg(d.Acx, s.c.x);
  s.Zy = avg(d.Acy, s.c.y);
  s.Zth = avg(d.Acth, s.c.theta);
}

void update_slack(AdmmState& s, const ProblemData& d) {
  s.Sx = (d.Fx - d.Gx * s.c.x).cwiseMax(0.0);
  s.Sy = (d.Fy - d.Gy * s.c.y).cwiseMax(0.0);
}

void update_duals(AdmmState& s, const ProblemData& d, bool parallel) {
  const auto& cfg = d.cfg;
  const auto& W = d.basis->W();
  const auto& dW = d.basis->dW();
  const Matrix2Col th = W.transpose() * s.c.theta;
  const Eigen::MatrixXd Ahm = masked(d.Ah, d.active);

  std::function<void()> jobs[] = {
      [&] { s.lam_th += cfg.rho_theta * (th - path_heading(d, s.c)); },
      [&] {
        s.lam_vx += cfg.rho_theta *
                    (dW.transpose() * s.c.x - Matrix2Col(s.V.array() * th.array().cos()));
        s.lam_vy += cfg.rho_theta *
                    (dW.transpose() * s.c.y - Matrix2Col(s.V.array() * th.array().sin()));
      },
      [&] {
        s.lam_obs_x += cfg.rho_obs * (Ahm * s.c.x - d.active.asDiagonal() *
                                                       Matrix2Col(d.Ox.array() + d.Lx.array() *
                                                                                     s.xi.array() *
                                                                                     s.omega.array().cos()));
      },
      [&] {
        s.lam_obs_y += cfg.rho_obs * (Ahm * s.c.y - d.active.asDiagonal() *
                                                       Matrix2Col(d.Oy.array() + d.Ly.array() *
                                                                                     s.xi.array() *
                                                                                     s.omega.array().sin()));
      },
      [&] {
        s.lam_cx += cfg.rho_cx * (d.Acx.transpose() * s.c.x - s.Zx);
        s.lam_cy += cfg.rho_cy * (d.Acy.transpose() * s.c.y - s.Zy);
      },
      [&] { s.lam_cth += cfg.rho_ctheta * (d.Acth.transpose() * s.c.theta - s.Zth); },
  };
  if (!parallel) {
    for (auto& job : jobs) job();
    return;
  }
  std::vector<std::future<void>> running;
  for (auto& job : jobs) running.push_back(std::async(std::launch::async, job));
  for (auto& f : running) f.get();
}

ResidualBreakdown primal_residual(const AdmmState& s, const ProblemData& d) {
  ResidualBreakdown r;
  const auto& W = d.basis->W();
  const auto& dW = d.basis->dW();

  r.consensus = std::max({(d.Acx.transpose() * s.c.x - s.Zx).cwiseAbs().maxCoeff(),
                          (d.Acy.transpose() * s.c.y - s.Zy).cwiseAbs().maxCoeff(),
                          (d.Acth.transpose() * s.c.theta - s.Zth).cwiseAbs().maxCoeff()});
  const Matrix2Col gx = (d.Gx * s.c.x - d.Fx).array().colwise() / d.gx_scale.array();
  const Matrix2Col gy = (d.Gy * s.c.y - d.Fy).array().colwise() / d.gy_scale.array();
  r.inequality = std::max({0.0, gx.maxCoeff(), gy.maxCoeff()});

  const Matrix2Col th = W.transpose() * s.c.theta;
  const Matrix2Col ex = dW.transpose() * s.c.x - Matrix2Col(s.V.array() * th.array().cos());
  const Matrix2Col ey = dW.transpose() * s.c.y - Matrix2Col(s.V.array() * th.array().sin());
  const double n = static_cast<double>(ex.size());
  const double vrms = std::sqrt(s.V.squaredNorm() / n);
  r.nonholonomic = std::sqrt((ex.squaredNorm() + ey.squaredNorm()) / n) / std::max(1.0, vrms);
  r.heading = std::sqrt((th - path_heading(d, s.c)).squaredNorm() / n);

  const double live = d.active.sum();
  if (live > 0) {
    const Matrix2Col ox = (d.Ah * s.c.x - d.Ox).array() -
                          d.Lx.array() * s.xi.array() * s.omega.array().cos();
    const Matrix2Col oy = (d.Ah * s.c.y - d.Oy).array() -
                          d.Ly.array() * s.xi.array() * s.omega.array().sin();
    const Matrix2Col ex2 = d.active.asDiagonal() * Matrix2Col(ox.array() / d.Lx.array());
    const Matrix2Col ey2 = d.active.asDiagonal() * Matrix2Col(oy.array() / d.Ly.array());
    r.obstacle = (ex2.array().square() + ey2.array().square()).sqrt().maxCoeff();
  }
  // Each block is scaled by its own tolerance so that total < 0.1 means
  // consensus within 1e-2 and inequality rows within 1e-3.
  r.total = std::max({10.0 * r.consensus, 100.0 * r.inequality, r.nonholonomic, r.heading,
                      r.obstacle});
  return r;
}

double objective(const ControlPoints& c, const ProblemData& d) {
  const auto& cfg = d.cfg;
  const auto& dW = d.basis->dW();
  const auto& ddW = d.basis->ddW();
  double f = 0.0;
  for (int j = 0; j < 2; ++j) {
    f += 0.5 * cfg.q_theta * (dW.transpose() * c.theta.col(j)).squaredNorm();
    f += 0.5 * cfg.q_x * (ddW.transpose() * c.x.col(j)).squaredNorm();
    f += 0.5 * cfg.q1 * (dW.transpose() * c.x.col(j) - d.vxd).squaredNorm();
    f += 0.5 * cfg.q_y * (ddW.transpose() * c.y.col(j)).squaredNorm();
    f += 0.5 * cfg.q2 * (d.A_yd.transpose() * c.y.col(j) - d.pyd).squaredNorm();
  }
  return f;
}

ControlPoints initial_guess(const ProblemData& d) {
  const int m = d.num_points();
  const int samples = 4 * m;
  const Eigen::VectorXd nu = Eigen::VectorXd::LinSpaced(samples, 0.0, 1.0);
  const double T = d.cfg.horizon;
  const Eigen::VectorXd x = d.E_x0(1) * T * nu;
  const Eigen::VectorXd y = d.E_y0(1) * T * nu;
  const Eigen::VectorXd th = Eigen::VectorXd::Constant(samples, d.E_th0(0));
  ControlPoints c = ControlPoints::zeros(m);
  const Eigen::VectorXd cx = fit_control_points(nu, x, d.cfg.order);
  const Eigen::VectorXd cy = fit_control_points(nu, y, d.cfg.order);
  const Eigen::VectorXd ct = fit_control_points(nu, th, d.cfg.order);
  c.x << cx, cx;
  c.y << cy, cy;
  c.theta << ct, ct;
  return c;
}

ControlPoints shift_solution(const ControlPoints& c, const BasisSet& basis, double shift,
                             const Vec2& origin_delta) {
  const int n = basis.order();
  const double T = basis.horizon();
  if (!(shift >= 0.0 && shift < T)) throw std::invalid_argument("shift_solution: bad shift");
  const int samples = 4 * (n + 1);
  const Eigen::VectorXd nu_dst = Eigen::VectorXd::LinSpaced(samples, 0.0, 1.0 - shift / T);
  Eigen::MatrixXd B(samples, n + 1);
  for (int r = 0; r < samples; ++r)
    for (int i = 0; i <= n; ++i) B(r, i) = bernstein(i, n, nu_dst(r) + shift / T);
  auto refit = [&](const ControlMatrix& cm, double offset) {
    ControlMatrix out(n + 1, 2);
    for (int j = 0; j < 2; ++j) {
      const Eigen::VectorXd vals = (B * cm.col(j)).array() - offset;
      out.col(j) = fit_control_points(nu_dst, vals, n);
    }
    return out;
  };
  return {refit(c.x, origin_delta.x()), refit(c.y, origin_delta.y()), refit(c.theta, 0.0)};
}

DualWarmStart shift_duals(const AdmmState& s, int steps, const std::vector<int>& prev_ids,
                          const std::vector<int>& ids, int slots) {
  const Eigen::Index N = s.lam_th.rows();
  const int M_old = N > 0 ? static_cast<int>(s.lam_obs_x.rows() / N) : 0;
  if (steps < 0) throw std::invalid_argument("shift_duals: negative shift");
  auto shift = [&](const Matrix2Col& m) {
    Matrix2Col out(N, 2);
    for (Eigen::Index k = 0; k < N; ++k) out.row(k) = m.row(std::min<Eigen::Index>(k + steps, N - 1));
    return out;
  };
  DualWarmStart w;
  w.lam_th = shift(s.lam_th);
  w.lam_vx = shift(s.lam_vx);
  w.lam_vy = shift(s.lam_vy);
  w.lam_obs_x.setZero(N * slots, 2);
  w.lam_obs_y.setZero(N * slots, 2);
  for (int i = 0; i < static_cast<int>(ids.size()) && i < slots; ++i) {
    const auto it = std::find(prev_ids.begin(), prev_ids.end(), ids[i]);
    if (ids[i] < 0 || it == prev_ids.end()) continue;
    const int o = static_cast<int>(it - prev_ids.begin());
    if (o >= M_old) continue;
    for (Eigen::Index k = 0; k < N; ++k) {
      const Eigen::Index src = std::min<Eigen::Index>(k + steps, N - 1) * M_old + o;
      w.lam_obs_x.row(k * slots + i) = s.lam_obs_x.row(src);
      w.lam_obs_y.row(k * slots + i) = s.lam_obs_y.row(src);
    }
  }
  return w;
}

namespace {

double thread_cpu_ms() {
  timespec ts{};
  clock_gettime(CLOCK_THREAD_CPUTIME_ID, &ts);
  return 1e3 * static_cast<double>(ts.tv_sec) + 1e-6 * static_cast<double>(ts.tv_nsec);
}

}  // namespace

SolveResult solve(const ProblemData& d, const std::optional<ControlPoints>& warm_start,
                  const SolveOptions& opts, const DualWarmStart* duals) {
  using Clock = std::chrono::steady_clock;
  const auto t0 = Clock::now();
  const double cpu0 = thread_cpu_ms();
  const SubproblemSystems sys(d);
  AdmmState s = AdmmState::init(d, warm_start ? *warm_start : initial_guess(d));
  if (duals) {
    const Eigen::Index N = d.steps(), NM = N * d.slots();
    if (duals->lam_th.rows() != N || duals->lam_obs_x.rows() != NM)
      throw std::invalid_argument("solve: warm-start multipliers do not match the problem");
    s.lam_th = duals->lam_th;
    s.lam_vx = duals->lam_vx;
    s.lam_vy = duals->lam_vy;
    s.lam_obs_x = duals->lam_obs_x;
    s.lam_obs_y = duals->lam_obs_y;
  }

  SolveResult best;
  double best_res = std::numeric_limits<double>::infinity();
  SolveReport rep;
  ResidualBreakdown res;
  for (int it = 1; it <= d.cfg.max_iter; ++it) {
    AxisUpdate ux = update_x(s, d, sys), uy = update_y(s, d, sys);
    ControlPoints next{std::move(ux.c), std::move(uy.c), update_theta(s, d, sys)};
    s.c = std::move(next);
    s.lam_x = std::move(ux.lam);
    s.lam_y = std::move(uy.lam);
    update_polar(s, d);
    update_consensus(s, d);
    update_slack(s, d);
    s.V = speed_floor(d, s.c);
    update_duals(s, d, opts.parallel_duals);
    res = primal_residual(s, d);
    s.iter = it;
    if (opts.record_trace) {
      const double us = std::chrono::duration<double, std::micro>(Clock::now() - t0).count();
      rep.trace.push_back({it, res.total, objective(s.c, d), us});
    }
    if (res.total < d.cfg.eps_pri) {
      rep.converged = true;
      break;
    }
    if (res.total < best_res) {
      best_res = res.total;
      best.c = s.c;
      best.report.breakdown = res;
    }
  }
  rep.iterations = s.iter;
  rep.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  rep.cpu_ms = thread_cpu_ms() - cpu0;

  SolveResult out;
  if (rep.converged || best_res == std::numeric_limits<double>::infinity()) {
    out.c = s.c;
    rep.breakdown = res;
  } else {
    out.c = best.c;
    rep.breakdown = best.report.breakdown;
  }
  rep.residual = rep.breakdown.total;
  double min_xi = std::numeric_limits<double>::infinity();
  for (Eigen::Index r = 0; r < s.xi.rows(); ++r)
    if (d.active(r) > 0) min_xi = std::min(min_xi, s.xi.row(r).minCoeff());
  rep.min_xi = std::isfinite(min_xi) ? min_xi : 1.0;
  out.state = std::move(s);
  out.report = std::move(rep);
  return out;
}

}  // namespace occp
