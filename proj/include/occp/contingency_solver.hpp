#pragma once

#include "occp/bezier.hpp"
#include "occp/occlusion_risk.hpp"
#include "occp/qp.hpp"
#include "occp/qr_solve.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

namespace occp {

using Matrix2Col = Eigen::Matrix<double, Eigen::Dynamic, 2>;

struct SolverConfig {
  int order = 10;
  int steps = 40;
  double horizon = 4.0;
  int n_s = 5;
  int n_d = 5;
  int slots = 4;

  double q_theta = 150.0;
  double q_x = 100.0;
  double q_y = 100.0;
  double q1 = 50.0;
  double q2 = 100.0;

  double rho_theta = 5.0;
  double rho_cx = 5.0;
  double rho_cy = 5.0;
  double rho_ctheta = 5.0;
  double rho_obs = 5.0;

  double eps_pri = 0.1;
  int max_iter = 200;

  double l_x = 0.6;
  double l_y = 0.6;
  double alpha_start = 0.4;
  double alpha_end = 1.0;

  double x_min = -50.0, x_max = 50.0;
  double y_min = -1.875, y_max = 1.875;
  double v_min = 0.0, v_max = 10.0;
  double ax_min = -6.0, ax_max = 4.0;
  double ay_min = -3.0, ay_max = 3.0;
  double jx_max = 6.0;
  double jy_max = 6.0;
  /// Deceleration used to phase in a velocity cap the EV currently exceeds.
  double bound_decel = 3.0;

  double v_floor = 0.1;
  /// Relative singular-value cut for the shared-segment rows imposed exactly.
  double shared_rank_tol = 1e-4;
  /// Adds longitudinal barrier rows to the x subproblem.
  bool barrier_rows = true;

  void validate() const;
};

/// Obstacle prediction over the horizon, world-relative to the EV origin.
struct ObstacleTrack {
  Eigen::VectorXd x;  // length N
  Eigen::VectorXd y;
  int id = -1;  // stable identity used to carry multipliers between cycles
};

struct PlanningInput {
  double px = 0.0, py = 0.0;  // world position; the problem is posed relative to it
  double theta = 0.0;
  double theta_rate = 0.0;
  double v = 0.0;
  double vx_desired = 7.0;
  double py_desired = 0.0;
  /// Velocity caps for exploration/fallback; nullopt disables occlusion bounds.
  std::optional<VelocityBounds> bounds;
  double v_occ_min = 0.0;
  std::vector<ObstacleTrack> obstacles;  // at most `slots`
};

/// Every constant of the biconvex problem for one planning cycle.
struct ProblemData {
  std::shared_ptr<const BasisSet> basis;
  SolverConfig cfg;

  Eigen::VectorXd vxd;   // N
  Eigen::VectorXd pyd;   // N - N_s - N_d
  Eigen::MatrixXd A_yd;  // (n+1) x (N - N_s - N_d)

  Eigen::MatrixXd A0;     // 2 x (n+1): position and velocity at nu = 0
  Eigen::MatrixXd Af_y;   // 1 x (n+1)
  Eigen::MatrixXd Af_th;  // 2 x (n+1)
  Eigen::Vector2d E_x0, E_y0, E_th0;
  double E_yf = 0.0;
  Eigen::Vector2d E_thf = Eigen::Vector2d::Zero();

  Eigen::MatrixXd Gx;  // 8N x (n+1)
  Eigen::MatrixXd Gy;  // 6N x (n+1)
  Matrix2Col Fx;
  Matrix2Col Fy;
  Eigen::VectorXd gx_scale, gy_scale;  // row factors that normalised G and F

  Eigen::MatrixXd Ah;   // (N M) x (n+1)
  Matrix2Col Ox, Oy;    // (N M) x 2
  Matrix2Col Lx, Ly;    // (N M) x 2
  Eigen::VectorXd active;  // (N M), 1 for live obstacle rows, 0 for padding
  Matrix2Col alpha;     // (N M) x 2

  Eigen::MatrixXd Acx, Acy, Acth;  // (n+1) x 3N_s, 3N_s, N_s

  int steps() const { return cfg.steps; }
  int slots() const { return cfg.slots; }
  int num_points() const { return cfg.order + 1; }
};

/// Builds the problem for one cycle. Throws std::invalid_argument on an
/// inconsistent configuration (for example v_occ_min above a velocity cap).
ProblemData assemble(const PlanningInput& in, std::shared_ptr<const BasisSet> basis,
                     const SolverConfig& cfg);

struct AdmmState {
  ControlPoints c;
  Matrix2Col omega, xi;       // (N M) x 2
  Matrix2Col Zx, Zy, Zth;     // 3N_s, 3N_s, N_s rows
  Matrix2Col Sx, Sy;
  Matrix2Col lam_th;          // heading residual, N x 2
  Matrix2Col lam_vx, lam_vy;  // velocity-heading coupling, N x 2
  Matrix2Col lam_x, lam_y;    // multipliers of G C <= F from the axis subproblems
  Matrix2Col lam_obs_x, lam_obs_y;
  Matrix2Col lam_cx, lam_cy, lam_cth;
  Matrix2Col V;               // speed of the previous iterate, N x 2
  int iter = 0;

  static AdmmState init(const ProblemData& data, const ControlPoints& c0);
};

/// Rows S such that S (c0 - c1) = 0 pins the shared segment A_c^T c0 = A_c^T c1
/// up to numerically insignificant directions. `boundary` holds rows both
/// trajectories already satisfy with equal right-hand sides; S is orthonormal
/// and orthogonal to them. Directions are kept while their singular value
/// exceeds rel_tol times the largest singular value of A_c^T.
Eigen::MatrixXd shared_segment_rows(const Eigen::MatrixXd& Ac, const Eigen::MatrixXd& boundary,
                                    double rel_tol);

/// Systems of the three control-point subproblems, posed jointly over both
/// trajectories (stacked as [column 0; column 1]). The Hessians do not depend
/// on the iterate, so every factorisation is computed once per solve. The
/// heading subproblem is equality constrained and solved through its KKT
/// matrix; the x and y subproblems also carry the rows G C <= F and go through
/// the dense active-set QP.
class SubproblemSystems {
 public:
  explicit SubproblemSystems(const ProblemData& data);

  /// Single-trajectory Hessians.
  const Eigen::MatrixXd& H_theta() const { return H_th_; }
  const Eigen::MatrixXd& H_x() const { return H_x_; }
  const Eigen::MatrixXd& H_y() const { return H_y_; }

  const QrFactor& kkt_theta() const { return kkt_th_; }
  double scale_theta() const { return sc_th_; }
  const DenseQp& qp_x() const { return qp_x_; }
  const DenseQp& qp_y() const { return qp_y_; }

  /// Joint equality rows and right-hand sides: boundary rows of each
  /// trajectory followed by the shared-segment rows.
  const Eigen::MatrixXd& eq_x() const { return eq_x_; }
  const Eigen::MatrixXd& eq_y() const { return eq_y_; }
  const Eigen::MatrixXd& eq_theta() const { return eq_th_; }
  const Eigen::VectorXd& rhs_x() const { return rhs_x_; }
  const Eigen::VectorXd& rhs_y() const { return rhs_y_; }
  const Eigen::VectorXd& rhs_theta() const { return rhs_th_; }
  /// Joint inequality rows diag(G, G) [c0; c1] <= [F0; F1].
  const Eigen::MatrixXd& G_x() const { return gx2_; }
  const Eigen::MatrixXd& G_y() const { return gy2_; }
  const Eigen::VectorXd& F_x() const { return fx2_; }
  const Eigen::VectorXd& F_y() const { return fy2_; }
  /// A_h^T with padding rows zeroed.
  const Eigen::MatrixXd& masked_AhT() const { return AhmT_; }

 private:
  Eigen::MatrixXd H_th_, H_x_, H_y_;
  QrFactor kkt_th_;
  double sc_th_ = 1.0;
  DenseQp qp_x_, qp_y_;
  Eigen::MatrixXd eq_x_, eq_y_, eq_th_;
  Eigen::VectorXd rhs_x_, rhs_y_, rhs_th_;
  Eigen::MatrixXd gx2_, gy2_;
  Eigen::VectorXd fx2_, fy2_;
  Eigen::MatrixXd AhmT_;
};

/// New control points of one axis with the multipliers of its inequality rows.
struct AxisUpdate {
  ControlMatrix c;
  Matrix2Col lam;
  bool feasible = true;
};

/// Heading of the velocity of the current iterate, unwrapped towards the
/// current heading samples.
Matrix2Col path_heading(const ProblemData& data, const ControlPoints& c);

ControlMatrix update_theta(const AdmmState& s, const ProblemData& data,
                           const SubproblemSystems& sys);
/// Linear rows in the joint x variables that keep each trajectory outside the
/// obstacle ellipses along x, given the current y iterate. Rows exist where
/// the current lateral offset overlaps the ellipse scaled by the barrier
/// floor. Rows are grouped per trajectory j and slot i (bit j * M + i); a group
/// keeps its trajectory on one side of the obstacle over the whole overlap,
/// the side nearer to the current iterate unless its `flip` bit is set.
/// Groups in `drop` produce no rows.
struct BarrierRows {
  Eigen::MatrixXd G;
  Eigen::VectorXd F;
  std::uint32_t groups = 0;  // groups that produced rows
};
BarrierRows longitudinal_barrier_rows(const AdmmState& s, const ProblemData& data,
                                      std::uint32_t flip = 0, std::uint32_t drop = 0);

AxisUpdate update_x(const AdmmState& s, const ProblemData& data, const SubproblemSystems& sys);
AxisUpdate update_y(const AdmmState& s, const ProblemData& data, const SubproblemSystems& sys);

/// Contraction of the barrier variable towards the ellipse boundary.
double barrier_floor(double xi_prev, double alpha);
/// Updates omega and xi in place from the new position control points.
void update_polar(AdmmState& s, const ProblemData& data);
void update_consensus(AdmmState& s, const ProblemData& data);
void update_slack(AdmmState& s, const ProblemData& data);
void update_duals(AdmmState& s, const ProblemData& data, bool parallel = false);

struct ResidualBreakdown {
  double consensus = 0.0;     // max abs, mixed units
  double inequality = 0.0;    // max violation of G C <= F
  double nonholonomic = 0.0;  // relative rms
  double heading = 0.0;       // rms, rad
  double obstacle = 0.0;      // max over live rows, in ellipse units
  double total = 0.0;
};

ResidualBreakdown primal_residual(const AdmmState& s, const ProblemData& data);

/// Unaugmented cost of the reformulated objective.
double objective(const ControlPoints& c, const ProblemData& data);

struct IterationRecord {
  int iter;
  double residual;
  double objective;
  double wall_us;
};

struct SolveReport {
  int iterations = 0;
  double residual = 0.0;
  ResidualBreakdown breakdown;
  double wall_ms = 0.0;
  double cpu_ms = 0.0;  // CPU time of the calling thread
  bool converged = false;
  double min_xi = 1.0;
  std::vector<IterationRecord> trace;
};

struct SolveOptions {
  bool record_trace = false;
  bool parallel_duals = false;
};

struct SolveResult {
  ControlPoints c;
  AdmmState state;
  SolveReport report;
};

/// Multipliers carried over from the previous cycle, already shifted in time
/// and matched to the current obstacle slots.
struct DualWarmStart {
  Matrix2Col lam_th, lam_vx, lam_vy;  // N x 2
  Matrix2Col lam_obs_x, lam_obs_y;    // (N M) x 2
};

/// Shifts the time-indexed multipliers of `s` by `steps` samples (the tail
/// repeats the last sample). Obstacle rows follow the obstacle ids: slot i of
/// the new problem takes the rows of the old slot holding ids[i], or zeros.
DualWarmStart shift_duals(const AdmmState& s, int steps, const std::vector<int>& prev_ids,
                          const std::vector<int>& ids, int slots);

/// Consensus ADMM loop. Returns the last iterate when converged, otherwise the
/// iterate with the smallest residual and converged = false.
SolveResult solve(const ProblemData& data, const std::optional<ControlPoints>& warm_start,
                  const SolveOptions& opts = {}, const DualWarmStart* duals = nullptr);

/// Constant-velocity initial guess satisfying the boundary rows.
ControlPoints initial_guess(const ProblemData& data);

/// Previous solution advanced by `shift` seconds and re-expressed relative to
/// a new origin, refitted on the same basis.
ControlPoints shift_solution(const ControlPoints& c, const BasisSet& basis, double shift,
                             const Vec2& origin_delta);

}  // namespace occp
