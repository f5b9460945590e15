#pragma once

#include "occp/bezier.hpp"
#include "occp/contingency_solver.hpp"
#include "occp/geometry.hpp"
#include "occp/occlusion_risk.hpp"
#include "occp/reachability.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace occp {

struct EVState {
  double px = 0.0, py = 0.0;
  double theta = 0.0;
  double v = 0.0;
};

struct EVControl {
  double u_theta = 0.0;  // rad/s
  double a = 0.0;        // m/s^2
};

/// Forward-Euler Dubins step; v is clamped to [0, v_max]. Throws
/// std::invalid_argument on non-finite input.
EVState step_ev(const EVState& x, const EVControl& u, double dt, double v_max = 10.0);

struct IdmParams {
  double a_max = 2.0;
  double b = 3.0;
  double s0 = 3.0;
  double T_h = 1.0;
  double delta = 4.0;
  double accel_limit = 4.0;
};

/// Intelligent driver model acceleration, clamped to +-accel_limit. A gap <= 0
/// returns -accel_limit. Pass an infinite gap for a free road.
double idm_accel(double gap, double v, double v_lead, double v_desired, const IdmParams& p);

struct SurroundingVehicle {
  int id = 0;
  int lane = 0;
  double s = 0.0;
  double v = 0.0;
  double v_desired = 0.0;
  double half_length = 2.25;
  double half_width = 0.9;
  bool visible = false;
};

/// One roster entry; the vehicle enters the world at spawn_time.
struct VehicleSpawn {
  int lane = 1;
  double s = 0.0;
  double v = 0.0;
  double v_desired = 6.0;
  double spawn_time = 0.0;
};

struct SelectionWeights {
  double goal = 1.0;
  double lateral = 1.0;
  double safety = 1.0;
  double bound = 100.0;  // per m/s of speed above the trajectory's own cap
  double comfort = 0.01;
  double consistency = 1.0;
};

enum class RunMode { Aware, Ignorant, Replay };

enum class RosterStyle { Platoon, Uniform };

/// Time at which a platoon vehicle reaches the EV lane; speed 0 means the
/// lane's platoon speed.
struct PlatoonEntry {
  double t_cross = 0.0;
  double speed = 0.0;
};

std::string to_string(RunMode m);
/// Throws std::invalid_argument for anything but aware, ignorant or replay.
RunMode parse_mode(const std::string& s);
std::string to_string(RosterStyle r);
RosterStyle parse_roster_style(const std::string& s);

struct ScenarioConfig {
  SolverConfig solver;
  RiskParams risk;
  IdmParams idm;
  SelectionWeights selection;

  double lane_width = 3.75;
  double cross_lane_x0 = 0.0;     // southbound lane centerline
  double cross_lane_x1 = 3.75;    // northbound lane centerline
  double opposite_lane_y = 3.75;  // westbound lane beside the EV lane
  double building_setback = 4.0;
  double lane_half_span = 200.0;
  double traffic_lo = -70.0;  // SVs circulate over this stretch of the cross road
  double traffic_hi = 70.0;
  double conflict_margin = 0.0;

  double ev_x0 = -50.0, ev_y0 = 0.0, ev_v0 = 5.0;
  double vx_desired = 7.0;
  double py_desired = 0.0;
  double sensor_range = 30.0;
  double exit_offset = 10.0;  // past the crossing centre
  double t_max = 18.0;
  double dt = 0.1;

  int num_vehicles = 10;
  double sv_v_min = 4.0, sv_v_max = 9.5;
  double sv_position_jitter = 4.0;
  RosterStyle roster_style = RosterStyle::Platoon;
  // Platoon rosters place each vehicle so that it reaches the EV lane at its
  // t_cross. A vehicle within platoon_headway of its predecessor wants to go
  // platoon_boost faster and closes up under IDM.
  std::vector<PlatoonEntry> platoon_lane1{{-1.5, 0.0}, {4.6, 0.0}, {7.2, 0.0}, {13.0, 0.0}, {18.0, 0.0}};
  std::vector<PlatoonEntry> platoon_lane2{{1.0, 0.0}, {8.5, 5.0}, {13.5, 0.0}, {16.1, 0.0}, {18.7, 0.0}};
  double platoon_speed1 = 6.0, platoon_speed2 = 7.0;
  double platoon_jitter = 0.25;  // on both speed (m/s) and t_cross (s)
  double platoon_headway = 3.0;
  double platoon_boost = 2.0;
  /// Explicit roster; when empty one is drawn from the seed.
  std::vector<VehicleSpawn> roster;
  std::uint64_t seed = 1;

  RunMode mode = RunMode::Aware;
  int plot_cycle = 70;

  /// Throws std::invalid_argument on any range violation.
  void validate() const;

  double crossing_x() const { return 0.5 * (cross_lane_x0 + cross_lane_x1); }
  double exit_x() const { return crossing_x() + exit_offset; }
};

/// Lanes, buildings and conflict windows derived from a config.
struct WorldMap {
  Lane ev_lane;
  std::vector<Lane> cross_lanes;
  std::vector<Polygon> buildings;
  ConflictMap conflicts;
  Eigen::AlignedBox2d bounds;

  const Lane& lane(int id) const;
};

WorldMap build_map(const ScenarioConfig& cfg);

/// Roster drawn from `seed`. Platoon style jitters the configured crossing
/// schedule; uniform style spreads num_vehicles over the traffic stretch with
/// jittered positions and desired speeds. Vehicles wrap around the stretch.
std::vector<VehicleSpawn> generate_roster(const ScenarioConfig& cfg, std::uint64_t seed);

struct SenseResult {
  std::vector<int> visible;  // indices into the vehicle list
  std::vector<PhantomVehicleSet> pvs;
};

Polygon footprint(const SurroundingVehicle& sv, const WorldMap& map);
Vec2 position(const SurroundingVehicle& sv, const WorldMap& map);

/// Visible vehicles (within range, centre in line of sight) and occluded lane
/// intervals on the cross lanes.
SenseResult sense(const WorldMap& map, const std::vector<SurroundingVehicle>& vehicles,
                  const EVState& ev, double range);

struct RiskAssessment {
  double r_total = 0.0;
  VelocityBounds bounds;
  std::vector<RiskField> fields;
};

/// Risk of the PVS whose conflict window the EV can reach. A phantom hidden
/// behind a visible vehicle cannot overtake it.
RiskAssessment assess_risk(const WorldMap& map, const SenseResult& sensed,
                           const std::vector<SurroundingVehicle>& vehicles, const EVState& ev,
                           const ScenarioConfig& cfg);

struct SelectionContext {
  const ProblemData* data = nullptr;
  Vec2 origin = Vec2::Zero();  // world position of the trajectory frame
  /// Previously selected trajectory in world coordinates, one step older.
  std::optional<DiscreteTrajectory> previous;
};

using TrajectoryPair = std::pair<DiscreteTrajectory, DiscreteTrajectory>;

/// Per-trajectory selection cost.
std::array<double, 2> selection_costs(const TrajectoryPair& pair, const SelectionContext& ctx,
                                      const SelectionWeights& w);
/// 0 for exploration only when it is strictly cheaper, otherwise 1.
int select_trajectory(const TrajectoryPair& pair, const SelectionContext& ctx,
                      const SelectionWeights& w);

struct CycleTrace {
  double t = 0.0;
  bool planned = true;  // false for open-loop replay steps and the final sample
  EVState ev;
  int selected = 1;
  EVControl control;
  double solve_ms = 0.0;      // wall time
  double solve_cpu_ms = 0.0;  // thread CPU time, free of scheduler noise
  int iterations = 0;
  double residual = 0.0;
  ResidualBreakdown breakdown;
  bool converged = true;
  bool reused = false;
  double r_total = 0.0;
  VelocityBounds bounds;
  bool collision = false;
  int obstacles = 0;
  double min_xi = 1.0;
  double consensus_gap = 0.0;  // max first-N_s position gap between the pair
  Eigen::VectorXd speed_explore, speed_fallback;
};

struct SolveStats {
  double mean = 0.0, max = 0.0, min = 0.0, stddev = 0.0;
};

struct RunMetrics {
  bool completed = false;
  double task_duration = -1.0;
  double v_min = 0.0, v_mean = 0.0, v_max = 0.0;  // longitudinal velocity
  double v_terminal = 0.0;
  bool collision = false;
  SolveStats solve_ms;
  SolveStats solve_cpu_ms;
  int cycles = 0;
  int nonconverged = 0;
  int max_iterations = 0;
};

struct RunOptions {
  bool record_admm = false;
  /// Called after every planned cycle with its index and risk fields.
  std::function<void(int, const CycleTrace&, const RiskAssessment&)> on_risk;
};

struct AdmmTraceRow {
  int cycle;
  IterationRecord rec;
};

struct RunResult {
  RunMetrics metrics;
  std::vector<CycleTrace> trace;
  std::vector<AdmmTraceRow> admm;
};

/// Closed-loop world: vehicles, EV and the planner state carried between cycles.
class World {
 public:
  explicit World(const ScenarioConfig& cfg);

  const ScenarioConfig& config() const { return cfg_; }
  const WorldMap& map() const { return map_; }
  const EVState& ev() const { return ev_; }
  const std::vector<SurroundingVehicle>& vehicles() const { return vehicles_; }
  double time() const { return t_; }
  int cycle() const { return cycle_; }

  /// One planning cycle: sense, risk, solve, select and execute one or (in
  /// replay mode) several control intervals.
  CycleTrace plan_cycle(const RunOptions& opts = {}, std::vector<AdmmTraceRow>* admm = nullptr,
                        RiskAssessment* risk_out = nullptr);

  /// Advances traffic by one step and spawns due roster entries.
  void step_traffic();
  /// Some SV centre entered the EV safety ellipse during the last step, with
  /// both positions interpolated linearly over the step.
  bool collision_now() const;
  bool finished() const;

 private:
  std::vector<ObstacleTrack> predict(const std::vector<int>& ids) const;
  std::vector<int> relevant(const SenseResult& sensed) const;
  EVControl control_from(const DiscreteTrajectory& traj, int step) const;
  void advance(const EVControl& u);

  ScenarioConfig cfg_;
  WorldMap map_;
  std::shared_ptr<const BasisSet> basis_;
  EVState ev_;
  double a_prev_ = 0.0;
  double t_ = 0.0;
  int cycle_ = 0;
  std::vector<SurroundingVehicle> vehicles_;
  std::vector<VehicleSpawn> pending_;
  int next_id_ = 0;

  Vec2 prev_ev_ = Vec2::Zero();  // positions before the last step
  std::vector<std::pair<int, Vec2>> prev_sv_;

  std::optional<ControlPoints> last_solution_;
  std::optional<AdmmState> last_state_;
  std::vector<int> last_ids_;  // obstacle ids per slot of the last solve
  Vec2 last_origin_ = Vec2::Zero();
  double last_plan_time_ = 0.0;
  std::optional<DiscreteTrajectory> last_selected_;  // world coordinates
  // Replay mode: remaining open-loop steps of the last plan.
  int replay_left_ = 0;
  int replay_index_ = 0;
  DiscreteTrajectory replay_traj_;
  int replay_id_ = 1;
};

RunResult run_scenario(const ScenarioConfig& cfg, const RunOptions& opts = {});

/// Metrics recomputed from a trace alone.
RunMetrics compute_metrics(const std::vector<CycleTrace>& trace, const ScenarioConfig& cfg);

}  // namespace occp
