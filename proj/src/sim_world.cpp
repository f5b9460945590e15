#include "occp/sim_world.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

namespace occp {

EVState step_ev(const EVState& x, const EVControl& u, double dt, double v_max) {
  for (double q : {x.px, x.py, x.theta, x.v, u.u_theta, u.a, dt})
    if (!std::isfinite(q)) throw std::invalid_argument("step_ev: non-finite input");
  EVState n;
  n.px = x.px + x.v * std::cos(x.theta) * dt;
  n.py = x.py + x.v * std::sin(x.theta) * dt;
  n.theta = x.theta + u.u_theta * dt;
  n.v = std::clamp(x.v + u.a * dt, 0.0, v_max);
  return n;
}

double idm_accel(double gap, double v, double v_lead, double v_desired, const IdmParams& p) {
  if (!(gap > 0.0)) return -p.accel_limit;
  const double free = 1.0 - std::pow(v / v_desired, p.delta);
  double interact = 0.0;
  if (std::isfinite(gap)) {
    const double s_star =
        p.s0 + std::max(0.0, v * p.T_h + v * (v - v_lead) / (2.0 * std::sqrt(p.a_max * p.b)));
    interact = (s_star / gap) * (s_star / gap);
  }
  return std::clamp(p.a_max * (free - interact), -p.accel_limit, p.accel_limit);
}

std::string to_string(RunMode m) {
  switch (m) {
    case RunMode::Aware: return "aware";
    case RunMode::Ignorant: return "ignorant";
    case RunMode::Replay: return "replay";
  }
  return "aware";
}

RunMode parse_mode(const std::string& s) {
  if (s == "aware") return RunMode::Aware;
  if (s == "ignorant") return RunMode::Ignorant;
  if (s == "replay") return RunMode::Replay;
  throw std::invalid_argument("unknown mode '" + s + "' (expected aware, ignorant or replay)");
}

std::string to_string(RosterStyle r) { return r == RosterStyle::Platoon ? "platoon" : "uniform"; }

RosterStyle parse_roster_style(const std::string& s) {
  if (s == "platoon") return RosterStyle::Platoon;
  if (s == "uniform") return RosterStyle::Uniform;
  throw std::invalid_argument("unknown roster style '" + s + "' (expected platoon or uniform)");
}

void ScenarioConfig::validate() const {
  solver.validate();
  risk.validate();
  auto fail = [](const std::string& m) { throw std::invalid_argument("scenario: " + m); };
  if (std::abs(dt - solver.horizon / solver.steps) > 1e-9)
    fail("dt must equal the solver step T / N");
  if (!(lane_width > 0.0)) fail("lane_width must be > 0");
  if (!(cross_lane_x1 - cross_lane_x0 >= lane_width)) fail("cross lanes overlap");
  if (!(building_setback >= 0.0)) fail("building_setback must be >= 0");
  if (!(traffic_lo < traffic_hi) || traffic_hi - traffic_lo > 2.0 * lane_half_span)
    fail("traffic stretch must be non-empty and inside the lanes");
  if (!(sensor_range > 0.0)) fail("sensor_range must be > 0");
  if (!(ev_v0 >= solver.v_min && ev_v0 <= solver.v_max)) fail("ev_v0 outside the EV velocity range");
  if (!(vx_desired >= solver.v_min && vx_desired <= solver.v_max))
    fail("vx_desired outside the EV velocity range");
  if (!(ev_x0 >= solver.x_min && ev_x0 <= solver.x_max)) fail("ev_x0 outside the position range");
  if (!(t_max > 0.0)) fail("t_max must be > 0");
  if (num_vehicles < 0) fail("num_vehicles must be >= 0");
  if (!(sv_v_min > 0.0 && sv_v_min <= sv_v_max && sv_v_max <= 10.0))
    fail("need 0 < sv_v_min <= sv_v_max <= 10");
  if (!(sv_position_jitter >= 0.0)) fail("sv_position_jitter must be >= 0");
  for (double v : {platoon_speed1, platoon_speed2})
    if (!(v > 0.0 && v <= 10.0)) fail("platoon speeds must lie in (0, 10]");
  for (const auto* lane : {&platoon_lane1, &platoon_lane2})
    for (const auto& e : *lane)
      if (!(e.speed >= 0.0 && e.speed <= 10.0) || !std::isfinite(e.t_cross))
        fail("platoon entries need a finite t_cross and speed in [0, 10]");
  if (!(platoon_jitter >= 0.0 && platoon_headway >= 0.0 && platoon_boost >= 0.0))
    fail("platoon jitter, headway and boost must be >= 0");
  if (!(idm.a_max > 0.0 && idm.b > 0.0 && idm.s0 >= 0.0 && idm.T_h >= 0.0 && idm.accel_limit > 0.0))
    fail("bad IDM parameters");
  for (const auto& r : roster) {
    if (r.lane != 1 && r.lane != 2) fail("roster lanes must be 1 or 2");
    if (!(r.v >= 0.0 && r.v <= 10.0 && r.v_desired > 0.0 && r.v_desired <= 10.0))
      fail("roster speeds must lie in [0, 10]");
    if (!(r.spawn_time >= 0.0)) fail("roster spawn_time must be >= 0");
  }
}

const Lane& WorldMap::lane(int id) const {
  if (ev_lane.id == id) return ev_lane;
  for (const auto& l : cross_lanes)
    if (l.id == id) return l;
  throw std::out_of_range("unknown lane id");
}

WorldMap build_map(const ScenarioConfig& cfg) {
  WorldMap m;
  const double span = cfg.lane_half_span, hw = 0.5 * cfg.lane_width;
  m.ev_lane = {0, Vec2(-span, cfg.ev_y0), Vec2::UnitX(), 2.0 * span, cfg.lane_width};
  m.cross_lanes.push_back({1, Vec2(cfg.cross_lane_x0, span), -Vec2::UnitY(), 2.0 * span, cfg.lane_width});
  m.cross_lanes.push_back({2, Vec2(cfg.cross_lane_x1, -span), Vec2::UnitY(), 2.0 * span, cfg.lane_width});

  const double west = cfg.cross_lane_x0 - hw - cfg.building_setback;
  const double east = cfg.cross_lane_x1 + hw + cfg.building_setback;
  const double south = std::min(cfg.ev_y0, cfg.opposite_lane_y) - hw - cfg.building_setback;
  const double north = std::max(cfg.ev_y0, cfg.opposite_lane_y) + hw + cfg.building_setback;
  const double far = 60.0;
  m.buildings = {make_box(west - far, south - far, west, south), make_box(west - far, north, west, north + far),
                 make_box(east, south - far, east + far, south), make_box(east, north, east + far, north + far)};

  std::vector<Lane> all{m.ev_lane};
  all.insert(all.end(), m.cross_lanes.begin(), m.cross_lanes.end());
  m.conflicts = ConflictMap(all, cfg.conflict_margin);
  m.bounds = Eigen::AlignedBox2d(Vec2(-span, -span), Vec2(span, span));
  return m;
}

namespace {

// Arc-length range of a cross lane covering the world stretch [lo, hi] in y.
std::pair<double, double> stretch(const Lane& lane, double lo, double hi) {
  const double a = lane.project(Vec2(lane.start.x(), lo));
  const double b = lane.project(Vec2(lane.start.x(), hi));
  return {std::min(a, b), std::max(a, b)};
}

}  // namespace

std::vector<VehicleSpawn> generate_roster(const ScenarioConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const WorldMap map = build_map(cfg);
  std::vector<VehicleSpawn> out;
  if (cfg.roster_style == RosterStyle::Platoon) {
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    for (int l = 0; l < 2; ++l) {
      const Lane& lane = map.cross_lanes[l];
      const auto [lo, hi] = stretch(lane, cfg.traffic_lo, cfg.traffic_hi);
      const double ring = hi - lo;
      const double s_cross = lane.project(Vec2(lane.start.x(), cfg.ev_y0));
      const auto& entries = l == 0 ? cfg.platoon_lane1 : cfg.platoon_lane2;
      const double base = l == 0 ? cfg.platoon_speed1 : cfg.platoon_speed2;
      double prev_t = -std::numeric_limits<double>::infinity();
      for (const auto& e : entries) {
        const double v = std::clamp((e.speed > 0.0 ? e.speed : base) + cfg.platoon_jitter * unit(rng), 0.0, 10.0);
        const double tc = e.t_cross + cfg.platoon_jitter * unit(rng);
        VehicleSpawn sp;
        sp.lane = lane.id;
        const double s = s_cross - v * tc;
        sp.s = lo + std::fmod(std::fmod(s - lo, ring) + ring, ring);
        sp.v = v;
        sp.v_desired = e.t_cross - prev_t < cfg.platoon_headway ? std::min(cfg.sv_v_max, v + cfg.platoon_boost) : v;
        if (!(sp.v_desired > 0.0)) sp.v_desired = cfg.sv_v_min;
        prev_t = e.t_cross;
        out.push_back(sp);
      }
    }
    return out;
  }
  std::uniform_real_distribution<double> jitter(-cfg.sv_position_jitter, cfg.sv_position_jitter);
  std::uniform_real_distribution<double> speed(cfg.sv_v_min, cfg.sv_v_max);
  for (int l = 0; l < 2; ++l) {
    const int count = cfg.num_vehicles / 2 + (l == 0 ? cfg.num_vehicles % 2 : 0);
    if (count == 0) continue;
    const auto [lo, hi] = stretch(map.cross_lanes[l], cfg.traffic_lo, cfg.traffic_hi);
    const double spacing = (hi - lo) / count;
    for (int i = 0; i < count; ++i) {
      VehicleSpawn v;
      v.lane = map.cross_lanes[l].id;
      v.s = lo + (i + 0.5) * spacing + jitter(rng);
      v.v_desired = speed(rng);
      v.v = v.v_desired;
      out.push_back(v);
    }
  }
  return out;
}

Vec2 position(const SurroundingVehicle& sv, const WorldMap& map) {
  return map.lane(sv.lane).point(sv.s);
}

Polygon footprint(const SurroundingVehicle& sv, const WorldMap& map) {
  const Lane& lane = map.lane(sv.lane);
  return make_rect(lane.point(sv.s), lane.heading(), sv.half_length, sv.half_width);
}

SenseResult sense(const WorldMap& map, const std::vector<SurroundingVehicle>& vehicles,
                  const EVState& ev, double range) {
  OcclusionScene scene;
  scene.lanes = map.cross_lanes;
  scene.occluders = map.buildings;
  for (const auto& sv : vehicles) scene.vehicles.push_back(footprint(sv, map));
  scene.bounds = map.bounds;

  const Vec2 eye(ev.px, ev.py);
  SenseResult out;
  for (std::size_t i = 0; i < vehicles.size(); ++i) {
    const Vec2 p = position(vehicles[i], map);
    if ((p - eye).norm() > range) continue;
    if (line_of_sight(scene, eye, p, static_cast<int>(i))) out.visible.push_back(static_cast<int>(i));
  }
  out.pvs = extract_pvs(scene, eye, range);
  return out;
}

RiskAssessment assess_risk(const WorldMap& map, const SenseResult& sensed,
                           const std::vector<SurroundingVehicle>& vehicles, const EVState& ev,
                           const ScenarioConfig& cfg) {
  RiskAssessment out;
  const Lane& lane = map.ev_lane;
  const ArcInterval ev_set = ev_frs(lane.id, lane.project(Vec2(ev.px, ev.py)), ev.v,
                                    cfg.solver.ax_max, cfg.solver.v_max, cfg.risk.horizon);
  const double T = cfg.risk.horizon;
  // Windows the EV can no longer stop short of are committed to: slowing
  // down there only prolongs the exposure.
  const double stop_at = ev_set.lo + ev.v * ev.v / (2.0 * std::abs(cfg.solver.ax_min));
  double total = 0.0;
  for (PhantomVehicleSet p : sensed.pvs) {
    const auto w = map.conflicts.find(lane.id, p.lane);
    if (!w || !ev_set.overlaps(w->on_a) || w->on_a.lo < stop_at) continue;
    // No overtaking: when a visible vehicle closes the set (no room for a
    // phantom ahead of it), phantoms sit behind it and stay behind it, with the
    // leader at most keeping its current speed.
    const SurroundingVehicle* leader = nullptr;
    for (int i : sensed.visible) {
      const auto& sv = vehicles[static_cast<std::size_t>(i)];
      if (sv.lane != p.lane || sv.s < p.s_s || sv.s + 3.0 * sv.half_length < p.s_e) continue;
      if (!leader || sv.s < leader->s) leader = &sv;
    }
    double reach_cap = std::numeric_limits<double>::infinity();
    if (leader) {
      p.s_e = std::min(p.s_e, leader->s - 2.0 * leader->half_length);
      if (p.s_e < p.s_s) continue;
      reach_cap = leader->s + leader->v * T - 2.0 * leader->half_length;
    }
    ArcInterval reach = pv_frs(p, cfg.risk);
    reach.hi = std::min(reach.hi, reach_cap);
    if (reach.empty()) continue;
    RiskField f = sample_risk_field(p, cfg.risk, w->on_b.lo, w->on_b.hi);
    total += aggregate_risk(f, w->on_b, reach);
    out.fields.push_back(std::move(f));
  }
  out.r_total = cfg.risk.aggregate_scale * total;
  out.bounds = velocity_bounds(out.r_total, cfg.risk);
  return out;
}

namespace {

Eigen::VectorXd velocity_caps(const ProblemData& d, int j) {
  const int N = d.steps();
  return d.Fx.col(j).segment(2 * N, N).array() / d.gx_scale.segment(2 * N, N).array();
}

double mean_sq(const Eigen::VectorXd& v) { return v.size() ? v.squaredNorm() / v.size() : 0.0; }

}  // namespace

std::array<double, 2> selection_costs(const TrajectoryPair& pair, const SelectionContext& ctx,
                                      const SelectionWeights& w) {
  std::array<double, 2> cost{0.0, 0.0};
  const ProblemData* d = ctx.data;
  for (int j = 0; j < 2; ++j) {
    const DiscreteTrajectory& traj = j == 0 ? pair.first : pair.second;
    const Eigen::Index N = traj.size();
    double c = 0.0;
    if (d) {
      c += w.goal * mean_sq(traj.vx - d->vxd);
      c += w.lateral * mean_sq((traj.y.array() - d->E_yf).matrix());
      c += w.bound * (traj.speed() - velocity_caps(*d, j)).cwiseMax(0.0).sum();

      double margin = std::numeric_limits<double>::infinity();
      const int M = d->slots();
      for (Eigen::Index k = 0; k < N; ++k)
        for (int i = 0; i < M; ++i) {
          const Eigen::Index r = k * M + i;
          if (d->active(r) == 0.0) continue;
          const double ex = (traj.x(k) - d->Ox(r, j)) / d->Lx(r, j);
          const double ey = (traj.y(k) - d->Oy(r, j)) / d->Ly(r, j);
          margin = std::min(margin, std::hypot(ex, ey) - 1.0);
        }
      if (std::isfinite(margin)) c += w.safety / std::max(margin, 1e-3);
    }
    c += w.comfort * (mean_sq(traj.jx) + mean_sq(traj.jy));
    if (ctx.previous && ctx.previous->size() == N) {
      double dist = 0.0;
      for (Eigen::Index k = 0; k + 1 < N; ++k)
        dist += std::hypot(traj.x(k) + ctx.origin.x() - ctx.previous->x(k + 1),
                           traj.y(k) + ctx.origin.y() - ctx.previous->y(k + 1));
      c += w.consistency * dist / static_cast<double>(N - 1);
    }
    cost[j] = c;
  }
  return cost;
}

int select_trajectory(const TrajectoryPair& pair, const SelectionContext& ctx,
                      const SelectionWeights& w) {
  const auto c = selection_costs(pair, ctx, w);
  return c[0] < c[1] ? 0 : 1;
}

World::World(const ScenarioConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  map_ = build_map(cfg_);
  basis_ = std::make_shared<const BasisSet>(cfg_.solver.order, cfg_.solver.steps, cfg_.solver.horizon);
  ev_ = {cfg_.ev_x0, cfg_.ev_y0, 0.0, cfg_.ev_v0};
  pending_ = cfg_.roster.empty() ? generate_roster(cfg_, cfg_.seed) : cfg_.roster;
  std::stable_sort(pending_.begin(), pending_.end(),
                   [](const VehicleSpawn& a, const VehicleSpawn& b) { return a.spawn_time < b.spawn_time; });
  step_traffic();
}

void World::step_traffic() {
  // Roster entries due now enter before the vehicles move.
  auto spawn_due = [&] {
    while (!pending_.empty() && pending_.front().spawn_time <= t_ + 1e-9) {
      const auto& p = pending_.front();
      SurroundingVehicle sv;
      sv.id = next_id_++;
      sv.lane = p.lane;
      sv.s = p.s;
      sv.v = p.v;
      sv.v_desired = p.v_desired;
      vehicles_.push_back(sv);
      pending_.erase(pending_.begin());
    }
  };
  if (cycle_ == 0 && vehicles_.empty()) {
    spawn_due();
    return;
  }

  const double dt = cfg_.dt;
  std::vector<double> acc(vehicles_.size(), 0.0);
  for (std::size_t i = 0; i < vehicles_.size(); ++i) {
    const auto& me = vehicles_[i];
    const auto [lo, hi] = stretch(map_.lane(me.lane), cfg_.traffic_lo, cfg_.traffic_hi);
    const double ring = hi - lo;
    double gap = std::numeric_limits<double>::infinity(), v_lead = me.v;
    for (std::size_t k = 0; k < vehicles_.size(); ++k) {
      const auto& o = vehicles_[k];
      if (k == i || o.lane != me.lane) continue;
      double ds = o.s - me.s;
      if (ds <= 0.0) ds += ring;
      const double g = ds - o.half_length - me.half_length;
      if (g < gap) {
        gap = g;
        v_lead = o.v;
      }
    }
    acc[i] = idm_accel(gap, me.v, v_lead, me.v_desired, cfg_.idm);
  }
  for (std::size_t i = 0; i < vehicles_.size(); ++i) {
    auto& sv = vehicles_[i];
    const double v = std::clamp(sv.v + acc[i] * dt, 0.0, 10.0);
    sv.s += 0.5 * (sv.v + v) * dt;
    sv.v = v;
    const auto [lo, hi] = stretch(map_.lane(sv.lane), cfg_.traffic_lo, cfg_.traffic_hi);
    if (sv.s > hi) sv.s -= hi - lo;
  }
  spawn_due();
}

bool World::collision_now() const {
  const Vec2 scale(cfg_.solver.l_x, cfg_.solver.l_y);
  const Vec2 ev1(ev_.px, ev_.py);
  for (const auto& sv : vehicles_) {
    const Vec2 d1 = (position(sv, map_) - ev1).cwiseQuotient(scale);
    Vec2 d0 = d1;
    for (const auto& [id, p] : prev_sv_)
      if (id == sv.id) d0 = (p - prev_ev_).cwiseQuotient(scale);
    // Closest approach of the linearly interpolated offset over the last step;
    // a wrapped vehicle jumps and is tested at its new position only.
    const Vec2 step = d1 - d0;
    double tau = 1.0;
    if (step.squaredNorm() > 0.0 && step.norm() < 10.0 / std::min(scale.x(), scale.y()))
      tau = std::clamp(-d0.dot(step) / step.squaredNorm(), 0.0, 1.0);
    if ((d0 + tau * step).squaredNorm() < 1.0) return true;
  }
  return false;
}

bool World::finished() const {
  return ev_.px >= cfg_.exit_x() || t_ >= cfg_.t_max - 1e-9;
}

std::vector<int> World::relevant(const SenseResult& sensed) const {
  const double T = cfg_.solver.horizon;
  const Lane& lane = map_.ev_lane;
  ArcInterval ev_set = ev_frs(lane.id, lane.project(Vec2(ev_.px, ev_.py)), ev_.v, cfg_.solver.ax_max,
                              cfg_.solver.v_max, T);
  std::vector<std::pair<double, int>> cand;
  for (int i : sensed.visible) {
    const auto& sv = vehicles_[i];
    const double reach = std::min(sv.v * T + 0.5 * cfg_.idm.accel_limit * T * T, 10.0 * T);
    const ArcInterval ob{sv.lane, sv.s - sv.half_length, sv.s + reach + sv.half_length};
    if (!relevance_filter(ev_set, ob, map_.conflicts)) continue;
    cand.push_back({(position(sv, map_) - Vec2(ev_.px, ev_.py)).norm(), i});
  }
  std::sort(cand.begin(), cand.end());
  std::vector<int> out;
  for (const auto& c : cand)
    if (static_cast<int>(out.size()) < cfg_.solver.slots) out.push_back(c.second);
  return out;
}

std::vector<ObstacleTrack> World::predict(const std::vector<int>& ids) const {
  const int N = cfg_.solver.steps;
  const double dt = basis_->dt();
  std::vector<ObstacleTrack> out;
  for (int i : ids) {
    const auto& sv = vehicles_[i];
    const Lane& lane = map_.lane(sv.lane);
    ObstacleTrack tr{Eigen::VectorXd(N), Eigen::VectorXd(N), sv.id};
    for (int k = 0; k < N; ++k) {
      const Vec2 p = lane.point(sv.s + sv.v * k * dt);
      tr.x(k) = p.x();
      tr.y(k) = p.y();
    }
    out.push_back(std::move(tr));
  }
  return out;
}

EVControl World::control_from(const DiscreteTrajectory& traj, int step) const {
  const double dt = cfg_.dt;
  EVControl u;
  const Eigen::VectorXd speed = traj.speed();
  const double target = speed(std::min<Eigen::Index>(step + 1, speed.size() - 1));
  double a = (target - ev_.v) / dt;
  const double dj = cfg_.solver.jx_max * dt;
  a = std::clamp(a, a_prev_ - dj, a_prev_ + dj);
  u.a = std::clamp(a, cfg_.solver.ax_min, cfg_.solver.ax_max);
  const double th = traj.theta(std::min<Eigen::Index>(step + 1, traj.size() - 1));
  u.u_theta = (th - ev_.theta) / dt;
  return u;
}

void World::advance(const EVControl& u) {
  prev_ev_ = Vec2(ev_.px, ev_.py);
  prev_sv_.clear();
  for (const auto& sv : vehicles_) prev_sv_.emplace_back(sv.id, position(sv, map_));
  ev_ = step_ev(ev_, u, cfg_.dt, cfg_.solver.v_max);
  a_prev_ = u.a;
  step_traffic();
  t_ = ++cycle_ * cfg_.dt;
}

namespace {

DiscreteTrajectory shifted(DiscreteTrajectory t, const Vec2& origin) {
  t.x.array() += origin.x();
  t.y.array() += origin.y();
  return t;
}

}  // namespace

CycleTrace World::plan_cycle(const RunOptions& opts, std::vector<AdmmTraceRow>* admm,
                             RiskAssessment* risk_out) {
  CycleTrace tr;
  tr.t = t_;
  tr.ev = ev_;
  tr.collision = collision_now();

  if (cfg_.mode == RunMode::Replay && replay_left_ > 0) {
    tr.planned = false;
    tr.selected = replay_id_;
    tr.control = control_from(replay_traj_, replay_index_);
    ++replay_index_;
    --replay_left_;
    advance(tr.control);
    return tr;
  }

  const SenseResult sensed = sense(map_, vehicles_, ev_, cfg_.sensor_range);
  RiskAssessment risk = assess_risk(map_, sensed, vehicles_, ev_, cfg_);
  tr.r_total = risk.r_total;
  tr.bounds = risk.bounds;

  PlanningInput in;
  in.px = ev_.px;
  in.py = ev_.py;
  in.theta = ev_.theta;
  in.v = ev_.v;
  in.vx_desired = cfg_.vx_desired;
  in.py_desired = cfg_.py_desired;
  if (cfg_.mode != RunMode::Ignorant) {
    in.bounds = risk.bounds;
    in.v_occ_min = 0.0;
  }
  const auto ids = relevant(sensed);
  in.obstacles = predict(ids);
  tr.obstacles = static_cast<int>(ids.size());
  const ProblemData data = assemble(in, basis_, cfg_.solver);

  const Vec2 origin(ev_.px, ev_.py);
  std::optional<ControlPoints> warm;
  const double elapsed = last_solution_ ? t_ - last_plan_time_ : 0.0;
  if (last_solution_ && elapsed < cfg_.solver.horizon)
    warm = shift_solution(*last_solution_, *basis_, elapsed, origin - last_origin_);

  std::vector<int> slot_ids;
  for (const auto& o : in.obstacles) slot_ids.push_back(o.id);
  std::optional<DualWarmStart> duals;
  if (warm && last_state_)
    duals = shift_duals(*last_state_, static_cast<int>(std::lround(elapsed / cfg_.dt)), last_ids_,
                        slot_ids, cfg_.solver.slots);

  SolveOptions so;
  so.record_trace = opts.record_admm;
  SolveResult res = solve(data, warm, so, duals ? &*duals : nullptr);
  tr.solve_ms = res.report.wall_ms;
  tr.solve_cpu_ms = res.report.cpu_ms;
  tr.iterations = res.report.iterations;
  tr.residual = res.report.residual;
  tr.breakdown = res.report.breakdown;
  tr.converged = res.report.converged;
  tr.min_xi = res.report.min_xi;
  if (admm)
    for (const auto& r : res.report.trace) admm->push_back({cycle_, r});

  ControlPoints plan = res.c;
  if (!res.report.converged && warm) {
    plan = *warm;
    tr.reused = true;
  }
  const TrajectoryPair pair = evaluate(plan, *basis_);
  tr.speed_explore = pair.first.speed();
  tr.speed_fallback = pair.second.speed();
  double gap = 0.0;
  for (int k = 0; k < cfg_.solver.n_s; ++k)
    gap = std::max({gap, std::abs(pair.first.x(k) - pair.second.x(k)),
                    std::abs(pair.first.y(k) - pair.second.y(k))});
  tr.consensus_gap = gap;

  SelectionContext ctx;
  ctx.data = &data;
  ctx.origin = origin;
  ctx.previous = last_selected_;
  tr.selected = select_trajectory(pair, ctx, cfg_.selection);

  last_solution_ = plan;
  last_state_ = std::move(res.state);
  last_ids_ = std::move(slot_ids);
  last_origin_ = origin;
  last_plan_time_ = t_;
  const DiscreteTrajectory& chosen = tr.selected == 0 ? pair.first : pair.second;
  last_selected_ = shifted(chosen, origin);

  tr.control = control_from(chosen, 0);
  if (cfg_.mode == RunMode::Replay) {
    replay_traj_ = chosen;
    replay_id_ = tr.selected;
    replay_index_ = 1;
    replay_left_ = cfg_.solver.n_s - 1;
  }
  if (risk_out) *risk_out = std::move(risk);
  advance(tr.control);
  return tr;
}

namespace {

SolveStats stats_of(const std::vector<double>& v) {
  SolveStats st;
  if (v.empty()) return st;
  const double n = static_cast<double>(v.size());
  st.mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  st.max = *std::max_element(v.begin(), v.end());
  st.min = *std::min_element(v.begin(), v.end());
  double var = 0.0;
  for (double s : v) var += (s - st.mean) * (s - st.mean);
  st.stddev = std::sqrt(var / n);
  return st;
}

}  // namespace

RunMetrics compute_metrics(const std::vector<CycleTrace>& trace, const ScenarioConfig& cfg) {
  RunMetrics m;
  m.cycles = 0;
  std::vector<double> vlon, solve, solve_cpu;
  for (const auto& c : trace) {
    vlon.push_back(c.ev.v * std::cos(c.ev.theta));
    m.collision = m.collision || c.collision;
    if (c.planned) {
      ++m.cycles;
      solve.push_back(c.solve_ms);
      solve_cpu.push_back(c.solve_cpu_ms);
      if (!c.converged) ++m.nonconverged;
      m.max_iterations = std::max(m.max_iterations, c.iterations);
    }
    if (!m.completed && c.ev.px >= cfg.exit_x()) {
      m.completed = true;
      m.task_duration = c.t;
      m.v_terminal = vlon.back();
    }
  }
  if (!vlon.empty()) {
    // Velocity statistics cover the task itself when it completes.
    std::size_t end = vlon.size();
    if (m.completed)
      for (std::size_t i = 0; i < trace.size(); ++i)
        if (trace[i].ev.px >= cfg.exit_x()) {
          end = i + 1;
          break;
        }
    const auto first = vlon.begin(), last = vlon.begin() + static_cast<std::ptrdiff_t>(end);
    m.v_min = *std::min_element(first, last);
    m.v_max = *std::max_element(first, last);
    m.v_mean = std::accumulate(first, last, 0.0) / static_cast<double>(end);
    if (!m.completed) m.v_terminal = vlon.back();
  }
  m.solve_ms = stats_of(solve);
  m.solve_cpu_ms = stats_of(solve_cpu);
  return m;
}

RunResult run_scenario(const ScenarioConfig& cfg, const RunOptions& opts) {
  World world(cfg);
  RunResult out;
  while (!world.finished()) {
    RiskAssessment risk;
    CycleTrace tr = world.plan_cycle(opts, opts.record_admm ? &out.admm : nullptr,
                                     opts.on_risk ? &risk : nullptr);
    if (opts.on_risk && tr.planned) opts.on_risk(static_cast<int>(out.trace.size()), tr, risk);
    out.trace.push_back(std::move(tr));
  }
  CycleTrace last;
  last.t = world.time();
  last.ev = world.ev();
  last.planned = false;
  last.collision = world.collision_now();
  out.trace.push_back(last);
  out.metrics = compute_metrics(out.trace, cfg);
  return out;
}

}  // namespace occp
