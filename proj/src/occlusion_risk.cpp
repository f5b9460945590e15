#include "occp/occlusion_risk.hpp"

#include "occp/reachability.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace occp {

std::vector<double> RiskParams::default_lateral_grid() {
  std::vector<double> g;
  for (int i = -9; i <= 9; ++i) g.push_back(0.1 * i);
  return g;
}

void RiskParams::validate() const {
  if (!(v_pv_max > 0.0)) throw std::invalid_argument("risk: v_pv_max must be > 0");
  if (!(horizon >= 0.0)) throw std::invalid_argument("risk: horizon must be >= 0");
  if (!(Z > 0.0)) throw std::invalid_argument("risk: Z must be > 0");
  if (!(c_th_max_explore > c_th_min) || !(c_th_max_fallback > c_th_min))
    throw std::invalid_argument("risk: c_th_max must exceed c_th_min");
  if (!(v_occ_min >= 0.0 && v_occ_min < v_occ_max))
    throw std::invalid_argument("risk: need 0 <= v_occ_min < v_occ_max");
  if (!(ds > 0.0)) throw std::invalid_argument("risk: ds must be > 0");
  if (lateral_grid.empty()) throw std::invalid_argument("risk: lateral grid is empty");
  for (double d : lateral_grid)
    if (!(std::abs(d) < 1.0)) throw std::invalid_argument("risk: lateral grid values need |d| < 1");
}

Eigen::VectorXd RiskField::lateral_max() const {
  if (r.cols() == 0) return Eigen::VectorXd::Zero(r.rows());
  return r.rowwise().maxCoeff();
}

bool line_of_sight(const OcclusionScene& scene, const Vec2& from, const Vec2& to,
                   int skip_vehicle) {
  for (const auto& poly : scene.occluders)
    if (segment_hits_polygon(from, to, poly)) return false;
  for (std::size_t i = 0; i < scene.vehicles.size(); ++i) {
    if (static_cast<int>(i) == skip_vehicle) continue;
    if (segment_hits_polygon(from, to, scene.vehicles[i])) return false;
  }
  return true;
}

std::vector<PhantomVehicleSet> extract_pvs(const OcclusionScene& scene, const Vec2& sensor,
                                           double range, double step) {
  if (!scene.bounds.contains(sensor)) throw std::domain_error("extract_pvs: EV outside map");
  if (!(step > 0.0)) throw std::invalid_argument("extract_pvs: step must be > 0");

  std::vector<PhantomVehicleSet> out;
  for (const auto& lane : scene.lanes) {
    const auto span = lane_in_range(lane, sensor, range);
    if (!span) continue;
    const double lo = span->first, hi = span->second;
    auto hidden = [&](double s) { return !line_of_sight(scene, sensor, lane.point(s)); };
    // Boundary between a visible sample a and a hidden sample b.
    auto refine = [&](double a, double b) {
      while (std::abs(b - a) > 1e-3) {
        const double m = 0.5 * (a + b);
        (hidden(m) ? b : a) = m;
      }
      return b;
    };

    const int n = static_cast<int>(std::floor((hi - lo) / step)) + 1;
    std::vector<double> s(n + 1);
    for (int k = 0; k < n; ++k) s[k] = lo + k * step;
    s[n] = hi;
    std::vector<char> h(s.size());
    for (std::size_t k = 0; k < s.size(); ++k) h[k] = hidden(s[k]);

    std::size_t k = 0;
    while (k < s.size()) {
      if (!h[k]) {
        ++k;
        continue;
      }
      std::size_t e = k;
      while (e + 1 < s.size() && h[e + 1]) ++e;
      const double ss = k == 0 ? s[0] : refine(s[k - 1], s[k]);
      const double se = e + 1 == s.size() ? s.back() : refine(s[e + 1], s[e]);
      if (se - ss > 1e-6) out.push_back({lane.id, ss, se, lane.width});
      k = e + 1;
    }
  }
  return out;
}

namespace {

// Exact value of the integral over s0 in [max(s_s, s - vT), min(s_e, s)] of
// (v - (s - s0)/T); valid for any interval ordering.
double phantom_area(double s, double ss, double se, double v, double T) {
  const double lo = std::max(ss, s - v * T);
  const double hi = std::min(se, s);
  if (!(hi > lo)) return 0.0;
  auto F = [&](double s0) { return v * s0 - (s * s0 - 0.5 * s0 * s0) / T; };
  return F(hi) - F(lo);
}

}  // namespace

double phantom_count(double s, const PhantomVehicleSet& pvs, const RiskParams& params) {
  const double ss = pvs.s_s, se = pvs.s_e;
  const double v = params.v_pv_max, T = params.horizon;
  if (se - ss < 1e-12 || !(T > 0.0)) return 0.0;
  const double vT = v * T;
  if (s <= ss || s >= se + vT) return 0.0;
  if (se >= ss + vT) return phantom_area(s, ss, se, v, T);

  if (s <= se) return 0.5 * (2.0 * v - (s - ss) / T) * (s - ss);
  if (s <= ss + vT) return 0.5 * (2.0 * v - (s - ss) / T - (s - se) / T) * (se - ss);
  return 0.5 * (v - (s - se) / T) * (se - (s - vT));
}

double longitudinal_risk(double s, const PhantomVehicleSet& pvs, const RiskParams& params) {
  return pvs.length() * phantom_count(s, pvs, params);
}

double lateral_sigma(double d, double lane_width, double Z) {
  if (!(lane_width > 0.0) || !(Z > 0.0))
    throw std::domain_error("lateral_risk: lane width and Z must be positive");
  // The printed sigma is used on the -|d| branch, where it widens away from
  // the lane centre; see the decisions notes for the sign discussion.
  const double denom = 2.0 * Z * (1.0 - 0.5 * (1.0 + std::abs(d)));
  if (!(denom > 0.0)) throw std::domain_error("lateral_risk: sigma undefined for |d| >= 1");
  return lane_width / denom;
}

double lateral_risk(double d, double lane_width, double Z) {
  const double sigma = lateral_sigma(d, lane_width, Z);
  const double x = d * lane_width / 2.0;
  return std::exp(-0.5 * (x / sigma) * (x / sigma)) / (sigma * std::sqrt(2.0 * M_PI));
}

double total_risk(double s, double d, const PhantomVehicleSet& pvs, const RiskParams& params) {
  return longitudinal_risk(s, pvs, params) * lateral_risk(d, pvs.lane_width, params.Z);
}

RiskField sample_risk_field(const PhantomVehicleSet& pvs, const RiskParams& params, double lo,
                            double hi) {
  RiskField f;
  f.lane = pvs.lane;
  f.ds = params.ds;
  f.d = params.lateral_grid;
  if (hi < lo) return f;
  const int n = static_cast<int>(std::floor((hi - lo) / params.ds + 1e-9));
  for (int k = 0; k < n; ++k) f.s.push_back(lo + (k + 0.5) * params.ds);
  std::vector<double> lat(f.d.size());
  for (std::size_t j = 0; j < f.d.size(); ++j) lat[j] = lateral_risk(f.d[j], pvs.lane_width, params.Z);
  f.r.resize(f.s.size(), f.d.size());
  for (std::size_t i = 0; i < f.s.size(); ++i) {
    const double rl = longitudinal_risk(f.s[i], pvs, params);
    for (std::size_t j = 0; j < f.d.size(); ++j) f.r(i, j) = rl * lat[j];
  }
  return f;
}

double aggregate_risk(const RiskField& field, const ArcInterval& ev_frs,
                      const ArcInterval& pv_frs) {
  const ArcInterval both = ev_frs.intersect(pv_frs);
  if (both.empty() || field.s.empty()) return 0.0;
  const Eigen::VectorXd m = field.lateral_max();
  double total = 0.0;
  for (std::size_t i = 0; i < field.s.size(); ++i)
    if (both.contains(field.s[i])) total += m(i) * field.ds;
  return total;
}

double occlusion_speed(double r_total, double c_th_max, const RiskParams& params) {
  if (!(c_th_max > params.c_th_min))
    throw std::invalid_argument("velocity_bounds: c_th_max must exceed c_th_min");
  if (r_total >= c_th_max) return params.v_occ_min;
  if (r_total <= params.c_th_min) return params.v_occ_max;
  const double dv = (params.v_occ_min - params.v_occ_max) / (c_th_max - params.c_th_min);
  const double v = dv * (r_total - params.c_th_min) + params.v_occ_max;
  return std::clamp(v, params.v_occ_min, params.v_occ_max);
}

VelocityBounds velocity_bounds(double r_total, const RiskParams& params) {
  return {occlusion_speed(r_total, params.c_th_max_explore, params),
          occlusion_speed(r_total, params.c_th_max_fallback, params)};
}

}  // namespace occp
