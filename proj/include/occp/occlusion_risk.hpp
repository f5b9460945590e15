#pragma once

#include "occp/geometry.hpp"

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <vector>

namespace occp {

/// Occluded interval [s_s, s_e] on one lane centerline.
struct PhantomVehicleSet {
  int lane = 0;
  double s_s = 0.0;
  double s_e = 0.0;
  double lane_width = 3.75;

  double length() const { return s_e - s_s; }
};

struct RiskParams {
  double v_pv_max = 10.0;
  double horizon = 4.0;
  double Z = 1.645;
  double c_th_min = 0.0;
  double c_th_max_explore = 40.0;
  double c_th_max_fallback = 60.0;
  double v_occ_min = 1.5;
  double v_occ_max = 10.0;
  double ds = 0.1;
  std::vector<double> lateral_grid = default_lateral_grid();
  /// Multiplies the Riemann sum in the aggregated risk. The default 1/v_pv_max
  /// turns the phantom count into a velocity-normalised density.
  double aggregate_scale = 0.1;

  static std::vector<double> default_lateral_grid();
  /// Throws std::invalid_argument on inconsistent values.
  void validate() const;
};

/// r(s, d) sampled over the footprint of one PVS.
struct RiskField {
  int lane = 0;
  double ds = 0.1;
  std::vector<double> s;
  std::vector<double> d;
  Eigen::MatrixXd r;  // rows follow s, columns follow d

  /// max_d r(s, d) per s sample.
  Eigen::VectorXd lateral_max() const;
};

struct VelocityBounds {
  double v0_occ = 10.0;  // exploration
  double v1_occ = 10.0;  // fallback
};

/// Static and dynamic obstacles for visibility tests.
struct OcclusionScene {
  std::vector<Lane> lanes;
  std::vector<Polygon> occluders;
  std::vector<Polygon> vehicles;
  Eigen::AlignedBox2d bounds{Vec2(-1e4, -1e4), Vec2(1e4, 1e4)};
};

/// Line of sight from `from` to `to`; `skip_vehicle` excludes one footprint
/// (the target vehicle itself) from the blocking set.
bool line_of_sight(const OcclusionScene& scene, const Vec2& from, const Vec2& to,
                   int skip_vehicle = -1);

/// Maximal lane intervals inside the sensor range that are hidden from
/// `sensor`. Centerlines are sampled every `step` metres and interval ends
/// refined by bisection to 1e-3 m. Throws std::domain_error when the sensor is
/// outside the scene bounds.
std::vector<PhantomVehicleSet> extract_pvs(const OcclusionScene& scene, const Vec2& sensor,
                                           double range, double step = 0.05);

/// Number of phantom vehicles able to reach s within the horizon, g(s).
double phantom_count(double s, const PhantomVehicleSet& pvs, const RiskParams& params);
double longitudinal_risk(double s, const PhantomVehicleSet& pvs, const RiskParams& params);
/// Lateral density for a deviation d given as a fraction of the half lane.
/// Throws std::domain_error for |d| >= 1 or non-positive l_w, Z.
double lateral_risk(double d, double lane_width, double Z);
double lateral_sigma(double d, double lane_width, double Z);
double total_risk(double s, double d, const PhantomVehicleSet& pvs, const RiskParams& params);

/// Samples r(s, d) for s in [lo, hi] at params.ds and d on params.lateral_grid.
RiskField sample_risk_field(const PhantomVehicleSet& pvs, const RiskParams& params, double lo,
                            double hi);

struct ArcInterval;
/// Riemann sum of max_d r over samples lying in both intervals; zero when they
/// are disjoint. Not scaled by params.aggregate_scale.
double aggregate_risk(const RiskField& field, const ArcInterval& ev_frs,
                      const ArcInterval& pv_frs);

/// Speed cap for one risk threshold.
double occlusion_speed(double r_total, double c_th_max, const RiskParams& params);
VelocityBounds velocity_bounds(double r_total, const RiskParams& params);

}  // namespace occp
