#pragma once

#include "occp/geometry.hpp"
#include "occp/occlusion_risk.hpp"

#include <optional>
#include <vector>

namespace occp {

/// Closed interval along one lane; lo > hi means empty.
struct ArcInterval {
  int lane = 0;
  double lo = 0.0;
  double hi = -1.0;

  bool empty() const { return lo > hi; }
  double length() const { return empty() ? 0.0 : hi - lo; }
  bool contains(double s) const { return s >= lo && s <= hi; }
  ArcInterval intersect(const ArcInterval& o) const;
  bool overlaps(const ArcInterval& o) const { return !intersect(o).empty(); }
};

ArcInterval pv_frs(const PhantomVehicleSet& pvs, const RiskParams& params);
ArcInterval pv_brs(double s, const PhantomVehicleSet& pvs, const RiskParams& params);

/// Kinematic envelope [p, p + min(vT + a_max T^2 / 2, v_cap T)].
ArcInterval ev_frs(int lane, double s, double v, double a_max, double v_cap, double T);

/// Crossing of two lanes: the arc window each lane spends inside the other.
struct ConflictWindow {
  ArcInterval on_a;
  ArcInterval on_b;
};

class ConflictMap {
 public:
  ConflictMap() = default;
  /// Windows span the crossing point by half the other lane's width plus
  /// `margin` on each side.
  ConflictMap(const std::vector<Lane>& lanes, double margin);

  void add(int lane_a, int lane_b, const ConflictWindow& w);
  /// Window oriented so that on_a belongs to lane_a.
  std::optional<ConflictWindow> find(int lane_a, int lane_b) const;

 private:
  struct Entry {
    int a, b;
    ConflictWindow w;
  };
  std::vector<Entry> entries_;
};

/// True iff both reachable sets reach their shared conflict window.
bool relevance_filter(const ArcInterval& ev, const ArcInterval& obstacle, const ConflictMap& map);

}  // namespace occp
