#include "occp/reachability.hpp"

#include <algorithm>

namespace occp {

ArcInterval ArcInterval::intersect(const ArcInterval& o) const {
  if (lane != o.lane) return {lane, 0.0, -1.0};
  return {lane, std::max(lo, o.lo), std::min(hi, o.hi)};
}

ArcInterval pv_frs(const PhantomVehicleSet& pvs, const RiskParams& params) {
  return {pvs.lane, pvs.s_s, pvs.s_e + params.v_pv_max * params.horizon};
}

ArcInterval pv_brs(double s, const PhantomVehicleSet& pvs, const RiskParams& params) {
  return {pvs.lane, std::max(pvs.s_s, s - params.v_pv_max * params.horizon),
          std::min(pvs.s_e, s)};
}

ArcInterval ev_frs(int lane, double s, double v, double a_max, double v_cap, double T) {
  const double reach = std::min(v * T + 0.5 * a_max * T * T, v_cap * T);
  return {lane, s, s + std::max(0.0, reach)};
}

ConflictMap::ConflictMap(const std::vector<Lane>& lanes, double margin) {
  for (std::size_t i = 0; i < lanes.size(); ++i)
    for (std::size_t j = i + 1; j < lanes.size(); ++j) {
      const auto c = lane_crossing(lanes[i], lanes[j]);
      if (!c) continue;
      const double ha = 0.5 * lanes[j].width + margin;
      const double hb = 0.5 * lanes[i].width + margin;
      add(lanes[i].id, lanes[j].id,
          {{lanes[i].id, c->first - ha, c->first + ha}, {lanes[j].id, c->second - hb, c->second + hb}});
    }
}

void ConflictMap::add(int lane_a, int lane_b, const ConflictWindow& w) {
  entries_.push_back({lane_a, lane_b, w});
}

std::optional<ConflictWindow> ConflictMap::find(int lane_a, int lane_b) const {
  for (const auto& e : entries_) {
    if (e.a == lane_a && e.b == lane_b) return e.w;
    if (e.a == lane_b && e.b == lane_a) return ConflictWindow{e.w.on_b, e.w.on_a};
  }
  return std::nullopt;
}

bool relevance_filter(const ArcInterval& ev, const ArcInterval& obstacle, const ConflictMap& map) {
  if (ev.empty() || obstacle.empty()) return false;
  const auto w = map.find(ev.lane, obstacle.lane);
  if (!w) return false;
  return ev.overlaps(w->on_a) && obstacle.overlaps(w->on_b);
}

}  // namespace occp
