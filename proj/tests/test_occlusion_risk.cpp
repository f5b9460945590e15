#include "occp/occlusion_risk.hpp"
#include "occp/reachability.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <random>

using namespace occp;

namespace {

// Segment against an axis-aligned box by slab clipping.
bool segment_hits_box(const Vec2& a, const Vec2& b, const Vec2& lo, const Vec2& hi) {
  double t0 = 0.0, t1 = 1.0;
  const Vec2 d = b - a;
  for (int k = 0; k < 2; ++k) {
    if (std::abs(d(k)) < 1e-15) {
      if (a(k) < lo(k) || a(k) > hi(k)) return false;
      continue;
    }
    double ta = (lo(k) - a(k)) / d(k), tb = (hi(k) - a(k)) / d(k);
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return false;
  }
  return true;
}

OcclusionScene one_box_scene(const Vec2& lo, const Vec2& hi) {
  OcclusionScene scene;
  scene.lanes.push_back({7, Vec2(-50.0, 0.0), Vec2::UnitX(), 100.0, 3.75});
  scene.occluders.push_back(make_box(lo.x(), lo.y(), hi.x(), hi.y()));
  return scene;
}

}  // namespace

TEST_CASE("phantom count matches the double integral") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int checked = 0;
  double worst = 0.0;
  while (checked < 50) {
    PhantomVehicleSet pvs;
    pvs.s_s = -20.0 + 40.0 * u(rng);
    pvs.s_e = pvs.s_s + 1.0 + 59.0 * u(rng);
    RiskParams p;
    p.v_pv_max = 3.0 + 12.0 * u(rng);
    p.horizon = 1.0 + 5.0 * u(rng);
    const double hi = pvs.s_e + p.v_pv_max * p.horizon;
    double peak = 0.0;
    for (int k = 0; k <= 400; ++k)
      peak = std::max(peak, phantom_count(pvs.s_s + (hi - pvs.s_s) * k / 400.0, pvs, p));
    const double s = pvs.s_s + (hi - pvs.s_s) * u(rng);
    const double g = phantom_count(s, pvs, p);
    if (g < 0.05 * peak) continue;
    const double ref = oracle::phantom_count(s, pvs, p, 2000);
    worst = std::max(worst, std::abs(g - ref) / ref);
    ++checked;
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("phantom count is continuous across its pieces") {
  RiskParams p;
  for (double len : {10.0, 60.0}) {
    const PhantomVehicleSet pvs{1, 0.0, len};
    const double vT = p.v_pv_max * p.horizon;
    for (double s : {0.0, len, vT, len + vT}) {
      const double a = phantom_count(s - 1e-7, pvs, p), b = phantom_count(s + 1e-7, pvs, p);
      CHECK(std::abs(a - b) < 1e-5);
    }
  }
}

TEST_CASE("phantom count edge cases") {
  RiskParams p;
  CHECK(phantom_count(5.0, {1, 5.0, 5.0}, p) == 0.0);
  CHECK(phantom_count(-1.0, {1, 0.0, 10.0}, p) == 0.0);
  CHECK(phantom_count(51.0, {1, 0.0, 10.0}, p) == 0.0);
  RiskParams still = p;
  still.horizon = 0.0;
  CHECK(phantom_count(5.0, {1, 0.0, 10.0}, still) == 0.0);
  // The integral is additive in the start interval.
  for (double s : {3.0, 12.0, 25.0, 47.0}) {
    const double whole = phantom_count(s, {1, 0.0, 20.0}, p);
    const double parts = phantom_count(s, {1, 0.0, 8.0}, p) + phantom_count(s, {1, 8.0, 20.0}, p);
    CHECK(whole == doctest::Approx(parts).epsilon(1e-12));
  }
  // Long sets saturate at v^2 T / 2 well inside the set.
  CHECK(phantom_count(80.0, {1, 0.0, 100.0}, p) == doctest::Approx(0.5 * 100.0 * 4.0));
}

TEST_CASE("lateral density peaks on the centreline") {
  const double lw = 3.75, Z = 1.645;
  CHECK(lateral_sigma(0.0, lw, Z) == doctest::Approx(lw / Z));
  CHECK(lateral_sigma(0.5, 2 * lw, Z) == doctest::Approx(2 * lateral_sigma(0.5, lw, Z)));
  CHECK(lateral_sigma(0.3, lw, Z) == lateral_sigma(-0.3, lw, Z));
  const auto grid = RiskParams::default_lateral_grid();
  double best = -1.0, arg = 1.0;
  for (double d : grid) {
    const double r = lateral_risk(d, lw, Z);
    CHECK(r > 0.0);
    if (r > best) best = r, arg = d;
  }
  CHECK(std::abs(arg) < 1e-12);
  for (double d = 0.0; d < 0.95; d += 0.05) CHECK(lateral_risk(d + 0.05, lw, Z) < lateral_risk(d, lw, Z));
  CHECK_THROWS_AS(lateral_risk(1.0, lw, Z), std::domain_error);
  CHECK_THROWS_AS(lateral_risk(0.2, 0.0, Z), std::domain_error);
  CHECK_THROWS_AS(lateral_risk(0.2, lw, -1.0), std::domain_error);
}

TEST_CASE("total risk is the product of its factors") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> us(-10.0, 80.0), ud(-0.9, 0.9);
  RiskParams p;
  const PhantomVehicleSet pvs{2, 0.0, 25.0, 3.5};
  for (int i = 0; i < 100; ++i) {
    const double s = us(rng), d = ud(rng);
    const double expect = pvs.length() * phantom_count(s, pvs, p) * lateral_risk(d, 3.5, p.Z);
    CHECK(total_risk(s, d, pvs, p) == doctest::Approx(expect).epsilon(1e-14));
  }
}

TEST_CASE("aggregated risk") {
  RiskParams p;
  const PhantomVehicleSet pvs{1, 0.0, 20.0};
  const RiskField f = sample_risk_field(pvs, p, 20.0, 40.0);
  CHECK(f.s.size() == 200);
  CHECK(f.r.cols() == static_cast<Eigen::Index>(p.lateral_grid.size()));
  const ArcInterval ev{1, 25.0, 35.0}, reach = pv_frs(pvs, p);
  const double r = aggregate_risk(f, ev, reach);
  CHECK(r > 0.0);
  CHECK(aggregate_risk(f, {1, 100.0, 120.0}, reach) == 0.0);
  CHECK(aggregate_risk(f, {2, 25.0, 35.0}, reach) == 0.0);
  CHECK(aggregate_risk(sample_risk_field(pvs, p, 10.0, 5.0), ev, reach) == 0.0);

  RiskParams fine = p;
  fine.ds = 0.01;
  const double r_fine = aggregate_risk(sample_risk_field(pvs, fine, 20.0, 40.0), ev, reach);
  CHECK(std::abs(r - r_fine) / r_fine < 0.01);
}

TEST_CASE("velocity bounds anchors") {
  RiskParams p;
  for (double cth : {p.c_th_max_explore, p.c_th_max_fallback}) {
    CHECK(occlusion_speed(p.c_th_min, cth, p) == p.v_occ_max);
    CHECK(occlusion_speed(cth, cth, p) == p.v_occ_min);
    CHECK(occlusion_speed(cth + 5.0, cth, p) == p.v_occ_min);
    CHECK(occlusion_speed(0.5 * cth, cth, p) == doctest::Approx(0.5 * (p.v_occ_min + p.v_occ_max)));
  }
  double prev0 = 1e9, prev1 = 1e9;
  for (double r = 0.0; r < 80.0; r += 0.5) {
    const VelocityBounds b = velocity_bounds(r, p);
    CHECK(b.v0_occ <= prev0);
    CHECK(b.v1_occ <= prev1);
    CHECK(b.v0_occ <= b.v1_occ);
    prev0 = b.v0_occ;
    prev1 = b.v1_occ;
  }
  CHECK_THROWS_AS(occlusion_speed(1.0, p.c_th_min, p), std::invalid_argument);
}

TEST_CASE("PVS behind a small building") {
  const OcclusionScene scene = one_box_scene(Vec2(-2.0, -1.5), Vec2(-1.0, -1.0));
  const auto pvs = extract_pvs(scene, Vec2(0.0, -2.0), 30.0);
  REQUIRE(pvs.size() == 1);
  CHECK(pvs[0].lane == 7);
  CHECK(pvs[0].s_s - 50.0 == doctest::Approx(-8.0).epsilon(2e-3 / 8.0));
  CHECK(pvs[0].s_e - 50.0 == doctest::Approx(-2.0).epsilon(2e-3 / 2.0));
}

TEST_CASE("PVS clipped by the sensor range matches sampled visibility") {
  const Vec2 lo(-30.0, -1.5), hi(-1.0, -1.0), eye(0.0, -2.0);
  const OcclusionScene scene = one_box_scene(lo, hi);
  const double range = 20.0;
  const auto pvs = extract_pvs(scene, eye, range);
  const auto span = lane_in_range(scene.lanes[0], eye, range);
  REQUIRE(span);
  const int n = 10000;
  double hidden_len = 0.0;
  int disagree = 0;
  for (int k = 0; k < n; ++k) {
    const double s = span->first + (span->second - span->first) * (k + 0.5) / n;
    const bool hidden = segment_hits_box(eye, scene.lanes[0].point(s), lo, hi);
    if (hidden) hidden_len += (span->second - span->first) / n;
    bool in_pvs = false;
    for (const auto& p : pvs) in_pvs = in_pvs || (s >= p.s_s && s <= p.s_e);
    if (hidden != in_pvs) ++disagree;
  }
  double total = 0.0;
  for (const auto& p : pvs) total += p.length();
  CHECK(disagree <= 2);
  CHECK(std::abs(total - hidden_len) < 0.01);
  CHECK(pvs.front().s_s == doctest::Approx(span->first));
}

TEST_CASE("extract_pvs input checks") {
  OcclusionScene scene = one_box_scene(Vec2(-2.0, -1.5), Vec2(-1.0, -1.0));
  scene.bounds = Eigen::AlignedBox2d(Vec2(-10, -10), Vec2(10, 10));
  CHECK_THROWS_AS(extract_pvs(scene, Vec2(50.0, 0.0), 30.0), std::domain_error);
  CHECK(extract_pvs(scene, Vec2(0.0, 5.0), 3.0).empty());
}
