#pragma once

#include <Eigen/Dense>

#include <optional>
#include <vector>

namespace occp {

using Vec2 = Eigen::Vector2d;

/// Simple (not necessarily convex) polygon, vertices in order.
struct Polygon {
  std::vector<Vec2> pts;

  bool contains(const Vec2& p) const;
};

Polygon make_box(double xmin, double ymin, double xmax, double ymax);
/// Oriented rectangle centred at c with heading theta.
Polygon make_rect(const Vec2& c, double theta, double half_length, double half_width);

/// True when the open segment a-b crosses or touches any polygon edge, or when
/// either endpoint lies inside the polygon.
bool segment_hits_polygon(const Vec2& a, const Vec2& b, const Polygon& poly);

/// Straight lane. Arc-length s runs along the travel direction from `start`.
struct Lane {
  int id = 0;
  Vec2 start = Vec2::Zero();
  Vec2 dir = Vec2::UnitX();
  double length = 0.0;
  double width = 3.75;

  Vec2 point(double s) const { return start + s * dir; }
  double heading() const;
  /// Arc-length of the orthogonal projection of p.
  double project(const Vec2& p) const { return (p - start).dot(dir); }
  double lateral(const Vec2& p) const;
};

/// Arc-lengths on lanes a and b of their crossing point, if the centerlines
/// cross inside both lanes.
std::optional<std::pair<double, double>> lane_crossing(const Lane& a, const Lane& b);

/// Arc-length range of the lane centerline inside the circle (c, r), clamped to
/// the lane extent. Empty when the circle misses the lane.
std::optional<std::pair<double, double>> lane_in_range(const Lane& lane, const Vec2& c, double r);

/// Wrap an angle to (-pi, pi].
double wrap_angle(double a);

}  // namespace occp
