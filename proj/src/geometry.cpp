#include "occp/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace occp {

namespace {

double cross(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

bool on_segment(const Vec2& p, const Vec2& a, const Vec2& b) {
  return std::min(a.x(), b.x()) - 1e-12 <= p.x() && p.x() <= std::max(a.x(), b.x()) + 1e-12 &&
         std::min(a.y(), b.y()) - 1e-12 <= p.y() && p.y() <= std::max(a.y(), b.y()) + 1e-12;
}

bool segments_intersect(const Vec2& p1, const Vec2& p2, const Vec2& q1, const Vec2& q2) {
  const double d1 = cross(q2 - q1, p1 - q1);
  const double d2 = cross(q2 - q1, p2 - q1);
  const double d3 = cross(p2 - p1, q1 - p1);
  const double d4 = cross(p2 - p1, q2 - p1);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0)))
    return true;
  if (d1 == 0 && on_segment(p1, q1, q2)) return true;
  if (d2 == 0 && on_segment(p2, q1, q2)) return true;
  if (d3 == 0 && on_segment(q1, p1, p2)) return true;
  if (d4 == 0 && on_segment(q2, p1, p2)) return true;
  return false;
}

}  // namespace

bool Polygon::contains(const Vec2& p) const {
  bool inside = false;
  const std::size_t n = pts.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Vec2& a = pts[i];
    const Vec2& b = pts[j];
    if ((a.y() > p.y()) != (b.y() > p.y())) {
      const double x = a.x() + (p.y() - a.y()) * (b.x() - a.x()) / (b.y() - a.y());
      if (p.x() < x) inside = !inside;
    }
  }
  return inside;
}

Polygon make_box(double xmin, double ymin, double xmax, double ymax) {
  return Polygon{{{xmin, ymin}, {xmax, ymin}, {xmax, ymax}, {xmin, ymax}}};
}

Polygon make_rect(const Vec2& c, double theta, double half_length, double half_width) {
  const Vec2 u(std::cos(theta), std::sin(theta));
  const Vec2 v(-u.y(), u.x());
  return Polygon{{c + half_length * u + half_width * v, c - half_length * u + half_width * v,
                  c - half_length * u - half_width * v, c + half_length * u - half_width * v}};
}

bool segment_hits_polygon(const Vec2& a, const Vec2& b, const Polygon& poly) {
  if (poly.pts.size() < 3) return false;
  if (poly.contains(a) || poly.contains(b)) return true;
  const std::size_t n = poly.pts.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++)
    if (segments_intersect(a, b, poly.pts[j], poly.pts[i])) return true;
  return false;
}

double Lane::heading() const { return std::atan2(dir.y(), dir.x()); }

double Lane::lateral(const Vec2& p) const { return cross(dir, p - start); }

std::optional<std::pair<double, double>> lane_crossing(const Lane& a, const Lane& b) {
  const double denom = cross(a.dir, b.dir);
  if (std::abs(denom) < 1e-12) return std::nullopt;
  const Vec2 d = b.start - a.start;
  const double sa = cross(d, b.dir) / denom;
  const double sb = cross(d, a.dir) / denom;
  if (sa < 0 || sa > a.length || sb < 0 || sb > b.length) return std::nullopt;
  return std::make_pair(sa, sb);
}

std::optional<std::pair<double, double>> lane_in_range(const Lane& lane, const Vec2& c, double r) {
  const double sc = lane.project(c);
  const double off = lane.lateral(c);
  if (std::abs(off) > r) return std::nullopt;
  const double half = std::sqrt(r * r - off * off);
  const double lo = std::max(0.0, sc - half);
  const double hi = std::min(lane.length, sc + half);
  if (lo > hi) return std::nullopt;
  return std::make_pair(lo, hi);
}

double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * M_PI);
  if (a <= -M_PI) a += 2.0 * M_PI;
  return a;
}

}  // namespace occp
