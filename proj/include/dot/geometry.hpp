#pragma once

#include <cmath>

namespace dot {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

inline Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
inline Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
inline Point2 operator*(double s, Point2 p) { return {s * p.x, s * p.y}; }
inline double dot2(Point2 a, Point2 b) { return a.x * b.x + a.y * b.y; }
inline double cross2(Point2 a, Point2 b) { return a.x * b.y - a.y * b.x; }
inline double norm2d(Point2 p) { return std::hypot(p.x, p.y); }
inline double dist2d(Point2 a, Point2 b) { return norm2d(a - b); }

/// Twice the signed area of triangle (a, b, c); positive for CCW order.
inline double signed_area2(Point2 a, Point2 b, Point2 c) {
  return cross2(b - a, c - a);
}

}  // namespace dot
