#ifndef ADVFIELD_GEOMETRY_HPP
#define ADVFIELD_GEOMETRY_HPP

#include <array>
#include <cmath>
#include <vector>

#include "advfield/common.hpp"

namespace advfield {

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  constexpr Vec3() = default;
  constexpr Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

  constexpr Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  constexpr Vec3& operator-=(const Vec3& o) {
    x -= o.x;
    y -= o.y;
    z -= o.z;
    return *this;
  }
  constexpr Vec3& operator*=(double s) {
    x *= s;
    y *= s;
    z *= s;
    return *this;
  }
  constexpr double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
  constexpr double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }

  friend constexpr Vec3 operator+(Vec3 a, const Vec3& b) { return a += b; }
  friend constexpr Vec3 operator-(Vec3 a, const Vec3& b) { return a -= b; }
  friend constexpr Vec3 operator-(const Vec3& a) { return {-a.x, -a.y, -a.z}; }
  friend constexpr Vec3 operator*(Vec3 a, double s) { return a *= s; }
  friend constexpr Vec3 operator*(double s, Vec3 a) { return a *= s; }
  friend constexpr bool operator==(const Vec3&, const Vec3&) = default;
};

/// World-frame position in meters. z is up; the ground plane is z = 0.
using Point3 = Vec3;

constexpr double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
constexpr Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }
constexpr double squared_norm(const Vec3& v) { return dot(v, v); }
inline double distance(const Vec3& a, const Vec3& b) { return norm(a - b); }
inline bool is_finite(const Vec3& v) {
  return std::isfinite(v.x) && std::isfinite(v.y) && std::isfinite(v.z);
}

inline Vec3 normalized(const Vec3& v) {
  const double n = norm(v);
  if (!(n > 0.0)) throw NumericError("cannot normalize a zero-length vector");
  return v * (1.0 / n);
}

/// Wraps an angle to [-pi, pi).
inline double wrap_pi(double a) {
  double r = std::fmod(a + kPi, kTwoPi);
  if (r < 0.0) r += kTwoPi;
  return r - kPi;
}

/// Wraps an angle to [0, 2pi).
inline double wrap_two_pi(double a) {
  double r = std::fmod(a, kTwoPi);
  if (r < 0.0) r += kTwoPi;
  if (r >= kTwoPi) r = 0.0;
  return r;
}

/// Rotation about +z by `yaw` radians (counter-clockwise seen from above).
inline Vec3 rotate_yaw(const Vec3& v, double yaw) {
  const double c = std::cos(yaw);
  const double s = std::sin(yaw);
  return {c * v.x - s * v.y, s * v.x + c * v.y, v.z};
}

struct Ray {
  Point3 origin;
  Vec3 direction;  // unit length

  static Ray through(const Point3& origin, const Point3& target) {
    return {origin, normalized(target - origin)};
  }
  Point3 at(double t) const { return origin + direction * t; }
};

/// Component of v along the ray direction: (v . d) d.
inline Vec3 project_onto_ray(const Vec3& v, const Ray& r) {
  return r.direction * dot(v, r.direction);
}

/// Object pose. Box-local frame: +x along length (heading), +y along
/// width, +z along height; yaw rotates local +x into the world.
struct OrientedBox {
  Point3 center;
  double width = 1.0;
  double height = 1.0;
  double length = 1.0;
  double yaw = 0.0;

  double volume() const { return width * height * length; }
  Vec3 half_extents() const { return {0.5 * length, 0.5 * width, 0.5 * height}; }

  Vec3 to_local(const Point3& p) const { return rotate_yaw(p - center, -yaw); }
  Point3 to_world(const Vec3& local) const { return center + rotate_yaw(local, yaw); }

  OrientedBox inflated(double margin) const {
    OrientedBox b = *this;
    b.width += 2.0 * margin;
    b.height += 2.0 * margin;
    b.length += 2.0 * margin;
    return b;
  }

  bool valid() const {
    return width > 0.0 && height > 0.0 && length > 0.0 && is_finite(center) && std::isfinite(yaw);
  }

  friend bool operator==(const OrientedBox&, const OrientedBox&) = default;
};

inline bool box_contains(const OrientedBox& b, const Point3& p) {
  const Vec3 q = b.to_local(p);
  const Vec3 h = b.half_extents();
  return std::abs(q.x) <= h.x && std::abs(q.y) <= h.y && std::abs(q.z) <= h.z;
}

/// Yaw-only rigid transform: p -> R(yaw) p + translation.
struct RigidTransform {
  double yaw = 0.0;
  Vec3 translation;

  Point3 apply(const Point3& p) const { return rotate_yaw(p, yaw) + translation; }
  Vec3 apply_vector(const Vec3& v) const { return rotate_yaw(v, yaw); }

  /// (a * b)(p) = a(b(p)).
  friend RigidTransform operator*(const RigidTransform& a, const RigidTransform& b) {
    return {a.yaw + b.yaw, rotate_yaw(b.translation, a.yaw) + a.translation};
  }

  RigidTransform inverse() const { return {-yaw, -rotate_yaw(translation, -yaw)}; }

  OrientedBox apply(const OrientedBox& b) const {
    OrientedBox out = b;
    out.center = apply(b.center);
    out.yaw = wrap_pi(b.yaw + yaw);
    return out;
  }
};

/// Horizontal angle of (p - sensor), in [0, 2pi).
inline double bearing(const Point3& p, const Point3& sensor) {
  const double dx = p.x - sensor.x;
  const double dy = p.y - sensor.y;
  if (std::hypot(dx, dy) < 1e-9) throw NumericError("bearing undefined: point is above the sensor");
  return wrap_two_pi(std::atan2(dy, dx));
}

namespace detail {

inline double interval_overlap(double a0, double a1, double b0, double b1) {
  return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
}

inline const std::vector<Vec3>& unit_cube_samples() {
  static const std::vector<Vec3> samples = [] {
    std::vector<Vec3> s(10000);
    Rng rng(0x10u);
    for (auto& v : s) v = {rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)};
    return s;
  }();
  return samples;
}

/// Fraction of `a`'s volume that lies inside `b`, estimated from the fixed
/// sample set.
inline double fraction_inside(const OrientedBox& a, const OrientedBox& b) {
  const auto& samples = unit_cube_samples();
  std::size_t hits = 0;
  for (const auto& u : samples) {
    const Vec3 local{u.x * a.length, u.y * a.width, u.z * a.height};
    if (box_contains(b, a.to_world(local))) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

}  // namespace detail

/// 3D IoU of two yaw-oriented boxes. Exact when the yaws agree modulo
/// pi/2; otherwise a 20k-sample Monte-Carlo estimate (10k drawn in each
/// box) that is exactly symmetric in its arguments.
inline double iou_3d(const OrientedBox& a, const OrientedBox& b) {
  if (a.center == b.center && a.width == b.width && a.height == b.height && a.length == b.length && a.yaw == b.yaw)
    return 1.0;
  const double z_overlap = detail::interval_overlap(a.center.z - 0.5 * a.height, a.center.z + 0.5 * a.height,
                                                    b.center.z - 0.5 * b.height, b.center.z + 0.5 * b.height);
  if (z_overlap <= 0.0) return 0.0;
  const double ra = 0.5 * std::hypot(a.width, a.length);
  const double rb = 0.5 * std::hypot(b.width, b.length);
  if (std::hypot(a.center.x - b.center.x, a.center.y - b.center.y) >= ra + rb) return 0.0;

  const double va = a.volume();
  const double vb = b.volume();
  const double dyaw = wrap_pi(b.yaw - a.yaw);
  const double quarter = std::remainder(dyaw, kPi / 2.0);
  if (std::abs(quarter) < 1e-12) {
    // Same axes up to a quarter turn: overlap of rectangles in a's frame.
    const bool swapped = std::abs(std::remainder(dyaw, kPi)) > kPi / 4.0;
    const double bl = swapped ? b.width : b.length;
    const double bw = swapped ? b.length : b.width;
    const Vec3 c = a.to_local(b.center);
    const double ox = detail::interval_overlap(-0.5 * a.length, 0.5 * a.length, c.x - 0.5 * bl, c.x + 0.5 * bl);
    const double oy = detail::interval_overlap(-0.5 * a.width, 0.5 * a.width, c.y - 0.5 * bw, c.y + 0.5 * bw);
    const double inter = ox * oy * z_overlap;
    return inter <= 0.0 ? 0.0 : inter / (va + vb - inter);
  }
  const double inter = 0.5 * (va * detail::fraction_inside(a, b) + vb * detail::fraction_inside(b, a));
  return inter <= 0.0 ? 0.0 : inter / (va + vb - inter);
}

}  // namespace advfield

#endif
