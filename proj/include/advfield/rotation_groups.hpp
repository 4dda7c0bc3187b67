#ifndef ADVFIELD_ROTATION_GROUPS_HPP
#define ADVFIELD_ROTATION_GROUPS_HPP

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "advfield/geometry.hpp"
#include "advfield/point_cloud.hpp"

namespace advfield {

/// G angular slices around the sensor. Slice g (1-based) is centered on
/// beta_g = (g - 1) * 2pi / G, measured counter-clockwise from the sensor's
/// +x axis, and covers [beta_g - pi/G, beta_g + pi/G).
struct GroupScheme {
  int groups = 12;

  double slice_width() const { return kTwoPi / groups; }
  double reference_angle(int g) const { return (g - 1) * slice_width(); }

  /// Slice holding `angle`; upper slice boundaries belong to the next slice.
  int slice_of(double angle) const {
    const double a = wrap_two_pi(angle);
    const double pos = (a + 0.5 * slice_width()) / slice_width();
    const int idx = static_cast<int>(std::floor(pos + 1e-9));
    return (idx % groups) + 1;
  }
};

/// Incidence-preserving rotation group: the slice a forward-facing copy of
/// the object would occupy, i.e. the slice of (bearing - yaw).
inline int group_of(const OrientedBox& box, const Point3& sensor, const GroupScheme& scheme) {
  return scheme.slice_of(bearing(box.center, sensor) - box.yaw);
}

struct PseudoYaw {
  double yaw = 0.0;  // in [0, pi)
  bool ambiguous = false;
};

/// Direction of the longer horizontal side of a box, modulo pi.
inline PseudoYaw pseudo_yaw(const OrientedBox& box) {
  if (std::abs(box.width - box.length) < 1e-6) return {0.0, true};
  double a = box.length >= box.width ? box.yaw : box.yaw + 0.5 * kPi;
  a = std::fmod(a, kPi);
  if (a < 0.0) a += kPi;
  if (a >= kPi) a = 0.0;
  return {a, false};
}

/// Direction of the longer horizontal extent of a point set, modulo pi:
/// the heading whose perpendicular (shorter) extent is smallest.
inline PseudoYaw pseudo_yaw(std::span<const Point3> points) {
  if (points.size() < 3) throw ConfigError("pseudo_yaw needs at least 3 points");
  auto extents = [&](double theta) {
    const double c = std::cos(theta), s = std::sin(theta);
    double lo_a = 1e300, hi_a = -1e300, lo_p = 1e300, hi_p = -1e300;
    for (const auto& p : points) {
      const double along = c * p.x + s * p.y;
      const double perp = -s * p.x + c * p.y;
      lo_a = std::min(lo_a, along);
      hi_a = std::max(hi_a, along);
      lo_p = std::min(lo_p, perp);
      hi_p = std::max(hi_p, perp);
    }
    return std::pair{hi_a - lo_a, hi_p - lo_p};
  };
  constexpr int kCoarse = 360;
  double best = 0.0;
  double best_width = 1e300;
  for (int i = 0; i < kCoarse; ++i) {
    const double theta = kPi * i / kCoarse;
    const auto [len, wid] = extents(theta);
    if (wid < best_width - 1e-12 || (std::abs(wid - best_width) <= 1e-12 && len > extents(best).first)) {
      best_width = wid;
      best = theta;
    }
  }
  // Golden-section refinement inside the winning coarse bucket.
  double lo = best - kPi / kCoarse, hi = best + kPi / kCoarse;
  const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
  for (int it = 0; it < 40; ++it) {
    const double m1 = hi - phi * (hi - lo), m2 = lo + phi * (hi - lo);
    if (extents(m1).second <= extents(m2).second)
      hi = m2;
    else
      lo = m1;
  }
  double theta = 0.5 * (lo + hi);
  const auto [len, wid] = extents(theta);
  if (extents(best).second < wid) theta = best;
  theta = std::fmod(theta, kPi);
  if (theta < 0.0) theta += kPi;
  if (theta >= kPi) theta = 0.0;
  return {theta, std::abs(len - wid) < 1e-6};
}

/// Group for a box whose heading is only known modulo pi: the oriented
/// group over 2G slices, with each opposite pair (g, g + G) folded to g.
inline int group_of_axis_aligned(const OrientedBox& box, const Point3& sensor, const GroupScheme& folded) {
  const GroupScheme full{2 * folded.groups};
  OrientedBox b = box;
  b.yaw = pseudo_yaw(box).yaw;
  const int g = group_of(b, sensor, full);
  return ((g - 1) % folded.groups) + 1;
}

/// Folds an oriented group index from a 2G scheme onto G.
inline int fold_group(int g, int folded_groups) { return ((g - 1) % folded_groups) + 1; }

/// World-axis-aligned bounds of one instance, inflated by `margin` on every
/// side, with yaw set to the pseudo-orientation (0 or pi/2) so that the
/// box length runs along the longer side. Empty when the instance has
/// fewer than 3 points.
inline std::optional<OrientedBox> axis_aligned_box_of_instance(const PointCloud& cloud, std::uint16_t instance,
                                                               double margin) {
  Vec3 lo{1e300, 1e300, 1e300}, hi{-1e300, -1e300, -1e300};
  std::size_t count = 0;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (cloud.instance[i] != instance) continue;
    const Point3& p = cloud.positions[i];
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], p[a]);
      hi[a] = std::max(hi[a], p[a]);
    }
    ++count;
  }
  if (count < 3) return std::nullopt;
  OrientedBox b;
  b.center = (lo + hi) * 0.5;
  const double ex = hi.x - lo.x + 2.0 * margin;
  const double ey = hi.y - lo.y + 2.0 * margin;
  b.height = hi.z - lo.z + 2.0 * margin;
  if (ex >= ey) {
    b.length = ex;
    b.width = ey;
    b.yaw = 0.0;
  } else {
    b.length = ey;
    b.width = ex;
    b.yaw = 0.5 * kPi;
  }
  return b;
}

}  // namespace advfield

#endif
