#include <gtest/gtest.h>

#include <cmath>

#include "advfield/rotation_groups.hpp"

using namespace advfield;

namespace {

// Nearest reference angle on the circle; only valid away from boundaries.
int nearest_group(double angle, int G) {
  int best = 1;
  double best_d = 1e9;
  for (int g = 1; g <= G; ++g) {
    const double d = std::abs(std::remainder(angle - (g - 1) * kTwoPi / G, kTwoPi));
    if (d < best_d) {
      best_d = d;
      best = g;
    }
  }
  return best;
}

const Point3 kSensor{0.0, 0.0, 1.8};

}  // namespace

TEST(GroupScheme, ReferenceAnglesAndWidth) {
  const GroupScheme s{12};
  EXPECT_DOUBLE_EQ(s.slice_width(), kPi / 6);
  EXPECT_DOUBLE_EQ(s.reference_angle(1), 0.0);
  EXPECT_DOUBLE_EQ(s.reference_angle(4), kPi / 2);
  for (int g = 1; g <= 12; ++g) EXPECT_EQ(s.slice_of(s.reference_angle(g)), g);
}

TEST(GroupScheme, MatchesNearestReferenceAngle) {
  Rng rng(1);
  for (int G : {1, 2, 4, 8, 12, 16}) {
    const GroupScheme s{G};
    for (int i = 0; i < 5000; ++i) {
      const double a = rng.uniform(-20.0, 20.0);
      const double to_edge = std::abs(std::remainder(a - 0.5 * s.slice_width(), s.slice_width()));
      if (to_edge < 1e-6) continue;
      EXPECT_EQ(s.slice_of(a), nearest_group(a, G)) << "G=" << G << " a=" << a;
    }
  }
}

TEST(GroupScheme, UpperBoundaryBelongsToNextSlice) {
  const GroupScheme s{12};
  const double w = s.slice_width();
  EXPECT_EQ(s.slice_of(0.5 * w), 2);
  EXPECT_EQ(s.slice_of(0.5 * w - 1e-6), 1);
  EXPECT_EQ(s.slice_of(-0.5 * w), 1);
  EXPECT_EQ(s.slice_of(-0.5 * w - 1e-6), 12);
  EXPECT_EQ(s.slice_of(kTwoPi - 0.5 * w), 1);
}

TEST(GroupOf, RadialHeadingsHitTheExpectedSlices) {
  const GroupScheme s{12};
  for (double bearing_angle : {0.0, 1.0, 2.5, -2.0}) {
    const Point3 c = kSensor + Vec3{20 * std::cos(bearing_angle), 20 * std::sin(bearing_angle), -1.0};
    OrientedBox away{c, 1.8, 1.6, 4.6, bearing_angle};
    EXPECT_EQ(group_of(away, kSensor, s), 1);
    OrientedBox toward = away;
    toward.yaw = bearing_angle + kPi;
    EXPECT_EQ(group_of(toward, kSensor, s), 7);
    OrientedBox crossing = away;
    crossing.yaw = bearing_angle - kPi / 2;
    EXPECT_EQ(group_of(crossing, kSensor, s), 4);
  }
}

// Drawn with +x up and +y to the right, so the drawing's clockwise is
// counter-clockwise here.
TEST(GroupOf, WorkedExamples) {
  const GroupScheme s{12};
  const double deg = kPi / 180.0;
  const OrientedBox pos1_left{{20.0, 0.0, 0.8}, 1.8, 1.6, 4.6, -90 * deg};
  EXPECT_EQ(group_of(pos1_left, kSensor, s), 4);
  const OrientedBox pos10_turned{{20.0 * std::cos(270 * deg), 20.0 * std::sin(270 * deg), 0.8}, 1.8, 1.6, 4.6,
                                 20 * deg};
  EXPECT_EQ(group_of(pos10_turned, kSensor, s), 9);
  for (int g = 1; g <= 12; ++g) {
    const double b = s.reference_angle(g);
    const OrientedBox forward{{20.0 * std::cos(b), 20.0 * std::sin(b), 0.8}, 1.8, 1.6, 4.6, 0.0};
    EXPECT_EQ(group_of(forward, kSensor, s), g);
  }
}

TEST(GroupOf, InvariantUnderRotationAboutSensor) {
  Rng rng(2);
  const GroupScheme s{12};
  for (int i = 0; i < 5000; ++i) {
    OrientedBox b{kSensor + Vec3{rng.uniform(-40, 40), rng.uniform(-40, 40), -1.0}, 1.8, 1.6, 4.6,
                  rng.uniform(-kPi, kPi)};
    if (std::hypot(b.center.x, b.center.y) < 1.0) continue;
    const double rel = wrap_two_pi(bearing(b.center, kSensor) - b.yaw);
    if (std::abs(std::remainder(rel - 0.5 * s.slice_width(), s.slice_width())) < 1e-6) continue;
    const double a = rng.uniform(-kPi, kPi);
    OrientedBox r = b;
    r.center = kSensor + rotate_yaw(b.center - kSensor, a);
    r.yaw = b.yaw + a;
    EXPECT_EQ(group_of(r, kSensor, s), group_of(b, kSensor, s));
  }
}

TEST(GroupOf, SingleGroupCollapses) {
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const OrientedBox b{{rng.uniform(5, 40), rng.uniform(5, 40), 0.8}, 1.8, 1.6, 4.6, rng.uniform(-kPi, kPi)};
    EXPECT_EQ(group_of(b, kSensor, GroupScheme{1}), 1);
  }
}

TEST(PseudoYaw, BoxHeadingModuloPi) {
  OrientedBox b{{0, 0, 0}, 1.8, 1.6, 4.6, 0.3};
  EXPECT_NEAR(pseudo_yaw(b).yaw, 0.3, 1e-12);
  b.yaw = 0.3 + kPi;
  EXPECT_NEAR(pseudo_yaw(b).yaw, 0.3, 1e-12);
  b.yaw = -0.3;
  EXPECT_NEAR(pseudo_yaw(b).yaw, kPi - 0.3, 1e-12);
  // Width longer than length: the long side is perpendicular to yaw.
  const OrientedBox w{{0, 0, 0}, 4.0, 1.0, 2.0, 0.2};
  EXPECT_NEAR(pseudo_yaw(w).yaw, 0.2 + kPi / 2, 1e-12);
  EXPECT_TRUE(pseudo_yaw(OrientedBox{{0, 0, 0}, 2.0, 1.0, 2.0, 0.7}).ambiguous);
}

TEST(PseudoYaw, RecoveredFromRectanglePoints) {
  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    const double yaw = rng.uniform(-kPi, kPi);
    const OrientedBox b{{rng.uniform(-10, 10), rng.uniform(-10, 10), 0.8}, 1.8, 1.6, 4.6, yaw};
    std::vector<Point3> pts;
    // Perimeter samples, as a scanner would see the outline.
    for (int i = 0; i <= 40; ++i) {
      const double u = -2.3 + 4.6 * i / 40.0, v = -0.9 + 1.8 * i / 40.0;
      for (const Vec3& l : {Vec3{u, -0.9, 0}, Vec3{u, 0.9, 0}, Vec3{-2.3, v, 0}, Vec3{2.3, v, 0}})
        pts.push_back(b.to_world(l));
    }
    const PseudoYaw p = pseudo_yaw(pts);
    EXPECT_FALSE(p.ambiguous);
    EXPECT_NEAR(std::remainder(p.yaw - yaw, kPi), 0.0, 1e-3);
    EXPECT_GE(p.yaw, 0.0);
    EXPECT_LT(p.yaw, kPi);
  }
  EXPECT_THROW(pseudo_yaw(std::vector<Point3>{{0, 0, 0}, {1, 0, 0}}), ConfigError);
}

TEST(AxisAligned, FoldedGroupIgnoresHeadingFlip) {
  Rng rng(5);
  const GroupScheme folded{6};
  for (int i = 0; i < 2000; ++i) {
    OrientedBox b{{rng.uniform(-40, 40), rng.uniform(-40, 40), 0.8}, 1.8, 1.6, 4.6, rng.uniform(-kPi, kPi)};
    if (std::hypot(b.center.x, b.center.y) < 1.0) continue;
    OrientedBox flipped = b;
    flipped.yaw += kPi;
    const int g = group_of_axis_aligned(b, kSensor, folded);
    EXPECT_EQ(g, group_of_axis_aligned(flipped, kSensor, folded));
    EXPECT_GE(g, 1);
    EXPECT_LE(g, 6);
    // Away from slice edges it agrees with the oriented group folded over 2G.
    const GroupScheme full{12};
    const double rel = wrap_two_pi(bearing(b.center, kSensor) - b.yaw);
    if (std::abs(std::remainder(rel - 0.5 * full.slice_width(), full.slice_width())) > 1e-6) {
      EXPECT_EQ(g, fold_group(group_of(b, kSensor, full), 6));
    }
  }
}

TEST(AxisAligned, FoldGroup) {
  EXPECT_EQ(fold_group(1, 6), 1);
  EXPECT_EQ(fold_group(6, 6), 6);
  EXPECT_EQ(fold_group(7, 6), 1);
  EXPECT_EQ(fold_group(12, 6), 6);
}

TEST(AxisAligned, InstanceBoundsCoverPoints) {
  Rng rng(6);
  PointCloud c;
  for (int i = 0; i < 200; ++i) c.push_back({rng.uniform(3, 4), rng.uniform(-5, -1), rng.uniform(0, 1.5)}, 0.5, 1, 9);
  for (int i = 0; i < 50; ++i) c.push_back({rng.uniform(-50, 50), rng.uniform(-50, 50), 0.0}, 0.5, 0, 0);
  c.push_back({0, 0, 0}, 0.5, 2, 4);
  const auto b = axis_aligned_box_of_instance(c, 9, 0.1);
  ASSERT_TRUE(b.has_value());
  EXPECT_GE(b->length, b->width);
  EXPECT_DOUBLE_EQ(b->yaw, kPi / 2);
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (c.instance[i] == 9) {
      EXPECT_TRUE(box_contains(*b, c.positions[i]));
    }
  }
  EXPECT_FALSE(axis_aligned_box_of_instance(c, 4, 0.1).has_value());
  EXPECT_FALSE(axis_aligned_box_of_instance(c, 77, 0.1).has_value());
}
