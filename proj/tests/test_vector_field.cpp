#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "advfield/vector_field.hpp"

using namespace advfield;

namespace {

OrientedBox random_box(Rng& rng, const FieldDims& d) {
  const double s = rng.uniform(0.8, 1.2);
  return {{rng.uniform(-20, 20), rng.uniform(-20, 20), rng.uniform(0.5, 1.5)},
          d.width * s * rng.uniform(0.9, 1.1), d.height * s, d.length * s * rng.uniform(0.9, 1.1),
          rng.uniform(-kPi, kPi)};
}

Point3 point_near(Rng& rng, const OrientedBox& b, double spill) {
  const Vec3 h = b.half_extents();
  return b.to_world({rng.uniform(-h.x - spill, h.x + spill), rng.uniform(-h.y - spill, h.y + spill),
                     rng.uniform(-h.z - spill, h.z + spill)});
}

VectorField random_field(Rng& rng, const FieldDims& d, double step, double eps) {
  VectorField f = build_lattice(d, step);
  for (std::size_t j = 0; j < f.size(); ++j) {
    f.vectors[j] = {rng.uniform(-eps, eps), rng.uniform(-eps, eps), rng.uniform(-eps, eps)};
    f.tau_shift[j] = rng.uniform(-eps, eps);
  }
  return f;
}

// Brute force over every anchored root.
std::vector<Neighbor> brute_knn(const VectorField& f, const OrientedBox& b, const Point3& p, int k) {
  const Vec3 s = anchor_scale(f, b);
  const Vec3 q = b.to_local(p);
  std::vector<Neighbor> all;
  for (std::size_t j = 0; j < f.size(); ++j) {
    const Vec3 r{f.roots[j].x * s.x, f.roots[j].y * s.y, f.roots[j].z * s.z};
    all.push_back({static_cast<std::uint32_t>(j), squared_norm(r - q)});
  }
  std::sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& c) {
    return a.squared_distance < c.squared_distance || (a.squared_distance == c.squared_distance && a.root < c.root);
  });
  all.resize(std::min<std::size_t>(k, all.size()));
  return all;
}

PointCloud cloud_around(Rng& rng, const OrientedBox& b, std::size_t n, double spill) {
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) c.push_back(point_near(rng, b, spill), rng.uniform(0.0, 1.0));
  return c;
}

const Point3 kSensor{0.0, 0.0, 1.8};

}  // namespace

TEST(Lattice, ReferenceCounts) {
  EXPECT_EQ(build_lattice(kCarDims, 0.2).size(), 1656u);
  EXPECT_EQ(build_lattice(kPersonDims, 0.05).size(), 4420u);
  const VectorField car = build_lattice(kCarDims, 0.2);
  EXPECT_EQ(car.n_length, 23);
  EXPECT_EQ(car.n_width, 9);
  EXPECT_EQ(car.n_height, 8);
}

TEST(Lattice, RootsAreCenteredAndSpaced) {
  const VectorField f = build_lattice(kCarDims, 0.2);
  Vec3 mean{};
  for (const auto& r : f.roots) {
    mean += r;
    EXPECT_LE(std::abs(r.x), kCarDims.length / 2);
    EXPECT_LE(std::abs(r.y), kCarDims.width / 2);
    EXPECT_LE(std::abs(r.z), kCarDims.height / 2);
  }
  EXPECT_NEAR(norm(mean * (1.0 / f.size())), 0.0, 1e-12);
  EXPECT_NEAR(f.roots[f.root_index(1, 0, 0)].x - f.roots[f.root_index(0, 0, 0)].x, 0.2, 1e-12);
  EXPECT_NEAR(f.roots[f.root_index(0, 1, 0)].y - f.roots[f.root_index(0, 0, 0)].y, 0.2, 1e-12);
  EXPECT_NEAR(f.roots[f.root_index(0, 0, 1)].z - f.roots[f.root_index(0, 0, 0)].z, 0.2, 1e-12);
}

TEST(Lattice, RejectsBadShapes) {
  EXPECT_THROW(build_lattice(kCarDims, 0.0), ConfigError);
  EXPECT_THROW(build_lattice(kCarDims, 5.0), ConfigError);
  EXPECT_THROW(build_lattice({0.0, 1.0, 1.0}, 0.2), ConfigError);
}

TEST(InitRandom, BoundedAndSeeded) {
  VectorField a = build_lattice(kCarDims, 0.2), b = a, c = a;
  init_random(a, 7);
  init_random(b, 7);
  init_random(c, 8);
  EXPECT_EQ(a, b);
  EXPECT_NE(a.vectors, c.vectors);
  for (std::size_t j = 0; j < a.size(); ++j) {
    for (int ax = 0; ax < 3; ++ax) EXPECT_LE(std::abs(a.vectors[j][ax]), 0.01);
    EXPECT_LE(std::abs(a.tau_shift[j]), 0.01);
  }
}

TEST(Clamp, PerComponentAndIdempotent) {
  Rng rng(1);
  VectorField f = random_field(rng, kCarDims, 0.4, 1.0);
  const VectorField raw = f;
  clamp(f, 0.3, 0.2);
  for (std::size_t j = 0; j < f.size(); ++j) {
    for (int ax = 0; ax < 3; ++ax) EXPECT_EQ(f.vectors[j][ax], std::clamp(raw.vectors[j][ax], -0.3, 0.3));
    EXPECT_EQ(f.tau_shift[j], std::clamp(raw.tau_shift[j], -0.2, 0.2));
  }
  VectorField again = f;
  clamp(again, 0.3, 0.2);
  EXPECT_EQ(again, f);
  EXPECT_THROW(clamp(f, 0.0, 0.3), ConfigError);
  EXPECT_THROW(clamp(f, 0.3, -1.0), ConfigError);
}

TEST(Anchor, ReferenceBoxAtOriginIsIdentity) {
  const VectorField f = build_lattice(kCarDims, 0.2);
  const OrientedBox ref{{0, 0, 0}, kCarDims.width, kCarDims.height, kCarDims.length, 0.0};
  const auto w = anchor(f, ref);
  for (std::size_t j = 0; j < f.size(); ++j) EXPECT_NEAR(distance(w[j], f.roots[j]), 0.0, 1e-12);
}

TEST(Anchor, RootsStayInsideFittedBox) {
  Rng rng(2);
  const VectorField f = build_lattice(kCarDims, 0.2);
  for (int t = 0; t < 20; ++t) {
    const OrientedBox b = random_box(rng, kCarDims);
    for (const auto& r : anchor(f, b)) EXPECT_TRUE(box_contains(b.inflated(1e-9), r));
  }
}

TEST(NearestRoots, MatchesBruteForce) {
  Rng rng(3);
  for (const auto& [dims, step] : {std::pair{kCarDims, 0.2}, std::pair{kPersonDims, 0.05}}) {
    const VectorField f = build_lattice(dims, step);
    for (int t = 0; t < 300; ++t) {
      const OrientedBox b = random_box(rng, dims);
      const Point3 p = point_near(rng, b, 0.5);
      const int k = 1 + static_cast<int>(rng.below(4));
      const auto got = nearest_roots(f, b, p, k);
      const auto want = brute_knn(f, b, p, k);
      ASSERT_EQ(got.size(), want.size());
      for (std::size_t j = 0; j < got.size(); ++j) {
        EXPECT_EQ(got[j].root, want[j].root);
        EXPECT_NEAR(got[j].squared_distance, want[j].squared_distance, 1e-12);
      }
    }
  }
}

TEST(NearestRoots, TiesGoToLowerIndex) {
  const VectorField f = build_lattice(kCarDims, 0.2);
  const OrientedBox ref{{0, 0, 0}, kCarDims.width, kCarDims.height, kCarDims.length, 0.0};
  // Midway between two roots along the length axis.
  const Vec3 a = f.roots[f.root_index(4, 3, 2)], b = f.roots[f.root_index(5, 3, 2)];
  const auto nn = nearest_roots(f, ref, (a + b) * 0.5, 2);
  ASSERT_EQ(nn.size(), 2u);
  EXPECT_EQ(nn[0].root, f.root_index(4, 3, 2));
  EXPECT_EQ(nn[1].root, f.root_index(5, 3, 2));
}

TEST(Plan, SelectsBoxPointsWithConvexWeights) {
  Rng rng(4);
  const VectorField f = build_lattice(kCarDims, 0.2);
  const OrientedBox b = random_box(rng, kCarDims);
  const PointCloud c = cloud_around(rng, b, 2000, 0.6);
  const auto pl = plan(c, b, f, kSensor, 2);
  std::vector<std::size_t> inside;
  for (std::size_t i = 0; i < c.size(); ++i)
    if (box_contains(b, c.positions[i])) inside.push_back(i);
  EXPECT_EQ(pl.points, inside);
  ASSERT_EQ(pl.weights.size(), 2 * pl.size());
  for (std::size_t r = 0; r < pl.size(); ++r) {
    EXPECT_NEAR(pl.weights[2 * r] + pl.weights[2 * r + 1], 1.0, 1e-12);
    EXPECT_GE(pl.weights[2 * r], pl.weights[2 * r + 1]);
    EXPECT_NEAR(norm(pl.rays[r]), 1.0, 1e-12);
  }
  const auto wide = plan(c, b, f, kSensor, 2, 0.3);
  EXPECT_GT(wide.size(), pl.size());
}

TEST(Plan, PointOnRootTakesFullWeight) {
  const VectorField f = build_lattice(kCarDims, 0.2);
  const OrientedBox b{{10, 0, 0.8}, kCarDims.width, kCarDims.height, kCarDims.length, 0.4};
  PointCloud c;
  c.push_back(anchor(f, b)[17], 0.5);
  const auto pl = plan(c, b, f, kSensor, 2);
  ASSERT_EQ(pl.size(), 1u);
  EXPECT_EQ(pl.neighbors[0], 17u);
  EXPECT_EQ(pl.weights[0], 1.0);
  EXPECT_EQ(pl.weights[1], 0.0);
}

TEST(Plan, RejectsBadK) {
  const VectorField f = build_lattice(kCarDims, 0.4);
  EXPECT_THROW(plan(PointCloud{}, OrientedBox{}, f, kSensor, 0), ConfigError);
  EXPECT_THROW(plan(PointCloud{}, OrientedBox{}, f, kSensor, static_cast<int>(f.size()) + 1), ConfigError);
}

TEST(Deform, MovesOnlyAlongRaysWithinBound) {
  Rng rng(5);
  const double eps = 0.3;
  for (int t = 0; t < 10; ++t) {
    VectorField f = random_field(rng, kCarDims, 0.2, eps);
    const OrientedBox b = random_box(rng, kCarDims);
    const PointCloud c = cloud_around(rng, b, 1500, 0.5);
    const auto pl = plan(c, b, f, kSensor, 2);
    const PointCloud d = deform(c, pl, f);
    std::vector<bool> planned(c.size(), false);
    for (std::size_t i : pl.points) planned[i] = true;
    for (std::size_t i = 0; i < c.size(); ++i) {
      const Vec3 m = d.positions[i] - c.positions[i];
      if (!planned[i]) {
        EXPECT_EQ(d.positions[i], c.positions[i]);
        EXPECT_EQ(d.intensities[i], c.intensities[i]);
        continue;
      }
      const Vec3 ray = normalized(c.positions[i] - kSensor);
      EXPECT_LE(norm(cross(m, ray)), 1e-12);
      EXPECT_LE(norm(m), std::sqrt(3.0) * eps + 1e-12);
      EXPECT_GE(d.intensities[i], 0.0);
      EXPECT_LE(d.intensities[i], 1.0);
    }
  }
}

TEST(Deform, ZeroFieldIsIdentity) {
  Rng rng(6);
  const VectorField f = build_lattice(kCarDims, 0.2);
  const OrientedBox b = random_box(rng, kCarDims);
  const PointCloud c = cloud_around(rng, b, 500, 0.2);
  EXPECT_EQ(deform(c, plan(c, b, f, kSensor, 2), f), c);
}

TEST(Deform, HandComputedSingleNeighbor) {
  VectorField f = build_lattice(kCarDims, 0.2);
  const OrientedBox b{{10, 0, 1.8}, kCarDims.width, kCarDims.height, kCarDims.length, 0.0};
  PointCloud c;
  c.push_back(anchor(f, b)[40], 0.9);
  f.vectors[40] = {0.1, 0.2, -0.3};
  f.tau_shift[40] = 0.25;
  const auto pl = plan(c, b, f, kSensor, 1);
  const PointCloud d = deform(c, pl, f);
  const Vec3 u = normalized(c.positions[0] - kSensor);
  const Vec3 want = c.positions[0] + u * dot(u, f.vectors[40]);
  EXPECT_NEAR(distance(d.positions[0], want), 0.0, 1e-12);
  EXPECT_EQ(d.intensities[0], 1.0);
  EXPECT_NEAR(deform(c, pl, f, false).intensities[0], 0.9, 0.0);
}

TEST(Deform, EquivariantUnderRotationAboutSensor) {
  Rng rng(7);
  const VectorField f = random_field(rng, kCarDims, 0.2, 0.3);
  const OrientedBox b = random_box(rng, kCarDims);
  const PointCloud c = cloud_around(rng, b, 800, 0.0);
  const double a = rng.uniform(-kPi, kPi);
  auto spin = [&](const Point3& p) { return kSensor + rotate_yaw(p - kSensor, a); };
  OrientedBox rb = b;
  rb.center = spin(b.center);
  rb.yaw = b.yaw + a;
  PointCloud rc = c;
  for (auto& p : rc.positions) p = spin(p);
  const PointCloud d = deform(c, plan(c, b, f, kSensor, 2), f);
  const PointCloud rd = deform(rc, plan(rc, rb, f, kSensor, 2), f);
  ASSERT_EQ(d.size(), rd.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_NEAR(distance(rd.positions[i], spin(d.positions[i])), 0.0, 1e-9);
    EXPECT_NEAR(rd.intensities[i], d.intensities[i], 1e-12);
  }
}

TEST(ShiftJacobian, BlockMatchesFiniteDifferences) {
  Rng rng(8);
  VectorField f = random_field(rng, kCarDims, 0.2, 0.3);
  const OrientedBox b = random_box(rng, kCarDims);
  const PointCloud c = cloud_around(rng, b, 50, 0.0);
  const auto pl = plan(c, b, f, kSensor, 2);
  ASSERT_GT(pl.size(), 10u);
  const auto jac = shift_jacobian(pl);
  const double h = 1e-6;
  for (std::size_t row = 0; row < pl.size(); ++row)
    for (int slot = 0; slot < 2; ++slot) {
      const std::size_t root = pl.neighbors[row * 2 + slot];
      const Mat3 m = jac.local_block(row, slot);
      for (int col = 0; col < 3; ++col) {
        VectorField fp = f, fm = f;
        fp.vectors[root][col] += h;
        fm.vectors[root][col] -= h;
        const Vec3 dp = pl.rays[row] * ray_shift(pl, fp, row);
        const Vec3 dm = pl.rays[row] * ray_shift(pl, fm, row);
        for (int a = 0; a < 3; ++a) EXPECT_NEAR((dp[a] - dm[a]) / (2 * h), m[a][col], 1e-7);
      }
    }
}

TEST(ShiftJacobian, AccumulateMatchesFiniteDifferences) {
  Rng rng(9);
  VectorField f = random_field(rng, kCarDims, 0.4, 0.05);
  const OrientedBox b = random_box(rng, kCarDims);
  PointCloud c = cloud_around(rng, b, 300, 0.0);
  for (auto& t : c.intensities) t = rng.uniform(0.2, 0.8);  // keep the clip inactive
  const auto pl = plan(c, b, f, kSensor, 2);
  // L = sum_i g_i . p_i' + e_i tau_i'
  std::vector<Vec3> g(c.size());
  std::vector<double> e(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    g[i] = {rng.normal(), rng.normal(), rng.normal()};
    e[i] = rng.normal();
  }
  auto loss = [&](const VectorField& ff) {
    const PointCloud d = deform(c, pl, ff);
    double s = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) s += dot(g[i], d.positions[i]) + e[i] * d.intensities[i];
    return s;
  };
  FieldGradient grad(f.size());
  shift_jacobian(pl).accumulate(f, g, e, c.intensities, grad);
  const double h = 1e-6;
  for (int t = 0; t < 60; ++t) {
    const std::size_t j = pl.neighbors[rng.below(pl.neighbors.size())];
    const int ax = static_cast<int>(rng.below(4));
    VectorField fp = f, fm = f;
    if (ax < 3) {
      fp.vectors[j][ax] += h;
      fm.vectors[j][ax] -= h;
    } else {
      fp.tau_shift[j] += h;
      fm.tau_shift[j] -= h;
    }
    const double fd = (loss(fp) - loss(fm)) / (2 * h);
    const double an = ax < 3 ? grad.vectors[j][ax] : grad.tau[j];
    EXPECT_NEAR(an, fd, 1e-5 * std::max(1.0, std::abs(fd)));
  }
}

TEST(ShiftJacobian, ClippedIntensityHasNoGradient) {
  VectorField f = build_lattice(kCarDims, 0.2);
  const OrientedBox b{{10, 0, 1.8}, kCarDims.width, kCarDims.height, kCarDims.length, 0.0};
  PointCloud c;
  c.push_back(anchor(f, b)[3], 0.95);
  f.tau_shift[3] = 0.2;
  const auto pl = plan(c, b, f, kSensor, 1);
  FieldGradient grad(f.size());
  const std::vector<Vec3> gp(1);
  const std::vector<double> gt{1.0};
  shift_jacobian(pl).accumulate(f, gp, gt, c.intensities, grad);
  EXPECT_EQ(grad.tau[3], 0.0);
}

TEST(Bank, LayoutAndSeeds) {
  const FieldBank bank = make_bank(1, "car", 4, 3, kCarDims, 0.4, 0.3, 0.3, true, 11);
  ASSERT_EQ(bank.fields.size(), 12u);
  for (int g = 1; g <= 4; ++g)
    for (int n = 0; n < 3; ++n) {
      const VectorField& f = bank.field(g, n);
      EXPECT_EQ(f.group, g);
      EXPECT_EQ(f.variant, n);
      VectorField want = build_lattice(kCarDims, 0.4);
      init_random(want, field_seed(11, g, n));
      EXPECT_EQ(f.vectors, want.vectors);
    }
  EXPECT_NE(bank.field(1, 0).vectors, bank.field(1, 1).vectors);
  EXPECT_EQ(bank.total_vectors(), 12 * build_lattice(kCarDims, 0.4).size());

  const FieldBank flat = make_bank(1, "car", 2, 1, kCarDims, 0.4, 0.3, 0.3, false, 11);
  for (const auto& f : flat.fields)
    for (double t : f.tau_shift) EXPECT_EQ(t, 0.0);
  EXPECT_THROW(make_bank(1, "car", 0, 1, kCarDims, 0.4, 0.3, 0.3, true, 1), ConfigError);
}
