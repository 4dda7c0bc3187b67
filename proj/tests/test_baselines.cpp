#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "advfield/baselines.hpp"

using namespace advfield;

namespace {

SensorSpec small_sensor() {
  SensorSpec s;
  s.channels = 16;
  s.azimuth_resolution_deg = 1.0;
  return s;
}

Scene car_scene(std::uint64_t seed) {
  for (std::size_t i = 0;; ++i) {
    Scene s = generate_scene(scene_seed(seed, i), Domain::normal, 8, small_sensor());
    if (!baseline_boxes(s, 0, AttackConfig{}).empty()) return s;
  }
}

AttackConfig strong_config(AttackMode mode = AttackMode::seg_untargeted) {
  AttackConfig cfg;
  cfg.mode = mode;
  cfg.iterations = 4;
  cfg.lr = 0.6;  // large enough that the bounds are active
  return cfg;
}

SegNetMini random_seg(std::uint64_t seed) {
  SegNetMini n;
  n.init(seed);
  return n;
}

std::pair<std::size_t, double> brute_nearest(const std::vector<Point3>& pts, const Point3& q) {
  std::size_t best = 0;
  double d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double e = distance(q, pts[i]);
    if (e < d) {
      d = e;
      best = i;
    }
  }
  return {best, d};
}

}  // namespace

TEST(NearestIndex, MatchesBruteForce) {
  Rng rng(1);
  for (double spread : {0.01, 1.0, 50.0}) {
    std::vector<Point3> pts(300);
    for (auto& p : pts) p = {rng.uniform(-spread, spread), rng.uniform(-spread, spread), rng.uniform(0, spread / 4)};
    const NearestIndex index(pts);
    for (int q = 0; q < 300; ++q) {
      const Point3 x{rng.uniform(-2 * spread, 2 * spread), rng.uniform(-2 * spread, 2 * spread),
                     rng.uniform(-spread, spread)};
      const auto [i, d] = index.nearest(x);
      const auto [bi, bd] = brute_nearest(pts, x);
      EXPECT_EQ(d, bd);
      EXPECT_EQ(i, bi);
    }
  }
}

TEST(NearestIndex, DuplicatesResolveToLowerIndex) {
  const std::vector<Point3> pts{{1, 1, 1}, {0, 0, 0}, {1, 1, 1}, {0, 0, 0}};
  const NearestIndex index(pts);
  EXPECT_EQ(index.nearest({0.1, 0, 0}).first, 1u);
  EXPECT_EQ(index.nearest({1, 1, 1.2}).first, 0u);
  EXPECT_THROW(NearestIndex(std::vector<Point3>{}), ConfigError);
}

TEST(Chamfer, MatchesQuadraticOracle) {
  Rng rng(2);
  std::vector<Point3> X(120), Y(90);
  for (auto& p : X) p = {rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(0, 2)};
  for (auto& p : Y) p = {rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(0, 2)};
  double want = 0.0;
  for (const auto& x : X) want += brute_nearest(Y, x).second;
  want /= static_cast<double>(X.size());
  EXPECT_NEAR(chamfer_distance(X, Y), want, 1e-12);
  EXPECT_EQ(chamfer_distance(X, X), 0.0);
  EXPECT_THROW(chamfer_distance(std::vector<Point3>{}, Y), ConfigError);
  EXPECT_THROW(chamfer_distance(X, std::vector<Point3>{}), ConfigError);
}

TEST(CriticalPoints, CountIsTenPercentRoundedUp) {
  EXPECT_EQ(critical_count(0), 0u);
  EXPECT_EQ(critical_count(1), 1u);
  EXPECT_EQ(critical_count(10), 1u);
  EXPECT_EQ(critical_count(11), 2u);
  EXPECT_EQ(critical_count(200), 20u);
}

TEST(CriticalPoints, LargestOffsetsIndependentOfOrder) {
  Rng rng(3);
  std::vector<Point3> pos(57);
  std::vector<Vec3> off(57);
  for (std::size_t i = 0; i < pos.size(); ++i) {
    pos[i] = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    off[i] = {rng.uniform(-0.3, 0.3), 0.0, 0.0};
  }
  off[10] = off[20] = Vec3{0.0, 0.0, 0.9};  // tie at the top
  const auto crit = critical_points(pos, off);
  ASSERT_EQ(crit.size(), 6u);
  double smallest_kept = 1e9;
  for (std::size_t i : crit) smallest_kept = std::min(smallest_kept, norm(off[i]));
  for (std::size_t i = 0; i < pos.size(); ++i) {
    if (std::find(crit.begin(), crit.end(), i) == crit.end()) {
      EXPECT_LE(norm(off[i]), smallest_kept);
    }
  }

  // Reverse the order: the same positions come out.
  std::vector<Point3> rpos(pos.rbegin(), pos.rend());
  std::vector<Vec3> roff(off.rbegin(), off.rend());
  std::vector<Point3> a, b;
  for (std::size_t i : crit) a.push_back(pos[i]);
  for (std::size_t i : critical_points(rpos, roff)) b.push_back(rpos[i]);
  auto lex = [](const Point3& p, const Point3& q) { return std::tie(p.x, p.y, p.z) < std::tie(q.x, q.y, q.z); };
  std::sort(a.begin(), a.end(), lex);
  std::sort(b.begin(), b.end(), lex);
  EXPECT_EQ(a, b);
  EXPECT_THROW(critical_points(pos, std::vector<Vec3>(3)), ConfigError);
}

TEST(BaselineKind, ParseRoundTrip) {
  for (auto k : {BaselineKind::l2, BaselineKind::chamfer, BaselineKind::removal, BaselineKind::generation})
    EXPECT_EQ(parse_baseline_kind(to_string(k)), k);
  EXPECT_EQ(parse_baseline_kind("removal"), BaselineKind::removal);
  EXPECT_THROW(parse_baseline_kind("fgsm"), ConfigError);
}

TEST(L2Attack, OffsetsStayInBoundsAndOnlyObjectPointsMove) {
  const Scene scene = car_scene(10);
  const SegNetMini net = random_seg(4);
  Victim v;
  v.seg = &net;
  const AttackConfig cfg = strong_config();
  const auto boxes = baseline_boxes(scene, 0, cfg);
  const SampleAttackResult r = iterative_gradient_l2(scene, boxes, v, cfg);
  ASSERT_FALSE(r.points.empty());
  EXPECT_EQ(r.loss.size(), 4u);
  EXPECT_LT(r.loss.back(), r.loss.front());
  double biggest = 0.0;
  for (std::size_t k = 0; k < r.points.size(); ++k) {
    biggest = std::max(biggest, norm(r.offsets[k]));
    EXPECT_LE(norm(r.offsets[k]), cfg.epsilon + 1e-12);
    EXPECT_LE(std::abs(r.tau_offsets[k]), cfg.psi);
    const std::size_t i = r.points[k];
    EXPECT_EQ(r.cloud.positions[i], scene.cloud.positions[i] + r.offsets[k]);
    EXPECT_GE(r.cloud.intensities[i], 0.0);
    EXPECT_LE(r.cloud.intensities[i], 1.0);
  }
  EXPECT_GT(biggest, 0.5 * cfg.epsilon);
  std::vector<std::uint8_t> moved(scene.cloud.size(), 0);
  for (std::size_t i : r.points) moved[i] = 1;
  for (std::size_t i = 0; i < scene.cloud.size(); ++i) {
    EXPECT_EQ(r.cloud.semantic[i], scene.cloud.semantic[i]);
    if (!moved[i]) {
      EXPECT_EQ(r.cloud.positions[i], scene.cloud.positions[i]);
      EXPECT_EQ(r.cloud.intensities[i], scene.cloud.intensities[i]);
    }
  }
}

TEST(L2Attack, ZeroIterationsIsIdentity) {
  const Scene scene = car_scene(11);
  const SegNetMini net = random_seg(5);
  Victim v;
  v.seg = &net;
  AttackConfig cfg = strong_config();
  cfg.iterations = 0;
  const auto r = iterative_gradient_l2(scene, baseline_boxes(scene, 0, cfg), v, cfg);
  EXPECT_EQ(r.cloud.positions, scene.cloud.positions);
  EXPECT_EQ(r.cloud.intensities, scene.cloud.intensities);
}

TEST(L2Attack, VictimMustMatchMode) {
  const Scene scene = car_scene(12);
  const SegNetMini net = random_seg(6);
  Victim v;
  v.seg = &net;
  const AttackConfig cfg = strong_config(AttackMode::detection);
  EXPECT_THROW(iterative_gradient_l2(scene, baseline_boxes(scene, 0, cfg), v, cfg), ConfigError);
}

TEST(ChamferAttack, ChamferDistanceBoundedByEpsilon) {
  const Scene scene = car_scene(13);
  const SegNetMini net = random_seg(7);
  Victim v;
  v.seg = &net;
  AttackConfig cfg = strong_config();
  cfg.lr = 2.0;
  const auto boxes = baseline_boxes(scene, 0, cfg);
  const auto r = chamfer_attack(scene, boxes, v, cfg, 0.1);
  ASSERT_FALSE(r.points.empty());
  std::vector<Point3> before, after;
  for (std::size_t i : r.points) {
    before.push_back(scene.cloud.positions[i]);
    after.push_back(r.cloud.positions[i]);
  }
  const double d = chamfer_distance(after, before);
  EXPECT_LE(d, cfg.epsilon + 1e-9);
  EXPECT_GT(d, 0.0);
  for (double t : r.tau_offsets) EXPECT_LE(std::abs(t), cfg.psi);
  EXPECT_THROW(chamfer_attack(scene, boxes, v, cfg, -1.0), ConfigError);
}

TEST(Removal, DropsTenPercentOfEachObject) {
  const Scene scene = car_scene(14);
  const SegNetMini net = random_seg(8);
  Victim v;
  v.seg = &net;
  const AttackConfig cfg = strong_config();
  const auto boxes = baseline_boxes(scene, 0, cfg);
  std::size_t expected_drop = 0;
  for (const auto& o : object_points(scene.cloud, boxes)) expected_drop += critical_count(o.size());
  const PointCloud out = adversarial_removal(scene, boxes, v, cfg);
  ASSERT_EQ(out.size() + expected_drop, scene.cloud.size());
  // The survivors are an order-preserving subsequence of the input.
  std::size_t j = 0;
  for (std::size_t i = 0; i < scene.cloud.size() && j < out.size(); ++i) {
    if (scene.cloud.positions[i] == out.positions[j] && scene.cloud.semantic[i] == out.semantic[j] &&
        scene.cloud.intensities[i] == out.intensities[j])
      ++j;
  }
  EXPECT_EQ(j, out.size());
}

TEST(Generation, AddsCopiesAndKeepsOriginals) {
  const Scene scene = car_scene(15);
  const SegNetMini net = random_seg(9);
  Victim v;
  v.seg = &net;
  const AttackConfig cfg = strong_config();
  const auto boxes = baseline_boxes(scene, 0, cfg);
  std::size_t expected_add = 0;
  for (const auto& o : object_points(scene.cloud, boxes)) expected_add += critical_count(o.size());
  const auto r = adversarial_generation(scene, boxes, v, cfg);
  const std::size_t n = scene.cloud.size();
  ASSERT_EQ(r.cloud.size(), n + expected_add);
  ASSERT_EQ(r.points.size(), expected_add);
  for (std::size_t i = 0; i < n; ++i) {
    EXPECT_EQ(r.cloud.positions[i], scene.cloud.positions[i]);
    EXPECT_EQ(r.cloud.intensities[i], scene.cloud.intensities[i]);
  }
  for (std::size_t k = 0; k < r.points.size(); ++k) {
    EXPECT_EQ(r.points[k], n + k);
    EXPECT_LE(norm(r.offsets[k]), cfg.epsilon + 1e-12);
  }
  // Every copy starts on an original point and keeps its labels.
  const auto crit = scene_critical_points(scene, boxes, v, cfg);
  std::vector<std::size_t> src;
  for (const auto& o : crit) src.insert(src.end(), o.begin(), o.end());
  ASSERT_EQ(src.size(), expected_add);
  for (std::size_t k = 0; k < src.size(); ++k) {
    EXPECT_EQ(r.cloud.semantic[n + k], scene.cloud.semantic[src[k]]);
    EXPECT_EQ(r.cloud.instance[n + k], scene.cloud.instance[src[k]]);
    EXPECT_NEAR(distance(r.cloud.positions[n + k] - r.offsets[k], scene.cloud.positions[src[k]]), 0.0, 1e-12);
  }
}

TEST(BaselineScene, NoTargetsLeavesCloudAlone) {
  Scene scene = car_scene(16);
  const SegNetMini net = random_seg(10);
  Victim v;
  v.seg = &net;
  AttackConfig cfg = strong_config();
  cfg.adversarial_class = classes::kBuilding;
  std::erase_if(scene.objects, [](const ObjectSpec& o) { return o.semantic == classes::kBuilding; });
  for (auto kind : {BaselineKind::l2, BaselineKind::chamfer, BaselineKind::removal, BaselineKind::generation}) {
    const PointCloud out = baseline_attack_scene(kind, scene, 0, v, cfg);
    EXPECT_EQ(out.positions, scene.cloud.positions);
  }
}

TEST(BaselineScene, DetectionVictimRespectsBounds) {
  const Scene scene = car_scene(17);
  DetHeadMini det;
  det.init(11);
  Victim v;
  v.det = &det;
  const AttackConfig cfg = strong_config(AttackMode::detection);
  const auto r = iterative_gradient_l2(scene, baseline_boxes(scene, 0, cfg), v, cfg);
  ASSERT_FALSE(r.points.empty());
  for (const auto& m : r.offsets) EXPECT_LE(norm(m), cfg.epsilon + 1e-12);
}
