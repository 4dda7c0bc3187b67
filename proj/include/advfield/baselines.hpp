#ifndef ADVFIELD_BASELINES_HPP
#define ADVFIELD_BASELINES_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

#include "advfield/attack.hpp"

namespace advfield {

// Sample-specific attacks: every perturbed point owns a free offset that is
// fitted on the very cloud it is evaluated on.

enum class BaselineKind { l2, chamfer, removal, generation };

inline const char* to_string(BaselineKind k) {
  switch (k) {
    case BaselineKind::l2: return "l2";
    case BaselineKind::chamfer: return "chamfer";
    case BaselineKind::removal: return "remove";
    case BaselineKind::generation: return "generate";
  }
  return "?";
}

inline BaselineKind parse_baseline_kind(const std::string& s) {
  if (s == "l2") return BaselineKind::l2;
  if (s == "chamfer") return BaselineKind::chamfer;
  if (s == "remove" || s == "removal") return BaselineKind::removal;
  if (s == "generate" || s == "generation") return BaselineKind::generation;
  throw ConfigError("unknown baseline kind '" + s + "' (expected l2, chamfer, remove, generate)");
}

/// Exact nearest neighbour in a fixed point set. Grid cells are searched in
/// growing Chebyshev shells; ties go to the lower index.
class NearestIndex {
public:
  explicit NearestIndex(std::span<const Point3> points) : pts_(points.begin(), points.end()) {
    if (pts_.empty()) throw ConfigError("nearest-neighbour index over an empty set");
    Vec3 lo = pts_[0], hi = pts_[0];
    for (const auto& p : pts_)
      for (int a = 0; a < 3; ++a) {
        lo[a] = std::min(lo[a], p[a]);
        hi[a] = std::max(hi[a], p[a]);
      }
    const double extent = std::max({hi.x - lo.x, hi.y - lo.y, hi.z - lo.z});
    cell_ = std::max(extent / std::cbrt(static_cast<double>(pts_.size())), 1e-3);
    for (int a = 0; a < 3; ++a) {
      lo_[a] = cell_of(lo[a]);
      hi_[a] = cell_of(hi[a]);
    }
    for (std::size_t i = 0; i < pts_.size(); ++i) cells_[key(cell_of(pts_[i].x), cell_of(pts_[i].y), cell_of(pts_[i].z))].push_back(i);
  }

  /// (index, distance) of the nearest indexed point.
  std::pair<std::size_t, double> nearest(const Point3& q) const {
    const std::int64_t c[3] = {cell_of(q.x), cell_of(q.y), cell_of(q.z)};
    std::int64_t max_ring = 0;
    for (int a = 0; a < 3; ++a) max_ring = std::max({max_ring, std::abs(c[a] - lo_[a]), std::abs(hi_[a] - c[a])});
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::int64_t r = 0; r <= max_ring; ++r) {
      for (std::int64_t dx = -r; dx <= r; ++dx)
        for (std::int64_t dy = -r; dy <= r; ++dy) {
          const bool side = std::abs(dx) == r || std::abs(dy) == r;
          for (std::int64_t dz = -r; dz <= r; dz += side ? 1 : std::max<std::int64_t>(2 * r, 1)) {
            const auto it = cells_.find(key(c[0] + dx, c[1] + dy, c[2] + dz));
            if (it == cells_.end()) continue;
            for (std::size_t i : it->second) {
              const double d = distance(q, pts_[i]);
              if (d < best_d || (d == best_d && i < best)) {
                best_d = d;
                best = i;
              }
            }
          }
        }
      if (best_d <= static_cast<double>(r) * cell_) break;
    }
    return {best, best_d};
  }

private:
  std::int64_t cell_of(double v) const { return static_cast<std::int64_t>(std::floor(v / cell_)); }
  static std::int64_t key(std::int64_t x, std::int64_t y, std::int64_t z) {
    constexpr std::int64_t kBias = 1 << 20;
    return ((x + kBias) << 42) | ((y + kBias) << 21) | (z + kBias);
  }

  std::vector<Point3> pts_;
  double cell_ = 1.0;
  std::int64_t lo_[3] = {0, 0, 0}, hi_[3] = {0, 0, 0};
  std::unordered_map<std::int64_t, std::vector<std::size_t>> cells_;
};

/// One-sided Chamfer distance: mean over x in X of the distance to the
/// nearest y in Y.
inline double chamfer_distance(std::span<const Point3> X, std::span<const Point3> Y) {
  if (X.empty()) throw ConfigError("chamfer distance of an empty set");
  if (Y.empty()) throw ConfigError("chamfer distance to an empty set");
  const NearestIndex index(Y);
  double sum = 0.0;
  for (const auto& x : X) sum += index.nearest(x).second;
  return sum / static_cast<double>(X.size());
}

struct SampleAttackResult {
  PointCloud cloud;                 // deformed copy of the input
  std::vector<std::size_t> points;  // perturbed indices into `cloud`
  std::vector<Vec3> offsets;        // per perturbed point
  std::vector<double> tau_offsets;  // per perturbed point, before clipping
  std::vector<double> loss;         // per iteration
};

namespace detail {

// Mean adversarial loss of the victim on `cloud` with the current offsets,
// and its gradient with respect to every perturbed point.
struct SampleLoss {
  double loss = 0.0;
  std::vector<Vec3> grad_pos;
  std::vector<double> grad_tau;
};

inline SampleLoss sample_loss(const PointCloud& cloud, std::span<const std::size_t> points,
                              std::span<const OrientedBox> boxes, std::span<const OrientedBox> car_boxes,
                              const Victim& victim, const AttackConfig& cfg, double max_shift, bool need_grad) {
  SampleLoss out;
  out.grad_pos.assign(points.size(), Vec3{});
  out.grad_tau.assign(points.size(), 0.0);
  const bool det = cfg.mode == AttackMode::detection;
  const Region region = det ? make_region(cloud, boxes, 0.0, det_context_reach(max_shift), false)
                            : make_region(cloud, boxes, seg_row_reach(max_shift), seg_context_reach(max_shift));
  RegionLoss rl;
  double count = 0.0;
  if (det) {
    const auto mask = det_anchor_mask(boxes, max_shift);
    rl = det_region_loss(*victim.det, region.cloud, mask, car_boxes, need_grad);
    for (auto m : mask) count += m;
  } else {
    rl = seg_region_loss(*victim.seg, region.cloud, region.rows, cfg, need_grad);
    count = static_cast<double>(region.rows.size());
  }
  if (!std::isfinite(rl.loss)) throw NumericError("sample-specific attack loss is not finite");
  const double scale = count > 0.0 ? 1.0 / count : 0.0;
  out.loss = rl.loss * scale;
  if (!need_grad) return out;
  for (std::size_t k = 0; k < points.size(); ++k) {
    const auto it = std::lower_bound(region.index.begin(), region.index.end(), points[k]);
    if (it == region.index.end() || *it != points[k]) continue;
    const auto s = static_cast<std::size_t>(it - region.index.begin());
    out.grad_pos[k] = rl.grad.positions[s] * scale;
    out.grad_tau[k] = rl.grad.intensities[s] * scale;
  }
  return out;
}

inline void apply_offsets(PointCloud& out, const PointCloud& clean, std::span<const std::size_t> points,
                          std::span<const Vec3> offsets, std::span<const double> tau, double scale = 1.0) {
  for (std::size_t k = 0; k < points.size(); ++k) {
    out.positions[points[k]] = clean.positions[points[k]] + offsets[k] * scale;
    out.intensities[points[k]] = std::clamp(clean.intensities[points[k]] + tau[k], 0.0, 1.0);
  }
}

inline double chamfer_of(const PointCloud& clean, std::span<const std::size_t> points, std::span<const Vec3> offsets,
                         const NearestIndex& original, double scale) {
  double sum = 0.0;
  for (std::size_t k = 0; k < points.size(); ++k)
    sum += original.nearest(clean.positions[points[k]] + offsets[k] * scale).second;
  return sum / static_cast<double>(points.size());
}

}  // namespace detail

/// Adam on free per-point offsets of `points` (all inside `boxes`). With
/// lambda < 0 each spatial offset is norm-clipped to epsilon (L2 attack);
/// otherwise lambda * Chamfer(deformed, original) joins the loss and all
/// offsets are rescaled together whenever that distance exceeds epsilon.
/// Intensity offsets are clipped to psi in both cases.
inline SampleAttackResult sample_specific_attack(const PointCloud& cloud, std::span<const std::size_t> points,
                                                 std::span<const OrientedBox> boxes,
                                                 std::span<const OrientedBox> car_boxes, const Victim& victim,
                                                 const AttackConfig& cfg, double lambda = -1.0) {
  cfg.validate();
  if (cfg.mode == AttackMode::detection ? victim.det == nullptr : victim.seg == nullptr)
    throw ConfigError("baseline attack: victim does not match the attack mode");
  SampleAttackResult res;
  res.cloud = cloud;
  res.points.assign(points.begin(), points.end());
  res.offsets.assign(points.size(), Vec3{});
  res.tau_offsets.assign(points.size(), 0.0);
  if (points.empty() || cfg.iterations == 0) return res;
  const bool chamfer = lambda >= 0.0;
  std::vector<Point3> original;
  for (std::size_t i : points) original.push_back(cloud.positions[i]);
  const NearestIndex nearest(original);

  std::vector<double> flat(4 * points.size(), 0.0), grad(4 * points.size(), 0.0);
  for (int it = 0; it < cfg.iterations; ++it) {
    double max_shift = 0.0;
    for (const auto& m : res.offsets) max_shift = std::max(max_shift, norm(m));
    const detail::SampleLoss sl =
        detail::sample_loss(res.cloud, res.points, boxes, car_boxes, victim, cfg, max_shift, true);
    double loss = sl.loss;
    for (std::size_t k = 0; k < points.size(); ++k) {
      Vec3 g = sl.grad_pos[k];
      if (chamfer) {
        const Point3 x = res.cloud.positions[points[k]];
        const auto [j, d] = nearest.nearest(x);
        loss += lambda * d / static_cast<double>(points.size());
        if (d > 0.0) g += (x - original[j]) * (lambda / (d * static_cast<double>(points.size())));
      }
      if (!is_finite(g) || !std::isfinite(sl.grad_tau[k])) throw NumericError("baseline attack gradient is not finite");
      grad[4 * k] = g.x;
      grad[4 * k + 1] = g.y;
      grad[4 * k + 2] = g.z;
      grad[4 * k + 3] = cfg.intensity ? sl.grad_tau[k] : 0.0;
    }
    res.loss.push_back(loss);
    // Normalized gradient step with linear decay: the most sensitive point
    // moves by lr * (T - it) / T.
    const double step = cfg.lr * static_cast<double>(cfg.iterations - it) / static_cast<double>(cfg.iterations);
    double gmax = 0.0;
    for (std::size_t k = 0; k < points.size(); ++k)
      gmax = std::max(gmax, std::sqrt(grad[4 * k] * grad[4 * k] + grad[4 * k + 1] * grad[4 * k + 1] +
                                      grad[4 * k + 2] * grad[4 * k + 2] + grad[4 * k + 3] * grad[4 * k + 3]));
    if (gmax > 0.0)
      for (std::size_t j = 0; j < flat.size(); ++j) flat[j] -= step * grad[j] / gmax;
    for (std::size_t k = 0; k < points.size(); ++k) {
      Vec3 m{flat[4 * k], flat[4 * k + 1], flat[4 * k + 2]};
      if (!chamfer) {
        const double n = norm(m);
        if (n > cfg.epsilon) m *= cfg.epsilon / n;
      }
      res.offsets[k] = m;
      res.tau_offsets[k] = cfg.intensity ? std::clamp(flat[4 * k + 3], -cfg.psi, cfg.psi) : 0.0;
    }
    if (chamfer && detail::chamfer_of(cloud, points, res.offsets, nearest, 1.0) > cfg.epsilon) {
      double lo = 0.0, hi = 1.0;
      for (int b = 0; b < 60; ++b) {
        const double mid = 0.5 * (lo + hi);
        (detail::chamfer_of(cloud, points, res.offsets, nearest, mid) <= cfg.epsilon ? lo : hi) = mid;
      }
      for (auto& m : res.offsets) m *= lo;
    }
    for (std::size_t k = 0; k < points.size(); ++k) {
      flat[4 * k] = res.offsets[k].x;
      flat[4 * k + 1] = res.offsets[k].y;
      flat[4 * k + 2] = res.offsets[k].z;
      flat[4 * k + 3] = res.tau_offsets[k];
    }
    detail::apply_offsets(res.cloud, cloud, res.points, res.offsets, res.tau_offsets);
  }
  return res;
}

/// Indices of points inside any box (inflated by the selection margin),
/// grouped by the first box that holds them.
inline std::vector<std::vector<std::size_t>> object_points(const PointCloud& cloud, std::span<const OrientedBox> boxes) {
  std::vector<std::vector<std::size_t>> out(boxes.size());
  std::vector<OrientedBox> sel;
  for (const auto& b : boxes) sel.push_back(b.inflated(kSelectMargin));
  for (std::size_t i = 0; i < cloud.size(); ++i)
    for (std::size_t b = 0; b < sel.size(); ++b)
      if (box_contains(sel[b], cloud.positions[i])) {
        out[b].push_back(i);
        break;
      }
  return out;
}

inline std::size_t critical_count(std::size_t n) { return (n + 9) / 10; }

/// The ceil(n/10) points with the largest offset norms. Ties are broken by
/// position, so the selected set does not depend on point order. Returns
/// indices into `positions`.
inline std::vector<std::size_t> critical_points(std::span<const Point3> positions, std::span<const Vec3> offsets) {
  if (positions.size() != offsets.size()) throw ConfigError("critical points: positions and offsets differ in size");
  std::vector<std::size_t> idx(positions.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto key = [&](std::size_t i) {
    const Point3& p = positions[i];
    return std::make_tuple(-norm(offsets[i]), p.x, p.y, p.z, i);
  };
  const std::size_t k = critical_count(idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
  idx.resize(k);
  return idx;
}

/// Objects of the adversarial class in `scene` that a baseline perturbs.
inline std::vector<OrientedBox> baseline_boxes(const Scene& scene, std::size_t scene_index, const AttackConfig& cfg) {
  std::vector<OrientedBox> out;
  for (const auto& t : target_boxes(scene, cfg, hash_combine(cfg.seed, scene_index))) out.push_back(t.box);
  return out;
}

inline SampleAttackResult iterative_gradient_l2(const Scene& scene, std::span<const OrientedBox> boxes,
                                                const Victim& victim, const AttackConfig& cfg) {
  std::vector<std::size_t> pts;
  for (const auto& o : object_points(scene.cloud, boxes)) pts.insert(pts.end(), o.begin(), o.end());
  std::sort(pts.begin(), pts.end());
  return sample_specific_attack(scene.cloud, pts, boxes, scene.boxes_of(classes::kCar), victim, cfg);
}

inline SampleAttackResult chamfer_attack(const Scene& scene, std::span<const OrientedBox> boxes, const Victim& victim,
                                         const AttackConfig& cfg, double lambda = 0.1) {
  if (!(lambda >= 0.0)) throw ConfigError("chamfer weight must be non-negative");
  std::vector<std::size_t> pts;
  for (const auto& o : object_points(scene.cloud, boxes)) pts.insert(pts.end(), o.begin(), o.end());
  std::sort(pts.begin(), pts.end());
  return sample_specific_attack(scene.cloud, pts, boxes, scene.boxes_of(classes::kCar), victim, cfg, lambda);
}

/// Critical points of each object under an L2 attack, as scene indices.
inline std::vector<std::vector<std::size_t>> scene_critical_points(const Scene& scene,
                                                                   std::span<const OrientedBox> boxes,
                                                                   const Victim& victim, const AttackConfig& cfg) {
  const SampleAttackResult l2 = iterative_gradient_l2(scene, boxes, victim, cfg);
  std::vector<std::vector<std::size_t>> out;
  for (const auto& obj : object_points(scene.cloud, boxes)) {
    std::vector<Point3> pos;
    std::vector<Vec3> off;
    for (std::size_t i : obj) {
      pos.push_back(scene.cloud.positions[i]);
      off.push_back(l2.offsets[static_cast<std::size_t>(
          std::lower_bound(l2.points.begin(), l2.points.end(), i) - l2.points.begin())]);
    }
    std::vector<std::size_t> crit;
    if (!obj.empty())
      for (std::size_t c : critical_points(pos, off)) crit.push_back(obj[c]);
    std::sort(crit.begin(), crit.end());
    out.push_back(std::move(crit));
  }
  return out;
}

/// Drops the critical points of every object (labels go with them).
inline PointCloud adversarial_removal(const Scene& scene, std::span<const OrientedBox> boxes, const Victim& victim,
                                      const AttackConfig& cfg) {
  std::vector<std::uint8_t> drop(scene.cloud.size(), 0);
  for (const auto& obj : scene_critical_points(scene, boxes, victim, cfg))
    for (std::size_t i : obj) drop[i] = 1;
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < drop.size(); ++i)
    if (!drop[i]) keep.push_back(i);
  return scene.cloud.subset(keep);
}

/// Appends a copy of every critical point, then runs the L2 attack on the
/// copies only. Original points stay bit-identical.
inline SampleAttackResult adversarial_generation(const Scene& scene, std::span<const OrientedBox> boxes,
                                                 const Victim& victim, const AttackConfig& cfg) {
  PointCloud grown = scene.cloud;
  std::vector<std::size_t> added;
  for (const auto& obj : scene_critical_points(scene, boxes, victim, cfg))
    for (std::size_t i : obj) {
      added.push_back(grown.size());
      grown.push_back(scene.cloud.positions[i], scene.cloud.intensities[i], scene.cloud.semantic[i],
                      scene.cloud.instance[i]);
    }
  return sample_specific_attack(grown, added, boxes, scene.boxes_of(classes::kCar), victim, cfg);
}

/// The deformed cloud (with its labels) for one baseline on one scene.
inline PointCloud baseline_attack_scene(BaselineKind kind, const Scene& scene, std::size_t scene_index,
                                        const Victim& victim, const AttackConfig& cfg, double lambda = 0.1) {
  const auto boxes = baseline_boxes(scene, scene_index, cfg);
  if (boxes.empty()) return scene.cloud;
  switch (kind) {
    case BaselineKind::l2: return iterative_gradient_l2(scene, boxes, victim, cfg).cloud;
    case BaselineKind::chamfer: return chamfer_attack(scene, boxes, victim, cfg, lambda).cloud;
    case BaselineKind::removal: return adversarial_removal(scene, boxes, victim, cfg);
    case BaselineKind::generation: return adversarial_generation(scene, boxes, victim, cfg).cloud;
  }
  return scene.cloud;
}

}  // namespace advfield

#endif
