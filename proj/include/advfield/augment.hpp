#ifndef ADVFIELD_AUGMENT_HPP
#define ADVFIELD_AUGMENT_HPP

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "advfield/attack.hpp"

namespace advfield {

// ---------------------------------------------------------------------------
// Adversarial augmentation

struct AugmentStats {
  std::atomic<std::size_t> deformed{0};
  std::atomic<std::size_t> no_object{0};  // scenes without an eligible object
};

/// Which object, group and variant one augmentation used.
struct AugmentChoice {
  std::size_t object = 0;  // index into scene.objects
  int group = 1;
  int variant = 0;
};

/// Deforms one randomly chosen object of the bank's class with a randomly
/// chosen variant of its group's field. Only that object's own points move;
/// labels and every other point are untouched. Scenes without an object
/// that has points are left as they are.
inline std::optional<SceneChange> augment_scene(Scene& scene, const FieldBank& bank, Rng& rng, int k = 2,
                                                AugmentStats* stats = nullptr, AugmentChoice* choice = nullptr) {
  if (bank.fields.empty()) return std::nullopt;
  const Point3 sensor = scene.sensor.origin();
  std::vector<std::size_t> eligible;
  for (std::size_t o = 0; o < scene.objects.size(); ++o) {
    const ObjectSpec& obj = scene.objects[o];
    if (obj.semantic != bank.class_id) continue;
    if (std::hypot(obj.box.center.x - sensor.x, obj.box.center.y - sensor.y) < 1e-6) continue;
    const bool has_points = std::any_of(scene.cloud.instance.begin(), scene.cloud.instance.end(),
                                        [&](std::uint16_t id) { return id == obj.instance; });
    if (has_points) eligible.push_back(o);
  }
  if (eligible.empty()) {
    if (stats) ++stats->no_object;
    return std::nullopt;
  }
  AugmentChoice c;
  c.object = eligible[rng.below(eligible.size())];
  c.variant = static_cast<int>(rng.below(static_cast<std::uint64_t>(bank.variants)));
  const ObjectSpec& obj = scene.objects[c.object];
  c.group = group_of(obj.box, sensor, GroupScheme{bank.groups});
  const VectorField& field = bank.fields[bank.index(c.group, c.variant)];
  DeformationPlan pl = plan(scene.cloud, obj.box, field, sensor, k, kSelectMargin);
  DeformationPlan own = pl;
  own.points.clear();
  own.neighbors.clear();
  own.weights.clear();
  own.rays.clear();
  for (std::size_t r = 0; r < pl.size(); ++r) {
    if (scene.cloud.instance[pl.points[r]] != obj.instance) continue;
    own.points.push_back(pl.points[r]);
    own.rays.push_back(pl.rays[r]);
    for (int j = 0; j < pl.k; ++j) {
      own.neighbors.push_back(pl.neighbors[r * pl.k + j]);
      own.weights.push_back(pl.weights[r * pl.k + j]);
    }
  }
  deform_in_place(scene.cloud, own, field, bank.intensity);
  if (stats) ++stats->deformed;
  if (choice) *choice = c;
  return SceneChange{obj.box, std::sqrt(3.0) * bank.epsilon + kSelectMargin};
}

/// Training hook applying augment_scene once per scene per epoch.
inline SceneHook augmentation_hook(const FieldBank& bank, int k = 2, AugmentStats* stats = nullptr) {
  return [&bank, k, stats](Scene& scene, Rng& rng) { return augment_scene(scene, bank, rng, k, stats); };
}

/// Segmenter training with adversarial augmentation on top of the standard
/// augmentations. A null or empty bank gives plain training.
inline SegNetMini train_seg_augmented(std::span<const Scene> data, const FieldBank* bank, const SegTrainConfig& cfg,
                                      int k = 2, TrainLog* log = nullptr, AugmentStats* stats = nullptr) {
  if (!bank || bank->fields.empty()) return train_seg(data, cfg, {}, log);
  return train_seg(data, cfg, augmentation_hook(*bank, k, stats), log);
}

inline DetHeadMini train_det_augmented(std::span<const Scene> data, const FieldBank* bank, const DetTrainConfig& cfg,
                                       int k = 2, TrainLog* log = nullptr, AugmentStats* stats = nullptr) {
  if (!bank || bank->fields.empty()) return train_det(data, cfg, {}, log);
  return train_det(data, cfg, augmentation_hook(*bank, k, stats), log);
}

// ---------------------------------------------------------------------------
// Evaluation

inline ConfusionMatrix seg_confusion(const SegNetMini& net, std::span<const Scene> scenes) {
  std::vector<ConfusionMatrix> cms(scenes.size(), ConfusionMatrix(net.num_classes()));
  parallel_for(scenes.size(), [&](std::size_t s) { cms[s].add(scenes[s].cloud.semantic, net.predict(scenes[s].cloud)); });
  ConfusionMatrix total(net.num_classes());
  for (const auto& c : cms) total += c;
  return total;
}

inline std::vector<std::vector<DetProposal>> detect_all(const DetHeadMini& net, std::span<const PointCloud> clouds,
                                                        double min_score = 0.1) {
  std::vector<std::vector<DetProposal>> out(clouds.size());
  parallel_for(clouds.size(), [&](std::size_t s) { out[s] = nms(net.forward_det(clouds[s]), min_score); });
  return out;
}

inline std::vector<PointCloud> clouds_of(std::span<const Scene> scenes) {
  std::vector<PointCloud> out;
  out.reserve(scenes.size());
  for (const auto& s : scenes) out.push_back(s.cloud);
  return out;
}

inline std::vector<std::vector<OrientedBox>> visible_car_boxes(std::span<const Scene> scenes) {
  std::vector<std::vector<OrientedBox>> out;
  out.reserve(scenes.size());
  for (const auto& s : scenes) out.push_back(visible_cars(s));
  return out;
}

// ---------------------------------------------------------------------------
// Intensity robustness

enum class IntensityTransform { none, all_zero, gaussian, uniform, noise_positive, noise_symmetric, shift };

inline constexpr std::array<IntensityTransform, 7> kIntensityTransforms = {
    IntensityTransform::none,           IntensityTransform::all_zero,        IntensityTransform::gaussian,
    IntensityTransform::uniform,        IntensityTransform::noise_positive,  IntensityTransform::noise_symmetric,
    IntensityTransform::shift};

inline const char* to_string(IntensityTransform t) {
  switch (t) {
    case IntensityTransform::none: return "none";
    case IntensityTransform::all_zero: return "all 0";
    case IntensityTransform::gaussian: return "Gaussian noise (std: 0.3)";
    case IntensityTransform::uniform: return "uniform random [0, 1]";
    case IntensityTransform::noise_positive: return "uniform random noise +[0,+0.3]";
    case IntensityTransform::noise_symmetric: return "uniform random noise +[-0.3,+0.3]";
    case IntensityTransform::shift: return "random shift +-0.3";
  }
  return "?";
}

/// Rewrites intensities only, then clips them to [0, 1]. "shift" adds one
/// value per cloud, -0.3 or +0.3 with equal odds.
inline void apply_intensity_transform(PointCloud& cloud, IntensityTransform t, Rng& rng) {
  auto& tau = cloud.intensities;
  switch (t) {
    case IntensityTransform::none: return;
    case IntensityTransform::all_zero: std::fill(tau.begin(), tau.end(), 0.0); return;
    case IntensityTransform::gaussian:
      for (auto& v : tau) v += 0.3 * rng.normal();
      break;
    case IntensityTransform::uniform:
      for (auto& v : tau) v = rng.uniform();
      break;
    case IntensityTransform::noise_positive:
      for (auto& v : tau) v += rng.uniform(0.0, 0.3);
      break;
    case IntensityTransform::noise_symmetric:
      for (auto& v : tau) v += rng.uniform(-0.3, 0.3);
      break;
    case IntensityTransform::shift: {
      const double d = rng.below(2) ? 0.3 : -0.3;
      for (auto& v : tau) v += d;
      break;
    }
  }
  for (auto& v : tau) v = std::clamp(v, 0.0, 1.0);
}

struct IntensityRow {
  IntensityTransform transform = IntensityTransform::none;
  IouReport report;   // segmentation victims
  double ap = 0.0;    // detection victims, AP at IoU 0.5 on visible cars
};

inline std::vector<IntensityRow> intensity_suite(const Victim& victim, std::span<const Scene> scenes,
                                                 std::uint64_t seed) {
  std::vector<IntensityRow> rows;
  for (std::size_t t = 0; t < kIntensityTransforms.size(); ++t) {
    const IntensityTransform tr = kIntensityTransforms[t];
    std::vector<PointCloud> clouds = clouds_of(scenes);
    for (std::size_t s = 0; s < clouds.size(); ++s) {
      Rng rng(hash_combine(hash_combine(seed, t), s));
      apply_intensity_transform(clouds[s], tr, rng);
    }
    IntensityRow row;
    row.transform = tr;
    if (victim.seg) {
      std::vector<ConfusionMatrix> cms(clouds.size(), ConfusionMatrix(victim.seg->num_classes()));
      parallel_for(clouds.size(), [&](std::size_t s) { cms[s].add(clouds[s].semantic, victim.seg->predict(clouds[s])); });
      ConfusionMatrix total(victim.seg->num_classes());
      for (const auto& c : cms) total += c;
      row.report = iou_report(total);
    } else if (victim.det) {
      row.ap = average_precision(detect_all(*victim.det, clouds), visible_car_boxes(scenes), 0.5);
    } else {
      throw ConfigError("intensity suite needs a victim");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Field activity

/// Box face closest to a lattice root, by normalized coordinate.
enum class Face { front, back, left, right, top, bottom };

inline const char* to_string(Face f) {
  switch (f) {
    case Face::front: return "front";
    case Face::back: return "back";
    case Face::left: return "left";
    case Face::right: return "right";
    case Face::top: return "top";
    case Face::bottom: return "bottom";
  }
  return "?";
}

inline Face face_of(const Vec3& root, const FieldDims& dims) {
  const double ax = std::abs(root.x) / (0.5 * dims.length);
  const double ay = std::abs(root.y) / (0.5 * dims.width);
  const double az = std::abs(root.z) / (0.5 * dims.height);
  if (ax >= ay && ax >= az) return root.x >= 0.0 ? Face::front : Face::back;
  if (ay >= az) return root.y >= 0.0 ? Face::left : Face::right;
  return root.z >= 0.0 ? Face::top : Face::bottom;
}

struct FaceStats {
  std::size_t roots = 0;
  std::size_t active = 0;
  std::size_t toward = 0;  // active vectors pulling points toward the sensor
  std::size_t away = 0;
};

struct FieldStats {
  int group = 1;
  int variant = 0;
  std::size_t roots = 0;
  std::size_t active = 0;
  std::array<FaceStats, 6> faces{};
};

/// Per field: vectors longer than their own random initialization count as
/// active; each active vector is projected on the ray of the group's
/// reference incidence (sensor to object) and tallied as toward (negative)
/// or away from the sensor, per box face.
inline std::vector<FieldStats> analyze_fields(const FieldBank& bank, std::uint64_t init_seed) {
  std::vector<FieldStats> out;
  const GroupScheme scheme{bank.groups};
  for (const VectorField& f : bank.fields) {
    VectorField init = build_lattice(f.dims, f.step);
    if (init.size() != f.size()) throw ConfigError("field lattice does not match its dimensions");
    init_random(init, field_seed(init_seed, f.group, f.variant));
    const double beta = scheme.reference_angle(f.group);
    const Vec3 ray{std::cos(beta), std::sin(beta), 0.0};
    FieldStats st;
    st.group = f.group;
    st.variant = f.variant;
    st.roots = f.size();
    for (std::size_t j = 0; j < f.size(); ++j) {
      FaceStats& fs = st.faces[static_cast<std::size_t>(face_of(f.roots[j], f.dims))];
      ++fs.roots;
      if (!(norm(f.vectors[j]) > norm(init.vectors[j]))) continue;
      ++st.active;
      ++fs.active;
      const double s = dot(ray, f.vectors[j]);
      if (s < 0.0)
        ++fs.toward;
      else if (s > 0.0)
        ++fs.away;
    }
    out.push_back(st);
  }
  return out;
}

/// Long format: one row per field and face, plus an "all" row per field.
inline std::string field_stats_csv(const std::vector<FieldStats>& stats) {
  std::string out = "group,variant,face,roots,active,toward,away\n";
  char buf[160];
  for (const auto& st : stats) {
    std::size_t toward = 0, away = 0;
    for (std::size_t f = 0; f < st.faces.size(); ++f) {
      const FaceStats& fs = st.faces[f];
      toward += fs.toward;
      away += fs.away;
      std::snprintf(buf, sizeof buf, "%d,%d,%s,%zu,%zu,%zu,%zu\n", st.group, st.variant,
                    to_string(static_cast<Face>(f)), fs.roots, fs.active, fs.toward, fs.away);
      out += buf;
    }
    std::snprintf(buf, sizeof buf, "%d,%d,all,%zu,%zu,%zu,%zu\n", st.group, st.variant, st.roots, st.active, toward,
                  away);
    out += buf;
  }
  return out;
}

}  // namespace advfield

#endif
