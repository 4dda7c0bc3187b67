#ifndef ADVFIELD_ATTACK_HPP
#define ADVFIELD_ATTACK_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "advfield/detector.hpp"
#include "advfield/metrics.hpp"
#include "advfield/rotation_groups.hpp"
#include "advfield/segmenter.hpp"
#include "advfield/simulator.hpp"
#include "advfield/vector_field.hpp"

namespace advfield {

enum class AttackMode { detection, seg_untargeted, seg_targeted };
enum class BoxSource { ground_truth, axis_aligned };

inline const char* to_string(AttackMode m) {
  switch (m) {
    case AttackMode::detection: return "detection";
    case AttackMode::seg_untargeted: return "untargeted";
    case AttackMode::seg_targeted: return "targeted";
  }
  return "untargeted";
}

inline AttackMode parse_attack_mode(const std::string& s) {
  if (s == "detection") return AttackMode::detection;
  if (s == "untargeted") return AttackMode::seg_untargeted;
  if (s == "targeted") return AttackMode::seg_targeted;
  throw ConfigError("unknown attack mode '" + s + "' (expected untargeted, targeted or detection)");
}

inline const char* to_string(BoxSource b) { return b == BoxSource::ground_truth ? "gt" : "axis-aligned"; }

inline BoxSource parse_box_source(const std::string& s) {
  if (s == "gt") return BoxSource::ground_truth;
  if (s == "axis-aligned") return BoxSource::axis_aligned;
  throw ConfigError("unknown box source '" + s + "' (expected gt or axis-aligned)");
}

struct AttackConfig {
  AttackMode mode = AttackMode::seg_untargeted;
  int adversarial_class = classes::kCar;
  int target_class = -1;
  double epsilon = 0.3;
  double psi = 0.3;
  double lr = 0.01;
  int iterations = 50;
  int k = 2;
  int groups = 12;
  int variants = 6;
  double step = 0.2;
  FieldDims dims = kCarDims;
  bool intensity = true;
  BoxSource boxes = BoxSource::ground_truth;
  double drop_fraction = 0.0;
  std::uint64_t seed = 0;
  int batch_scenes = 4;

  void validate() const {
    if (!(epsilon > 0.0) || !(psi > 0.0)) throw ConfigError("epsilon and psi must be positive");
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (iterations < 0) throw ConfigError("iterations must be non-negative");
    if (k < 1) throw ConfigError("k must be at least 1");
    if (groups < 1 || variants < 1) throw ConfigError("G and N must be positive");
    if (batch_scenes < 1) throw ConfigError("batch size must be positive");
    if (!(drop_fraction >= 0.0 && drop_fraction < 1.0)) throw ConfigError("box drop fraction must lie in [0, 1)");
    if (adversarial_class < 0 || adversarial_class >= static_cast<int>(classes::kCount))
      throw ConfigError("adversarial class out of range");
    if (mode == AttackMode::seg_targeted) {
      if (target_class < 0 || target_class >= static_cast<int>(classes::kCount))
        throw ConfigError("targeted attack needs a valid target class");
      if (target_class == adversarial_class) throw ConfigError("target class must differ from the adversarial class");
    }
  }
};

struct AttackTrace {
  std::vector<double> loss;          // per iteration, summed over scenes
  std::vector<double> probe_metric;  // per iteration, after its updates
  double probe_clean = 0.0;
  std::vector<std::string> warnings;
};

inline std::string trace_csv(const AttackTrace& t) {
  std::string out = "iteration,loss,probe_metric\n";
  char buf[128];
  for (std::size_t i = 0; i < t.loss.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", i, t.loss[i], i < t.probe_metric.size() ? t.probe_metric[i] : 0.0);
    out += buf;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Losses

/// Sum over masked points of log rho at the true class (floored at 1e-12).
/// Writes d loss / d logits when `dlogits` is non-null.
inline double loss_untargeted(std::span<const double> probs, std::span<const std::uint16_t> labels, int num_classes,
                              std::span<const std::uint8_t> mask = {}, std::vector<double>* dlogits = nullptr) {
  const std::size_t n = labels.size();
  if (probs.size() != n * num_classes) throw ConfigError("loss_untargeted: shape mismatch");
  if (dlogits) dlogits->assign(probs.size(), 0.0);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask.empty() && !mask[i]) continue;
    const double* r = &probs[i * num_classes];
    const std::uint16_t y = labels[i];
    if (y >= num_classes) throw ConfigError("loss_untargeted: label out of range");
    loss += std::log(std::max(r[y], 1e-12));
    if (dlogits && r[y] >= 1e-12)
      for (int c = 0; c < num_classes; ++c) (*dlogits)[i * num_classes + c] = (c == y ? 1.0 : 0.0) - r[c];
  }
  return loss;
}

/// -sum over points labelled `adversarial` of log rho at `target`.
inline double loss_targeted(std::span<const double> probs, std::span<const std::uint16_t> labels, int num_classes,
                            int adversarial, int target, std::vector<double>* dlogits = nullptr,
                            std::vector<std::string>* warnings = nullptr) {
  const std::size_t n = labels.size();
  if (probs.size() != n * num_classes) throw ConfigError("loss_targeted: shape mismatch");
  if (dlogits) dlogits->assign(probs.size(), 0.0);
  double loss = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] != adversarial) continue;
    ++count;
    const double* r = &probs[i * num_classes];
    loss -= std::log(std::max(r[target], 1e-12));
    if (dlogits && r[target] >= 1e-12)
      for (int c = 0; c < num_classes; ++c) (*dlogits)[i * num_classes + c] = r[c] - (c == target ? 1.0 : 0.0);
  }
  if (count == 0 && warnings) warnings->push_back("targeted loss: no points of the adversarial class");
  return loss;
}

/// Sum over proposals with s > 0.1 of -IoU(q*, q) log(1 - s), q* being the
/// best-overlapping ground truth. IoU is a constant weight, so
/// d loss / d logit = IoU * s. `mask` restricts the proposals considered.
inline double loss_detection(std::span<const DetProposal> proposals, std::span<const OrientedBox> gt,
                             std::vector<double>* dlogit = nullptr, std::span<const std::uint8_t> mask = {}) {
  if (dlogit) dlogit->assign(proposals.size(), 0.0);
  double loss = 0.0;
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    const DetProposal& p = proposals[i];
    if (!(p.score > 0.1)) continue;
    double best = 0.0;
    for (const auto& g : gt) best = std::max(best, iou_3d(p.box, g));
    if (best <= 0.0) continue;
    // log(1 - s) = -softplus(logit), stable for confident proposals.
    const double softplus = std::max(p.logit, 0.0) + std::log1p(std::exp(-std::abs(p.logit)));
    loss += best * softplus;
    if (dlogit) (*dlogit)[i] = best * p.score;
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Anchoring

/// Keeps boxes that contain at least one point of `cls`, then drops a
/// deterministic uniform `fraction` of the survivors (rounded to nearest).
/// Returns kept indices in input order.
inline std::vector<std::size_t> drop_boxes(std::span<const OrientedBox> boxes, const PointCloud& cloud,
                                           std::uint16_t cls, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw ConfigError("drop fraction must lie in [0, 1)");
  std::vector<std::size_t> valid;
  for (std::size_t b = 0; b < boxes.size(); ++b) {
    bool has = false;
    for (std::size_t i = 0; i < cloud.size() && !has; ++i)
      has = cloud.semantic[i] == cls && box_contains(boxes[b], cloud.positions[i]);
    if (has) valid.push_back(b);
  }
  const auto drop = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(valid.size())));
  if (drop == 0) return valid;
  std::vector<std::size_t> order = valid;
  Rng rng(hash_combine(seed, 0xD809));
  rng.shuffle(order);
  order.resize(order.size() - drop);
  std::sort(order.begin(), order.end());
  return order;
}

struct TargetBox {
  OrientedBox box;
  int group = 1;
};

/// Margin added around anchor boxes when selecting points to deform.
inline constexpr double kSelectMargin = 0.01;

/// Objects of the adversarial class in one scene, with their rotation
/// groups, after the box filter and drop-out.
inline std::vector<TargetBox> target_boxes(const Scene& scene, const AttackConfig& cfg, std::uint64_t scene_key) {
  const Point3 sensor = scene.sensor.origin();
  const auto cls = static_cast<std::uint16_t>(cfg.adversarial_class);
  std::vector<OrientedBox> boxes;
  if (cfg.boxes == BoxSource::ground_truth) {
    boxes = scene.boxes_of(cls);
  } else {
    std::vector<std::uint16_t> ids;
    for (std::size_t i = 0; i < scene.cloud.size(); ++i)
      if (scene.cloud.semantic[i] == cls && scene.cloud.instance[i] != 0) ids.push_back(scene.cloud.instance[i]);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    for (auto id : ids)
      if (auto b = axis_aligned_box_of_instance(scene.cloud, id, kSelectMargin)) boxes.push_back(*b);
  }
  const auto keep = drop_boxes(boxes, scene.cloud, cls, cfg.drop_fraction, scene_key);
  const GroupScheme scheme{cfg.groups};
  std::vector<TargetBox> out;
  for (std::size_t b : keep) {
    const OrientedBox& box = boxes[b];
    if (std::hypot(box.center.x - sensor.x, box.center.y - sensor.y) < 1e-6) continue;
    const int g = cfg.boxes == BoxSource::ground_truth ? group_of(box, sensor, scheme)
                                                       : group_of_axis_aligned(box, sensor, scheme);
    out.push_back({box, g});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Influence regions

/// Subcloud around a set of boxes. Points farther than the victim's
/// receptive field from every deformed point keep their predictions, so
/// losses restricted to `rows` differ from whole-scene losses only by a
/// constant.
struct Region {
  std::vector<std::size_t> index;  // scene index of each subcloud point
  PointCloud cloud;                // clean subcloud
  std::vector<std::size_t> rows;   // subcloud points whose outputs can change
};

inline Region make_region(const PointCloud& cloud, std::span<const OrientedBox> boxes, double row_reach,
                          double context_reach, bool vertical = true) {
  Region r;
  std::vector<OrientedBox> rows_box, ctx_box;
  for (const auto& b : boxes) {
    OrientedBox rb = b.inflated(row_reach), cb = b.inflated(context_reach);
    if (!vertical) rb.height = cb.height = 1e9;
    rows_box.push_back(rb);
    ctx_box.push_back(cb);
  }
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Point3& p = cloud.positions[i];
    bool in_ctx = false, in_row = false;
    for (std::size_t b = 0; b < boxes.size(); ++b) {
      if (!in_ctx && box_contains(ctx_box[b], p)) in_ctx = true;
      if (in_ctx && box_contains(rows_box[b], p)) {
        in_row = true;
        break;
      }
    }
    if (!in_ctx) continue;
    if (in_row) r.rows.push_back(r.cloud.size());
    r.index.push_back(i);
    r.cloud.push_back(p, cloud.intensities[i], cloud.semantic[i], cloud.instance[i]);
  }
  return r;
}

/// Reaches for the segmenter with displacement bound `max_shift`.
inline double seg_row_reach(double max_shift) { return SegNetMini::kRadii[1] + max_shift + kSelectMargin; }
inline double seg_context_reach(double max_shift) { return 2.0 * SegNetMini::kRadii[1] + max_shift + kSelectMargin; }

/// Anchors whose pooled points can include a point of `boxes` moved by up
/// to `max_shift`.
inline std::vector<std::uint8_t> det_anchor_mask(std::span<const OrientedBox> boxes, double max_shift) {
  std::vector<std::uint8_t> m(DetHeadMini::anchor_count(), 0);
  for (std::size_t a = 0; a < m.size(); ++a) {
    const Point3 c = DetHeadMini::anchor(a);
    for (const auto& b : boxes) {
      const Vec3 q = b.to_local({c.x, c.y, b.center.z});
      const double gx = std::max(std::abs(q.x) - 0.5 * b.length, 0.0);
      const double gy = std::max(std::abs(q.y) - 0.5 * b.width, 0.0);
      if (std::hypot(gx, gy) <= max_shift + kSelectMargin + DetHeadMini::kPoolRadius) {
        m[a] = 1;
        break;
      }
    }
  }
  return m;
}
inline double det_context_reach(double max_shift) {
  return max_shift + kSelectMargin + 2.0 * DetHeadMini::kPoolRadius + 0.01;
}

// ---------------------------------------------------------------------------
// Loss evaluation on a (deformed) region

struct RegionLoss {
  double loss = 0.0;
  InputGradient grad;
};

inline RegionLoss seg_region_loss(const SegNetMini& net, const PointCloud& sub, std::span<const std::size_t> rows,
                                  const AttackConfig& cfg, bool need_grad, std::vector<std::string>* warnings = nullptr) {
  RegionLoss out;
  SegTape tape;
  const std::vector<double> probs = net.forward(sub, rows, need_grad ? &tape : nullptr);
  std::vector<std::uint16_t> labels(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) labels[r] = sub.semantic[rows[r]];
  std::vector<double> dlog;
  const int C = net.num_classes();
  if (cfg.mode == AttackMode::seg_targeted)
    out.loss = loss_targeted(probs, labels, C, cfg.adversarial_class, cfg.target_class, need_grad ? &dlog : nullptr,
                             warnings);
  else
    out.loss = loss_untargeted(probs, labels, C, {}, need_grad ? &dlog : nullptr);
  if (need_grad) out.grad = net.backward_inputs(sub, tape, dlog);
  return out;
}

inline RegionLoss det_region_loss(const DetHeadMini& net, const PointCloud& sub, std::span<const std::uint8_t> mask,
                                  std::span<const OrientedBox> gt, bool need_grad) {
  RegionLoss out;
  DetTape tape;
  const std::vector<double> raw = net.forward_raw(sub, need_grad ? &tape : nullptr);
  const std::vector<DetProposal> props = DetHeadMini::decode_all(raw);
  std::vector<double> dlogit;
  out.loss = loss_detection(props, gt, need_grad ? &dlogit : nullptr, mask);
  if (need_grad) {
    std::vector<double> d_raw(raw.size(), 0.0);
    for (std::size_t a = 0; a < props.size(); ++a) d_raw[a * DetHeadMini::kOutputs] = dlogit[a];
    out.grad = net.backward_det_inputs(sub, tape, d_raw);
  }
  return out;
}

/// Either victim; exactly one pointer is set, matching the attack mode.
struct Victim {
  const SegNetMini* seg = nullptr;
  const DetHeadMini* det = nullptr;
};

// ---------------------------------------------------------------------------
// Field application

/// The field variant a scene uses while fitting and on the probe.
inline int shard_variant(std::size_t scene_index, int variants) {
  return static_cast<int>(scene_index % static_cast<std::size_t>(variants));
}

struct PlannedTarget {
  std::size_t field = 0;  // bank index
  DeformationPlan plan;
};

inline std::vector<PlannedTarget> plan_targets(const PointCloud& cloud, std::span<const TargetBox> targets,
                                               const FieldBank& bank, std::span<const int> variants,
                                               const Point3& sensor, int k) {
  std::vector<PlannedTarget> out;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    PlannedTarget p;
    p.field = bank.index(targets[t].group, variants[t]);
    p.plan = plan(cloud, targets[t].box, bank.fields[p.field], sensor, k, kSelectMargin);
    if (p.plan.size() > 0) out.push_back(std::move(p));
  }
  return out;
}

inline PointCloud apply_targets(const PointCloud& cloud, std::span<const PlannedTarget> planned, const FieldBank& bank) {
  PointCloud out = cloud;
  for (const auto& p : planned) deform_in_place(out, p.plan, bank.fields[p.field], bank.intensity);
  return out;
}

/// Deforms every target object of `scene` with its group's field, variant
/// chosen by the scene index shard.
inline PointCloud attack_scene(const Scene& scene, const FieldBank& bank, const AttackConfig& cfg,
                               std::size_t scene_index) {
  const auto targets = target_boxes(scene, cfg, hash_combine(cfg.seed, scene_index));
  const std::vector<int> variants(targets.size(), shard_variant(scene_index, bank.variants));
  const auto planned = plan_targets(scene.cloud, targets, bank, variants, scene.sensor.origin(), cfg.k);
  return apply_targets(scene.cloud, planned, bank);
}

// ---------------------------------------------------------------------------
// Fitting

/// Loss and field gradients for one scene under the current bank.
struct SceneGradient {
  double loss = 0.0;
  std::vector<std::pair<std::size_t, FieldGradient>> fields;  // ascending bank index
  std::vector<std::string> warnings;
};

inline SceneGradient scene_field_gradient(const Scene& scene, std::size_t scene_index, const FieldBank& bank,
                                          const Victim& victim, const AttackConfig& cfg, bool need_grad = true) {
  SceneGradient out;
  const auto targets = target_boxes(scene, cfg, hash_combine(cfg.seed, scene_index));
  if (targets.empty()) return out;
  std::vector<OrientedBox> boxes;
  for (const auto& t : targets) boxes.push_back(t.box);
  const double shift = std::sqrt(3.0) * cfg.epsilon;
  const bool det = cfg.mode == AttackMode::detection;
  const Region region = det ? make_region(scene.cloud, boxes, 0.0, det_context_reach(shift), false)
                            : make_region(scene.cloud, boxes, seg_row_reach(shift), seg_context_reach(shift));
  const std::vector<int> variants(targets.size(), shard_variant(scene_index, bank.variants));
  const auto planned = plan_targets(region.cloud, targets, bank, variants, scene.sensor.origin(), cfg.k);
  const PointCloud deformed = apply_targets(region.cloud, planned, bank);
  RegionLoss rl;
  if (det) {
    const auto gt = scene.boxes_of(classes::kCar);
    rl = det_region_loss(*victim.det, deformed, det_anchor_mask(boxes, shift), gt, need_grad);
  } else {
    rl = seg_region_loss(*victim.seg, deformed, region.rows, cfg, need_grad, &out.warnings);
  }
  out.loss = rl.loss;
  if (!std::isfinite(rl.loss)) throw NumericError("attack loss is not finite on scene " + std::to_string(scene_index));
  if (!need_grad) return out;
  std::map<std::size_t, FieldGradient> acc;
  for (const auto& p : planned) {
    auto it = acc.try_emplace(p.field, bank.fields[p.field].size()).first;
    shift_jacobian(p.plan).accumulate(bank.fields[p.field], rl.grad.positions,
                                      bank.intensity ? std::span<const double>(rl.grad.intensities)
                                                     : std::span<const double>(),
                                      region.cloud.intensities, it->second);
  }
  for (auto& [idx, g] : acc) {
    for (std::size_t j = 0; j < g.vectors.size(); ++j)
      if (!is_finite(g.vectors[j]) || !std::isfinite(g.tau[j]))
        throw NumericError("victim produced a non-finite gradient on scene " + std::to_string(scene_index));
    out.fields.emplace_back(idx, std::move(g));
  }
  return out;
}

/// Clean victim outputs for a scene set. Scoring a deformed copy then
/// recomputes only the outputs inside the influence region.
struct CleanOutputs {
  std::vector<std::vector<std::uint16_t>> seg;  // argmax per point
  std::vector<std::vector<double>> det;         // raw head rows per anchor
};

inline CleanOutputs clean_outputs(const std::vector<Scene>& scenes, const Victim& victim, AttackMode mode) {
  CleanOutputs c;
  if (mode == AttackMode::detection) {
    c.det.resize(scenes.size());
    parallel_for(scenes.size(), [&](std::size_t s) { c.det[s] = victim.det->forward_raw(scenes[s].cloud); });
  } else {
    c.seg.resize(scenes.size());
    parallel_for(scenes.size(), [&](std::size_t s) { c.seg[s] = victim.seg->predict(scenes[s].cloud); });
  }
  return c;
}

/// Whole-scene segmentation of the attacked scene, given its clean
/// prediction. Matches predict(attack_scene(...)) exactly.
inline std::vector<std::uint16_t> attacked_seg_prediction(const Scene& scene, std::size_t scene_index,
                                                          const FieldBank& bank, const SegNetMini& net,
                                                          const AttackConfig& cfg,
                                                          std::span<const std::uint16_t> clean) {
  std::vector<std::uint16_t> out(clean.begin(), clean.end());
  const auto targets = target_boxes(scene, cfg, hash_combine(cfg.seed, scene_index));
  if (targets.empty()) return out;
  std::vector<OrientedBox> boxes;
  for (const auto& t : targets) boxes.push_back(t.box);
  const double shift = std::sqrt(3.0) * bank.epsilon;
  const Region region = make_region(scene.cloud, boxes, seg_row_reach(shift), seg_context_reach(shift));
  const std::vector<int> variants(targets.size(), shard_variant(scene_index, bank.variants));
  const auto planned = plan_targets(region.cloud, targets, bank, variants, scene.sensor.origin(), cfg.k);
  const PointCloud deformed = apply_targets(region.cloud, planned, bank);
  const auto pred = SegNetMini::argmax_rows(net.forward(deformed, region.rows), net.num_classes());
  for (std::size_t r = 0; r < region.rows.size(); ++r) out[region.index[region.rows[r]]] = pred[r];
  return out;
}

/// Raw detection head output on the attacked scene, given the clean one.
inline std::vector<double> attacked_det_raw(const Scene& scene, std::size_t scene_index, const FieldBank& bank,
                                            const DetHeadMini& net, const AttackConfig& cfg,
                                            std::span<const double> clean) {
  std::vector<double> out(clean.begin(), clean.end());
  const auto targets = target_boxes(scene, cfg, hash_combine(cfg.seed, scene_index));
  if (targets.empty()) return out;
  std::vector<OrientedBox> boxes;
  for (const auto& t : targets) boxes.push_back(t.box);
  const double shift = std::sqrt(3.0) * bank.epsilon;
  const Region region = make_region(scene.cloud, boxes, 0.0, det_context_reach(shift), false);
  const std::vector<int> variants(targets.size(), shard_variant(scene_index, bank.variants));
  const auto planned = plan_targets(region.cloud, targets, bank, variants, scene.sensor.origin(), cfg.k);
  const std::vector<double> raw = net.forward_raw(apply_targets(region.cloud, planned, bank));
  const auto mask = det_anchor_mask(boxes, shift);
  constexpr auto K = DetHeadMini::kOutputs;
  for (std::size_t a = 0; a < mask.size(); ++a)
    if (mask[a]) std::copy(raw.begin() + a * K, raw.begin() + (a + 1) * K, out.begin() + a * K);
  return out;
}

/// Probe score: IoU of the adversarial class (targeted: share of its
/// points predicted as the target; detection: car AP at IoU 0.5). A null
/// bank scores the clean scenes.
inline double probe_metric(const std::vector<Scene>& probe, std::size_t index_offset, const FieldBank* bank,
                           const Victim& victim, const AttackConfig& cfg, const CleanOutputs* clean = nullptr) {
  if (probe.empty()) return 0.0;
  CleanOutputs own;
  if (!clean) {
    own = clean_outputs(probe, victim, cfg.mode);
    clean = &own;
  }
  if (cfg.mode == AttackMode::detection) {
    std::vector<std::vector<DetProposal>> dets(probe.size());
    std::vector<std::vector<OrientedBox>> gts(probe.size());
    parallel_for(probe.size(), [&](std::size_t s) {
      const std::vector<double> raw =
          bank ? attacked_det_raw(probe[s], index_offset + s, *bank, *victim.det, cfg, clean->det[s]) : clean->det[s];
      dets[s] = nms(DetHeadMini::decode_all(raw), 0.1);
      gts[s] = visible_cars(probe[s]);
    });
    return average_precision(dets, gts, 0.5);
  }
  std::vector<ConfusionMatrix> cms(probe.size(), ConfusionMatrix(victim.seg->num_classes()));
  parallel_for(probe.size(), [&](std::size_t s) {
    if (bank)
      cms[s].add(probe[s].cloud.semantic,
                 attacked_seg_prediction(probe[s], index_offset + s, *bank, *victim.seg, cfg, clean->seg[s]));
    else
      cms[s].add(probe[s].cloud.semantic, clean->seg[s]);
  });
  ConfusionMatrix total(victim.seg->num_classes());
  for (const auto& c : cms) total += c;
  if (cfg.mode == AttackMode::seg_targeted) {
    const auto a = static_cast<std::size_t>(cfg.adversarial_class), t = static_cast<std::size_t>(cfg.target_class);
    std::uint64_t row = 0;
    for (std::size_t c = 0; c < total.classes(); ++c) row += total.at(a, c);
    return row ? static_cast<double>(total.at(a, t)) / static_cast<double>(row) : 0.0;
  }
  return iou_report(total).iou[cfg.adversarial_class];
}

/// Projected Adam on the bank's vectors against a frozen victim. Scenes are
/// visited in order in batches; scene i trains variant (i mod N) of its
/// objects' groups. Only fields touched by a batch take an Adam step, and
/// every stepped field is clamped right after. The probe metric (target
/// class IoU, targeted-hit fraction, or AP) is recorded per iteration.
inline AttackTrace fit_bank(FieldBank& bank, const std::vector<Scene>& data, const Victim& victim,
                            const AttackConfig& cfg, const std::vector<Scene>& probe = {},
                            std::size_t probe_offset = 0) {
  cfg.validate();
  if (cfg.mode == AttackMode::detection ? victim.det == nullptr : victim.seg == nullptr)
    throw ConfigError("fit_bank: victim does not match the attack mode");
  AttackTrace trace;
  CleanOutputs clean;
  if (!probe.empty()) {
    clean = clean_outputs(probe, victim, cfg.mode);
    trace.probe_clean = probe_metric(probe, probe_offset, nullptr, victim, cfg, &clean);
  }
  std::vector<Adam> opt(bank.fields.size());
  for (auto& o : opt) o.lr = cfg.lr;

  // Fields that never see an object would keep their initialization.
  {
    std::vector<int> seen(bank.fields.size(), 0);
    for (std::size_t s = 0; s < data.size(); ++s)
      for (const auto& t : target_boxes(data[s], cfg, hash_combine(cfg.seed, s)))
        seen[bank.index(t.group, shard_variant(s, bank.variants))] = 1;
    for (std::size_t f = 0; f < seen.size(); ++f)
      if (!seen[f] && cfg.iterations > 0)
        trace.warnings.push_back("field (g=" + std::to_string(bank.fields[f].group) + ", n=" +
                                 std::to_string(bank.fields[f].variant) +
                                 ") has no target object in any scene; risk of overfit");
  }

  std::vector<double> flat, grad;
  for (int it = 0; it < cfg.iterations; ++it) {
    double total_loss = 0.0;
    for (std::size_t b0 = 0; b0 < data.size(); b0 += cfg.batch_scenes) {
      const std::size_t nb = std::min<std::size_t>(cfg.batch_scenes, data.size() - b0);
      std::vector<SceneGradient> sg(nb);
      parallel_for(nb, [&](std::size_t k) { sg[k] = scene_field_gradient(data[b0 + k], b0 + k, bank, victim, cfg); });
      std::map<std::size_t, FieldGradient> acc;
      for (auto& s : sg) {
        total_loss += s.loss;
        for (auto& w : s.warnings)
          if (it == 0) trace.warnings.push_back(w);
        for (auto& [idx, g] : s.fields) {
          auto [pos, fresh] = acc.try_emplace(idx, std::move(g));
          if (!fresh) pos->second += g;
        }
      }
      for (auto& [idx, g] : acc) {
        VectorField& f = bank.fields[idx];
        const std::size_t n = f.size();
        flat.resize(4 * n);
        grad.resize(4 * n);
        for (std::size_t j = 0; j < n; ++j) {
          flat[4 * j] = f.vectors[j].x;
          flat[4 * j + 1] = f.vectors[j].y;
          flat[4 * j + 2] = f.vectors[j].z;
          flat[4 * j + 3] = f.tau_shift[j];
          grad[4 * j] = g.vectors[j].x;
          grad[4 * j + 1] = g.vectors[j].y;
          grad[4 * j + 2] = g.vectors[j].z;
          grad[4 * j + 3] = bank.intensity ? g.tau[j] : 0.0;
        }
        opt[idx].step(flat, grad);
        for (std::size_t j = 0; j < n; ++j) {
          f.vectors[j] = {flat[4 * j], flat[4 * j + 1], flat[4 * j + 2]};
          f.tau_shift[j] = bank.intensity ? flat[4 * j + 3] : f.tau_shift[j];
        }
        clamp(f, bank.epsilon, bank.psi);
      }
    }
    trace.loss.push_back(total_loss);
    trace.probe_metric.push_back(probe.empty() ? 0.0 : probe_metric(probe, probe_offset, &bank, victim, cfg, &clean));
  }
  return trace;
}

}  // namespace advfield

#endif
