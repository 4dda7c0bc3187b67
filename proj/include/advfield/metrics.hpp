#ifndef ADVFIELD_METRICS_HPP
#define ADVFIELD_METRICS_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "advfield/detector.hpp"
#include "advfield/geometry.hpp"

namespace advfield {

/// Row = ground truth, column = prediction.
class ConfusionMatrix {
public:
  explicit ConfusionMatrix(std::size_t classes = classes::kCount) : c_(classes), m_(classes * classes, 0) {}

  std::size_t classes() const { return c_; }
  void add(std::uint16_t truth, std::uint16_t pred, std::uint64_t n = 1) {
    if (truth >= c_ || pred >= c_) throw ConfigError("class id outside the confusion matrix");
    m_[truth * c_ + pred] += n;
  }
  void add(std::span<const std::uint16_t> truth, std::span<const std::uint16_t> pred) {
    if (truth.size() != pred.size()) throw ConfigError("prediction and label counts differ");
    for (std::size_t i = 0; i < truth.size(); ++i) add(truth[i], pred[i]);
  }
  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    for (std::size_t i = 0; i < m_.size(); ++i) m_[i] += o.m_[i];
    return *this;
  }
  bool operator==(const ConfusionMatrix&) const = default;

  std::uint64_t at(std::size_t truth, std::size_t pred) const { return m_[truth * c_ + pred]; }
  std::uint64_t total() const { return std::accumulate(m_.begin(), m_.end(), std::uint64_t{0}); }

private:
  std::size_t c_;
  std::vector<std::uint64_t> m_;
};

struct IouReport {
  std::vector<double> iou;     // per class; 0 when the class has no union
  std::vector<bool> present;   // false: zero union, excluded from the mean
  double mean = 0.0;
};

/// Per-class TP / (TP + FP + FN) and their mean over `subset` (all classes
/// when empty), skipping classes that never occur in truth or prediction.
inline IouReport iou_report(const ConfusionMatrix& cm, std::span<const std::uint16_t> subset = {}) {
  const std::size_t C = cm.classes();
  IouReport r;
  r.iou.assign(C, 0.0);
  r.present.assign(C, false);
  for (std::size_t c = 0; c < C; ++c) {
    std::uint64_t tp = cm.at(c, c), fp = 0, fn = 0;
    for (std::size_t k = 0; k < C; ++k) {
      if (k == c) continue;
      fp += cm.at(k, c);
      fn += cm.at(c, k);
    }
    const std::uint64_t uni = tp + fp + fn;
    if (uni > 0) {
      r.present[c] = true;
      r.iou[c] = static_cast<double>(tp) / static_cast<double>(uni);
    }
  }
  double sum = 0.0;
  std::size_t n = 0;
  auto take = [&](std::size_t c) {
    if (c < C && r.present[c]) {
      sum += r.iou[c];
      ++n;
    }
  };
  if (subset.empty())
    for (std::size_t c = 0; c < C; ++c) take(c);
  else
    for (auto c : subset) take(c);
  r.mean = n ? sum / static_cast<double>(n) : 0.0;
  return r;
}

inline IouReport miou(std::span<const std::uint16_t> pred, std::span<const std::uint16_t> labels,
                      std::span<const std::uint16_t> subset = {}, std::size_t num_classes = classes::kCount) {
  ConfusionMatrix cm(num_classes);
  cm.add(labels, pred);
  return iou_report(cm, subset);
}

/// Greedy confidence-ordered matching across scenes (one match per ground
/// truth, IoU >= thr), then the area under the full precision envelope.
/// Returns 0 when there is no ground truth.
inline double average_precision(const std::vector<std::vector<DetProposal>>& detections,
                                const std::vector<std::vector<OrientedBox>>& ground_truth, double iou_thr) {
  if (detections.size() != ground_truth.size()) throw ConfigError("detections and ground truth differ in scene count");
  std::size_t n_gt = 0;
  for (const auto& g : ground_truth) n_gt += g.size();
  if (n_gt == 0) return 0.0;
  struct Item {
    double score;
    std::size_t scene, idx;
  };
  std::vector<Item> items;
  for (std::size_t s = 0; s < detections.size(); ++s)
    for (std::size_t i = 0; i < detections[s].size(); ++i) items.push_back({detections[s][i].score, s, i});
  std::stable_sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.score > b.score; });
  std::vector<std::vector<bool>> used(ground_truth.size());
  for (std::size_t s = 0; s < ground_truth.size(); ++s) used[s].assign(ground_truth[s].size(), false);
  std::vector<double> precision, recall;
  std::size_t tp = 0, fp = 0;
  for (const Item& it : items) {
    const OrientedBox& box = detections[it.scene][it.idx].box;
    double best = -1.0;
    std::size_t best_g = 0;
    for (std::size_t g = 0; g < ground_truth[it.scene].size(); ++g) {
      if (used[it.scene][g]) continue;
      const double v = iou_3d(box, ground_truth[it.scene][g]);
      if (v > best) {
        best = v;
        best_g = g;
      }
    }
    if (best >= iou_thr) {
      used[it.scene][best_g] = true;
      ++tp;
    } else {
      ++fp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
  }
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0, prev_r = 0.0;
  for (std::size_t i = 0; i < precision.size(); ++i) {
    ap += (recall[i] - prev_r) * precision[i];
    prev_r = recall[i];
  }
  return ap;
}

struct AsrResult {
  double percent = 0.0;
  std::size_t detected_clean = 0;
  std::size_t lost = 0;
};

/// An object counts as detected when some proposal overlaps it with
/// IoU > thr. ASR is the share of clean-detected objects that are no
/// longer detected under attack.
inline AsrResult asr(const std::vector<std::vector<DetProposal>>& clean,
                     const std::vector<std::vector<DetProposal>>& attacked,
                     const std::vector<std::vector<OrientedBox>>& ground_truth, double iou_thr = 0.7) {
  if (clean.size() != ground_truth.size() || attacked.size() != ground_truth.size())
    throw ConfigError("asr: scene counts differ");
  auto detected = [&](const std::vector<DetProposal>& props, const OrientedBox& g) {
    for (const auto& p : props)
      if (iou_3d(p.box, g) > iou_thr) return true;
    return false;
  };
  AsrResult r;
  for (std::size_t s = 0; s < ground_truth.size(); ++s)
    for (const auto& g : ground_truth[s]) {
      if (!detected(clean[s], g)) continue;
      ++r.detected_clean;
      if (!detected(attacked[s], g)) ++r.lost;
    }
  r.percent = r.detected_clean ? 100.0 * static_cast<double>(r.lost) / static_cast<double>(r.detected_clean) : 0.0;
  return r;
}

inline constexpr int kDistanceBins = 8;
inline constexpr double kDistanceBinWidth = 10.0;

/// Bin of a point by horizontal distance to the sensor; -1 beyond the
/// last bin.
inline int distance_bin(const Point3& p, const Point3& sensor) {
  const double d = std::hypot(p.x - sensor.x, p.y - sensor.y);
  const int b = static_cast<int>(std::floor(d / kDistanceBinWidth));
  return b < kDistanceBins ? b : -1;
}

/// Separate confusion matrices for the ranges [0,10), [10,20), ... [70,80) m.
inline std::array<ConfusionMatrix, kDistanceBins> distance_binned_confusion(
    std::span<const Point3> positions, std::span<const std::uint16_t> pred, std::span<const std::uint16_t> labels,
    const Point3& sensor, std::size_t num_classes = classes::kCount) {
  std::array<ConfusionMatrix, kDistanceBins> bins;
  bins.fill(ConfusionMatrix(num_classes));
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const int b = distance_bin(positions[i], sensor);
    if (b >= 0) bins[b].add(labels[i], pred[i]);
  }
  return bins;
}

inline std::array<IouReport, kDistanceBins> distance_binned_iou(std::span<const Point3> positions,
                                                                 std::span<const std::uint16_t> pred,
                                                                 std::span<const std::uint16_t> labels,
                                                                 const Point3& sensor,
                                                                 std::size_t num_classes = classes::kCount) {
  const auto cms = distance_binned_confusion(positions, pred, labels, sensor, num_classes);
  std::array<IouReport, kDistanceBins> out;
  for (int b = 0; b < kDistanceBins; ++b) out[b] = iou_report(cms[b]);
  return out;
}

}  // namespace advfield

#endif
