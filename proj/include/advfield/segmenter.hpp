#ifndef ADVFIELD_SEGMENTER_HPP
#define ADVFIELD_SEGMENTER_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "advfield/nn.hpp"
#include "advfield/point_cloud.hpp"
#include "advfield/simulator.hpp"

namespace advfield {

/// Kernel statistics of one neighborhood scale, per taped point.
struct ScaleTape {
  std::vector<std::uint32_t> nbr_begin;  // points + 1 offsets
  std::vector<std::uint32_t> nbr;
  std::vector<double> kern;   // K_ij
  std::vector<double> dkern;  // dK/ds at s = |p_i - p_j|^2
  std::vector<Vec3> centroid;
  std::vector<double> weight_sum;
  std::vector<double> tau_mean;
  std::vector<std::array<double, 6>> cov;  // xx, yy, zz, xy, xz, yz
};

/// Activations of one segmentation forward pass, needed for the input
/// gradient.
struct SegTape {
  std::size_t cloud_size = 0;
  std::vector<std::size_t> points;
  std::vector<ScaleTape> scales;
  std::vector<double> features;
  std::vector<Mlp::Trace> traces;
};

struct InputGradient {
  std::vector<Vec3> positions;
  std::vector<double> intensities;

  explicit InputGradient(std::size_t n = 0) : positions(n), intensities(n, 0.0) {}
};

/// Per-point segmenter: smooth neighborhood statistics at two radii feed a
/// two-hidden-layer tanh network.
///
/// Features of point i: z_i / 2 - 0.5 (height above the ground plane),
/// (tau_i - 0.3) / 0.2, and for each radius r, with
/// K_ij = (1 - |p_i - p_j|^2 / r^2)^2 inside r and W_i = sum_j K_ij:
///   (p_i - c_i) / r            offset to the kernel-weighted centroid c_i
///   (log W_i - 2) / 2 - 1.5 log(r / 0.5)   local density
///   (T_i - 0.3) / 0.2          kernel-weighted mean intensity T_i
///   3 (S_xx + S_yy) / r^2, 3 S_zz / r^2,
///   10 ((S_xx - S_yy)^2 + 4 S_xy^2) / r^4, 10 (S_xz^2 + S_yz^2) / r^4
/// where S is the kernel-weighted covariance; all are invariant to yaw.
class SegNetMini {
public:
  static constexpr double kRadii[2] = {0.5, 1.5};
  static constexpr int kPerScale = 9;
  static constexpr int kFeatures = 2 + kPerScale * 2;

  explicit SegNetMini(int num_classes = static_cast<int>(classes::kCount), int hidden = 64)
      : mlp_({kFeatures, hidden, hidden, num_classes}), classes_(num_classes) {}

  int num_classes() const { return classes_; }
  Mlp& mlp() { return mlp_; }
  const Mlp& mlp() const { return mlp_; }

  void init(std::uint64_t seed) { mlp_.init(seed); }

  /// Features for `points` (all points when empty), rows of kFeatures.
  /// Fills neighbor data in `tape` when given.
  std::vector<double> features(const PointCloud& cloud, std::span<const std::size_t> points,
                               SegTape* tape = nullptr) const {
    const std::size_t n = points.empty() ? cloud.size() : points.size();
    std::vector<double> f(n * kFeatures);
    if (tape) {
      tape->cloud_size = cloud.size();
      tape->points.resize(n);
      for (std::size_t row = 0; row < n; ++row) tape->points[row] = points.empty() ? row : points[row];
      tape->scales.assign(std::size(kRadii), {});
    }
    for (std::size_t row = 0; row < n; ++row) {
      const std::size_t i = points.empty() ? row : points[row];
      f[row * kFeatures] = cloud.positions[i].z / 2.0 - 0.5;
      f[row * kFeatures + 1] = (cloud.intensities[i] - 0.3) / 0.2;
    }
    for (std::size_t sc = 0; sc < std::size(kRadii); ++sc)
      scale_features(cloud, points, sc, f, tape ? &tape->scales[sc] : nullptr);
    if (tape) tape->features = f;
    return f;
  }

  /// Class probabilities (rows of `num_classes()`) for `points`, or for
  /// every point when `points` is empty.
  std::vector<double> forward(const PointCloud& cloud, std::span<const std::size_t> points = {},
                              SegTape* tape = nullptr) const {
    const std::vector<double> f = features(cloud, points, tape);
    return forward_features(f, tape);
  }

  std::vector<double> forward_features(std::span<const double> f, SegTape* tape = nullptr) const {
    const std::size_t n = f.size() / kFeatures;
    std::vector<double> probs(n * classes_);
    if (tape) tape->traces.resize(n);
    Mlp::Trace local;
    for (std::size_t row = 0; row < n; ++row) {
      Mlp::Trace& tr = tape ? tape->traces[row] : local;
      mlp_.forward(f.subspan(row * kFeatures, kFeatures), tr);
      softmax(tr.act.back(), std::span<double>(&probs[row * classes_], classes_));
    }
    return probs;
  }

  std::vector<std::uint16_t> predict(const PointCloud& cloud) const {
    const std::vector<double> probs = forward(cloud);
    return argmax_rows(probs, classes_);
  }

  static std::vector<std::uint16_t> argmax_rows(std::span<const double> probs, int classes) {
    std::vector<std::uint16_t> out(probs.size() / classes);
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double* r = &probs[i * classes];
      out[i] = static_cast<std::uint16_t>(std::max_element(r, r + classes) - r);
    }
    return out;
  }

  /// Exact reverse-mode gradient of a loss w.r.t. every point's position
  /// and intensity, given d loss / d logits for the taped points (rows of
  /// `num_classes()`). Includes the paths through neighbor statistics.
  InputGradient backward_inputs(const PointCloud& cloud, const SegTape& tape, std::span<const double> dlogits) const {
    if (tape.cloud_size != cloud.size() || tape.scales.size() != std::size(kRadii))
      throw ConfigError("backward_inputs: no tape for this cloud");
    if (tape.traces.size() != tape.points.size()) throw ConfigError("backward_inputs: tape holds no activations");
    if (dlogits.size() != tape.points.size() * classes_) throw ConfigError("backward_inputs: gradient shape mismatch");
    InputGradient g(cloud.size());
    std::vector<double> gf;
    for (std::size_t row = 0; row < tape.points.size(); ++row) {
      mlp_.backward(tape.traces[row], dlogits.subspan(row * classes_, classes_), {}, &gf);
      backprop_features(cloud, tape, row, gf, g);
    }
    return g;
  }

  /// Accumulates d loss / d params for taped rows into `grad`.
  void backward_params(const SegTape& tape, std::span<const double> dlogits, std::span<double> grad) const {
    for (std::size_t row = 0; row < tape.traces.size(); ++row)
      mlp_.backward(tape.traces[row], dlogits.subspan(row * classes_, classes_), grad, nullptr);
  }

  static void softmax(std::span<const double> z, std::span<double> out) {
    const double m = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (std::size_t c = 0; c < z.size(); ++c) s += (out[c] = std::exp(z[c] - m));
    for (auto& v : out) v /= s;
  }

  /// Rotates the planar offset features by `yaw`, then mirrors y when
  /// `flip` (the feature-space image of a global rotation and flip).
  static void rotate_flip_features(std::span<double> f, double yaw, bool flip) {
    const double c = std::cos(yaw), s = std::sin(yaw);
    for (std::size_t r = 0; r + kFeatures <= f.size(); r += kFeatures)
      for (std::size_t sc = 0; sc < std::size(kRadii); ++sc) {
        double* q = &f[r + 2 + kPerScale * sc];
        const double x = q[0], y = q[1];
        q[0] = c * x - s * y;
        q[1] = s * x + c * y;
        if (flip) q[1] = -q[1];
      }
  }

private:
  void scale_features(const PointCloud& cloud, std::span<const std::size_t> points, std::size_t sc,
                      std::span<double> f, ScaleTape* tape) const {
    const double r = kRadii[sc];
    const double r2 = r * r;
    const double density_shift = 1.5 * std::log(r / 0.5);
    const GridIndex grid(cloud.positions, r);
    const std::size_t n = f.size() / kFeatures;
    if (tape) {
      tape->nbr_begin.assign(1, 0);
      tape->centroid.resize(n);
      tape->weight_sum.resize(n);
      tape->tau_mean.resize(n);
      tape->cov.resize(n);
    }
    for (std::size_t row = 0; row < n; ++row) {
      const std::size_t i = points.empty() ? row : points[row];
      const Point3& p = cloud.positions[i];
      double w = 0.0, tsum = 0.0;
      Vec3 csum;
      std::array<double, 6> m{};
      grid.for_candidates(p, [&](std::uint32_t j, const Point3& pj) {
        const Vec3 q = pj - p;
        const double s = squared_norm(q);
        if (s >= r2) return;
        const double u = 1.0 - s / r2;
        const double k = u * u;
        w += k;
        csum += q * k;
        tsum += k * cloud.intensities[j];
        m[0] += k * q.x * q.x;
        m[1] += k * q.y * q.y;
        m[2] += k * q.z * q.z;
        m[3] += k * q.x * q.y;
        m[4] += k * q.x * q.z;
        m[5] += k * q.y * q.z;
        if (tape) {
          tape->nbr.push_back(j);
          tape->kern.push_back(k);
          tape->dkern.push_back(-2.0 * u / r2);
        }
      });
      const Vec3 d = csum * (1.0 / w);  // centroid relative to p
      const double tm = tsum / w;
      const std::array<double, 6> cov{m[0] / w - d.x * d.x, m[1] / w - d.y * d.y, m[2] / w - d.z * d.z,
                                      m[3] / w - d.x * d.y, m[4] / w - d.x * d.z, m[5] / w - d.y * d.z};
      double* fr = &f[row * kFeatures + 2 + kPerScale * sc];
      fr[0] = -d.x / r;
      fr[1] = -d.y / r;
      fr[2] = -d.z / r;
      fr[3] = (std::log(w) - 2.0) / 2.0 - density_shift;
      fr[4] = (tm - 0.3) / 0.2;
      const double r4 = r2 * r2;
      const double dxy = cov[0] - cov[1];
      fr[5] = 3.0 * (cov[0] + cov[1]) / r2;
      fr[6] = 3.0 * cov[2] / r2;
      fr[7] = 10.0 * (dxy * dxy + 4.0 * cov[3] * cov[3]) / r4;
      fr[8] = 10.0 * (cov[4] * cov[4] + cov[5] * cov[5]) / r4;
      if (tape) {
        tape->nbr_begin.push_back(static_cast<std::uint32_t>(tape->nbr.size()));
        tape->centroid[row] = p + d;
        tape->weight_sum[row] = w;
        tape->tau_mean[row] = tm;
        tape->cov[row] = cov;
      }
    }
  }

  void backprop_features(const PointCloud& cloud, const SegTape& tape, std::size_t row, std::span<const double> gf,
                         InputGradient& g) const {
    const std::size_t i = tape.points[row];
    const Point3& pi = cloud.positions[i];
    g.positions[i].z += gf[0] / 2.0;
    g.intensities[i] += gf[1] / 0.2;
    for (std::size_t sc = 0; sc < std::size(kRadii); ++sc) {
      const ScaleTape& st = tape.scales[sc];
      const double* q = &gf[2 + kPerScale * sc];
      const double r = kRadii[sc];
      const double r2 = r * r, r4 = r2 * r2;
      const Vec3 g_rel{q[0] / r, q[1] / r, q[2] / r};
      g.positions[i] += g_rel;
      const double w = st.weight_sum[row];
      const Vec3 d = st.centroid[row] - pi;
      const double tm = st.tau_mean[row];
      const std::array<double, 6>& cv = st.cov[row];
      // d loss / d covariance as a symmetric matrix A, so that the
      // covariance path contributes <A, dS>.
      const double dxy = cv[0] - cv[1];
      const double ge = q[7] * 20.0 / r4;
      const double gtl = q[8] * 20.0 / r4;
      const double axx = q[5] * 3.0 / r2 + ge * dxy;
      const double ayy = q[5] * 3.0 / r2 - ge * dxy;
      const double azz = q[6] * 3.0 / r2;
      const double axy = ge * 2.0 * cv[3];  // half of d/dS_xy
      const double axz = gtl * 0.5 * cv[4];
      const double ayz = gtl * 0.5 * cv[5];
      auto apply_a = [&](const Vec3& v) {
        return Vec3{axx * v.x + axy * v.y + axz * v.z, axy * v.x + ayy * v.y + ayz * v.z,
                    axz * v.x + ayz * v.y + azz * v.z};
      };
      const auto quad = [&](const Vec3& v) { return dot(v, apply_a(v)); };
      // S = M - d d^T with M = sum K q q^T / W, q_j = p_j - p_i and
      // d = c - p_i; M_A = <A, M> = <A, S> + <A, d d^T>.
      const double m_a = axx * cv[0] + ayy * cv[1] + azz * cv[2] + 2.0 * (axy * cv[3] + axz * cv[4] + ayz * cv[5]) +
                         quad(d);
      const Vec3 gc = -g_rel - apply_a(d) * 2.0;  // d loss / d centroid
      g.positions[i] += apply_a(d) * 2.0;
      const double gn = q[3] / 2.0;   // d loss / d log W
      const double gt = q[4] / 0.2;   // d loss / d T
      for (std::uint32_t s = st.nbr_begin[row]; s < st.nbr_begin[row + 1]; ++s) {
        const std::uint32_t j = st.nbr[s];
        const double k = st.kern[s];
        const Point3& pj = cloud.positions[j];
        const Vec3 qj = pj - pi;
        const Vec3 gq = apply_a(qj) * (2.0 * k / w);
        g.positions[j] += gc * (k / w) + gq;
        g.positions[i] -= gq;
        g.intensities[j] += gt * k / w;
        const double gk = (dot(gc, qj - d) + gn + gt * (cloud.intensities[j] - tm) + quad(qj) - m_a) / w;
        const Vec3 dk_dpi = qj * (-2.0 * st.dkern[s]);
        g.positions[i] += dk_dpi * gk;
        g.positions[j] -= dk_dpi * gk;
      }
    }
  }

  Mlp mlp_;
  int classes_;
};

/// What an augmentation hook changed in a scene: points moved by at most
/// `margin` inside `region`.
struct SceneChange {
  OrientedBox region;
  double margin = 0.0;
};

/// Called once per scene per epoch on a private copy of the scene.
using SceneHook = std::function<std::optional<SceneChange>(Scene& scene, Rng& rng)>;

struct SegTrainConfig {
  int epochs = 12;
  double lr = 0.005;
  std::uint64_t seed = 1;
  int pool_per_class = 150;  // fixed per-scene training points per class
  int batch_scenes = 4;
  int hidden = 64;
  bool standard_augmentation = true;  // global yaw rotation in [-pi, pi) and a random y-flip
  bool shuffle_labels = false;        // leakage check: permute labels within each scene
};

struct TrainLog {
  std::vector<double> epoch_loss;
  std::vector<double> batch_loss;
  std::size_t hook_changes = 0;
};

namespace detail {

inline std::vector<std::size_t> class_pool(const PointCloud& cloud, int per_class, std::size_t num_classes, Rng& rng) {
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < cloud.size(); ++i)
    if (cloud.semantic[i] < num_classes) by_class[cloud.semantic[i]].push_back(i);
  std::vector<std::size_t> pool;
  for (auto& idx : by_class) {
    rng.shuffle(idx);
    if (idx.size() > static_cast<std::size_t>(per_class)) idx.resize(per_class);
    std::sort(idx.begin(), idx.end());
    pool.insert(pool.end(), idx.begin(), idx.end());
  }
  return pool;
}

}  // namespace detail

/// Cross-entropy training with Adam on fixed class-balanced point pools.
/// Deterministic for a given seed and independent of the thread count.
inline SegNetMini train_seg(std::span<const Scene> data, const SegTrainConfig& cfg, const SceneHook& hook = {},
                            TrainLog* log = nullptr) {
  const std::size_t C = classes::kCount;
  SegNetMini net(static_cast<int>(C), cfg.hidden);
  net.init(hash_combine(cfg.seed, 0x5E6));
  Adam adam;
  adam.lr = cfg.lr;

  // Fixed pools, labels and clean features per scene.
  struct Cached {
    std::vector<std::size_t> pool;
    std::vector<std::uint16_t> labels;
    std::vector<double> features;
  };
  std::vector<Cached> cache(data.size());
  parallel_for(data.size(), [&](std::size_t s) {
    Rng rng(hash_combine(cfg.seed, 0x9001 + s));
    Cached& c = cache[s];
    c.pool = detail::class_pool(data[s].cloud, cfg.pool_per_class, C, rng);
    for (std::size_t i : c.pool) c.labels.push_back(data[s].cloud.semantic[i]);
    if (cfg.shuffle_labels) rng.shuffle(c.labels);
    c.features = net.features(data[s].cloud, c.pool);
  });

  const std::size_t P = net.mlp().params().size();
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng order_rng(hash_combine(cfg.seed, 0x0DE5));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    order_rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t epoch_points = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_scenes) {
      const std::size_t nb = std::min<std::size_t>(cfg.batch_scenes, order.size() - b0);
      std::vector<std::vector<double>> grads(nb);
      std::vector<double> losses(nb, 0.0);
      std::vector<std::size_t> counts(nb, 0);
      std::vector<int> changed(nb, 0);
      parallel_for(nb, [&](std::size_t k) {
        const std::size_t s = order[b0 + k];
        const Cached& c = cache[s];
        std::vector<double> f = c.features;
        const std::uint64_t key = hash_combine(hash_combine(cfg.seed, 0xE0C0 + epoch), s);
        if (hook) {
          Scene copy = data[s];
          Rng hook_rng(hash_combine(key, 0xA06));
          if (auto change = hook(copy, hook_rng)) {
            changed[k] = 1;
            const OrientedBox reach = change->region.inflated(change->margin + SegNetMini::kRadii[1]);
            std::vector<std::size_t> rows, pts;
            for (std::size_t r = 0; r < c.pool.size(); ++r)
              if (box_contains(reach, copy.cloud.positions[c.pool[r]]) ||
                  box_contains(reach, data[s].cloud.positions[c.pool[r]])) {
                rows.push_back(r);
                pts.push_back(c.pool[r]);
              }
            if (!pts.empty()) {
              const std::vector<double> nf = net.features(copy.cloud, pts);
              for (std::size_t q = 0; q < rows.size(); ++q)
                std::copy_n(&nf[q * SegNetMini::kFeatures], SegNetMini::kFeatures, &f[rows[q] * SegNetMini::kFeatures]);
            }
          }
        }
        if (cfg.standard_augmentation) {
          Rng aug(hash_combine(key, 0x57A));
          const double yaw = aug.uniform(-kPi, kPi);
          const bool flip = aug.uniform() < 0.5;
          SegNetMini::rotate_flip_features(f, yaw, flip);
        }
        std::vector<double>& g = grads[k];
        g.assign(P, 0.0);
        Mlp::Trace tr;
        std::vector<double> prob(C), dlog(C);
        for (std::size_t r = 0; r < c.pool.size(); ++r) {
          net.mlp().forward(std::span<const double>(&f[r * SegNetMini::kFeatures], SegNetMini::kFeatures), tr);
          SegNetMini::softmax(tr.act.back(), prob);
          const std::uint16_t y = c.labels[r];
          losses[k] -= std::log(std::max(prob[y], 1e-12));
          for (std::size_t cc = 0; cc < C; ++cc) dlog[cc] = prob[cc] - (cc == y ? 1.0 : 0.0);
          net.mlp().backward(tr, dlog, g, nullptr);
        }
        counts[k] = c.pool.size();
      });
      std::vector<double> total(P, 0.0);
      std::size_t n_points = 0;
      double batch_loss = 0.0;
      for (std::size_t k = 0; k < nb; ++k) {
        for (std::size_t q = 0; q < P; ++q) total[q] += grads[k][q];
        n_points += counts[k];
        batch_loss += losses[k];
        if (log) log->hook_changes += changed[k];
      }
      if (!std::isfinite(batch_loss))
        throw NumericError("train_seg: non-finite loss at epoch " + std::to_string(epoch) + ", batch starting at " +
                           std::to_string(b0));
      if (n_points == 0) continue;
      for (auto& v : total) v /= static_cast<double>(n_points);
      adam.step(net.mlp().params(), total);
      epoch_loss += batch_loss;
      epoch_points += n_points;
      if (log) log->batch_loss.push_back(batch_loss / static_cast<double>(n_points));
    }
    if (log) log->epoch_loss.push_back(epoch_points ? epoch_loss / static_cast<double>(epoch_points) : 0.0);
  }
  return net;
}

}  // namespace advfield

#endif
