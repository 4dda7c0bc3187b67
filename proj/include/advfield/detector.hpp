#ifndef ADVFIELD_DETECTOR_HPP
#define ADVFIELD_DETECTOR_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "advfield/nn.hpp"
#include "advfield/segmenter.hpp"
#include "advfield/simulator.hpp"

namespace advfield {

struct DetProposal {
  std::size_t anchor = 0;
  double logit = 0.0;
  double score = 0.0;
  OrientedBox box;
};

/// Per-anchor pooled statistics kept for the input gradient.
struct DetTape {
  std::size_t cloud_size = 0;
  std::vector<std::uint32_t> begin;  // anchors + 1 offsets
  std::vector<std::uint32_t> point;
  std::vector<double> omega;
  std::vector<Vec3> domega;  // d omega / d position
  std::vector<double> mass, denom, tau_mean;
  std::vector<Vec3> mean;
  std::vector<std::array<double, 6>> cov;  // xx, yy, zz, xy, xz, yz
  std::vector<double> features;
  std::vector<Mlp::Trace> traces;
};

/// Anchor-grid car detector. One axis-aligned anchor of canonical car size
/// sits at the center of every 2 m ground cell in [-60, 60]^2. Each anchor
/// pools the points around it with smooth weights
///   omega = (1 - d^2 / R^2)^2 * sigmoid((z - 0.3) / 0.05),  d < R = 3 m
/// (d is the horizontal distance to the anchor). Statistics are taken in the
/// anchor's radial frame (axis 0 points away from the sensor, axis 1 to its
/// left): log mass, weighted mean, covariance, mean intensity and anchor
/// range. A small tanh network maps them to a confidence logit and box
/// residuals in the same frame (dr, dt, dz, log-size ratios, cos 2a, sin 2a
/// with a the yaw relative to the anchor bearing).
class DetHeadMini {
public:
  static constexpr double kStride = 2.0;
  static constexpr double kExtent = 60.0;
  static constexpr double kPoolRadius = 3.0;
  static constexpr double kCenterZ = 0.8;
  static constexpr int kFeatures = 10;
  static constexpr int kOutputs = 9;
  static constexpr int kSide = static_cast<int>(2.0 * kExtent / kStride);

  explicit DetHeadMini(int hidden = 32) : mlp_({kFeatures, hidden, hidden, kOutputs}) {}

  Mlp& mlp() { return mlp_; }
  const Mlp& mlp() const { return mlp_; }
  void init(std::uint64_t seed) { mlp_.init(seed); }

  static std::size_t anchor_count() { return static_cast<std::size_t>(kSide) * kSide; }
  static Point3 anchor(std::size_t a) {
    const int ix = static_cast<int>(a / kSide), iy = static_cast<int>(a % kSide);
    return {-kExtent + kStride * (ix + 0.5), -kExtent + kStride * (iy + 0.5), 0.0};
  }
  static double anchor_bearing(std::size_t a) {
    const Point3 c = anchor(a);
    return std::atan2(c.y, c.x);
  }
  /// Horizontal offset from anchor `a` expressed in its radial frame.
  static Vec3 to_anchor_frame(std::size_t a, const Point3& p) {
    const Point3 c = anchor(a);
    const auto [cb, sb] = frames()[a];
    const double dx = p.x - c.x, dy = p.y - c.y;
    return {cb * dx + sb * dy, -sb * dx + cb * dy, p.z};
  }
  static Vec3 from_anchor_frame(std::size_t a, const Vec3& v) {
    const auto [cb, sb] = frames()[a];
    return {cb * v.x - sb * v.y, sb * v.x + cb * v.y, v.z};
  }

  /// Anchor whose cell holds `p`; anchor_count() when outside the grid.
  static std::size_t anchor_of(const Point3& p) {
    const double fx = std::floor((p.x + kExtent) / kStride), fy = std::floor((p.y + kExtent) / kStride);
    if (fx < 0 || fy < 0 || fx >= kSide || fy >= kSide) return anchor_count();
    return static_cast<std::size_t>(fx) * kSide + static_cast<std::size_t>(fy);
  }

  std::vector<double> features(const PointCloud& cloud, DetTape* tape = nullptr) const {
    const std::size_t A = anchor_count();
    const double R2 = kPoolRadius * kPoolRadius;
    // Bucket (anchor, point) pairs in point order for each anchor.
    std::vector<std::uint32_t> count(A + 1, 0);
    auto for_anchors = [&](const Point3& p, auto&& fn) {
      const int lo_x = std::max(0, static_cast<int>(std::ceil((p.x - kPoolRadius + kExtent) / kStride - 0.5)));
      const int hi_x = std::min(kSide - 1, static_cast<int>(std::floor((p.x + kPoolRadius + kExtent) / kStride - 0.5)));
      const int lo_y = std::max(0, static_cast<int>(std::ceil((p.y - kPoolRadius + kExtent) / kStride - 0.5)));
      const int hi_y = std::min(kSide - 1, static_cast<int>(std::floor((p.y + kPoolRadius + kExtent) / kStride - 0.5)));
      for (int ix = lo_x; ix <= hi_x; ++ix)
        for (int iy = lo_y; iy <= hi_y; ++iy) {
          const std::size_t a = static_cast<std::size_t>(ix) * kSide + iy;
          const Point3 c = anchor(a);
          const double s = ((p.x - c.x) * (p.x - c.x) + (p.y - c.y) * (p.y - c.y)) / R2;
          if (s < 1.0) fn(a, s, c);
        }
    };
    for (const auto& p : cloud.positions) for_anchors(p, [&](std::size_t a, double, const Point3&) { ++count[a + 1]; });
    for (std::size_t a = 0; a < A; ++a) count[a + 1] += count[a];
    const std::size_t total = count[A];
    std::vector<std::uint32_t> pt(total);
    std::vector<double> om(total);
    std::vector<Vec3> dom(total);
    {
      std::vector<std::uint32_t> fill(count.begin(), count.end() - 1);
      for (std::size_t j = 0; j < cloud.size(); ++j) {
        const Point3& p = cloud.positions[j];
        const double h = (p.z - 0.3) / 0.05;
        const double sg = 1.0 / (1.0 + std::exp(-h));
        for_anchors(p, [&](std::size_t a, double s, const Point3&) {
          const std::uint32_t slot = fill[a]++;
          const double u = 1.0 - s;
          pt[slot] = static_cast<std::uint32_t>(j);
          om[slot] = u * u * sg;
          const double dr = -2.0 * u * sg * 2.0 / R2;
          const Vec3 q = to_anchor_frame(a, p);
          dom[slot] = {dr * q.x, dr * q.y, u * u * sg * (1.0 - sg) / 0.05};
        });
      }
    }
    std::vector<double> f(A * kFeatures);
    if (tape) {
      tape->cloud_size = cloud.size();
      tape->mass.resize(A);
      tape->denom.resize(A);
      tape->tau_mean.resize(A);
      tape->mean.resize(A);
      tape->cov.resize(A);
    }
    for (std::size_t a = 0; a < A; ++a) {
      double m = 0.0, t = 0.0;
      Vec3 s1;
      std::array<double, 6> s2{};
      for (std::uint32_t e = count[a]; e < count[a + 1]; ++e) {
        const std::uint32_t j = pt[e];
        const Vec3 q = to_anchor_frame(a, cloud.positions[j]);
        const double w = om[e];
        m += w;
        s1 += q * w;
        t += w * cloud.intensities[j];
        s2[0] += w * q.x * q.x;
        s2[1] += w * q.y * q.y;
        s2[2] += w * q.z * q.z;
        s2[3] += w * q.x * q.y;
        s2[4] += w * q.x * q.z;
        s2[5] += w * q.y * q.z;
      }
      const double d = m + kMassEps;
      const Vec3 mu = s1 * (1.0 / d);
      const std::array<double, 6> cv{s2[0] / d - mu.x * mu.x, s2[1] / d - mu.y * mu.y, s2[2] / d - mu.z * mu.z,
                                     s2[3] / d - mu.x * mu.y, s2[4] / d - mu.x * mu.z, s2[5] / d - mu.y * mu.z};
      const double tm = t / d;
      double* fr = &f[a * kFeatures];
      fr[0] = std::log1p(m) / 2.0 - 1.0;
      fr[1] = mu.x / 2.0;
      fr[2] = mu.y / 2.0;
      fr[3] = mu.z - 0.7;
      fr[4] = cv[0] / 2.0;
      fr[5] = cv[3] / 2.0;
      fr[6] = cv[1] / 2.0;
      fr[7] = cv[2] * 4.0;
      fr[8] = (tm - 0.3) / 0.2;
      const Point3 c = anchor(a);
      fr[9] = std::hypot(c.x, c.y) / 40.0 - 1.0;
      if (tape) {
        tape->mass[a] = m;
        tape->denom[a] = d;
        tape->mean[a] = mu;
        tape->cov[a] = cv;
        tape->tau_mean[a] = tm;
      }
    }
    if (tape) {
      tape->begin = std::move(count);
      tape->point = std::move(pt);
      tape->omega = std::move(om);
      tape->domega = std::move(dom);
      tape->features = f;
    }
    return f;
  }

  /// Raw network outputs, rows of kOutputs, one per anchor.
  std::vector<double> forward_raw(const PointCloud& cloud, DetTape* tape = nullptr) const {
    return forward_features(features(cloud, tape), tape);
  }

  std::vector<double> forward_features(std::span<const double> f, DetTape* tape = nullptr) const {
    const std::size_t A = f.size() / kFeatures;
    std::vector<double> out(A * kOutputs);
    if (tape) tape->traces.resize(A);
    Mlp::Trace local;
    for (std::size_t a = 0; a < A; ++a) {
      Mlp::Trace& tr = tape ? tape->traces[a] : local;
      mlp_.forward(f.subspan(a * kFeatures, kFeatures), tr);
      std::copy(tr.act.back().begin(), tr.act.back().end(), out.begin() + a * kOutputs);
    }
    return out;
  }

  /// One proposal per anchor, in anchor order.
  std::vector<DetProposal> forward_det(const PointCloud& cloud, DetTape* tape = nullptr) const {
    return decode_all(forward_raw(cloud, tape));
  }

  static std::vector<DetProposal> decode_all(std::span<const double> raw) {
    std::vector<DetProposal> out(raw.size() / kOutputs);
    for (std::size_t a = 0; a < out.size(); ++a) out[a] = decode(a, raw.subspan(a * kOutputs, kOutputs));
    return out;
  }

  static DetProposal decode(std::size_t a, std::span<const double> o) {
    DetProposal p;
    p.anchor = a;
    p.logit = o[0];
    p.score = 1.0 / (1.0 + std::exp(-o[0]));
    const Point3 c = anchor(a);
    const Vec3 off = from_anchor_frame(a, {o[1], o[2], 0.0});
    p.box.center = {c.x + off.x, c.y + off.y, kCenterZ + o[3]};
    p.box.width = kCarWidth * std::exp(std::clamp(o[4], -3.0, 3.0));
    p.box.height = kCarHeight * std::exp(std::clamp(o[5], -3.0, 3.0));
    p.box.length = kCarLength * std::exp(std::clamp(o[6], -3.0, 3.0));
    p.box.yaw = wrap_pi(anchor_bearing(a) + 0.5 * std::atan2(o[8], o[7]));
    return p;
  }

  /// Regression targets for a ground-truth box assigned to anchor `a`.
  static std::array<double, kOutputs - 1> targets(std::size_t a, const OrientedBox& b) {
    const Vec3 q = to_anchor_frame(a, b.center);
    const double rel = b.yaw - anchor_bearing(a);
    return {q.x,
            q.y,
            b.center.z - kCenterZ,
            std::log(b.width / kCarWidth),
            std::log(b.height / kCarHeight),
            std::log(b.length / kCarLength),
            std::cos(2.0 * rel),
            std::sin(2.0 * rel)};
  }

  /// Exact gradient w.r.t. point positions and intensities given
  /// d loss / d raw outputs (rows of kOutputs, one per anchor).
  InputGradient backward_det_inputs(const PointCloud& cloud, const DetTape& tape, std::span<const double> d_raw) const {
    const std::size_t A = anchor_count();
    if (tape.cloud_size != cloud.size() || tape.traces.size() != A)
      throw ConfigError("backward_det_inputs: no tape for this cloud");
    if (d_raw.size() != A * kOutputs) throw ConfigError("backward_det_inputs: gradient shape mismatch");
    InputGradient g(cloud.size());
    std::vector<double> gf;
    for (std::size_t a = 0; a < A; ++a) {
      const auto row = d_raw.subspan(a * kOutputs, kOutputs);
      if (std::all_of(row.begin(), row.end(), [](double v) { return v == 0.0; })) continue;
      mlp_.backward(tape.traces[a], row, {}, &gf);
      backprop_anchor(cloud, tape, a, gf, g);
    }
    return g;
  }

  void backward_params(const DetTape& tape, std::span<const double> d_raw, std::span<double> grad) const {
    for (std::size_t a = 0; a < tape.traces.size(); ++a)
      mlp_.backward(tape.traces[a], d_raw.subspan(a * kOutputs, kOutputs), grad, nullptr);
  }

private:
  static constexpr double kMassEps = 1e-3;

  static const std::vector<std::pair<double, double>>& frames() {
    static const std::vector<std::pair<double, double>> table = [] {
      std::vector<std::pair<double, double>> t(anchor_count());
      for (std::size_t a = 0; a < t.size(); ++a) t[a] = {std::cos(anchor_bearing(a)), std::sin(anchor_bearing(a))};
      return t;
    }();
    return table;
  }

  void backprop_anchor(const PointCloud& cloud, const DetTape& tape, std::size_t a, std::span<const double> gf,
                       InputGradient& g) const {
    const double m = tape.mass[a], d = tape.denom[a];
    const Vec3& mu = tape.mean[a];
    const std::array<double, 6>& cv = tape.cov[a];
    const double tm = tape.tau_mean[a];
    const double gm_direct = gf[0] / (2.0 * (1.0 + m));
    const Vec3 gmu{gf[1] / 2.0, gf[2] / 2.0, gf[3]};
    const double axx = gf[4] / 2.0, axy = gf[5] / 4.0, ayy = gf[6] / 2.0, azz = gf[7] * 4.0;
    const double gt = gf[8] / 0.2;
    auto apply_a = [&](const Vec3& v) { return Vec3{axx * v.x + axy * v.y, axy * v.x + ayy * v.y, azz * v.z}; };
    const Vec3 gmu_eff = gmu - apply_a(mu) * 2.0;
    // sum_j nu_j * d loss / d nu_j
    const double a_s = axx * cv[0] + ayy * cv[1] + azz * cv[2] + 2.0 * axy * cv[3];
    const double gbar = dot(gmu_eff, mu) + a_s + dot(mu, apply_a(mu)) + gt * tm;
    for (std::uint32_t e = tape.begin[a]; e < tape.begin[a + 1]; ++e) {
      const std::uint32_t j = tape.point[e];
      const Vec3 q = to_anchor_frame(a, cloud.positions[j]);
      const double nu = tape.omega[e] / d;
      const double gnu = dot(gmu_eff, q) + dot(q, apply_a(q)) + gt * cloud.intensities[j];
      const double gw = (gnu - gbar) / d + gm_direct;
      g.positions[j] += from_anchor_frame(a, (gmu_eff + apply_a(q) * 2.0) * nu + tape.domega[e] * gw);
      g.intensities[j] += gt * nu;
    }
  }

  Mlp mlp_;
};

/// Greedy non-maximum suppression on ground-plane center distance.
inline std::vector<DetProposal> nms(std::vector<DetProposal> props, double min_score, double radius = 2.0) {
  std::erase_if(props, [&](const DetProposal& p) { return p.score <= min_score; });
  std::stable_sort(props.begin(), props.end(),
                   [](const DetProposal& a, const DetProposal& b) { return a.score > b.score; });
  std::vector<DetProposal> keep;
  for (const auto& p : props) {
    bool suppressed = false;
    for (const auto& k : keep)
      if (std::hypot(p.box.center.x - k.box.center.x, p.box.center.y - k.box.center.y) < radius) {
        suppressed = true;
        break;
      }
    if (!suppressed) keep.push_back(p);
  }
  return keep;
}

/// Rotates a scene by `yaw` about the vertical axis through the origin,
/// then mirrors y when `flip`.
inline void rotate_flip_scene(PointCloud& cloud, std::vector<OrientedBox>& boxes, double yaw, bool flip) {
  auto map_point = [&](Point3 p) {
    p = rotate_yaw(p, yaw);
    if (flip) p.y = -p.y;
    return p;
  };
  for (auto& p : cloud.positions) p = map_point(p);
  for (auto& b : boxes) {
    b.center = map_point(b.center);
    b.yaw = wrap_pi(flip ? -(b.yaw + yaw) : b.yaw + yaw);
  }
}

struct DetTrainConfig {
  int epochs = 30;
  double lr = 0.005;
  std::uint64_t seed = 1;
  int batch_scenes = 4;
  int hidden = 32;
  int empty_negatives = 32;  // anchors without points sampled per scene
  double positive_weight = 4.0;
  double regression_weight = 1.0;
  bool standard_augmentation = true;  // global yaw rotation in [-pi, pi) and a random y-flip
};

/// Cars whose box contains at least `min_points` points.
inline std::vector<OrientedBox> visible_cars(const Scene& scene, std::size_t min_points = 10) {
  std::vector<OrientedBox> out;
  for (const auto& o : scene.objects) {
    if (o.semantic != classes::kCar) continue;
    std::size_t n = 0;
    for (std::size_t i = 0; i < scene.cloud.size(); ++i) n += scene.cloud.instance[i] == o.instance;
    if (n >= min_points) out.push_back(o.box);
  }
  return out;
}

/// Binary cross-entropy on anchor confidences plus squared-error box
/// regression on positive anchors (the anchor whose cell holds a car
/// center), trained with Adam.
inline DetHeadMini train_det(std::span<const Scene> data, const DetTrainConfig& cfg, const SceneHook& hook = {},
                             TrainLog* log = nullptr) {
  DetHeadMini net(cfg.hidden);
  net.init(hash_combine(cfg.seed, 0xDE7));
  Adam adam;
  adam.lr = cfg.lr;
  const std::size_t P = net.mlp().params().size();
  const std::size_t A = DetHeadMini::anchor_count();
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng order_rng(hash_combine(cfg.seed, 0x0DE5));
  std::vector<std::vector<OrientedBox>> gt(data.size());
  for (std::size_t s = 0; s < data.size(); ++s) gt[s] = visible_cars(data[s]);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    order_rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t epoch_rows = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_scenes) {
      const std::size_t nb = std::min<std::size_t>(cfg.batch_scenes, order.size() - b0);
      std::vector<std::vector<double>> grads(nb);
      std::vector<double> losses(nb, 0.0);
      std::vector<std::size_t> rows(nb, 0);
      std::vector<int> changed(nb, 0);
      parallel_for(nb, [&](std::size_t k) {
        const std::size_t s = order[b0 + k];
        const std::uint64_t key = hash_combine(hash_combine(cfg.seed, 0xE0C0 + epoch), s);
        PointCloud cloud;
        if (hook) {
          Scene copy = data[s];
          Rng hook_rng(hash_combine(key, 0xA06));
          if (hook(copy, hook_rng)) changed[k] = 1;
          cloud = std::move(copy.cloud);
        } else {
          cloud = data[s].cloud;
        }
        std::vector<OrientedBox> boxes = gt[s];
        Rng aug(hash_combine(key, 0x57A));
        if (cfg.standard_augmentation) {
          const double yaw = aug.uniform(-kPi, kPi);
          const bool flip = aug.uniform() < 0.5;
          rotate_flip_scene(cloud, boxes, yaw, flip);
        }
        const std::vector<double> f = net.features(cloud);
        std::vector<int> target(A, -1);
        for (std::size_t bi = 0; bi < boxes.size(); ++bi) {
          const std::size_t a = DetHeadMini::anchor_of(boxes[bi].center);
          if (a < A) target[a] = static_cast<int>(bi);
        }
        std::vector<std::size_t> empties;
        std::vector<std::size_t> train_rows;
        for (std::size_t a = 0; a < A; ++a) {
          if (target[a] >= 0 || f[a * DetHeadMini::kFeatures] > -1.0 + 1e-6)
            train_rows.push_back(a);
          else
            empties.push_back(a);
        }
        for (int e = 0; e < cfg.empty_negatives && !empties.empty(); ++e)
          train_rows.push_back(empties[aug.below(empties.size())]);
        std::vector<double>& g = grads[k];
        g.assign(P, 0.0);
        Mlp::Trace tr;
        std::vector<double> d(DetHeadMini::kOutputs);
        for (std::size_t a : train_rows) {
          net.mlp().forward(std::span<const double>(&f[a * DetHeadMini::kFeatures], DetHeadMini::kFeatures), tr);
          const std::vector<double>& o = tr.act.back();
          std::fill(d.begin(), d.end(), 0.0);
          const double sg = 1.0 / (1.0 + std::exp(-o[0]));
          const bool pos = target[a] >= 0;
          const double wgt = pos ? cfg.positive_weight : 1.0;
          // Stable BCE with logits.
          losses[k] += wgt * (std::max(o[0], 0.0) - (pos ? o[0] : 0.0) + std::log1p(std::exp(-std::abs(o[0]))));
          d[0] = wgt * (sg - (pos ? 1.0 : 0.0));
          if (pos) {
            const auto t = DetHeadMini::targets(a, boxes[target[a]]);
            for (int r = 0; r < DetHeadMini::kOutputs - 1; ++r) {
              const double diff = o[r + 1] - t[r];
              losses[k] += cfg.regression_weight * 0.5 * diff * diff;
              d[r + 1] = cfg.regression_weight * diff;
            }
          }
          net.mlp().backward(tr, d, g, nullptr);
        }
        rows[k] = train_rows.size();
      });
      std::vector<double> total(P, 0.0);
      std::size_t n_rows = 0;
      double batch_loss = 0.0;
      for (std::size_t k = 0; k < nb; ++k) {
        for (std::size_t q = 0; q < P; ++q) total[q] += grads[k][q];
        n_rows += rows[k];
        batch_loss += losses[k];
        if (log) log->hook_changes += changed[k];
      }
      if (!std::isfinite(batch_loss))
        throw NumericError("train_det: non-finite loss at epoch " + std::to_string(epoch) + ", batch starting at " +
                           std::to_string(b0));
      if (n_rows == 0) continue;
      for (auto& v : total) v /= static_cast<double>(n_rows);
      adam.step(net.mlp().params(), total);
      epoch_loss += batch_loss;
      epoch_rows += n_rows;
      if (log) log->batch_loss.push_back(batch_loss / static_cast<double>(n_rows));
    }
    if (log) log->epoch_loss.push_back(epoch_rows ? epoch_loss / static_cast<double>(epoch_rows) : 0.0);
  }
  return net;
}

}  // namespace advfield

#endif
