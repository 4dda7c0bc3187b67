#ifndef ADVFIELD_NN_HPP
#define ADVFIELD_NN_HPP

#include <cmath>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "advfield/geometry.hpp"

namespace advfield {

/// Dense network with tanh hidden layers and a linear output layer. All
/// parameters live in one flat array: for each layer, the row-major
/// (out x in) weight matrix followed by the bias.
class Mlp {
public:
  Mlp() = default;
  explicit Mlp(std::vector<int> sizes) : sizes_(std::move(sizes)) {
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      w_off_.push_back(off);
      off += static_cast<std::size_t>(sizes_[l]) * sizes_[l + 1];
      b_off_.push_back(off);
      off += sizes_[l + 1];
    }
    params_.assign(off, 0.0);
  }

  const std::vector<int>& sizes() const { return sizes_; }
  int inputs() const { return sizes_.front(); }
  int outputs() const { return sizes_.back(); }
  std::size_t layers() const { return sizes_.size() - 1; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  /// Glorot-uniform weights, zero biases.
  void init(std::uint64_t seed) {
    Rng rng(seed);
    for (std::size_t l = 0; l < layers(); ++l) {
      const double a = std::sqrt(6.0 / (sizes_[l] + sizes_[l + 1]));
      const std::size_t n = static_cast<std::size_t>(sizes_[l]) * sizes_[l + 1];
      for (std::size_t i = 0; i < n; ++i) params_[w_off_[l] + i] = rng.uniform(-a, a);
      for (int i = 0; i < sizes_[l + 1]; ++i) params_[b_off_[l] + i] = 0.0;
    }
  }

  /// Per-layer activations of one sample; act[0] is the input.
  struct Trace {
    std::vector<std::vector<double>> act;
  };

  void forward(std::span<const double> x, Trace& tr) const {
    tr.act.resize(sizes_.size());
    tr.act[0].assign(x.begin(), x.end());
    for (std::size_t l = 0; l < layers(); ++l) {
      const int nin = sizes_[l], nout = sizes_[l + 1];
      const double* w = &params_[w_off_[l]];
      const double* b = &params_[b_off_[l]];
      const std::vector<double>& in = tr.act[l];
      std::vector<double>& out = tr.act[l + 1];
      out.resize(nout);
      const bool hidden = l + 1 < layers();
      for (int o = 0; o < nout; ++o) {
        const double s = b[o] + dot_row(w + static_cast<std::size_t>(o) * nin, in.data(), nin);
        out[o] = hidden ? std::tanh(s) : s;
      }
    }
  }

  /// Back-propagates `g_out` (d loss / d output). Adds parameter gradients
  /// into `g_params` when non-empty; writes d loss / d input into `g_in`
  /// when non-null.
  void backward(const Trace& tr, std::span<const double> g_out, std::span<double> g_params,
                std::vector<double>* g_in) const {
    std::vector<double> g(g_out.begin(), g_out.end());
    std::vector<double> g_prev;
    for (std::size_t l = layers(); l-- > 0;) {
      const int nin = sizes_[l], nout = sizes_[l + 1];
      const double* w = &params_[w_off_[l]];
      const std::vector<double>& in = tr.act[l];
      if (!g_params.empty()) {
        double* gw = &g_params[w_off_[l]];
        double* gb = &g_params[b_off_[l]];
        for (int o = 0; o < nout; ++o) {
          gb[o] += g[o];
          double* row = gw + static_cast<std::size_t>(o) * nin;
          for (int i = 0; i < nin; ++i) row[i] += g[o] * in[i];
        }
      }
      if (l == 0 && g_in == nullptr) break;
      g_prev.assign(nin, 0.0);
      for (int o = 0; o < nout; ++o) {
        const double* row = w + static_cast<std::size_t>(o) * nin;
        for (int i = 0; i < nin; ++i) g_prev[i] += row[i] * g[o];
      }
      if (l > 0)
        for (int i = 0; i < nin; ++i) g_prev[i] *= 1.0 - in[i] * in[i];
      g.swap(g_prev);
    }
    if (g_in) *g_in = std::move(g);
  }

private:
  // Four interleaved partial sums in a fixed order: deterministic, and
  // free of the single add-latency chain.
  static double dot_row(const double* w, const double* x, int n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    int i = 0;
    for (; i + 4 <= n; i += 4) {
      s0 += w[i] * x[i];
      s1 += w[i + 1] * x[i + 1];
      s2 += w[i + 2] * x[i + 2];
      s3 += w[i + 3] * x[i + 3];
    }
    for (; i < n; ++i) s0 += w[i] * x[i];
    return (s0 + s1) + (s2 + s3);
  }

  std::vector<int> sizes_;
  std::vector<std::size_t> w_off_, b_off_;
  std::vector<double> params_;
};

/// Adam with bias correction.
struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<double> m, v;
  std::int64_t t = 0;

  void step(std::span<double> params, std::span<const double> grad) {
    if (m.size() != params.size()) {
      m.assign(params.size(), 0.0);
      v.assign(params.size(), 0.0);
    }
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
      params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
};

/// Uniform hash grid over 3D points for fixed-radius queries. Points are
/// stored sorted by cell, z fastest, so each vertical run of three cells
/// is one contiguous range.
class GridIndex {
public:
  GridIndex() = default;
  GridIndex(std::span<const Point3> points, double cell) : cell_(cell) {
    order_.resize(points.size());
    std::vector<std::int64_t> keys(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) keys[i] = key_of(points[i]);
    for (std::size_t i = 0; i < points.size(); ++i) order_[i] = static_cast<std::uint32_t>(i);
    std::stable_sort(order_.begin(), order_.end(), [&](std::uint32_t a, std::uint32_t b) { return keys[a] < keys[b]; });
    sorted_.resize(points.size());
    for (std::size_t s = 0; s < order_.size(); ++s) sorted_[s] = points[order_[s]];
    for (std::size_t s = 0; s < order_.size();) {
      std::size_t e = s;
      const std::int64_t k = keys[order_[s]];
      while (e < order_.size() && keys[order_[e]] == k) ++e;
      ranges_.emplace(k, std::pair<std::uint32_t, std::uint32_t>(static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(e)));
      s = e;
    }
  }

  /// Calls fn(j, position_j) for every indexed point in the 27 cells
  /// around `p` (candidates only; callers apply the exact radius test).
  template <class Fn>
  void for_candidates(const Point3& p, Fn&& fn) const {
    const std::int64_t cx = cell_coord(p.x), cy = cell_coord(p.y), cz = cell_coord(p.z);
    for (std::int64_t dx = -1; dx <= 1; ++dx)
      for (std::int64_t dy = -1; dy <= 1; ++dy) {
        std::uint32_t b = 0, e = 0;
        bool any = false;
        for (std::int64_t dz = -1; dz <= 1; ++dz) {
          const auto it = ranges_.find(pack(cx + dx, cy + dy, cz + dz));
          if (it == ranges_.end()) continue;
          if (!any) b = it->second.first;
          e = it->second.second;
          any = true;
        }
        for (std::uint32_t s = b; s < e; ++s) fn(order_[s], sorted_[s]);
      }
  }

private:
  std::int64_t cell_coord(double v) const { return static_cast<std::int64_t>(std::floor(v / cell_)); }
  static std::int64_t pack(std::int64_t x, std::int64_t y, std::int64_t z) {
    constexpr std::int64_t kBias = 1 << 20;
    return ((x + kBias) << 42) | ((y + kBias) << 21) | (z + kBias);
  }
  std::int64_t key_of(const Point3& p) const { return pack(cell_coord(p.x), cell_coord(p.y), cell_coord(p.z)); }

  double cell_ = 1.0;
  std::vector<std::uint32_t> order_;
  std::vector<Point3> sorted_;
  std::unordered_map<std::int64_t, std::pair<std::uint32_t, std::uint32_t>> ranges_;
};

}  // namespace advfield

#endif
