#ifndef ADVFIELD_VECTOR_FIELD_HPP
#define ADVFIELD_VECTOR_FIELD_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "advfield/geometry.hpp"
#include "advfield/point_cloud.hpp"

namespace advfield {

/// Reference box dimensions a field is built in (meters).
struct FieldDims {
  double width = 1.8;
  double height = 1.6;
  double length = 4.6;

  friend bool operator==(const FieldDims&, const FieldDims&) = default;
};

/// Canonical car box and the person box used with axis-aligned anchors.
inline constexpr FieldDims kCarDims{1.8, 1.6, 4.6};
inline constexpr FieldDims kPersonDims{0.54, 1.7, 0.66};

/// Number of lattice cells that fit along `extent` with spacing `step`.
/// The 1e-9 slack absorbs binary rounding (1.8 / 0.2 == 8.999...).
inline int lattice_cells(double extent, double step) {
  return static_cast<int>(std::floor(extent / step + 1e-9));
}

/// A lattice of learnable displacement vectors anchored inside a reference
/// box. Roots and vectors live in the box-local frame (x = length,
/// y = width, z = height). Roots are indexed as
/// (i_length * n_width + i_width) * n_height + i_height.
struct VectorField {
  FieldDims dims;
  double step = 0.2;
  int n_length = 0;
  int n_width = 0;
  int n_height = 0;
  std::vector<Vec3> roots;
  std::vector<Vec3> vectors;
  std::vector<double> tau_shift;  // intensity component, one per root
  int group = 1;                  // rotation group, 1-based
  int variant = 0;                // variant index, 0-based
  int class_id = 0;

  std::size_t size() const { return roots.size(); }

  std::size_t root_index(int il, int iw, int ih) const {
    return (static_cast<std::size_t>(il) * n_width + iw) * n_height + ih;
  }

  friend bool operator==(const VectorField&, const VectorField&) = default;
};

inline VectorField build_lattice(const FieldDims& dims, double step) {
  if (!(dims.width > 0.0 && dims.height > 0.0 && dims.length > 0.0))
    throw ConfigError("field dimensions must be positive");
  if (!(step > 0.0)) throw ConfigError("lattice step must be positive");
  VectorField f;
  f.dims = dims;
  f.step = step;
  f.n_length = lattice_cells(dims.length, step);
  f.n_width = lattice_cells(dims.width, step);
  f.n_height = lattice_cells(dims.height, step);
  if (f.n_length < 1 || f.n_width < 1 || f.n_height < 1)
    throw ConfigError("lattice step " + std::to_string(step) + " exceeds a box dimension");
  const std::size_t n = static_cast<std::size_t>(f.n_length) * f.n_width * f.n_height;
  f.roots.reserve(n);
  auto center = [step](int i, int cells) { return (i + 0.5) * step - 0.5 * cells * step; };
  for (int il = 0; il < f.n_length; ++il)
    for (int iw = 0; iw < f.n_width; ++iw)
      for (int ih = 0; ih < f.n_height; ++ih)
        f.roots.push_back({center(il, f.n_length), center(iw, f.n_width), center(ih, f.n_height)});
  f.vectors.assign(n, Vec3{});
  f.tau_shift.assign(n, 0.0);
  return f;
}

/// Every spatial and intensity component ~ U(-1 cm, 1 cm).
inline void init_random(VectorField& field, std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t j = 0; j < field.size(); ++j) {
    field.vectors[j] = {rng.uniform(-0.01, 0.01), rng.uniform(-0.01, 0.01), rng.uniform(-0.01, 0.01)};
    field.tau_shift[j] = rng.uniform(-0.01, 0.01);
  }
}

/// Per-component L-infinity projection: spatial components into
/// [-epsilon, epsilon], intensity shifts into [-psi, psi].
inline void clamp(VectorField& field, double epsilon, double psi) {
  if (!(epsilon > 0.0) || !(psi > 0.0)) throw ConfigError("clamp bounds must be positive");
  for (auto& v : field.vectors) {
    v.x = std::clamp(v.x, -epsilon, epsilon);
    v.y = std::clamp(v.y, -epsilon, epsilon);
    v.z = std::clamp(v.z, -epsilon, epsilon);
  }
  for (auto& t : field.tau_shift) t = std::clamp(t, -psi, psi);
}

/// Per-axis scale from the reference box to `box`, in local (length,
/// width, height) order.
inline Vec3 anchor_scale(const VectorField& field, const OrientedBox& box) {
  return {box.length / field.dims.length, box.width / field.dims.width, box.height / field.dims.height};
}

/// World-frame root positions once the field is fitted to `box`: scaled
/// per axis, rotated by the box yaw and moved to its center. Vectors are
/// not scaled.
inline std::vector<Point3> anchor(const VectorField& field, const OrientedBox& box) {
  const Vec3 s = anchor_scale(field, box);
  std::vector<Point3> out;
  out.reserve(field.size());
  for (const auto& r : field.roots) out.push_back(box.to_world({r.x * s.x, r.y * s.y, r.z * s.z}));
  return out;
}

/// World-frame displacement vectors of a field anchored with `yaw`.
inline Vec3 world_vector(const VectorField& field, std::size_t j, double yaw) {
  return rotate_yaw(field.vectors[j], yaw);
}

struct Neighbor {
  std::uint32_t root = 0;
  double squared_distance = 0.0;
};

/// k nearest anchored roots of `p` by Euclidean distance, ties broken by
/// lower root index. Searches the lattice shell by shell around the cell
/// holding `p` and stops once no unexplored root can beat the k-th hit.
inline std::vector<Neighbor> nearest_roots(const VectorField& field, const OrientedBox& box, const Point3& p,
                                           int k) {
  const Vec3 s = anchor_scale(field, box);
  const Vec3 q = box.to_local(p);
  const std::array<int, 3> cells{field.n_length, field.n_width, field.n_height};
  const std::array<double, 3> spacing{field.step * s.x, field.step * s.y, field.step * s.z};
  auto coord = [&](int axis, int i) { return ((i + 0.5) - 0.5 * cells[axis]) * spacing[axis]; };

  std::array<int, 3> origin{};
  for (int a = 0; a < 3; ++a) {
    const double fi = std::floor(q[a] / spacing[a] + 0.5 * cells[a]);
    origin[a] = static_cast<int>(std::clamp(fi, 0.0, static_cast<double>(cells[a] - 1)));
  }
  const std::size_t want = std::min<std::size_t>(static_cast<std::size_t>(std::max(k, 1)), field.size());

  std::vector<Neighbor> best;
  auto better = [](const Neighbor& a, const Neighbor& b) {
    return a.squared_distance < b.squared_distance ||
           (a.squared_distance == b.squared_distance && a.root < b.root);
  };
  auto offer = [&](int il, int iw, int ih) {
    const double dx = coord(0, il) - q.x;
    const double dy = coord(1, iw) - q.y;
    const double dz = coord(2, ih) - q.z;
    const Neighbor n{static_cast<std::uint32_t>(field.root_index(il, iw, ih)), dx * dx + dy * dy + dz * dz};
    if (best.size() < want) {
      best.insert(std::upper_bound(best.begin(), best.end(), n, better), n);
    } else if (better(n, best.back())) {
      best.pop_back();
      best.insert(std::upper_bound(best.begin(), best.end(), n, better), n);
    }
  };

  const int max_radius = std::max({cells[0], cells[1], cells[2]});
  for (int r = 0; r <= max_radius; ++r) {
    const int l0 = std::max(origin[0] - r, 0), l1 = std::min(origin[0] + r, cells[0] - 1);
    const int w0 = std::max(origin[1] - r, 0), w1 = std::min(origin[1] + r, cells[1] - 1);
    const int h0 = std::max(origin[2] - r, 0), h1 = std::min(origin[2] + r, cells[2] - 1);
    for (int il = l0; il <= l1; ++il)
      for (int iw = w0; iw <= w1; ++iw)
        for (int ih = h0; ih <= h1; ++ih) {
          const int cheb = std::max({std::abs(il - origin[0]), std::abs(iw - origin[1]), std::abs(ih - origin[2])});
          if (cheb == r) offer(il, iw, ih);
        }
    // Any root outside the explored index box differs on some axis by more
    // than r cells; its distance is at least that axis's gap.
    double bound = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
      if (origin[a] - r - 1 >= 0) bound = std::min(bound, q[a] - coord(a, origin[a] - r - 1));
      if (origin[a] + r + 1 < cells[a]) bound = std::min(bound, coord(a, origin[a] + r + 1) - q[a]);
    }
    if (bound == std::numeric_limits<double>::infinity()) break;
    if (best.size() == want && bound > 0.0 && best.back().squared_distance < bound * bound) break;
  }
  return best;
}

/// Frozen assignment of the points inside one box to their k nearest
/// vectors, with inverse-distance weights and unit sensor rays.
struct DeformationPlan {
  int k = 2;
  double yaw = 0.0;                     // box yaw; rotates local vectors to world
  std::vector<std::size_t> points;      // indices into the planned cloud
  std::vector<std::uint32_t> neighbors; // points.size() * k root indices
  std::vector<double> weights;          // points.size() * k, rows sum to 1
  std::vector<Vec3> rays;               // unit direction sensor -> point

  std::size_t size() const { return points.size(); }
};

/// Plans every point inside `box` grown by `margin` on each side.
inline DeformationPlan plan(const PointCloud& cloud, const OrientedBox& box, const VectorField& field,
                            const Point3& sensor, int k, double margin = 0.0) {
  if (k < 1) throw ConfigError("k must be at least 1");
  if (static_cast<std::size_t>(k) > field.size())
    throw ConfigError("k exceeds the number of vectors in the field");
  DeformationPlan pl;
  pl.k = k;
  pl.yaw = box.yaw;
  const OrientedBox select = box.inflated(margin);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Point3& p = cloud.positions[i];
    if (!box_contains(select, p)) continue;
    const Vec3 d = p - sensor;
    const double len = norm(d);
    if (len < 1e-12) throw NumericError("point " + std::to_string(i) + " coincides with the sensor");
    const auto nn = nearest_roots(field, box, p, k);
    pl.points.push_back(i);
    pl.rays.push_back(d * (1.0 / len));
    std::size_t hard = nn.size();
    for (std::size_t j = 0; j < nn.size(); ++j)
      if (std::sqrt(nn[j].squared_distance) < 1e-9) {
        hard = j;
        break;
      }
    double total = 0.0;
    std::vector<double> w(nn.size());
    for (std::size_t j = 0; j < nn.size(); ++j) {
      w[j] = hard < nn.size() ? (j == hard ? 1.0 : 0.0) : 1.0 / std::sqrt(nn[j].squared_distance);
      total += w[j];
    }
    for (std::size_t j = 0; j < nn.size(); ++j) {
      pl.neighbors.push_back(nn[j].root);
      pl.weights.push_back(w[j] / total);
    }
  }
  return pl;
}

/// Signed slide of planned point `row` along its ray:
/// sum_j w_ij (u_i . R v_j).
inline double ray_shift(const DeformationPlan& pl, const VectorField& field, std::size_t row) {
  const Vec3 u_local = rotate_yaw(pl.rays[row], -pl.yaw);
  double s = 0.0;
  for (int j = 0; j < pl.k; ++j) {
    const std::size_t slot = row * pl.k + j;
    s += pl.weights[slot] * dot(u_local, field.vectors[pl.neighbors[slot]]);
  }
  return s;
}

/// Intensity change of planned point `row` before clipping.
inline double tau_shift(const DeformationPlan& pl, const VectorField& field, std::size_t row) {
  double s = 0.0;
  for (int j = 0; j < pl.k; ++j) {
    const std::size_t slot = row * pl.k + j;
    s += pl.weights[slot] * field.tau_shift[pl.neighbors[slot]];
  }
  return s;
}

/// Applies the field in place: every planned point slides along its ray by
/// the weighted sum of its projected vectors; intensities shift by the
/// weighted intensity component and are clipped to [0, 1].
inline void deform_in_place(PointCloud& cloud, const DeformationPlan& pl, const VectorField& field,
                            bool with_intensity = true) {
  for (std::size_t row = 0; row < pl.size(); ++row) {
    const std::size_t i = pl.points[row];
    cloud.positions[i] += pl.rays[row] * ray_shift(pl, field, row);
    if (with_intensity)
      cloud.intensities[i] = std::clamp(cloud.intensities[i] + tau_shift(pl, field, row), 0.0, 1.0);
  }
}

inline PointCloud deform(const PointCloud& cloud, const DeformationPlan& pl, const VectorField& field,
                         bool with_intensity = true) {
  PointCloud out = cloud;
  deform_in_place(out, pl, field, with_intensity);
  return out;
}

using Mat3 = std::array<std::array<double, 3>, 3>;

/// Gradient of a scalar loss with respect to one field's components.
struct FieldGradient {
  std::vector<Vec3> vectors;
  std::vector<double> tau;

  FieldGradient() = default;
  explicit FieldGradient(std::size_t n) : vectors(n), tau(n, 0.0) {}

  FieldGradient& operator+=(const FieldGradient& o) {
    for (std::size_t j = 0; j < vectors.size(); ++j) {
      vectors[j] += o.vectors[j];
      tau[j] += o.tau[j];
    }
    return *this;
  }
};

/// Linear map from field components to planned point displacements.
/// For planned point i and its neighbor slot j, the displacement block
/// w.r.t. the world-frame vector is w_ij u_i u_i^T; intensities pass
/// through with weight w_ij unless the [0, 1] clip is active.
class ShiftJacobian {
public:
  explicit ShiftJacobian(const DeformationPlan& pl) : plan_(&pl) {}

  Mat3 block(std::size_t row, int slot) const {
    const double w = plan_->weights[row * plan_->k + slot];
    const Vec3& u = plan_->rays[row];
    Mat3 m{};
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) m[a][b] = w * u[a] * u[b];
    return m;
  }

  /// Same block expressed w.r.t. the box-local vector (block * R(yaw)).
  Mat3 local_block(std::size_t row, int slot) const {
    const Mat3 w = block(row, slot);
    const double c = std::cos(plan_->yaw), s = std::sin(plan_->yaw);
    Mat3 m{};
    for (int a = 0; a < 3; ++a) {
      m[a][0] = w[a][0] * c + w[a][1] * s;
      m[a][1] = -w[a][0] * s + w[a][1] * c;
      m[a][2] = w[a][2];
    }
    return m;
  }

  /// Pulls per-point gradients back onto the field's local vectors.
  /// `grad_pos` / `grad_tau` are indexed like the planned cloud;
  /// `clean_tau` supplies the pre-deformation intensities to detect
  /// active clips.
  void accumulate(const VectorField& field, std::span<const Vec3> grad_pos, std::span<const double> grad_tau,
                  std::span<const double> clean_tau, FieldGradient& out) const {
    const DeformationPlan& pl = *plan_;
    for (std::size_t row = 0; row < pl.size(); ++row) {
      const std::size_t i = pl.points[row];
      const Vec3 u_local = rotate_yaw(pl.rays[row], -pl.yaw);
      const double along = dot(grad_pos[i], pl.rays[row]);
      bool tau_live = !grad_tau.empty();
      if (tau_live) {
        const double raw = clean_tau[i] + tau_shift(pl, field, row);
        tau_live = raw >= 0.0 && raw <= 1.0;
      }
      for (int j = 0; j < pl.k; ++j) {
        const std::size_t slot = row * pl.k + j;
        const double w = pl.weights[slot];
        out.vectors[pl.neighbors[slot]] += u_local * (w * along);
        if (tau_live) out.tau[pl.neighbors[slot]] += w * grad_tau[i];
      }
    }
  }

private:
  const DeformationPlan* plan_;
};

inline ShiftJacobian shift_jacobian(const DeformationPlan& pl) { return ShiftJacobian(pl); }

/// G * N fields of one class, indexed by (group g in 1..G, variant n in
/// 0..N-1).
struct FieldBank {
  int class_id = 1;
  std::string class_name = "car";
  int groups = 12;
  int variants = 6;
  FieldDims dims = kCarDims;
  double step = 0.2;
  double epsilon = 0.3;
  double psi = 0.3;
  bool intensity = true;
  std::uint64_t init_seed = 0;
  std::vector<VectorField> fields;

  bool empty() const { return fields.empty(); }
  std::size_t index(int g, int n) const { return static_cast<std::size_t>(g - 1) * variants + n; }
  VectorField& field(int g, int n) { return fields.at(index(g, n)); }
  const VectorField& field(int g, int n) const { return fields.at(index(g, n)); }

  std::size_t total_vectors() const {
    std::size_t n = 0;
    for (const auto& f : fields) n += f.size();
    return n;
  }

  friend bool operator==(const FieldBank&, const FieldBank&) = default;
};

/// Seed used to initialize field (g, n) of a bank created with `seed`.
inline std::uint64_t field_seed(std::uint64_t seed, int g, int n) {
  return hash_combine(seed, static_cast<std::uint64_t>(g) * 1000003ULL + static_cast<std::uint64_t>(n));
}

inline FieldBank make_bank(int class_id, std::string class_name, int groups, int variants, FieldDims dims,
                           double step, double epsilon, double psi, bool intensity, std::uint64_t seed) {
  if (groups < 1 || variants < 1) throw ConfigError("bank needs G >= 1 and N >= 1");
  FieldBank bank;
  bank.class_id = class_id;
  bank.class_name = std::move(class_name);
  bank.groups = groups;
  bank.variants = variants;
  bank.dims = dims;
  bank.step = step;
  bank.epsilon = epsilon;
  bank.psi = psi;
  bank.intensity = intensity;
  bank.init_seed = seed;
  const VectorField proto = build_lattice(dims, step);
  bank.fields.reserve(static_cast<std::size_t>(groups) * variants);
  for (int g = 1; g <= groups; ++g)
    for (int n = 0; n < variants; ++n) {
      VectorField f = proto;
      f.group = g;
      f.variant = n;
      f.class_id = class_id;
      init_random(f, field_seed(seed, g, n));
      if (!intensity) std::fill(f.tau_shift.begin(), f.tau_shift.end(), 0.0);
      bank.fields.push_back(std::move(f));
    }
  return bank;
}

}  // namespace advfield

#endif
