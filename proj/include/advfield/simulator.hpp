#ifndef ADVFIELD_SIMULATOR_HPP
#define ADVFIELD_SIMULATOR_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "advfield/geometry.hpp"
#include "advfield/point_cloud.hpp"

namespace advfield {

/// Spinning LiDAR: `channels` elevation rings spread linearly over
/// [min_elevation, max_elevation] degrees, one firing per azimuth step.
struct SensorSpec {
  double height = 1.8;
  int channels = 32;
  double min_elevation_deg = -25.0;
  double max_elevation_deg = 3.0;
  double azimuth_resolution_deg = 0.4;
  double max_range = 80.0;
  double range_noise = 0.01;

  Point3 origin() const { return {0.0, 0.0, height}; }
  int azimuth_steps() const { return static_cast<int>(std::lround(360.0 / azimuth_resolution_deg)); }
  std::size_t ray_count() const { return static_cast<std::size_t>(channels) * azimuth_steps(); }

  Vec3 direction(int channel, int step) const {
    const double elev_deg =
        min_elevation_deg + (max_elevation_deg - min_elevation_deg) * channel / std::max(channels - 1, 1);
    const double el = elev_deg * kPi / 180.0;
    const double az = kTwoPi * step / azimuth_steps();
    return {std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
  }

  void validate() const {
    if (channels < 2) throw ConfigError("sensor needs at least 2 channels");
    if (!(azimuth_resolution_deg > 0.0)) throw ConfigError("azimuth resolution must be positive");
    if (!(max_range > 0.0)) throw ConfigError("max range must be positive");
  }
};

enum class Domain { normal, rare, damaged };

inline const char* to_string(Domain d) {
  switch (d) {
    case Domain::normal: return "normal";
    case Domain::rare: return "rare";
    case Domain::damaged: return "damaged";
  }
  return "normal";
}

inline Domain parse_domain(const std::string& s) {
  if (s == "normal") return Domain::normal;
  if (s == "rare") return Domain::rare;
  if (s == "damaged") return Domain::damaged;
  throw ConfigError("unknown domain '" + s + "' (expected normal, rare or damaged)");
}

struct Hit {
  double t_in = std::numeric_limits<double>::infinity();
  double t_out = std::numeric_limits<double>::infinity();
  Vec3 normal;
  bool valid() const { return std::isfinite(t_in); }
};

/// Analytic solid used for exact ray casting.
struct Primitive {
  enum class Kind { polytope, cylinder, sphere };
  Kind kind = Kind::polytope;
  // polytope: intersection of half-spaces n . x <= d (world frame)
  std::vector<std::pair<Vec3, double>> planes;
  // cylinder (vertical) / sphere
  Point3 center;
  double radius = 0.0;
  double z_min = 0.0, z_max = 0.0;

  bool contains(const Point3& p, double slack = 1e-9) const {
    switch (kind) {
      case Kind::polytope:
        for (const auto& [n, d] : planes)
          if (dot(n, p) > d + slack) return false;
        return true;
      case Kind::cylinder:
        return p.z >= z_min - slack && p.z <= z_max + slack &&
               std::hypot(p.x - center.x, p.y - center.y) <= radius + slack;
      case Kind::sphere:
        return distance(p, center) <= radius + slack;
    }
    return false;
  }

  Hit intersect(const Ray& r) const {
    Hit h;
    switch (kind) {
      case Kind::polytope: {
        double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
        Vec3 n0;
        for (const auto& [n, d] : planes) {
          const double denom = dot(n, r.direction);
          const double num = d - dot(n, r.origin);
          if (std::abs(denom) < 1e-15) {
            if (num < 0.0) return h;
            continue;
          }
          const double t = num / denom;
          if (denom < 0.0) {
            if (t > t0) {
              t0 = t;
              n0 = n;
            }
          } else {
            t1 = std::min(t1, t);
          }
          if (t0 > t1) return h;
        }
        if (t0 <= 0.0) return h;  // origin inside or no entering face
        h.t_in = t0;
        h.t_out = t1;
        h.normal = n0;
        return h;
      }
      case Kind::cylinder: {
        const double ox = r.origin.x - center.x, oy = r.origin.y - center.y;
        const double dx = r.direction.x, dy = r.direction.y;
        const double a = dx * dx + dy * dy;
        double ts0 = -std::numeric_limits<double>::infinity(), ts1 = std::numeric_limits<double>::infinity();
        if (a > 1e-15) {
          const double b = ox * dx + oy * dy;
          const double c = ox * ox + oy * oy - radius * radius;
          const double disc = b * b - a * c;
          if (disc < 0.0) return h;
          const double sq = std::sqrt(disc);
          ts0 = (-b - sq) / a;
          ts1 = (-b + sq) / a;
        } else if (ox * ox + oy * oy > radius * radius) {
          return h;
        }
        double tz0 = -std::numeric_limits<double>::infinity(), tz1 = std::numeric_limits<double>::infinity();
        if (std::abs(r.direction.z) > 1e-15) {
          tz0 = (z_min - r.origin.z) / r.direction.z;
          tz1 = (z_max - r.origin.z) / r.direction.z;
          if (tz0 > tz1) std::swap(tz0, tz1);
        } else if (r.origin.z < z_min || r.origin.z > z_max) {
          return h;
        }
        const double t0 = std::max(ts0, tz0), t1 = std::min(ts1, tz1);
        if (t0 > t1 || t0 <= 0.0) return h;
        h.t_in = t0;
        h.t_out = t1;
        const Point3 p = r.at(t0);
        if (t0 == tz0)
          h.normal = {0.0, 0.0, r.direction.z > 0.0 ? -1.0 : 1.0};
        else
          h.normal = normalized(Vec3{p.x - center.x, p.y - center.y, 0.0});
        return h;
      }
      case Kind::sphere: {
        const Vec3 o = r.origin - center;
        const double b = dot(o, r.direction);
        const double c = dot(o, o) - radius * radius;
        const double disc = b * b - c;
        if (disc < 0.0) return h;
        const double sq = std::sqrt(disc);
        const double t0 = -b - sq, t1 = -b + sq;
        if (t0 <= 0.0) return h;
        h.t_in = t0;
        h.t_out = t1;
        h.normal = normalized(r.at(t0) - center);
        return h;
      }
    }
    return h;
  }
};

/// Convex prism from local-frame half-spaces, placed by `pose`.
inline Primitive make_polytope(const std::vector<std::pair<Vec3, double>>& local_planes,
                               const RigidTransform& pose) {
  Primitive p;
  p.kind = Primitive::Kind::polytope;
  for (const auto& [n, d] : local_planes) {
    const Vec3 nw = pose.apply_vector(n);
    p.planes.emplace_back(nw, d + dot(nw, pose.translation));
  }
  return p;
}

/// Local axis-aligned box [lo, hi] as half-spaces.
inline std::vector<std::pair<Vec3, double>> box_planes(const Vec3& lo, const Vec3& hi) {
  return {{{1, 0, 0}, hi.x}, {{-1, 0, 0}, -lo.x}, {{0, 1, 0}, hi.y},
          {{0, -1, 0}, -lo.y}, {{0, 0, 1}, hi.z}, {{0, 0, -1}, -lo.z}};
}

/// Inward dent: hits within `radius` of `center` are pushed deeper along
/// their ray by up to `depth` (smooth bump profile).
struct Dent {
  Point3 center;
  double radius = 0.5;
  double depth = 0.2;

  double depth_at(const Point3& p) const {
    const double d2 = squared_norm(p - center) / (radius * radius);
    if (d2 >= 1.0) return 0.0;
    const double s = 1.0 - d2;
    return depth * s * s;
  }
};

struct ObjectSpec {
  std::uint16_t semantic = classes::kCar;
  std::uint16_t instance = 0;
  OrientedBox box;  // ground-truth pose
  Domain domain = Domain::normal;
  double reflectivity = 0.3;
  std::vector<Primitive> parts;
  std::vector<Dent> dents;
};

struct LabeledBox {
  std::uint16_t semantic = 0;
  std::uint16_t instance = 0;
  OrientedBox box;
};

struct Scene {
  std::uint64_t seed = 0;
  Domain domain = Domain::normal;
  SensorSpec sensor;
  double ground_reflectivity = 0.2;
  std::vector<ObjectSpec> objects;
  PointCloud cloud;
  std::vector<std::uint32_t> ray_index;  // channel * azimuth_steps + step, per point

  Point3 sensor_origin() const { return sensor.origin(); }

  std::vector<LabeledBox> boxes() const {
    std::vector<LabeledBox> out;
    out.reserve(objects.size());
    for (const auto& o : objects) out.push_back({o.semantic, o.instance, o.box});
    return out;
  }

  std::vector<OrientedBox> boxes_of(std::uint16_t semantic) const {
    std::vector<OrientedBox> out;
    for (const auto& o : objects)
      if (o.semantic == semantic) out.push_back(o.box);
    return out;
  }
};

inline constexpr double kCarLength = 4.6;
inline constexpr double kCarWidth = 1.8;
inline constexpr double kCarHeight = 1.6;

namespace sim {

inline constexpr double kMinRange = 5.0;
inline constexpr double kMaxPlacementRange = 60.0;

/// Car body box plus a cabin with sloped windshields, in box-local
/// coordinates (z measured from the box center).
inline std::vector<Primitive> car_parts(const OrientedBox& box, double cabin_offset) {
  const double L = box.length, W = box.width, H = box.height;
  const double z0 = -0.5 * H;
  const double clear = z0 + 0.12 * H, body_top = z0 + 0.58 * H, roof = z0 + H;
  const RigidTransform pose{box.yaw, box.center};
  std::vector<Primitive> parts;
  parts.push_back(make_polytope(box_planes({-0.5 * L, -0.5 * W, clear}, {0.5 * L, 0.5 * W, body_top}), pose));
  const double xc = cabin_offset * L;
  const double fb = std::min(xc + 0.22 * L, 0.5 * L), ft = xc + 0.08 * L;
  const double bb = std::max(xc - 0.30 * L, -0.5 * L), bt = xc - 0.22 * L;
  const double dz = roof - body_top;
  std::vector<std::pair<Vec3, double>> cabin{
      {{0, 1, 0}, 0.45 * W}, {{0, -1, 0}, 0.45 * W}, {{0, 0, 1}, roof}, {{0, 0, -1}, -body_top}};
  const Vec3 nf{dz, 0.0, fb - ft};
  cabin.emplace_back(nf, dot(nf, Vec3{fb, 0.0, body_top}));
  const Vec3 nb{-dz, 0.0, bt - bb};
  cabin.emplace_back(nb, dot(nb, Vec3{bb, 0.0, body_top}));
  parts.push_back(make_polytope(cabin, pose));
  return parts;
}

/// Legs and torso prisms with a spherical head.
inline std::vector<Primitive> person_parts(const OrientedBox& box) {
  const double L = box.length, W = box.width, H = box.height;
  const double z0 = -0.5 * H;
  const RigidTransform pose{box.yaw, box.center};
  std::vector<Primitive> parts;
  const double head_r = 0.07 * H;
  const double neck = z0 + H - 2.0 * head_r;
  parts.push_back(make_polytope(box_planes({-0.35 * L, -0.32 * W, z0}, {0.35 * L, 0.32 * W, z0 + 0.5 * H}), pose));
  parts.push_back(make_polytope(box_planes({-0.5 * L, -0.5 * W, z0 + 0.5 * H}, {0.5 * L, 0.5 * W, neck}), pose));
  Primitive head;
  head.kind = Primitive::Kind::sphere;
  head.center = pose.apply(Vec3{0.0, 0.0, neck + head_r});
  head.radius = head_r;
  parts.push_back(head);
  return parts;
}

inline std::vector<Primitive> building_parts(const OrientedBox& box) {
  const Vec3 h = box.half_extents();
  return {make_polytope(box_planes(-h, h), RigidTransform{box.yaw, box.center})};
}

/// A few overlapping spheres on a short trunk; the box is their bound.
inline std::vector<Primitive> vegetation_parts(const Point3& base, Rng& rng, OrientedBox& box_out) {
  std::vector<Primitive> parts;
  const int blobs = 3 + static_cast<int>(rng.below(3));
  const double crown = rng.uniform(1.2, 2.5);
  Vec3 lo{1e300, 1e300, 0.0}, hi{-1e300, -1e300, -1e300};
  Primitive trunk;
  trunk.kind = Primitive::Kind::cylinder;
  trunk.center = {base.x, base.y, 0.0};
  trunk.radius = rng.uniform(0.12, 0.25);
  trunk.z_min = 0.0;
  trunk.z_max = crown;
  parts.push_back(trunk);
  lo = {base.x - trunk.radius, base.y - trunk.radius, 0.0};
  hi = {base.x + trunk.radius, base.y + trunk.radius, crown};
  for (int b = 0; b < blobs; ++b) {
    Primitive s;
    s.kind = Primitive::Kind::sphere;
    s.radius = rng.uniform(0.6, 1.4);
    s.center = {base.x + rng.uniform(-0.8, 0.8), base.y + rng.uniform(-0.8, 0.8),
                crown + rng.uniform(0.0, 1.2)};
    s.center.z = std::max(s.center.z, s.radius);
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], s.center[a] - s.radius);
      hi[a] = std::max(hi[a], s.center[a] + s.radius);
    }
    parts.push_back(s);
  }
  lo.z = 0.0;
  box_out.center = (lo + hi) * 0.5;
  box_out.length = hi.x - lo.x;
  box_out.width = hi.y - lo.y;
  box_out.height = hi.z - lo.z;
  box_out.yaw = 0.0;
  return parts;
}

inline double rare_factor(Rng& rng) {
  return rng.uniform() < 0.5 ? rng.uniform(0.7, 0.8) : rng.uniform(1.25, 1.4);
}

}  // namespace sim

/// Layout, shapes and labels of one scene before ray casting. The layout
/// stream is shared by all domains, so scenes with the same seed differ
/// only in their cars.
inline Scene generate_layout(std::uint64_t seed, Domain domain, int n_objects, const SensorSpec& sensor,
                             std::vector<std::string>* warnings = nullptr) {
  if (n_objects < 1) throw ConfigError("a scene needs at least one object");
  sensor.validate();
  Scene scene;
  scene.seed = seed;
  scene.domain = domain;
  scene.sensor = sensor;
  Rng layout(hash_combine(seed, 1));
  Rng shape(hash_combine(seed, 2));
  scene.ground_reflectivity = layout.uniform(0.08, 0.22);

  static constexpr std::uint16_t kCycle[] = {classes::kCar,    classes::kPerson, classes::kBuilding,
                                             classes::kCar,    classes::kVegetation, classes::kCar,
                                             classes::kPerson, classes::kVegetation, classes::kBuilding,
                                             classes::kCar};
  struct Footprint {
    double x, y, r;
  };
  std::vector<Footprint> placed;
  std::uint16_t next_instance = 1;

  for (int k = 0; k < n_objects; ++k) {
    const std::uint16_t cls = kCycle[k % 10];
    // Draw every shape parameter up front so the stream stays aligned
    // whether or not placement succeeds.
    const double u_len = layout.uniform(), u_wid = layout.uniform(), u_hgt = layout.uniform();
    const double cabin = layout.uniform(-0.1, 0.05);
    const double yaw = layout.uniform(-kPi, kPi);
    const double refl_u = layout.uniform();
    const std::uint64_t veg_seed = layout.next();

    OrientedBox box;
    double refl = 0.3;
    switch (cls) {
      case classes::kCar:
        box.length = kCarLength * (0.95 + 0.1 * u_len);
        box.width = kCarWidth * (0.95 + 0.1 * u_wid);
        box.height = kCarHeight * (0.95 + 0.1 * u_hgt);
        refl = 0.05 + 0.35 * refl_u;
        break;
      case classes::kPerson:
        box.length = 0.25 + 0.1 * u_len;
        box.width = 0.45 + 0.15 * u_wid;
        box.height = 1.55 + 0.3 * u_hgt;
        refl = 0.3 + 0.25 * refl_u;
        break;
      case classes::kBuilding:
        box.length = 6.0 + 10.0 * u_len;
        box.width = 3.0 + 5.0 * u_wid;
        box.height = 3.0 + 6.0 * u_hgt;
        refl = 0.45 + 0.35 * refl_u;
        break;
      default:
        refl = 0.2 + 0.4 * refl_u;
        break;
    }
    // Cars reserve room for the largest rare re-proportioning so that
    // every domain shares the same layout.
    const double reserve = cls == classes::kCar ? 1.4 : 1.0;
    double footprint = cls == classes::kVegetation ? 3.0 : 0.5 * std::hypot(box.length, box.width) * reserve;
    footprint += 0.5;

    bool ok = false;
    double x = 0.0, y = 0.0;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
      const double range = layout.uniform(sim::kMinRange, sim::kMaxPlacementRange);
      const double az = layout.uniform(0.0, kTwoPi);
      x = range * std::cos(az);
      y = range * std::sin(az);
      if (std::hypot(x, y) - footprint < 2.0) continue;
      ok = std::none_of(placed.begin(), placed.end(), [&](const Footprint& f) {
        return std::hypot(f.x - x, f.y - y) < f.r + footprint;
      });
    }
    if (!ok) {
      if (warnings) warnings->push_back("object " + std::to_string(k) + " could not be placed after 100 tries");
      continue;
    }
    placed.push_back({x, y, footprint});

    ObjectSpec obj;
    obj.semantic = cls;
    obj.instance = next_instance++;
    obj.domain = domain;
    obj.reflectivity = refl;
    if (cls == classes::kVegetation) {
      Rng veg(veg_seed);
      obj.parts = sim::vegetation_parts({x, y, 0.0}, veg, box);
    } else {
      if (cls == classes::kCar && domain == Domain::rare) {
        box.length *= sim::rare_factor(shape);
        box.width *= sim::rare_factor(shape);
        box.height *= sim::rare_factor(shape);
      }
      box.center = {x, y, 0.5 * box.height};
      box.yaw = yaw;
      switch (cls) {
        case classes::kCar: obj.parts = sim::car_parts(box, cabin); break;
        case classes::kPerson: obj.parts = sim::person_parts(box); break;
        default: obj.parts = sim::building_parts(box); break;
      }
      if (cls == classes::kCar && domain == Domain::damaged) {
        const int dents = 1 + static_cast<int>(shape.below(3));
        const Point3 s = sensor.origin();
        for (int d = 0; d < dents; ++d) {
          // Dent centers sit on a side face that looks at the sensor.
          const Vec3 to_sensor = box.to_local(s);
          const bool side = shape.uniform() < 0.6;
          Vec3 local;
          if (side) {
            local = {shape.uniform(-0.4, 0.4) * box.length, to_sensor.y > 0 ? 0.5 * box.width : -0.5 * box.width,
                     shape.uniform(-0.3, 0.1) * box.height};
          } else {
            local = {to_sensor.x > 0 ? 0.5 * box.length : -0.5 * box.length, shape.uniform(-0.4, 0.4) * box.width,
                     shape.uniform(-0.3, 0.1) * box.height};
          }
          obj.dents.push_back({box.to_world(local), shape.uniform(0.5, 1.0), shape.uniform(0.15, 0.3)});
        }
      }
    }
    obj.box = box;
    scene.objects.push_back(std::move(obj));
  }
  return scene;
}

/// Casts every (channel, azimuth) ray; the nearest surface wins. Range
/// noise (truncated to one sigma) is drawn per ray index, so two scenes
/// with the same seed share noise on every ray.
inline PointCloud raycast(Scene& scene) {
  const SensorSpec& sensor = scene.sensor;
  const Point3 origin = sensor.origin();
  const int steps = sensor.azimuth_steps();
  PointCloud cloud;
  cloud.reserve(sensor.ray_count() / 2);
  scene.ray_index.clear();

  struct Bound {
    double az_center, half_span, near;
  };
  std::vector<Bound> bounds;
  for (const auto& o : scene.objects) {
    const double dx = o.box.center.x - origin.x, dy = o.box.center.y - origin.y;
    const double r = std::hypot(dx, dy);
    const double rad = 0.5 * std::hypot(std::hypot(o.box.length, o.box.width), o.box.height) + 1.0;
    const double half = r > rad ? std::asin(rad / r) : kPi;
    bounds.push_back({std::atan2(dy, dx), half, r - rad});
  }

  for (int ch = 0; ch < sensor.channels; ++ch) {
    for (int st = 0; st < steps; ++st) {
      const Ray ray{origin, sensor.direction(ch, st)};
      const double az = kTwoPi * st / steps;
      double best_t = std::numeric_limits<double>::infinity();
      Hit best_hit;
      int best_obj = -1;
      if (ray.direction.z < -1e-12) {
        best_t = -origin.z / ray.direction.z;
        best_hit.t_in = best_t;
        best_hit.normal = {0, 0, 1};
      }
      for (std::size_t oi = 0; oi < scene.objects.size(); ++oi) {
        const Bound& b = bounds[oi];
        if (b.half_span < kPi && std::abs(wrap_pi(az - b.az_center)) > b.half_span + 1e-3) continue;
        if (b.near > best_t) continue;
        const auto& parts = scene.objects[oi].parts;
        for (std::size_t pi = 0; pi < parts.size(); ++pi) {
          const Hit h = parts[pi].intersect(ray);
          if (h.valid() && h.t_in < best_t) {
            best_t = h.t_in;
            best_hit = h;
            best_obj = static_cast<int>(oi);
          }
        }
      }
      if (!std::isfinite(best_t)) continue;
      double t = best_t;
      double refl = scene.ground_reflectivity;
      std::uint16_t sem = classes::kGround, inst = 0;
      if (best_obj >= 0) {
        const ObjectSpec& o = scene.objects[best_obj];
        refl = o.reflectivity;
        sem = o.semantic;
        inst = o.instance;
        if (!o.dents.empty()) {
          double push = 0.0;
          for (const auto& d : o.dents) push = std::max(push, d.depth_at(ray.at(t)));
          // Stay inside the primitive that was hit.
          push = std::min(push, std::max(0.0, best_hit.t_out - t - 0.02));
          t += push;
        }
      }
      const std::uint32_t ray_id = static_cast<std::uint32_t>(ch * steps + st);
      Rng noise(hash_combine(scene.seed, 0x5eed0000ULL + ray_id));
      const double n = std::clamp(noise.normal(), -1.0, 1.0) * sensor.range_noise;
      const double jitter = noise.uniform(-0.02, 0.02);
      t += n;
      if (t > sensor.max_range || t <= 0.0) continue;
      const double incidence = std::abs(dot(best_hit.normal, ray.direction));
      const double falloff = 1.0 - 0.25 * std::min(t, 80.0) / 80.0;
      const double tau = std::clamp(refl * (0.8 + 0.2 * incidence) * falloff + jitter, 0.0, 1.0);
      cloud.push_back(ray.at(t), tau, sem, inst);
      scene.ray_index.push_back(ray_id);
    }
  }
  scene.cloud = cloud;
  return cloud;
}

inline Scene generate_scene(std::uint64_t seed, Domain domain, int n_objects, const SensorSpec& sensor = {},
                            std::vector<std::string>* warnings = nullptr) {
  Scene s = generate_layout(seed, domain, n_objects, sensor, warnings);
  raycast(s);
  return s;
}

struct SplitSizes {
  int train = 200;
  int val = 50;
  int ood_rare = 50;
  int ood_damaged = 50;
};

struct Splits {
  std::vector<Scene> train, val, ood_rare, ood_damaged;
};

/// Scene seed for global index `i`; splits take consecutive, disjoint
/// index ranges (train, val, ood-rare, ood-damaged).
inline std::uint64_t scene_seed(std::uint64_t base, std::size_t i) { return hash_combine(base, 0xC0FFEEULL + i); }

inline std::vector<Scene> generate_scenes(const std::vector<std::uint64_t>& seeds, Domain domain, int n_objects,
                                          const SensorSpec& sensor) {
  std::vector<Scene> out(seeds.size());
  parallel_for(seeds.size(), [&](std::size_t i) { out[i] = generate_scene(seeds[i], domain, n_objects, sensor); });
  return out;
}

struct SplitSeeds {
  std::vector<std::uint64_t> train, val, ood_rare, ood_damaged;
};

inline SplitSeeds split_seeds(std::uint64_t base, const SplitSizes& sizes) {
  SplitSeeds s;
  std::size_t i = 0;
  for (int k = 0; k < sizes.train; ++k) s.train.push_back(scene_seed(base, i++));
  for (int k = 0; k < sizes.val; ++k) s.val.push_back(scene_seed(base, i++));
  for (int k = 0; k < sizes.ood_rare; ++k) s.ood_rare.push_back(scene_seed(base, i++));
  for (int k = 0; k < sizes.ood_damaged; ++k) s.ood_damaged.push_back(scene_seed(base, i++));
  return s;
}

/// Out-of-domain splits re-use their own seeds with normal cars when a
/// paired clean reference is needed (see `paired_clean`).
inline Splits make_splits(std::uint64_t base, const SplitSizes& sizes, int n_objects = 10,
                          const SensorSpec& sensor = {}) {
  const SplitSeeds seeds = split_seeds(base, sizes);
  Splits s;
  s.train = generate_scenes(seeds.train, Domain::normal, n_objects, sensor);
  s.val = generate_scenes(seeds.val, Domain::normal, n_objects, sensor);
  s.ood_rare = generate_scenes(seeds.ood_rare, Domain::rare, n_objects, sensor);
  s.ood_damaged = generate_scenes(seeds.ood_damaged, Domain::damaged, n_objects, sensor);
  return s;
}

/// Same layout with normal cars.
inline Scene paired_clean(const Scene& ood, int n_objects) {
  return generate_scene(ood.seed, Domain::normal, n_objects, ood.sensor);
}

}  // namespace advfield

#endif
