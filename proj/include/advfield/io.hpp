#ifndef ADVFIELD_IO_HPP
#define ADVFIELD_IO_HPP

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "advfield/detector.hpp"
#include "advfield/point_cloud.hpp"
#include "advfield/segmenter.hpp"
#include "advfield/simulator.hpp"
#include "advfield/vector_field.hpp"

namespace advfield {

namespace fs = std::filesystem;

class IoError : public Error {
public:
  using Error::Error;
};

namespace detail {

inline std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_bytes(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::uint32_t load_u32le(const char* p) {
  const auto* u = reinterpret_cast<const unsigned char*>(p);
  return static_cast<std::uint32_t>(u[0]) | (static_cast<std::uint32_t>(u[1]) << 8) |
         (static_cast<std::uint32_t>(u[2]) << 16) | (static_cast<std::uint32_t>(u[3]) << 24);
}

inline void store_u32le(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
}

inline std::string hex(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

inline double parse_double(const std::string& s, const std::string& what) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw IoError("bad number '" + s + "' for " + what);
  return v;
}

inline long long parse_int(const std::string& s, const std::string& what) {
  char* end = nullptr;
  const long long v = std::strtoll(s.c_str(), &end, 10);
  if (s.empty() || end != s.c_str() + s.size()) throw IoError("bad integer '" + s + "' for " + what);
  return v;
}

inline std::uint64_t parse_u64(const std::string& s, const std::string& what) {
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s.c_str(), &end, 0);
  if (s.empty() || s[0] == '-' || end != s.c_str() + s.size()) throw IoError("bad integer '" + s + "' for " + what);
  return v;
}

}  // namespace detail

/// Point clouds: little-endian float32 (x, y, z, intensity) per point.
inline void write_cloud(const PointCloud& cloud, const fs::path& path) {
  std::string out;
  out.reserve(cloud.size() * 16);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Point3& p = cloud.positions[i];
    for (double v : {p.x, p.y, p.z, cloud.intensities[i]})
      detail::store_u32le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  detail::write_bytes(path, out);
}

inline PointCloud read_cloud(const fs::path& path) {
  const std::string bytes = detail::read_bytes(path);
  const std::size_t n = bytes.size() / 16;
  if (bytes.size() % 16 != 0)
    throw IoError(path.string() + ": trailing bytes at offset " + std::to_string(n * 16) + " (" +
                  std::to_string(bytes.size() % 16) + " bytes after the last complete point)");
  PointCloud cloud;
  cloud.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    double v[4];
    for (int k = 0; k < 4; ++k) {
      const std::size_t off = i * 16 + 4 * k;
      v[k] = std::bit_cast<float>(detail::load_u32le(bytes.data() + off));
      if (!std::isfinite(v[k]))
        throw IoError(path.string() + ": non-finite value at byte offset " + std::to_string(off));
    }
    cloud.positions.push_back({v[0], v[1], v[2]});
    cloud.intensities.push_back(v[3]);
  }
  cloud.semantic.assign(n, 0);
  cloud.instance.assign(n, 0);
  return cloud;
}

/// Labels: one little-endian u32 per point, semantic id in the low 16 bits
/// and instance id in the high 16 bits.
inline void write_labels(const PointCloud& cloud, const fs::path& path) {
  std::string out;
  out.reserve(cloud.size() * 4);
  for (std::size_t i = 0; i < cloud.size(); ++i)
    detail::store_u32le(out, static_cast<std::uint32_t>(cloud.semantic[i]) |
                                 (static_cast<std::uint32_t>(cloud.instance[i]) << 16));
  detail::write_bytes(path, out);
}

inline void read_labels(const fs::path& path, PointCloud& cloud) {
  const std::string bytes = detail::read_bytes(path);
  if (bytes.size() != cloud.size() * 4)
    throw IoError(path.string() + ": " + std::to_string(bytes.size() / 4) + " labels for a cloud of " +
                  std::to_string(cloud.size()) + " points");
  cloud.semantic.resize(cloud.size());
  cloud.instance.resize(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const std::uint32_t v = detail::load_u32le(bytes.data() + 4 * i);
    cloud.semantic[i] = static_cast<std::uint16_t>(v & 0xFFFF);
    cloud.instance[i] = static_cast<std::uint16_t>(v >> 16);
  }
}

/// Flat key=value file. Blank lines and lines starting with '#' are
/// ignored; later keys override earlier ones.
using KeyValues = std::map<std::string, std::string>;

inline KeyValues parse_key_values(const std::string& text, const std::string& origin = "config") {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value");
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline KeyValues read_key_values(const fs::path& path) {
  std::string text;
  try {
    text = detail::read_bytes(path);
  } catch (const IoError&) {
    throw ConfigError("cannot read config " + path.string());
  }
  return parse_key_values(text, path.string());
}

inline void write_key_values(const KeyValues& kv, const fs::path& path) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  detail::write_bytes(path, out);
}

/// Vector-field banks: versioned text with hexfloat numbers.
inline constexpr int kBankFormatVersion = 1;

inline void save_bank(const FieldBank& bank, const fs::path& path) {
  std::string out;
  auto line = [&](const std::string& s) { out += s + "\n"; };
  line("advfield-bank " + std::to_string(kBankFormatVersion));
  line("class " + bank.class_name);
  line("class_id " + std::to_string(bank.class_id));
  line("groups " + std::to_string(bank.groups));
  line("variants " + std::to_string(bank.variants));
  line("dims " + detail::hex(bank.dims.width) + " " + detail::hex(bank.dims.height) + " " +
       detail::hex(bank.dims.length));
  line("step " + detail::hex(bank.step));
  line("epsilon " + detail::hex(bank.epsilon));
  line("psi " + detail::hex(bank.psi));
  line("intensity " + std::to_string(bank.intensity ? 1 : 0));
  line("init_seed " + std::to_string(bank.init_seed));
  line("fields " + std::to_string(bank.fields.size()));
  for (const auto& f : bank.fields) {
    line("field " + std::to_string(f.group) + " " + std::to_string(f.variant) + " " + std::to_string(f.n_length) +
         " " + std::to_string(f.n_width) + " " + std::to_string(f.n_height));
    line("roots " + std::to_string(f.roots.size()));
    for (const auto& r : f.roots) line(detail::hex(r.x) + " " + detail::hex(r.y) + " " + detail::hex(r.z));
    line("vectors " + std::to_string(f.vectors.size()));
    for (std::size_t j = 0; j < f.vectors.size(); ++j) {
      const Vec3& v = f.vectors[j];
      line(detail::hex(v.x) + " " + detail::hex(v.y) + " " + detail::hex(v.z) + " " + detail::hex(f.tau_shift[j]));
    }
  }
  detail::write_bytes(path, out);
}

inline FieldBank load_bank(const fs::path& path) {
  std::istringstream in(detail::read_bytes(path));
  const std::string where = path.string();
  std::string line;
  int lineno = 0;
  auto next_line = [&](const std::string& expect) {
    if (!std::getline(in, line)) throw IoError(where + ": unexpected end of file, expected " + expect);
    ++lineno;
    return line;
  };
  auto fail = [&](const std::string& msg) { return IoError(where + ":" + std::to_string(lineno) + ": " + msg); };
  auto split = [](const std::string& s) {
    std::istringstream ss(s);
    std::vector<std::string> t;
    std::string w;
    while (ss >> w) t.push_back(w);
    return t;
  };

  const auto magic = split(next_line("header"));
  if (magic.size() != 2 || magic[0] != "advfield-bank") throw fail("not a vector-field bank");
  if (detail::parse_int(magic[1], "version") != kBankFormatVersion)
    throw fail("unsupported bank format version " + magic[1] + " (expected " + std::to_string(kBankFormatVersion) +
               ")");

  const std::vector<std::string> keys = {"class", "class_id", "groups", "variants", "dims", "step",
                                         "epsilon", "psi", "intensity", "init_seed", "fields"};
  std::map<std::string, std::vector<std::string>> header;
  for (const auto& key : keys) {
    const auto t = split(next_line("key '" + key + "'"));
    if (t.empty() || t[0] != key) throw fail("missing key '" + key + "'");
    header[key] = std::vector<std::string>(t.begin() + 1, t.end());
  }
  auto scalar = [&](const std::string& key) -> const std::string& {
    if (header[key].size() != 1) throw IoError(where + ": key '" + key + "' needs exactly one value");
    return header[key][0];
  };
  FieldBank bank;
  bank.class_name = scalar("class");
  bank.class_id = static_cast<int>(detail::parse_int(scalar("class_id"), "class_id"));
  bank.groups = static_cast<int>(detail::parse_int(scalar("groups"), "groups"));
  bank.variants = static_cast<int>(detail::parse_int(scalar("variants"), "variants"));
  if (header["dims"].size() != 3) throw IoError(where + ": key 'dims' needs three values");
  bank.dims = {detail::parse_double(header["dims"][0], "dims"), detail::parse_double(header["dims"][1], "dims"),
               detail::parse_double(header["dims"][2], "dims")};
  bank.step = detail::parse_double(scalar("step"), "step");
  bank.epsilon = detail::parse_double(scalar("epsilon"), "epsilon");
  bank.psi = detail::parse_double(scalar("psi"), "psi");
  bank.intensity = detail::parse_int(scalar("intensity"), "intensity") != 0;
  bank.init_seed = detail::parse_u64(scalar("init_seed"), "init_seed");
  const long long n_fields = detail::parse_int(scalar("fields"), "fields");
  if (bank.groups < 1 || bank.variants < 1) throw IoError(where + ": G and N must be positive");
  if (n_fields != static_cast<long long>(bank.groups) * bank.variants)
    throw IoError(where + ": " + std::to_string(n_fields) + " fields for G*N = " +
                  std::to_string(bank.groups * bank.variants));
  const VectorField lattice = build_lattice(bank.dims, bank.step);

  for (long long fi = 0; fi < n_fields; ++fi) {
    const auto head = split(next_line("field header"));
    if (head.size() != 6 || head[0] != "field") throw fail("expected 'field g n n_length n_width n_height'");
    VectorField f = lattice;
    f.class_id = bank.class_id;
    f.group = static_cast<int>(detail::parse_int(head[1], "group"));
    f.variant = static_cast<int>(detail::parse_int(head[2], "variant"));
    if (detail::parse_int(head[3], "n_length") != f.n_length || detail::parse_int(head[4], "n_width") != f.n_width ||
        detail::parse_int(head[5], "n_height") != f.n_height)
      throw fail("lattice shape does not match dims and step");
    if (bank.index(f.group, f.variant) != static_cast<std::size_t>(fi))
      throw fail("field (" + head[1] + ", " + head[2] + ") out of order");
    auto counted = [&](const std::string& key) {
      const auto t = split(next_line(key));
      if (t.size() != 2 || t[0] != key) throw fail("missing key '" + key + "'");
      const long long c = detail::parse_int(t[1], key);
      if (c != static_cast<long long>(lattice.size()))
        throw fail(key + " count " + t[1] + " does not match lattice size " + std::to_string(lattice.size()));
      return static_cast<std::size_t>(c);
    };
    const std::size_t nr = counted("roots");
    for (std::size_t j = 0; j < nr; ++j) {
      const auto t = split(next_line("root"));
      if (t.size() != 3) throw fail("root needs 3 values");
      f.roots[j] = {detail::parse_double(t[0], "root"), detail::parse_double(t[1], "root"),
                    detail::parse_double(t[2], "root")};
    }
    const std::size_t nv = counted("vectors");
    for (std::size_t j = 0; j < nv; ++j) {
      const auto t = split(next_line("vector"));
      if (t.size() != 4) throw fail("vector needs 4 values");
      f.vectors[j] = {detail::parse_double(t[0], "vector"), detail::parse_double(t[1], "vector"),
                      detail::parse_double(t[2], "vector")};
      f.tau_shift[j] = detail::parse_double(t[3], "vector");
      if (!is_finite(f.vectors[j]) || !std::isfinite(f.tau_shift[j])) throw fail("non-finite vector component");
    }
    bank.fields.push_back(std::move(f));
  }
  return bank;
}

/// Ground-truth boxes as text rows:
///   class cx cy cz width height length yaw instance
inline void write_boxes(const std::vector<LabeledBox>& boxes, const ClassTable& table, const fs::path& path) {
  std::string out;
  char buf[512];
  for (const auto& b : boxes) {
    std::snprintf(buf, sizeof buf, "%s %.17g %.17g %.17g %.17g %.17g %.17g %.17g %u\n",
                  table.name(b.semantic).c_str(), b.box.center.x, b.box.center.y, b.box.center.z, b.box.width,
                  b.box.height, b.box.length, b.box.yaw, static_cast<unsigned>(b.instance));
    out += buf;
  }
  detail::write_bytes(path, out);
}

inline std::vector<LabeledBox> read_boxes(const fs::path& path, const ClassTable& table) {
  std::istringstream in(detail::read_bytes(path));
  std::vector<LabeledBox> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    std::string name, f[8];
    ss >> name;
    for (auto& s : f) ss >> s;
    if (f[7].empty()) throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected 9 columns");
    LabeledBox b;
    b.semantic = static_cast<std::uint16_t>(table.id_of(name));
    b.box.center = {detail::parse_double(f[0], "cx"), detail::parse_double(f[1], "cy"),
                    detail::parse_double(f[2], "cz")};
    b.box.width = detail::parse_double(f[3], "width");
    b.box.height = detail::parse_double(f[4], "height");
    b.box.length = detail::parse_double(f[5], "length");
    b.box.yaw = detail::parse_double(f[6], "yaw");
    b.instance = static_cast<std::uint16_t>(detail::parse_int(f[7], "instance"));
    if (!b.box.valid()) throw IoError(path.string() + ":" + std::to_string(lineno) + ": invalid box");
    out.push_back(b);
  }
  return out;
}

/// Sensor parameters as config keys.
inline void sensor_to_keys(const SensorSpec& s, KeyValues& kv) {
  kv["sensor.height"] = detail::hex(s.height);
  kv["sensor.channels"] = std::to_string(s.channels);
  kv["sensor.min_elevation_deg"] = detail::hex(s.min_elevation_deg);
  kv["sensor.max_elevation_deg"] = detail::hex(s.max_elevation_deg);
  kv["sensor.azimuth_resolution_deg"] = detail::hex(s.azimuth_resolution_deg);
  kv["sensor.max_range"] = detail::hex(s.max_range);
  kv["sensor.range_noise"] = detail::hex(s.range_noise);
}

inline SensorSpec sensor_from_keys(const KeyValues& kv) {
  SensorSpec s;
  auto get = [&](const std::string& k, double& v) {
    if (auto it = kv.find(k); it != kv.end()) v = detail::parse_double(it->second, k);
  };
  get("sensor.height", s.height);
  if (auto it = kv.find("sensor.channels"); it != kv.end())
    s.channels = static_cast<int>(detail::parse_int(it->second, "sensor.channels"));
  get("sensor.min_elevation_deg", s.min_elevation_deg);
  get("sensor.max_elevation_deg", s.max_elevation_deg);
  get("sensor.azimuth_resolution_deg", s.azimuth_resolution_deg);
  get("sensor.max_range", s.max_range);
  get("sensor.range_noise", s.range_noise);
  s.validate();
  return s;
}

/// A dataset directory holds `dataset.txt` (scene count, domain, sensor)
/// and, per scene i, `NNNNNN.bin`, `NNNNNN.label` and `NNNNNN.boxes`.
inline std::string scene_stem(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu", i);
  return buf;
}

inline void write_dataset(const std::vector<Scene>& scenes, const fs::path& dir, const KeyValues& extra = {}) {
  fs::create_directories(dir);
  const ClassTable table = ClassTable::standard();
  KeyValues kv = extra;
  kv["scenes"] = std::to_string(scenes.size());
  if (!scenes.empty()) {
    kv["domain"] = to_string(scenes.front().domain);
    sensor_to_keys(scenes.front().sensor, kv);
  }
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const std::string stem = scene_stem(i);
    write_cloud(scenes[i].cloud, dir / (stem + ".bin"));
    write_labels(scenes[i].cloud, dir / (stem + ".label"));
    write_boxes(scenes[i].boxes(), table, dir / (stem + ".boxes"));
    kv["seed." + stem] = std::to_string(scenes[i].seed);
  }
  write_key_values(kv, dir / "dataset.txt");
}

inline Scene read_scene(const fs::path& dir, std::size_t i, const SensorSpec& sensor, Domain domain) {
  const ClassTable table = ClassTable::standard();
  const std::string stem = scene_stem(i);
  Scene s;
  s.sensor = sensor;
  s.domain = domain;
  s.cloud = read_cloud(dir / (stem + ".bin"));
  read_labels(dir / (stem + ".label"), s.cloud);
  for (const auto& b : read_boxes(dir / (stem + ".boxes"), table)) {
    ObjectSpec o;
    o.semantic = b.semantic;
    o.instance = b.instance;
    o.box = b.box;
    o.domain = domain;
    s.objects.push_back(std::move(o));
  }
  return s;
}

inline std::vector<Scene> read_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("dataset directory not found: " + dir.string());
  const KeyValues kv = read_key_values(dir / "dataset.txt");
  const auto it = kv.find("scenes");
  if (it == kv.end()) throw ConfigError(dir.string() + "/dataset.txt: missing key 'scenes'");
  const std::size_t n = static_cast<std::size_t>(detail::parse_int(it->second, "scenes"));
  const SensorSpec sensor = sensor_from_keys(kv);
  const Domain domain = kv.count("domain") ? parse_domain(kv.at("domain")) : Domain::normal;
  std::vector<Scene> scenes(n);
  parallel_for(n, [&](std::size_t i) {
    scenes[i] = read_scene(dir, i, sensor, domain);
    const auto s = kv.find("seed." + scene_stem(i));
    if (s != kv.end()) scenes[i].seed = detail::parse_u64(s->second, "seed");
  });
  return scenes;
}

/// Victim checkpoints: a shape header followed by one hexfloat per line.
inline void save_params(const std::string& task, const Mlp& mlp, const fs::path& path) {
  std::string out = "advfield-victim 1\ntask " + task + "\nsizes";
  for (int s : mlp.sizes()) out += " " + std::to_string(s);
  out += "\nparams " + std::to_string(mlp.params().size()) + "\n";
  for (double v : mlp.params()) out += detail::hex(v) + "\n";
  detail::write_bytes(path, out);
}

inline void load_params(const std::string& task, Mlp& mlp, const fs::path& path) {
  std::istringstream in(detail::read_bytes(path));
  std::string line;
  auto expect = [&](const std::string& key) {
    if (!std::getline(in, line) || line.rfind(key, 0) != 0)
      throw IoError(path.string() + ": missing key '" + key + "'");
    return line.substr(key.size());
  };
  if (expect("advfield-victim ") != "1") throw IoError(path.string() + ": unsupported checkpoint version");
  const std::string t = expect("task ");
  if (t != task) throw ConfigError(path.string() + ": checkpoint is for task '" + t + "', expected '" + task + "'");
  std::istringstream sizes(expect("sizes "));
  std::vector<int> dims;
  for (int v; sizes >> v;) dims.push_back(v);
  if (dims != mlp.sizes()) throw IoError(path.string() + ": network shape does not match");
  const long long n = detail::parse_int(expect("params "), "params");
  if (n != static_cast<long long>(mlp.params().size())) throw IoError(path.string() + ": parameter count mismatch");
  for (auto& v : mlp.params()) {
    if (!std::getline(in, line)) throw IoError(path.string() + ": truncated parameter list");
    v = detail::parse_double(line, "parameter");
    if (!std::isfinite(v)) throw IoError(path.string() + ": non-finite parameter");
  }
}

/// "seg" or "det", read from a checkpoint header.
inline std::string checkpoint_task(const fs::path& path) {
  std::istringstream in(detail::read_bytes(path));
  std::string head, line;
  std::getline(in, head);
  if (head != "advfield-victim 1") throw IoError(path.string() + ": not a victim checkpoint");
  if (!std::getline(in, line) || line.rfind("task ", 0) != 0) throw IoError(path.string() + ": missing key 'task'");
  return line.substr(5);
}

inline void save_victim(const SegNetMini& net, const fs::path& path) { save_params("seg", net.mlp(), path); }
inline void save_victim(const DetHeadMini& net, const fs::path& path) { save_params("det", net.mlp(), path); }

inline SegNetMini load_seg(const fs::path& path) {
  SegNetMini net;
  load_params("seg", net.mlp(), path);
  return net;
}

inline DetHeadMini load_det(const fs::path& path) {
  DetHeadMini net;
  load_params("det", net.mlp(), path);
  return net;
}

}  // namespace advfield

#endif
