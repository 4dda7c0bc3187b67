#ifndef ADVFIELD_POINT_CLOUD_HPP
#define ADVFIELD_POINT_CLOUD_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "advfield/geometry.hpp"

namespace advfield {

/// One LiDAR sweep. All arrays have the same length; instance id 0 means
/// "no instance".
struct PointCloud {
  std::vector<Point3> positions;
  std::vector<double> intensities;
  std::vector<std::uint16_t> semantic;
  std::vector<std::uint16_t> instance;

  std::size_t size() const { return positions.size(); }
  bool empty() const { return positions.empty(); }

  void reserve(std::size_t n) {
    positions.reserve(n);
    intensities.reserve(n);
    semantic.reserve(n);
    instance.reserve(n);
  }

  void push_back(const Point3& p, double tau, std::uint16_t sem = 0, std::uint16_t inst = 0) {
    positions.push_back(p);
    intensities.push_back(tau);
    semantic.push_back(sem);
    instance.push_back(inst);
  }

  /// Labels default to zero when the cloud was read without a label file.
  void ensure_labels() {
    semantic.resize(size(), 0);
    instance.resize(size(), 0);
  }

  PointCloud subset(const std::vector<std::size_t>& idx) const {
    PointCloud out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(positions[i], intensities[i], semantic[i], instance[i]);
    return out;
  }

  friend bool operator==(const PointCloud&, const PointCloud&) = default;
};

/// Ordered class names; ids are the indices.
class ClassTable {
public:
  ClassTable() = default;
  explicit ClassTable(std::vector<std::string> names) : names_(std::move(names)) {
    for (std::size_t i = 0; i < names_.size(); ++i)
      for (std::size_t j = i + 1; j < names_.size(); ++j)
        if (names_[i] == names_[j]) throw ConfigError("duplicate class name '" + names_[i] + "'");
  }

  /// ground, car, person, building, vegetation.
  static ClassTable standard() { return ClassTable({"ground", "car", "person", "building", "vegetation"}); }

  std::size_t size() const { return names_.size(); }
  const std::string& name(std::size_t id) const { return names_.at(id); }
  const std::vector<std::string>& names() const { return names_; }

  int id_of(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return static_cast<int>(i);
    throw ConfigError("unknown class '" + name + "'");
  }

  std::optional<int> adversarial_class;
  std::optional<int> target_class;

private:
  std::vector<std::string> names_;
};

namespace classes {
inline constexpr std::uint16_t kGround = 0;
inline constexpr std::uint16_t kCar = 1;
inline constexpr std::uint16_t kPerson = 2;
inline constexpr std::uint16_t kBuilding = 3;
inline constexpr std::uint16_t kVegetation = 4;
inline constexpr std::size_t kCount = 5;
}  // namespace classes

}  // namespace advfield

#endif
