#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace petseg {

// Spatial extent of a volume. Storage order is x fastest:
// index = x + nx * (y + ny * z).
struct Shape3 {
  int nx = 1;
  int ny = 1;
  int nz = 1;

  std::size_t voxels() const {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) * static_cast<std::size_t>(nz);
  }
  std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) + static_cast<std::size_t>(nx) *
        (static_cast<std::size_t>(y) + static_cast<std::size_t>(ny) * static_cast<std::size_t>(z));
  }
  int operator[](int axis) const { return axis == 0 ? nx : (axis == 1 ? ny : nz); }
  int& operator[](int axis) { return axis == 0 ? nx : (axis == 1 ? ny : nz); }

  friend bool operator==(const Shape3&, const Shape3&) = default;
};

std::string to_string(const Shape3& s);

using Vec3 = std::array<double, 3>;

// Closed interval [lo, hi].
struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double v) const { return v >= lo && v <= hi; }
  bool valid() const { return lo <= hi; }
};

enum class VolumeKind { Suv, Hu, Probability, BinaryMask, LabelMap };

std::string_view to_string(VolumeKind kind);

// Shape, spacing (mm) and origin (mm, world position of voxel 0's center).
struct Geometry {
  Shape3 shape;
  Vec3 spacing{1.0, 1.0, 1.0};
  Vec3 origin{0.0, 0.0, 0.0};

  double voxel_volume_mm3() const { return spacing[0] * spacing[1] * spacing[2]; }
  double voxel_volume_ml() const { return voxel_volume_mm3() / 1000.0; }
  // Shapes equal and spacing/origin within `tol_mm`.
  bool matches(const Geometry& other, double tol_mm = 1e-3) const;
};

// Immutable 3D scalar field. Construction validates the kind-specific value
// constraints (binary masks in {0,1}, probabilities in [0,1], label maps
// non-negative integers).
class VolumeGrid {
 public:
  VolumeGrid(Geometry geometry, VolumeKind kind, std::vector<float> values);

  static VolumeGrid filled(Geometry geometry, VolumeKind kind, float value);

  const Geometry& geometry() const { return geometry_; }
  const Shape3& shape() const { return geometry_.shape; }
  const Vec3& spacing() const { return geometry_.spacing; }
  const Vec3& origin() const { return geometry_.origin; }
  VolumeKind kind() const { return kind_; }

  std::span<const float> values() const { return values_; }
  float at(int x, int y, int z) const { return values_[geometry_.shape.index(x, y, z)]; }
  float operator[](std::size_t i) const { return values_[i]; }
  std::size_t size() const { return values_.size(); }

  // Same data reinterpreted as another kind (validated again).
  VolumeGrid with_kind(VolumeKind kind) const;

  std::size_t count_nonzero() const;
  double voxel_volume_ml() const { return geometry_.voxel_volume_ml(); }

  friend bool operator==(const VolumeGrid& a, const VolumeGrid& b);

 private:
  Geometry geometry_;
  VolumeKind kind_;
  std::vector<float> values_;
};

// Throws GeometryError naming `what` when the two geometries differ.
void require_same_geometry(const Geometry& a, const Geometry& b, std::string_view what, double tol_mm = 1e-3);

bool is_mask_kind(VolumeKind kind);

}  // namespace petseg
