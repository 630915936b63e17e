#include "petseg/volume.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "petseg/error.hpp"

namespace petseg {

std::string to_string(const Shape3& s) {
  std::ostringstream os;
  os << s.nx << 'x' << s.ny << 'x' << s.nz;
  return os.str();
}

std::string_view to_string(VolumeKind kind) {
  switch (kind) {
    case VolumeKind::Suv: return "SUV";
    case VolumeKind::Hu: return "HU";
    case VolumeKind::Probability: return "PROBABILITY";
    case VolumeKind::BinaryMask: return "BINARY_MASK";
    case VolumeKind::LabelMap: return "LABEL_MAP";
  }
  return "UNKNOWN";
}

bool is_mask_kind(VolumeKind kind) {
  return kind == VolumeKind::BinaryMask || kind == VolumeKind::LabelMap;
}

bool Geometry::matches(const Geometry& other, double tol_mm) const {
  if (shape != other.shape) return false;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(spacing[a] - other.spacing[a]) > tol_mm) return false;
    if (std::abs(origin[a] - other.origin[a]) > tol_mm) return false;
  }
  return true;
}

void require_same_geometry(const Geometry& a, const Geometry& b, std::string_view what, double tol_mm) {
  if (a.matches(b, tol_mm)) return;
  std::ostringstream os;
  os << what << ": geometry mismatch (" << to_string(a.shape) << " @ " << a.spacing[0] << ',' << a.spacing[1] << ','
     << a.spacing[2] << " vs " << to_string(b.shape) << " @ " << b.spacing[0] << ',' << b.spacing[1] << ','
     << b.spacing[2] << ')';
  throw GeometryError(os.str());
}

namespace {

void validate_values(VolumeKind kind, std::span<const float> values) {
  switch (kind) {
    case VolumeKind::BinaryMask:
      for (float v : values) {
        if (v != 0.0f && v != 1.0f) throw ValidationError("binary mask contains value outside {0,1}: " + std::to_string(v));
      }
      break;
    case VolumeKind::Probability:
      for (float v : values) {
        if (!(v >= 0.0f && v <= 1.0f)) throw ValidationError("probability value outside [0,1]: " + std::to_string(v));
      }
      break;
    case VolumeKind::LabelMap:
      for (float v : values) {
        if (!(v >= 0.0f) || std::floor(v) != v) throw ValidationError("label map value is not a non-negative integer");
      }
      break;
    case VolumeKind::Suv:
    case VolumeKind::Hu:
      for (float v : values) {
        if (!std::isfinite(v)) throw ValidationError("non-finite intensity value");
      }
      break;
  }
}

}  // namespace

VolumeGrid::VolumeGrid(Geometry geometry, VolumeKind kind, std::vector<float> values)
    : geometry_(geometry), kind_(kind), values_(std::move(values)) {
  const Shape3& s = geometry_.shape;
  if (s.nx < 1 || s.ny < 1 || s.nz < 1) throw ValidationError("volume shape must be >= 1 along every axis");
  for (double sp : geometry_.spacing) {
    if (!(sp > 0.0)) throw ValidationError("voxel spacing must be strictly positive");
  }
  if (values_.size() != s.voxels()) {
    throw ValidationError("volume data size " + std::to_string(values_.size()) + " does not match shape " + to_string(s));
  }
  validate_values(kind_, values_);
}

VolumeGrid VolumeGrid::filled(Geometry geometry, VolumeKind kind, float value) {
  return VolumeGrid(geometry, kind, std::vector<float>(geometry.shape.voxels(), value));
}

VolumeGrid VolumeGrid::with_kind(VolumeKind kind) const { return VolumeGrid(geometry_, kind, values_); }

std::size_t VolumeGrid::count_nonzero() const {
  return static_cast<std::size_t>(std::count_if(values_.begin(), values_.end(), [](float v) { return v != 0.0f; }));
}

bool operator==(const VolumeGrid& a, const VolumeGrid& b) {
  return a.kind_ == b.kind_ && a.geometry_.shape == b.geometry_.shape && a.geometry_.spacing == b.geometry_.spacing &&
         a.geometry_.origin == b.geometry_.origin && a.values_ == b.values_;
}

}  // namespace petseg
