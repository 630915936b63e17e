#pragma once

#include "petseg/volume.hpp"

namespace petseg {

enum class Interpolation { Linear, Nearest };

// Geometry covering the same physical box as `in` at `target_spacing`:
// n_out = max(1, round(n_in * s_in / s_out)), and the outer voxel faces of
// both grids coincide.
Geometry resampled_geometry(const Geometry& in, const Vec3& target_spacing);

// LINEAR is rejected for mask kinds. Positions outside the input are clamped
// to the edge voxel.
VolumeGrid resample(const VolumeGrid& grid, const Vec3& target_spacing, Interpolation mode);
VolumeGrid resample_onto(const VolumeGrid& grid, const Geometry& target, Interpolation mode);

// Trilinear sample at continuous voxel coordinates; outside the volume
// returns `outside`.
float sample_linear(const float* values, const Shape3& shape, double x, double y, double z, float outside);
float sample_nearest(const float* values, const Shape3& shape, double x, double y, double z, float outside);

}  // namespace petseg
