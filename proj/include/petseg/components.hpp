#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "petseg/volume.hpp"

namespace petseg {

// 26-connected component labeling. Labels are 1..count in raster order of
// each component's first voxel; background stays 0.
struct ComponentLabels {
  Shape3 shape;
  std::vector<std::int32_t> labels;
  int count = 0;

  // Voxel count per label, index 0 unused.
  std::vector<std::size_t> sizes() const;
};

ComponentLabels label_components(std::span<const float> mask, const Shape3& shape);

// LABEL_MAP grid with the same geometry as `mask`.
VolumeGrid connected_components(const VolumeGrid& mask, int* count = nullptr);

}  // namespace petseg
