#pragma once

#include <filesystem>
#include <vector>

#include "petseg/volume.hpp"

namespace petseg::nifti {

// Raw NIfTI-1 image normalized to the canonical orientation: voxel axes
// aligned with the world axes, positive direction. `channels` > 1 for 4D
// files (channel-major, each channel a full 3D volume).
struct Image {
  Geometry geometry;
  int channels = 1;
  std::vector<float> data;
};

// Reads .nii or .nii.gz. Oblique orientations are rejected; axis
// permutations and flips are undone.
Image read_image(const std::filesystem::path& path);

enum class StorageType { UInt8, Int32, Float32 };

// Writes a gzip-compressed NIfTI-1 file atomically (temp file + rename).
void write_image(const std::filesystem::path& path, const Image& image, StorageType type);

VolumeGrid read_volume(const std::filesystem::path& path, VolumeKind kind);
void write_volume(const std::filesystem::path& path, const VolumeGrid& grid);

std::vector<VolumeGrid> read_channels(const std::filesystem::path& path, VolumeKind kind);
void write_channels(const std::filesystem::path& path, const std::vector<VolumeGrid>& channels);

}  // namespace petseg::nifti
