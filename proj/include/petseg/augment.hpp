#pragma once

#include <cstdint>
#include <random>
#include <utility>

#include "petseg/case_io.hpp"
#include "petseg/preprocess.hpp"

namespace petseg {

using Rng = std::mt19937_64;

struct AugmentConfig {
  Vec3 p_flip{0.5, 0.5, 0.5};
  double rotation_deg = 15.0;  // each axis angle drawn from [-r, r]
  Interval scale{0.85, 1.15};
  Interval pet_blur_sigma{0.0, 1.5};  // voxels
  Interval pet_brightness{-0.1, 0.1};
  Interval pet_contrast{0.85, 1.15};
  Interval pet_gamma{0.7, 1.5};
  Interval spacing_jitter_mm{2.0, 6.0};
  std::uint64_t rng_seed = 0;

  void validate() const;
};

using StackAndMask = std::pair<ChannelStack, VolumeGrid>;

StackAndMask random_flip(const ChannelStack& stack, const VolumeGrid& mask, const AugmentConfig& cfg, Rng& rng);
StackAndMask apply_flip(const ChannelStack& stack, const VolumeGrid& mask, const std::array<bool, 3>& axes);

// Rotation (Euler angles in degrees about x, then y, then z) and isotropic
// scale about the volume center, resampled back onto the input grid:
// channels LINEAR, mask NEAREST, zero outside.
StackAndMask random_affine(const ChannelStack& stack, const VolumeGrid& mask, const AugmentConfig& cfg, Rng& rng);
StackAndMask apply_affine(const ChannelStack& stack, const VolumeGrid& mask, const Vec3& rotation_deg, double scale);

struct PetIntensityParams {
  double blur_sigma = 0.0;
  double brightness = 0.0;
  double contrast = 1.0;
  double gamma = 1.0;
};

// Acts on the SUV and SUV_hot channels only: blur, v + b, (v - mean) * c +
// mean, clamp to [0, 1], then v^gamma. Identity steps are skipped exactly.
ChannelStack pet_intensity_augment(const ChannelStack& stack, const AugmentConfig& cfg, Rng& rng);
ChannelStack apply_pet_intensity(const ChannelStack& stack, const PetIntensityParams& params);

// Separable Gaussian blur (sigma in voxels, edge-clamped, truncated at 3
// sigma).
std::vector<float> gaussian_blur(std::span<const float> values, const Shape3& shape, double sigma);

// One isotropic spacing drawn from spacing_jitter_mm; SUV/CT LINEAR, mask
// NEAREST.
CaseRecord random_spacing_resample(const CaseRecord& rec, const AugmentConfig& cfg, Rng& rng);
CaseRecord resample_case(const CaseRecord& rec, const Vec3& spacing);

}  // namespace petseg
