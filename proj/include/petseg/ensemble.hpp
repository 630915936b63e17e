#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"
#include "petseg/losses.hpp"
#include "petseg/volume.hpp"

namespace petseg {

// Non-negative linear stacking of M member probability maps.
struct StackingWeights {
  std::vector<double> w;
  double bias = 0.0;

  static StackingWeights uniform(int members);
  void validate() const;
  double total() const;
};

nlohmann::json to_json(const StackingWeights& s);
StackingWeights stacking_weights_from_json(const nlohmann::json& j);

// clamp(sum_i w_i p_i + bias, 0, 1) per voxel.
VolumeGrid ensemble_combine(const std::vector<VolumeGrid>& maps, const StackingWeights& weights);
void ensemble_combine(const std::vector<std::span<const float>>& maps, const StackingWeights& weights,
                      std::span<float> out);

// One calibration case: a probability map per member plus the target mask.
struct CalibrationCase {
  std::vector<VolumeGrid> member_probs;
  VolumeGrid target;
};

struct StackingFitOptions {
  int max_iterations = 300;
  double tolerance = 1e-10;
};

struct StackingFit {
  StackingWeights weights;
  double loss = 0.0;
  // Composite loss of each member used alone (selector weights).
  std::vector<double> member_losses;
};

// Composite probability loss (losses module) of the combined map, summed over
// all calibration voxels as one batch.
double stacking_loss(const std::vector<CalibrationCase>& cases, const StackingWeights& weights,
                     const loss::LossWeights& lw);

// Projected-gradient minimization of stacking_loss subject to w >= 0, started
// from every single-member selector and from uniform weights; the best point
// is returned, so the result is never worse than the best member.
StackingFit fit_stacking_weights(const std::vector<CalibrationCase>& cases, const loss::LossWeights& lw,
                                 const StackingFitOptions& options = {});

}  // namespace petseg
