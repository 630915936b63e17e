#pragma once

#include <span>
#include <vector>

#include "petseg/tensor.hpp"
#include "petseg/volume.hpp"

namespace petseg::loss {

struct LossWeights {
  double dice = 1.0;
  double ce = 0.5;
  double sensitivity = 2.0;
  double epsilon = 1e-5;

  void validate() const;
  double combine(double dice_value, double ce_value, double sensitivity_value) const {
    return dice * dice_value + ce * ce_value + sensitivity * sensitivity_value;
  }
};

// All functions below sum over every element of the inputs (batch-summed).
// When `grad` is non-empty it is overwritten with d(loss)/d(input).

// 1 - (2 sum(p g) + eps) / (sum p + sum g + eps)
template <typename T>
double soft_dice_loss(std::span<const T> prob, std::span<const T> gt, double eps, std::span<T> grad = {});

// 1 - (sum(p g) + eps) / (sum g + eps); 0 for an empty gt.
template <typename T>
double sensitivity_loss(std::span<const T> prob, std::span<const T> gt, double eps, std::span<T> grad = {});

// Mean over voxels of -log softmax(logits)[gt]. logits is [N,2,...], gt holds
// N * voxels class labels in {0,1}.
template <typename T>
double cross_entropy_loss(const Tensor<T>& logits, std::span<const T> gt, Tensor<T>* grad = nullptr);

// Mean binary cross-entropy on probabilities (clamped away from 0 and 1).
template <typename T>
double binary_cross_entropy(std::span<const T> prob, std::span<const T> gt, std::span<T> grad = {});

struct LossBreakdown {
  double total = 0.0;
  double dice = 0.0;
  double ce = 0.0;
  double sensitivity = 0.0;
};

// Composite loss of a single 2-channel logit map against gt [N,1,...].
template <typename T>
LossBreakdown logit_loss(const Tensor<T>& logits, const Tensor<T>& gt, const LossWeights& weights,
                         Tensor<T>* grad = nullptr);

// Composite loss on a probability map (dice + ce + sensitivity with the CE
// taken as binary cross-entropy). Used for the stacking fit.
template <typename T>
LossBreakdown probability_loss(std::span<const T> prob, std::span<const T> gt, const LossWeights& weights,
                               std::span<T> grad = {});

// Normalized per-scale weights 1, 1/2, 1/4, ... for `levels` auxiliary
// scales plus the full-resolution output.
std::vector<double> deep_supervision_weights(int levels);

// Keeps gt[factor * i] along every axis.
template <typename T>
Tensor<T> downsample_nearest(const Tensor<T>& gt, int factor);

// Sum over scales of scale_weight * logit_loss(scales[k], gt downsampled by
// 2^k). `grads`, if given, receives one gradient tensor per scale.
template <typename T>
LossBreakdown combined_loss(const std::vector<Tensor<T>>& scales, const Tensor<T>& gt, const LossWeights& weights,
                            std::span<const double> scale_weights, std::vector<Tensor<T>>* grads = nullptr);

// Grid-level conveniences with geometry checks.
double soft_dice_loss(const VolumeGrid& prob, const VolumeGrid& gt, double eps = 1e-5);
double sensitivity_loss(const VolumeGrid& prob, const VolumeGrid& gt, double eps = 1e-5);

}  // namespace petseg::loss
