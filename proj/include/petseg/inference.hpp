#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <vector>

#include "json.hpp"
#include "petseg/case_io.hpp"
#include "petseg/ensemble.hpp"
#include "petseg/nets.hpp"
#include "petseg/preprocess.hpp"

namespace petseg {

// Maps one zero-padded input patch [1][C][patch] to lesion probabilities
// (patch.voxels() values in [0, 1]).
struct PatchModel {
  int in_channels = 0;
  Shape3 patch;
  std::function<std::vector<float>(const Tensor<float>&)> predict;
};

// Tiles the volume with stride floor(patch * (1 - overlap)) per axis (last
// tile flush with the far edge; volumes smaller than the patch are zero
// padded) and blends overlapping tiles with a Gaussian importance map
// (sigma = patch / 8).
VolumeGrid sliding_window_predict(const PatchModel& model, const ChannelStack& stack, double overlap);
VolumeGrid sliding_window_predict(const PatchModel& model, const Tensor<float>& input, const Geometry& geometry,
                                  double overlap);

// Tile start positions along one axis.
std::vector<int> tile_starts(int extent, int patch, double overlap);

PatchModel coarse_patch_model(nn::CoarseUNet<float>& net);
PatchModel refiner_patch_model(nn::Refiner<float>& net);

// prob > threshold (strict).
VolumeGrid binarize(const VolumeGrid& prob, double threshold);

struct PipelineParams {
  double threshold = 0.5;
  double overlap = 0.5;
  double coarse_spacing_mm = 6.0;

  void validate() const;
};

nlohmann::json to_json(const PipelineParams& p);
PipelineParams pipeline_params_from_json(const nlohmann::json& j);

struct PipelineBundle {
  std::vector<nn::CoarseUNet<float>> members;
  StackingWeights stacking;
  std::unique_ptr<nn::Refiner<float>> refiner;
  PipelineParams params;

  PipelineBundle() = default;
  PipelineBundle(PipelineBundle&&) = default;
  PipelineBundle& operator=(PipelineBundle&&) = default;
  PipelineBundle clone() const;

  void validate() const;
  // <dir>/bundle.json referencing checkpoints relative to <dir>.
  static PipelineBundle load(const std::filesystem::path& dir);
};

// bundle.json content for the given checkpoint file names.
nlohmann::json bundle_json(const std::vector<std::string>& member_checkpoints, const StackingWeights& stacking,
                           const std::string& refiner_checkpoint, const PipelineParams& params);

// SUV/CT resampled to an isotropic grid and windowed.
ChannelStack coarse_stack(const CaseRecord& rec, double spacing_mm);

// Stage outputs of the cascade.
struct CoarseResult {
  std::vector<VolumeGrid> member_probs;  // coarse grid
  VolumeGrid combined;                   // coarse grid
  VolumeGrid native;                     // combined, upsampled onto the SUV grid
};

CoarseResult run_coarse(const CaseRecord& rec, PipelineBundle& bundle);

struct PipelineResult {
  CoarseResult coarse;
  VolumeGrid naive_mask;    // binarized upsampled coarse probability
  VolumeGrid refined_prob;  // native grid
  VolumeGrid mask;          // native grid, final output
  double runtime_seconds = 0.0;
};

PipelineResult run_pipeline(const CaseRecord& rec, PipelineBundle& bundle);

}  // namespace petseg
