#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "json.hpp"
#include "petseg/augment.hpp"
#include "petseg/case_io.hpp"
#include "petseg/inference.hpp"
#include "petseg/losses.hpp"
#include "petseg/nets.hpp"
#include "petseg/optim.hpp"

namespace petseg {

struct TrainConfig {
  int epochs = 10;
  int steps_per_epoch = 20;
  int batch_size = 2;
  double foreground_oversample = 0.5;
  bool augment = true;
  // Refiner only: chance that a training case is first resampled to a random
  // spacing drawn from the augment config.
  double spacing_augment_probability = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<double> val_loss;
  std::optional<double> val_dice;
};

nlohmann::json to_json(const EpochLog& e);

struct TrainResult {
  std::vector<EpochLog> epochs;
  std::vector<double> step_losses;
  int best_epoch = -1;
  double best_val_loss = 0.0;
};

// Where to write artifacts; empty paths disable the corresponding output.
struct TrainOutputs {
  std::filesystem::path checkpoint;  // best-validation weights
  std::filesystem::path log;         // one JSON object per epoch
  nlohmann::json extra_meta = nlohmann::json::object();
};

struct TrainSetup {
  OptimConfig optim;
  loss::LossWeights loss;
  AugmentConfig augment;
  TrainConfig train;
  PipelineParams pipeline;
};

// Trains on random coarse-grid patches of `train` (foreground oversampled,
// flips, rotation/scale, PET intensity), validating on the whole coarse grid
// of each `val` case after every epoch. On return `net` holds the weights of
// the epoch with the lowest validation loss (the last epoch without
// validation cases).
TrainResult train_coarse_member(nn::CoarseUNet<float>& net, const std::vector<CaseRecord>& train,
                                const std::vector<CaseRecord>& val, const TrainSetup& setup,
                                const TrainOutputs& outputs = {});

// A native-resolution case together with the coarse ensemble probability
// already resampled onto its grid.
struct RefinerCase {
  CaseRecord record;
  VolumeGrid coarse;
};

TrainResult train_refiner(nn::Refiner<float>& net, const std::vector<RefinerCase>& train,
                          const std::vector<RefinerCase>& val, const TrainSetup& setup,
                          const TrainOutputs& outputs = {});

// Patch start along one axis for an extent n and patch p; centered on `center`
// when given, clamped to [min(0, n - p), max(0, n - p)].
int patch_start(int n, int p, std::optional<int> center, Rng& rng);

// Batch of single-sample tensors.
Tensor<float> stack_batch(const std::vector<Tensor<float>>& samples);

}  // namespace petseg
