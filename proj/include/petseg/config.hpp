#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "json.hpp"
#include "petseg/augment.hpp"
#include "petseg/inference.hpp"
#include "petseg/losses.hpp"
#include "petseg/nets.hpp"
#include "petseg/optim.hpp"
#include "petseg/phantom.hpp"
#include "petseg/splits.hpp"
#include "petseg/trainer.hpp"

namespace petseg {

struct SplitConfig {
  int folds = 15;
  double test_fraction = 0.2;
  FoldScheme scheme{4, 9, 3};

  void validate() const;
};

// Every tunable of an experiment. JSON sections mirror the member names;
// unknown keys anywhere are rejected.
struct ExperimentConfig {
  std::filesystem::path data_root = "data";
  std::filesystem::path output_root = "runs";
  PhantomSpec phantom;
  CohortSpec cohort;
  AugmentConfig augment;
  nn::CoarseUNetConfig coarse;
  nn::RefinerConfig refiner;
  OptimConfig optim;
  // Refiner optimizer; unset means `optim`. In JSON it lists only the keys
  // that differ from `optim`.
  std::optional<OptimConfig> refiner_optim;
  loss::LossWeights loss;
  PipelineParams pipeline;
  SplitConfig split;
  TrainConfig coarse_train;
  TrainConfig refiner_train;
  std::uint64_t seed = 0;

  void validate() const;
  const OptimConfig& refiner_optimizer() const { return refiner_optim ? *refiner_optim : optim; }
};

nlohmann::json to_json(const PhantomSpec& s);
PhantomSpec phantom_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CohortSpec& s);
CohortSpec cohort_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AugmentConfig& c);
AugmentConfig augment_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const loss::LossWeights& w);
loss::LossWeights loss_weights_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SplitConfig& c);
SplitConfig split_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const ExperimentConfig& c);
// Missing keys keep their defaults.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

}  // namespace petseg
