#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "petseg/config.hpp"
#include "petseg/ensemble.hpp"
#include "petseg/metrics.hpp"
#include "petseg/splits.hpp"
#include "petseg/trainer.hpp"

namespace petseg {

using CaseMap = std::map<std::string, CaseRecord>;

// Generates cfg.cohort phantoms into `dir` and writes dir/manifest.json.
Manifest generate_cohort(const ExperimentConfig& cfg, const std::filesystem::path& dir);

CaseMap load_cases(const Manifest& manifest);
std::vector<CaseRecord> select(const CaseMap& cases, const std::vector<std::string>& ids);

SplitPlan split_cohort(const CaseMap& cases, const ExperimentConfig& cfg);

// File names inside the run directory.
std::filesystem::path member_checkpoint(const std::filesystem::path& run, int member);
std::filesystem::path refiner_checkpoint(const std::filesystem::path& run);

// Trains member `member` on its fold assignment; writes member<i>.ckpt and
// member<i>_log.jsonl under `run`.
TrainResult train_member_stage(const ExperimentConfig& cfg, const SplitPlan& plan, const CaseMap& cases, int member,
                               const std::filesystem::path& run);

std::vector<nn::CoarseUNet<float>> load_members(const ExperimentConfig& cfg, const std::filesystem::path& run);

// Member predictions and targets on the coarse grid for the given cases.
std::vector<CalibrationCase> calibration_set(std::vector<nn::CoarseUNet<float>>& members,
                                             const std::vector<CaseRecord>& cases, const PipelineParams& params);

// Cases of the calibration folds (every dev case when none are reserved).
std::vector<std::string> calibration_ids(const ExperimentConfig& cfg, const SplitPlan& plan);

// Fits the stacking weights on the calibration cases; writes stacking.json
// and stacking_fit.json.
StackingFit fit_ensemble_stage(const ExperimentConfig& cfg, const SplitPlan& plan, const CaseMap& cases,
                               const std::filesystem::path& run);

// Trains the refiner on the development cases (calibration folds used for
// validation) with the frozen ensemble's upsampled probability as the sixth
// channel; writes refiner.ckpt, refiner_log.jsonl and bundle.json.
TrainResult train_refiner_stage(const ExperimentConfig& cfg, const SplitPlan& plan, const CaseMap& cases,
                                const std::filesystem::path& run);

struct InferOptions {
  int workers = 1;
  // Single-threaded kernels and runtime_seconds written as 0, so outputs are
  // byte-identical across runs.
  bool deterministic = false;
};

// Writes <id>_pred.nii.gz and <id>.json for every manifest case.
void infer_stage(const std::filesystem::path& bundle_dir, const Manifest& manifest, const std::filesystem::path& out,
                 const InferOptions& options);

struct EvaluateOptions {
  int workers = 1;
  EmptyCaseRule empty_rule = EmptyCaseRule::Discard;
  SensitivityMode sensitivity = SensitivityMode::Voxel;
};

// Pairs <id>_pred.nii.gz (or, failing that, <id>_mask.nii.gz) in pred_dir
// with <id>_mask.nii.gz in gt_dir (ids taken from the gt masks), writes
// report.json and mtv_scatter.csv to `out`.
std::pair<std::vector<CaseMetrics>, AggregateReport> evaluate_stage(const std::filesystem::path& pred_dir,
                                                                     const std::filesystem::path& gt_dir,
                                                                     const std::filesystem::path& out,
                                                                     const EvaluateOptions& options);

}  // namespace petseg
