#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "petseg/volume.hpp"

namespace petseg {

// Empty pred and empty gt: discarded (paper rule) or scored 1 (challenge rule).
enum class EmptyCaseRule { Discard, ScoreOne };
enum class SensitivityMode { Voxel, Lesion };

struct Volume {
  std::size_t voxels = 0;
  double ml = 0.0;
  friend bool operator==(const Volume&, const Volume&) = default;
};

struct CaseMetrics {
  std::string case_id;
  std::optional<double> dice;
  Volume fn;
  Volume fp;
  std::optional<double> sensitivity;
  Volume mtv_pred;
  Volume mtv_gt;
  double runtime_seconds = 0.0;
};

struct MtvRegression {
  double r_squared = 0.0;
  double slope = 0.0;
  double intercept = 0.0;
  int n = 0;
};

struct AggregateReport {
  std::optional<double> dice;
  std::optional<double> dice_foreground;
  double fn_ml = 0.0;
  double fp_ml = 0.0;
  double fn_voxels = 0.0;
  double fp_voxels = 0.0;
  std::optional<double> sensitivity;
  double mtv_pred_ml = 0.0;
  double mtv_gt_ml = 0.0;
  double mtv_pred_voxels = 0.0;
  double mtv_gt_voxels = 0.0;
  double runtime_seconds = 0.0;
  std::optional<MtvRegression> mtv;
  int n_cases = 0;
  int n_discarded = 0;
};

std::optional<double> case_dice(const VolumeGrid& pred, const VolumeGrid& gt,
                                EmptyCaseRule rule = EmptyCaseRule::Discard);

// (fn, fp): volume of gt components with no pred voxel, and of pred components
// with no gt voxel (26-connectivity).
std::pair<Volume, Volume> overlap_volumes(const VolumeGrid& pred, const VolumeGrid& gt);

// Voxel recall |P n G| / |G|, or the fraction of gt components touched by the
// prediction; empty gt gives no value.
std::optional<double> case_sensitivity(const VolumeGrid& pred, const VolumeGrid& gt,
                                       SensitivityMode mode = SensitivityMode::Voxel);

CaseMetrics evaluate_case(const std::string& case_id, const VolumeGrid& pred, const VolumeGrid& gt,
                          EmptyCaseRule rule = EmptyCaseRule::Discard,
                          SensitivityMode mode = SensitivityMode::Voxel);

// OLS of mtv_pred_ml on mtv_gt_ml. Needs >= 3 cases and non-constant gt.
MtvRegression mtv_agreement(const std::vector<CaseMetrics>& cases);

// Means over non-VOID entries. Foreground dice averages the dice of cases with
// a non-empty gt. n_discarded counts cases without a dice value.
AggregateReport aggregate(const std::vector<CaseMetrics>& cases);

nlohmann::json to_json(const CaseMetrics& m);
nlohmann::json to_json(const AggregateReport& r);
CaseMetrics case_metrics_from_json(const nlohmann::json& j);
AggregateReport aggregate_from_json(const nlohmann::json& j);

// {"cases": [...], "aggregate": {...}}
nlohmann::json report_json(const std::vector<CaseMetrics>& cases, const AggregateReport& agg);
// "mtv_gt_ml,mtv_pred_ml" rows.
std::string mtv_scatter_csv(const std::vector<CaseMetrics>& cases);

// Column headers of the summary table.
const std::vector<std::string>& report_columns();
// Plain-text table, one row per (config name, aggregate).
std::string format_report_table(const std::vector<std::pair<std::string, AggregateReport>>& rows);

}  // namespace petseg
