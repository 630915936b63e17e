#include "petseg/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "petseg/components.hpp"
#include "petseg/error.hpp"

namespace petseg {

namespace {

void require_masks(const VolumeGrid& pred, const VolumeGrid& gt, const char* what) {
  require_same_geometry(pred.geometry(), gt.geometry(), what);
  if (pred.kind() != VolumeKind::BinaryMask || gt.kind() != VolumeKind::BinaryMask) {
    throw ValidationError(std::string(what) + ": inputs must be binary masks");
  }
}

std::size_t intersection(const VolumeGrid& a, const VolumeGrid& b) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += (a[i] != 0.0f && b[i] != 0.0f);
  return n;
}

// Total size of the components of `mask` that share no voxel with `other`.
std::size_t untouched_volume(const VolumeGrid& mask, const VolumeGrid& other) {
  const ComponentLabels cc = label_components(mask.values(), mask.shape());
  std::vector<bool> touched(cc.count + 1, false);
  for (std::size_t i = 0; i < cc.labels.size(); ++i) {
    if (cc.labels[i] > 0 && other[i] != 0.0f) touched[cc.labels[i]] = true;
  }
  const auto sizes = cc.sizes();
  std::size_t total = 0;
  for (int l = 1; l <= cc.count; ++l) {
    if (!touched[l]) total += sizes[l];
  }
  return total;
}

Volume volume_of(std::size_t voxels, const VolumeGrid& g) { return {voxels, voxels * g.voxel_volume_ml()}; }

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::optional<double> opt_from(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

nlohmann::json vol_json(const Volume& v) { return {{"voxels", v.voxels}, {"ml", v.ml}}; }
Volume vol_from(const nlohmann::json& j) { return {j.at("voxels").get<std::size_t>(), j.at("ml").get<double>()}; }

}  // namespace

std::optional<double> case_dice(const VolumeGrid& pred, const VolumeGrid& gt, EmptyCaseRule rule) {
  require_masks(pred, gt, "case_dice");
  const std::size_t p = pred.count_nonzero(), g = gt.count_nonzero();
  if (p == 0 && g == 0) {
    if (rule == EmptyCaseRule::ScoreOne) return 1.0;
    return std::nullopt;
  }
  return 2.0 * static_cast<double>(intersection(pred, gt)) / static_cast<double>(p + g);
}

std::pair<Volume, Volume> overlap_volumes(const VolumeGrid& pred, const VolumeGrid& gt) {
  require_masks(pred, gt, "overlap_volumes");
  return {volume_of(untouched_volume(gt, pred), gt), volume_of(untouched_volume(pred, gt), gt)};
}

std::optional<double> case_sensitivity(const VolumeGrid& pred, const VolumeGrid& gt, SensitivityMode mode) {
  require_masks(pred, gt, "case_sensitivity");
  const std::size_t g = gt.count_nonzero();
  if (g == 0) return std::nullopt;
  if (mode == SensitivityMode::Voxel) return static_cast<double>(intersection(pred, gt)) / static_cast<double>(g);
  const ComponentLabels cc = label_components(gt.values(), gt.shape());
  std::vector<bool> hit(cc.count + 1, false);
  for (std::size_t i = 0; i < cc.labels.size(); ++i) {
    if (cc.labels[i] > 0 && pred[i] != 0.0f) hit[cc.labels[i]] = true;
  }
  int n = 0;
  for (int l = 1; l <= cc.count; ++l) n += hit[l];
  return static_cast<double>(n) / cc.count;
}

CaseMetrics evaluate_case(const std::string& case_id, const VolumeGrid& pred, const VolumeGrid& gt, EmptyCaseRule rule,
                          SensitivityMode mode) {
  CaseMetrics m;
  m.case_id = case_id;
  m.dice = case_dice(pred, gt, rule);
  std::tie(m.fn, m.fp) = overlap_volumes(pred, gt);
  m.sensitivity = case_sensitivity(pred, gt, mode);
  m.mtv_pred = volume_of(pred.count_nonzero(), pred);
  m.mtv_gt = volume_of(gt.count_nonzero(), gt);
  return m;
}

MtvRegression mtv_agreement(const std::vector<CaseMetrics>& cases) {
  if (cases.size() < 3) throw ValidationError("mtv_agreement: need at least 3 cases");
  const double n = static_cast<double>(cases.size());
  double mx = 0.0, my = 0.0;
  for (const auto& c : cases) {
    mx += c.mtv_gt.ml;
    my += c.mtv_pred.ml;
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const auto& c : cases) {
    const double dx = c.mtv_gt.ml - mx, dy = c.mtv_pred.ml - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (!(sxx > 0.0)) throw ValidationError("mtv_agreement: ground-truth MTV has zero variance");
  MtvRegression r;
  r.n = static_cast<int>(cases.size());
  r.slope = sxy / sxx;
  r.intercept = my - r.slope * mx;
  r.r_squared = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  return r;
}

AggregateReport aggregate(const std::vector<CaseMetrics>& cases) {
  AggregateReport r;
  r.n_cases = static_cast<int>(cases.size());
  double dice = 0.0, fg = 0.0, sens = 0.0;
  int nd = 0, nfg = 0, ns = 0;
  for (const auto& c : cases) {
    if (c.dice) {
      dice += *c.dice;
      ++nd;
      if (c.mtv_gt.voxels > 0) {
        fg += *c.dice;
        ++nfg;
      }
    } else {
      ++r.n_discarded;
    }
    if (c.sensitivity) {
      sens += *c.sensitivity;
      ++ns;
    }
    r.fn_ml += c.fn.ml;
    r.fp_ml += c.fp.ml;
    r.fn_voxels += static_cast<double>(c.fn.voxels);
    r.fp_voxels += static_cast<double>(c.fp.voxels);
    r.mtv_pred_ml += c.mtv_pred.ml;
    r.mtv_gt_ml += c.mtv_gt.ml;
    r.mtv_pred_voxels += static_cast<double>(c.mtv_pred.voxels);
    r.mtv_gt_voxels += static_cast<double>(c.mtv_gt.voxels);
    r.runtime_seconds += c.runtime_seconds;
  }
  if (nd) r.dice = dice / nd;
  if (nfg) r.dice_foreground = fg / nfg;
  if (ns) r.sensitivity = sens / ns;
  if (!cases.empty()) {
    const double n = static_cast<double>(cases.size());
    for (double* v : {&r.fn_ml, &r.fp_ml, &r.fn_voxels, &r.fp_voxels, &r.mtv_pred_ml, &r.mtv_gt_ml,
                      &r.mtv_pred_voxels, &r.mtv_gt_voxels, &r.runtime_seconds}) {
      *v /= n;
    }
  }
  try {
    r.mtv = mtv_agreement(cases);
  } catch (const ValidationError&) {
    r.mtv.reset();
  }
  return r;
}

nlohmann::json to_json(const CaseMetrics& m) {
  return {{"case_id", m.case_id},           {"dice", opt(m.dice)},         {"fn", vol_json(m.fn)},
          {"fp", vol_json(m.fp)},           {"sensitivity", opt(m.sensitivity)},
          {"mtv_pred", vol_json(m.mtv_pred)}, {"mtv_gt", vol_json(m.mtv_gt)}, {"runtime_seconds", m.runtime_seconds}};
}

CaseMetrics case_metrics_from_json(const nlohmann::json& j) {
  CaseMetrics m;
  m.case_id = j.at("case_id").get<std::string>();
  m.dice = opt_from(j, "dice");
  m.fn = vol_from(j.at("fn"));
  m.fp = vol_from(j.at("fp"));
  m.sensitivity = opt_from(j, "sensitivity");
  m.mtv_pred = vol_from(j.at("mtv_pred"));
  m.mtv_gt = vol_from(j.at("mtv_gt"));
  m.runtime_seconds = j.value("runtime_seconds", 0.0);
  return m;
}

nlohmann::json to_json(const AggregateReport& r) {
  nlohmann::json j = {{"dice", opt(r.dice)},
                      {"dice_foreground", opt(r.dice_foreground)},
                      {"fn_ml", r.fn_ml},
                      {"fp_ml", r.fp_ml},
                      {"fn_voxels", r.fn_voxels},
                      {"fp_voxels", r.fp_voxels},
                      {"sensitivity", opt(r.sensitivity)},
                      {"mtv_pred_ml", r.mtv_pred_ml},
                      {"mtv_gt_ml", r.mtv_gt_ml},
                      {"mtv_pred_voxels", r.mtv_pred_voxels},
                      {"mtv_gt_voxels", r.mtv_gt_voxels},
                      {"runtime_seconds", r.runtime_seconds},
                      {"n_cases", r.n_cases},
                      {"n_discarded", r.n_discarded}};
  if (r.mtv) {
    j["mtv_regression"] = {{"r_squared", r.mtv->r_squared}, {"slope", r.mtv->slope}, {"intercept", r.mtv->intercept},
                           {"n", r.mtv->n}};
  } else {
    j["mtv_regression"] = nullptr;
  }
  return j;
}

AggregateReport aggregate_from_json(const nlohmann::json& j) {
  AggregateReport r;
  r.dice = opt_from(j, "dice");
  r.dice_foreground = opt_from(j, "dice_foreground");
  r.fn_ml = j.at("fn_ml").get<double>();
  r.fp_ml = j.at("fp_ml").get<double>();
  r.fn_voxels = j.at("fn_voxels").get<double>();
  r.fp_voxels = j.at("fp_voxels").get<double>();
  r.sensitivity = opt_from(j, "sensitivity");
  r.mtv_pred_ml = j.at("mtv_pred_ml").get<double>();
  r.mtv_gt_ml = j.at("mtv_gt_ml").get<double>();
  r.mtv_pred_voxels = j.at("mtv_pred_voxels").get<double>();
  r.mtv_gt_voxels = j.at("mtv_gt_voxels").get<double>();
  r.runtime_seconds = j.at("runtime_seconds").get<double>();
  r.n_cases = j.at("n_cases").get<int>();
  r.n_discarded = j.at("n_discarded").get<int>();
  if (j.contains("mtv_regression") && !j.at("mtv_regression").is_null()) {
    const auto& m = j.at("mtv_regression");
    r.mtv = MtvRegression{m.at("r_squared").get<double>(), m.at("slope").get<double>(), m.at("intercept").get<double>(),
                          m.at("n").get<int>()};
  }
  return r;
}

nlohmann::json report_json(const std::vector<CaseMetrics>& cases, const AggregateReport& agg) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& c : cases) arr.push_back(to_json(c));
  return {{"cases", arr}, {"aggregate", to_json(agg)}};
}

std::string mtv_scatter_csv(const std::vector<CaseMetrics>& cases) {
  std::ostringstream os;
  os << "mtv_gt_ml,mtv_pred_ml\n";
  char buf[128];
  for (const auto& c : cases) {
    std::snprintf(buf, sizeof buf, "%.6f,%.6f\n", c.mtv_gt.ml, c.mtv_pred.ml);
    os << buf;
  }
  return os.str();
}

const std::vector<std::string>& report_columns() {
  static const std::vector<std::string> cols{"Config", "Dice", "Dice Foreground", "FN",    "FP",
                                             "Sensitivity", "MTV found", "MTV", "time (s)"};
  return cols;
}

std::string format_report_table(const std::vector<std::pair<std::string, AggregateReport>>& rows) {
  auto num = [](const std::optional<double>& v, int digits) {
    if (!v) return std::string("-");
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, *v);
    return std::string(buf);
  };
  std::vector<std::vector<std::string>> cells{report_columns()};
  for (const auto& [name, r] : rows) {
    cells.push_back({name, num(r.dice, 4), num(r.dice_foreground, 4), num(r.fn_voxels, 1), num(r.fp_voxels, 1),
                     num(r.sensitivity, 4), num(r.mtv_pred_voxels, 1), num(r.mtv_gt_voxels, 1),
                     num(r.runtime_seconds, 2)});
  }
  std::vector<std::size_t> width(report_columns().size(), 0);
  for (const auto& row : cells)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  std::ostringstream os;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t c = 0; c < cells[r].size(); ++c) {
      os << (c ? " | " : "") << cells[r][c] << std::string(width[c] - cells[r][c].size(), ' ');
    }
    os << '\n';
    if (r == 0) {
      for (std::size_t c = 0; c < width.size(); ++c) os << (c ? "-|-" : "") << std::string(width[c], '-');
      os << '\n';
    }
  }
  return os.str();
}

}  // namespace petseg
