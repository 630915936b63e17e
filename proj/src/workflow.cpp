#include "petseg/workflow.hpp"

#include <algorithm>
#include <set>

#include "petseg/checkpoint.hpp"
#include "petseg/error.hpp"
#include "petseg/kernels.hpp"
#include "petseg/nifti.hpp"
#include "petseg/resample.hpp"
#include "petseg/util.hpp"

namespace petseg {

namespace fs = std::filesystem;

Manifest generate_cohort(const ExperimentConfig& cfg, const fs::path& dir) {
  Manifest m;
  m.root = dir;
  for (const PhantomSpec& spec : cohort_specs(cfg.phantom, cfg.cohort)) {
    const CaseRecord rec = generate_phantom(spec);
    CasePaths paths = save_case(dir, rec);
    paths.patient_id = rec.patient_id;
    m.cases[rec.case_id] = paths;
  }
  write_manifest(dir / "manifest.json", m);
  return m;
}

CaseMap load_cases(const Manifest& manifest) {
  CaseMap out;
  for (const auto& [id, paths] : manifest.cases) out.emplace(id, load_case(id, paths));
  return out;
}

std::vector<CaseRecord> select(const CaseMap& cases, const std::vector<std::string>& ids) {
  std::vector<CaseRecord> out;
  for (const auto& id : ids) {
    auto it = cases.find(id);
    if (it == cases.end()) throw ValidationError("case '" + id + "' is not in the manifest");
    out.push_back(it->second);
  }
  return out;
}

SplitPlan split_cohort(const CaseMap& cases, const ExperimentConfig& cfg) {
  std::vector<SplitCase> sc;
  for (const auto& [id, rec] : cases) sc.push_back(split_case(rec));
  return make_stratified_splits(sc, cfg.split.folds, cfg.split.test_fraction, cfg.seed);
}

fs::path member_checkpoint(const fs::path& run, int member) {
  return run / ("member" + std::to_string(member) + ".ckpt");
}

fs::path refiner_checkpoint(const fs::path& run) { return run / "refiner.ckpt"; }

namespace {

TrainSetup setup_for(const ExperimentConfig& cfg, const OptimConfig& optim, const TrainConfig& train,
                     std::uint64_t seed_offset) {
  TrainSetup s{optim, cfg.loss, cfg.augment, train, cfg.pipeline};
  s.train.seed = train.seed + cfg.seed + seed_offset;
  return s;
}

void require_plan_matches(const SplitPlan& plan, const ExperimentConfig& cfg) {
  if (static_cast<int>(plan.folds.size()) != cfg.split.folds) {
    throw ValidationError("split plan has " + std::to_string(plan.folds.size()) + " folds, config expects " +
                          std::to_string(cfg.split.folds));
  }
}

}  // namespace

TrainResult train_member_stage(const ExperimentConfig& cfg, const SplitPlan& plan, const CaseMap& cases, int member,
                               const fs::path& run) {
  require_plan_matches(plan, cfg);
  const MemberFolds mf = member_folds(member, cfg.split.folds, cfg.split.scheme);
  nn::CoarseUNet<float> net(cfg.coarse);
  net.init(cfg.seed * 1000003ull + static_cast<std::uint64_t>(member));
  TrainOutputs out;
  out.checkpoint = member_checkpoint(run, member);
  out.log = run / ("member" + std::to_string(member) + "_log.jsonl");
  out.extra_meta = {{"kind", "coarse"}, {"member", member}, {"train_folds", mf.train}, {"val_folds", mf.val}};
  return train_coarse_member(net, select(cases, ids_in(plan, mf.train)), select(cases, ids_in(plan, mf.val)),
                             setup_for(cfg, cfg.optim, cfg.coarse_train, static_cast<std::uint64_t>(member)), out);
}

std::vector<nn::CoarseUNet<float>> load_members(const ExperimentConfig& cfg, const fs::path& run) {
  std::vector<nn::CoarseUNet<float>> members;
  const nlohmann::json expected = nn::to_json(cfg.coarse);
  for (int m = 0; m < cfg.split.scheme.members; ++m) {
    const fs::path p = member_checkpoint(run, m);
    if (!fs::exists(p)) throw ValidationError("missing coarse member checkpoint " + p.string());
    nn::CoarseUNet<float> net(cfg.coarse);
    load_checkpoint(p, net.parameters(), &expected);
    members.push_back(std::move(net));
  }
  return members;
}

std::vector<CalibrationCase> calibration_set(std::vector<nn::CoarseUNet<float>>& members,
                                             const std::vector<CaseRecord>& cases, const PipelineParams& params) {
  std::vector<CalibrationCase> out;
  const double sp = params.coarse_spacing_mm;
  for (const auto& rec : cases) {
    if (!rec.gt_mask) throw ValidationError("calibration case '" + rec.case_id + "' has no ground truth");
    const ChannelStack stack = coarse_stack(rec, sp);
    const Tensor<float> input = to_tensor(stack);
    CalibrationCase c{{}, resample(*rec.gt_mask, {sp, sp, sp}, Interpolation::Nearest)};
    for (auto& m : members) {
      c.member_probs.push_back(sliding_window_predict(coarse_patch_model(m), input, stack.geometry(), params.overlap));
    }
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<std::string> calibration_ids(const ExperimentConfig& cfg, const SplitPlan& plan) {
  if (cfg.split.scheme.calibration_folds == 0) {
    std::vector<int> all(cfg.split.folds);
    for (int f = 0; f < cfg.split.folds; ++f) all[f] = f;
    return ids_in(plan, all);
  }
  return ids_in(plan, calibration_folds(cfg.split.folds, cfg.split.scheme));
}

StackingFit fit_ensemble_stage(const ExperimentConfig& cfg, const SplitPlan& plan, const CaseMap& cases,
                               const fs::path& run) {
  require_plan_matches(plan, cfg);
  auto members = load_members(cfg, run);
  const auto cal = calibration_set(members, select(cases, calibration_ids(cfg, plan)), cfg.pipeline);
  const StackingFit fit = fit_stacking_weights(cal, cfg.loss);
  write_text_atomic(run / "stacking.json", to_json(fit.weights).dump(2) + "\n");
  nlohmann::json detail = {{"loss", fit.loss},
                           {"member_losses", fit.member_losses},
                           {"calibration_ids", calibration_ids(cfg, plan)},
                           {"weights", to_json(fit.weights)}};
  write_text_atomic(run / "stacking_fit.json", detail.dump(2) + "\n");
  return fit;
}

TrainResult train_refiner_stage(const ExperimentConfig& cfg, const SplitPlan& plan, const CaseMap& cases,
                                const fs::path& run) {
  require_plan_matches(plan, cfg);
  const fs::path stacking_path = run / "stacking.json";
  if (!fs::exists(stacking_path)) throw ValidationError("missing ensemble weights " + stacking_path.string());
  PipelineBundle ensemble;
  ensemble.members = load_members(cfg, run);
  ensemble.stacking = stacking_weights_from_json(nlohmann::json::parse(read_text(stacking_path)));
  ensemble.params = cfg.pipeline;

  const auto cal = calibration_ids(cfg, plan);
  const std::set<std::string> val_ids(cal.begin(), cal.end());
  std::vector<RefinerCase> train, val;
  for (const auto& f : plan.folds) {
    for (const auto& id : f) {
      const CaseRecord& rec = cases.at(id);
      RefinerCase rc{rec, run_coarse(rec, ensemble).native};
      (val_ids.count(id) && cfg.split.scheme.calibration_folds > 0 ? val : train).push_back(std::move(rc));
    }
  }
  nn::Refiner<float> net(cfg.refiner);
  net.init(cfg.seed * 1000003ull + 7777ull);
  TrainOutputs out;
  out.checkpoint = refiner_checkpoint(run);
  out.log = run / "refiner_log.jsonl";
  out.extra_meta = {{"kind", "refiner"}};
  TrainResult result = train_refiner(net, train, val, setup_for(cfg, cfg.refiner_optimizer(), cfg.refiner_train, 4242ull), out);

  std::vector<std::string> names;
  for (int m = 0; m < cfg.split.scheme.members; ++m) names.push_back(member_checkpoint(run, m).filename().string());
  write_text_atomic(run / "bundle.json",
                    bundle_json(names, ensemble.stacking, refiner_checkpoint(run).filename().string(), cfg.pipeline)
                            .dump(2) +
                        "\n");
  return result;
}

void infer_stage(const fs::path& bundle_dir, const Manifest& manifest, const fs::path& out, const InferOptions& options) {
  const PipelineBundle bundle = PipelineBundle::load(bundle_dir);
  if (options.deterministic) kernels::set_num_threads(1);
  const int workers = options.deterministic ? 1 : std::max(1, options.workers);
  std::vector<PipelineBundle> copies;
  for (int w = 0; w < workers; ++w) copies.push_back(bundle.clone());
  std::vector<std::string> ids;
  for (const auto& [id, paths] : manifest.cases) ids.push_back(id);
  fs::create_directories(out);
  parallel_for(ids.size(), workers, [&](std::size_t i, int w) {
    const std::string& id = ids[i];
    const CasePaths& paths = manifest.cases.at(id);
    CasePaths no_mask = paths;
    no_mask.mask.reset();
    const CaseRecord rec = load_case(id, no_mask);
    const PipelineResult r = run_pipeline(rec, copies[w]);
    nifti::write_volume(out / (id + "_pred.nii.gz"), r.mask);
    const std::size_t voxels = r.mask.count_nonzero();
    const nlohmann::json j = {{"case_id", id},
                              {"runtime_seconds", options.deterministic ? 0.0 : r.runtime_seconds},
                              {"mtv_voxels", voxels},
                              {"mtv_ml", voxels * r.mask.voxel_volume_ml()}};
    write_text_atomic(out / (id + ".json"), j.dump(2) + "\n");
  });
}

std::pair<std::vector<CaseMetrics>, AggregateReport> evaluate_stage(const fs::path& pred_dir, const fs::path& gt_dir,
                                                                     const fs::path& out,
                                                                     const EvaluateOptions& options) {
  const std::string suffix = "_mask.nii.gz";
  std::vector<std::string> ids;
  if (!fs::is_directory(gt_dir)) throw ValidationError("not a directory: " + gt_dir.string());
  for (const auto& e : fs::directory_iterator(gt_dir)) {
    const std::string name = e.path().filename().string();
    if (name.size() > suffix.size() && name.ends_with(suffix)) ids.push_back(name.substr(0, name.size() - suffix.size()));
  }
  if (ids.empty()) throw ValidationError("no *_mask.nii.gz files in " + gt_dir.string());
  std::sort(ids.begin(), ids.end());
  std::vector<CaseMetrics> metrics(ids.size());
  parallel_for(ids.size(), options.workers, [&](std::size_t i, int) {
    const std::string& id = ids[i];
    fs::path pred_path = pred_dir / (id + "_pred.nii.gz");
    if (!fs::exists(pred_path) && fs::exists(pred_dir / (id + suffix))) pred_path = pred_dir / (id + suffix);
    if (!fs::exists(pred_path)) throw ValidationError("missing prediction " + pred_path.string());
    const VolumeGrid gt = nifti::read_volume(gt_dir / (id + suffix), VolumeKind::BinaryMask);
    const VolumeGrid pred = nifti::read_volume(pred_path, VolumeKind::BinaryMask);
    metrics[i] = evaluate_case(id, pred, gt, options.empty_rule, options.sensitivity);
    const fs::path info = pred_dir / (id + ".json");
    if (fs::exists(info)) metrics[i].runtime_seconds = nlohmann::json::parse(read_text(info)).value("runtime_seconds", 0.0);
  });
  const AggregateReport agg = aggregate(metrics);
  write_text_atomic(out / "report.json", report_json(metrics, agg).dump(2) + "\n");
  write_text_atomic(out / "mtv_scatter.csv", mtv_scatter_csv(metrics));
  return {metrics, agg};
}

}  // namespace petseg
