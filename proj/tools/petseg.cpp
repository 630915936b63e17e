#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "petseg/config.hpp"
#include "petseg/error.hpp"
#include "petseg/kernels.hpp"
#include "petseg/metrics.hpp"
#include "petseg/util.hpp"
#include "petseg/workflow.hpp"

namespace fs = std::filesystem;
using namespace petseg;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  int workers = 1;
  std::string device = "cpu";
  bool dry_run = false;
  bool deterministic = false;
};

ExperimentConfig resolve_config(const Globals& g) {
  ExperimentConfig cfg = g.config.empty() ? ExperimentConfig{} : load_experiment_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  if (g.device != "cpu") throw ValidationError("unsupported device '" + g.device + "' (only cpu is available)");
  if (g.workers < 1) throw ValidationError("--workers must be >= 1");
  cfg.validate();
  if (g.deterministic) kernels::set_num_threads(1);
  return cfg;
}

void require_file(const fs::path& p, const char* what) {
  if (!fs::is_regular_file(p)) throw ValidationError(std::string("missing ") + what + ": " + p.string());
}

void require_dir(const fs::path& p, const char* what) {
  if (!fs::is_directory(p)) throw ValidationError(std::string("missing ") + what + " directory: " + p.string());
}

SplitPlan read_plan(const fs::path& p) {
  require_file(p, "split plan");
  return split_plan_from_json(nlohmann::json::parse(read_text(p)));
}

void dry(const std::string& what) { std::printf("dry run: %s\n", what.c_str()); }

void print_train(const char* what, const TrainResult& r) {
  std::printf("%s: %zu epochs, best epoch %d, val loss %.6f\n", what, r.epochs.size(), r.best_epoch, r.best_val_loss);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PET/CT lesion segmentation: phantoms, training, inference and evaluation"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Experiment config JSON")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Override the experiment seed");
  app.add_option("--workers", g.workers, "Parallel cases for infer/evaluate");
  app.add_option("--device", g.device, "Compute device (cpu)");
  app.add_flag("--dry-run", g.dry_run, "Validate config and inputs, write nothing");
  app.add_flag("--deterministic", g.deterministic, "Single-threaded kernels and runtime written as 0");
  app.fallthrough();

  std::string manifest_opt, split_opt, run_opt, out_opt;
  auto manifest_path = [&](const ExperimentConfig& cfg) {
    return manifest_opt.empty() ? cfg.data_root / "manifest.json" : fs::path(manifest_opt);
  };
  auto split_path = [&](const ExperimentConfig& cfg) {
    return split_opt.empty() ? cfg.output_root / "split.json" : fs::path(split_opt);
  };
  auto run_dir = [&](const ExperimentConfig& cfg) { return run_opt.empty() ? cfg.output_root : fs::path(run_opt); };

  auto* phantom = app.add_subcommand("phantom", "Generate a synthetic cohort and its manifest");
  std::optional<int> n_cases;
  std::optional<std::uint64_t> cohort_seed;
  phantom->add_option("--n", n_cases, "Number of cases");
  phantom->add_option("--seed", cohort_seed, "Cohort seed");
  phantom->add_option("--out", out_opt, "Output directory (default: data root)");

  auto* split = app.add_subcommand("split", "Write the stratified split plan");
  split->add_option("--manifest", manifest_opt, "Case manifest");
  split->add_option("--out", out_opt, "Split plan JSON (default: <output root>/split.json)");

  auto* train_coarse = app.add_subcommand("train-coarse", "Train one coarse ensemble member");
  int member = 0;
  train_coarse->add_option("--member", member, "Member index")->required();
  auto* fit = app.add_subcommand("fit-ensemble", "Fit the stacking weights on the calibration folds");
  auto* train_refiner = app.add_subcommand("train-refiner", "Train the refinement network");
  for (auto* sub : {train_coarse, fit, train_refiner}) {
    sub->add_option("--manifest", manifest_opt, "Case manifest");
    sub->add_option("--split", split_opt, "Split plan JSON");
    sub->add_option("--run", run_opt, "Run directory (default: output root)");
  }

  auto* infer = app.add_subcommand("infer", "Segment every case of a manifest");
  std::string bundle_opt;
  infer->add_option("--bundle", bundle_opt, "Directory holding bundle.json (default: output root)");
  infer->add_option("--manifest", manifest_opt, "Case manifest");
  infer->add_option("--out", out_opt, "Prediction directory")->required();

  auto* evaluate = app.add_subcommand("evaluate", "Score predictions against ground truth");
  std::string pred_dir, gt_dir, empty_rule = "discard", sensitivity = "voxel";
  evaluate->add_option("--pred", pred_dir, "Prediction directory")->required();
  evaluate->add_option("--gt", gt_dir, "Ground-truth directory (<id>_mask.nii.gz)")->required();
  evaluate->add_option("--out", out_opt, "Report directory")->required();
  evaluate->add_option("--empty-rule", empty_rule, "Dice of cases empty in both masks")
      ->check(CLI::IsMember({"discard", "one"}));
  evaluate->add_option("--sensitivity", sensitivity, "Sensitivity granularity")
      ->check(CLI::IsMember({"voxel", "lesion"}));

  auto* report = app.add_subcommand("report", "Print the summary table of one or more reports");
  std::vector<std::string> reports, names;
  report->add_option("reports", reports, "report.json files")->required();
  report->add_option("--name", names, "Row names (default: parent directory names)");
  report->add_option("--out", out_opt, "Also write the table to this file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const ExperimentConfig cfg = resolve_config(g);

    if (phantom->parsed()) {
      ExperimentConfig c = cfg;
      if (n_cases) c.cohort.n_cases = *n_cases;
      if (cohort_seed) c.cohort.seed = *cohort_seed;
      c.validate();
      const fs::path dir = out_opt.empty() ? c.data_root : fs::path(out_opt);
      if (g.dry_run) {
        dry("would generate " + std::to_string(c.cohort.n_cases) + " cases into " + dir.string());
        return 0;
      }
      const Manifest m = generate_cohort(c, dir);
      std::printf("wrote %zu cases and %s\n", m.cases.size(), (dir / "manifest.json").string().c_str());
    } else if (split->parsed()) {
      const fs::path mp = manifest_path(cfg);
      require_file(mp, "manifest");
      const fs::path out = out_opt.empty() ? split_path(cfg) : fs::path(out_opt);
      const CaseMap cases = load_cases(read_manifest(mp));
      const SplitPlan plan = split_cohort(cases, cfg);
      if (g.dry_run) {
        dry("would write a " + std::to_string(plan.folds.size()) + "-fold plan to " + out.string());
        return 0;
      }
      write_text_atomic(out, to_json(plan).dump(2) + "\n");
      std::printf("wrote %s (%zu test cases)\n", out.string().c_str(), plan.test_ids.size());
    } else if (train_coarse->parsed() || fit->parsed() || train_refiner->parsed()) {
      const fs::path mp = manifest_path(cfg);
      require_file(mp, "manifest");
      const SplitPlan plan = read_plan(split_path(cfg));
      const fs::path run = run_dir(cfg);
      if (train_coarse->parsed() && (member < 0 || member >= cfg.split.scheme.members)) {
        throw ValidationError("--member must be in [0, " + std::to_string(cfg.split.scheme.members) + ")");
      }
      if (g.dry_run) {
        dry("inputs valid; would write into " + run.string());
        return 0;
      }
      const CaseMap cases = load_cases(read_manifest(mp));
      fs::create_directories(run);
      if (train_coarse->parsed()) {
        print_train(("member " + std::to_string(member)).c_str(), train_member_stage(cfg, plan, cases, member, run));
      } else if (fit->parsed()) {
        const StackingFit f = fit_ensemble_stage(cfg, plan, cases, run);
        std::printf("stacking loss %.6f, weights", f.loss);
        for (double w : f.weights.w) std::printf(" %.4f", w);
        std::printf(", bias %.4f\n", f.weights.bias);
      } else {
        print_train("refiner", train_refiner_stage(cfg, plan, cases, run));
      }
    } else if (infer->parsed()) {
      const fs::path bundle = bundle_opt.empty() ? cfg.output_root : fs::path(bundle_opt);
      require_file(bundle / "bundle.json", "bundle");
      const fs::path mp = manifest_path(cfg);
      require_file(mp, "manifest");
      const Manifest m = read_manifest(mp);
      if (g.dry_run) {
        dry("would segment " + std::to_string(m.cases.size()) + " cases into " + out_opt);
        return 0;
      }
      infer_stage(bundle, m, out_opt, InferOptions{g.workers, g.deterministic});
      std::printf("wrote %zu predictions to %s\n", m.cases.size(), out_opt.c_str());
    } else if (evaluate->parsed()) {
      require_dir(pred_dir, "prediction");
      require_dir(gt_dir, "ground-truth");
      if (g.dry_run) {
        dry("would write report.json and mtv_scatter.csv to " + out_opt);
        return 0;
      }
      EvaluateOptions opts;
      opts.workers = g.workers;
      opts.empty_rule = empty_rule == "one" ? EmptyCaseRule::ScoreOne : EmptyCaseRule::Discard;
      opts.sensitivity = sensitivity == "lesion" ? SensitivityMode::Lesion : SensitivityMode::Voxel;
      const auto [metrics, agg] = evaluate_stage(pred_dir, gt_dir, out_opt, opts);
      std::fputs(format_report_table({{fs::path(pred_dir).filename().string(), agg}}).c_str(), stdout);
    } else if (report->parsed()) {
      if (!names.empty() && names.size() != reports.size()) {
        throw ValidationError("--name must be given once per report or not at all");
      }
      std::vector<std::pair<std::string, AggregateReport>> rows;
      for (std::size_t i = 0; i < reports.size(); ++i) {
        require_file(reports[i], "report");
        const nlohmann::json j = nlohmann::json::parse(read_text(reports[i]));
        if (!j.contains("aggregate")) throw ValidationError(reports[i] + " has no aggregate section");
        const std::string name =
            names.empty() ? fs::absolute(reports[i]).parent_path().filename().string() : names[i];
        rows.emplace_back(name, aggregate_from_json(j["aggregate"]));
      }
      const std::string table = format_report_table(rows);
      if (g.dry_run) {
        dry("reports valid");
        return 0;
      }
      std::fputs(table.c_str(), stdout);
      if (!out_opt.empty()) write_text_atomic(out_opt, table);
    }
    return 0;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "error: malformed JSON: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}
