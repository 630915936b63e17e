#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "petseg/augment.hpp"
#include "petseg/config.hpp"
#include "petseg/error.hpp"
#include "petseg/kernels.hpp"
#include "petseg/optim.hpp"
#include "petseg/phantom.hpp"
#include "petseg/splits.hpp"
#include "petseg/trainer.hpp"

using namespace petseg;

namespace {

std::vector<SplitCase> identical_cases(int n) {
  std::vector<SplitCase> out;
  for (int i = 0; i < n; ++i) out.push_back({"c" + std::to_string(100 + i), "", {5.0, 2}});
  return out;
}

double fold_volume_spread(const SplitPlan& plan) {
  double total = 0;
  std::size_t n = 0;
  for (const auto& f : plan.folds)
    for (const auto& id : f) {
      total += plan.keys.at(id).lesion_volume_ml;
      ++n;
    }
  const double mean = total / n;
  double worst = 0;
  for (const auto& f : plan.folds) {
    double s = 0;
    for (const auto& id : f) s += plan.keys.at(id).lesion_volume_ml;
    worst = std::max(worst, std::abs(s / f.size() - mean) / mean);
  }
  return worst;
}

void check_partition(const SplitPlan& plan, std::size_t n) {
  std::set<std::string> all(plan.test_ids.begin(), plan.test_ids.end());
  std::size_t count = plan.test_ids.size();
  for (const auto& f : plan.folds) {
    all.insert(f.begin(), f.end());
    count += f.size();
  }
  CHECK(all.size() == n);
  CHECK(count == n);
}

}  // namespace

TEST_CASE("stratified splits: balanced folds for identical cases") {
  // 34 patients, 4 of them drawn for test, 30 left for 15 folds.
  const SplitPlan plan = make_stratified_splits(identical_cases(34), 15, 4.0 / 34.0, 3);
  CHECK(plan.test_ids.size() == 4);
  REQUIRE(plan.folds.size() == 15);
  for (const auto& f : plan.folds) CHECK(f.size() == 2);
  check_partition(plan, 34);
}

TEST_CASE("stratified splits: volumes 1..30 give balanced fold means") {
  std::vector<SplitCase> cs;
  for (int v = 1; v <= 34; ++v) cs.push_back({"v" + std::to_string(v), "", {static_cast<double>(v), 1}});
  for (std::uint64_t seed : {1u, 2u, 3u, 4u}) {
    const SplitPlan plan = make_stratified_splits(cs, 15, 4.0 / 34.0, seed);
    for (const auto& f : plan.folds) CHECK(f.size() == 2);
    CHECK(fold_volume_spread(plan) <= 0.2);
    check_partition(plan, cs.size());
  }
}

TEST_CASE("stratified splits: long-tailed volumes, patients kept together, determinism") {
  std::mt19937_64 rng(9);
  std::lognormal_distribution<double> ln(1.0, 0.75);
  std::vector<SplitCase> cs;
  for (int i = 0; i < 60; ++i) {
    const std::string pid = "p" + std::to_string(i < 20 ? i / 2 : i);
    cs.push_back({"c" + std::to_string(i), pid, {ln(rng), 1 + static_cast<int>(rng() % 4)}});
  }
  const SplitPlan plan = make_stratified_splits(cs, 5, 0.2, 11);
  check_partition(plan, 60);
  CHECK(fold_volume_spread(plan) <= 0.2);
  std::map<std::string, int> where;
  auto place = [&](const std::vector<std::string>& ids, int slot) {
    for (const auto& id : ids) where[id] = slot;
  };
  place(plan.test_ids, -1);
  for (int f = 0; f < 5; ++f) place(plan.folds[f], f);
  for (int p = 0; p < 10; ++p) CHECK(where.at("c" + std::to_string(2 * p)) == where.at("c" + std::to_string(2 * p + 1)));

  const SplitPlan again = make_stratified_splits(cs, 5, 0.2, 11);
  CHECK(to_json(again) == to_json(plan));
  const SplitPlan back = split_plan_from_json(to_json(plan));
  CHECK(back.folds == plan.folds);
  CHECK(back.test_ids == plan.test_ids);

  CHECK_THROWS_AS(make_stratified_splits(identical_cases(10), 15, 0.2, 1), ValidationError);
  CHECK_THROWS_AS(make_stratified_splits(identical_cases(30), 1, 0.2, 1), ValidationError);
  CHECK_THROWS_AS(make_stratified_splits(identical_cases(30), 5, 0.0, 1), ValidationError);
}

TEST_CASE("member fold schemes") {
  const FoldScheme paper_like{4, 11, 0};
  for (int m = 0; m < 4; ++m) {
    const MemberFolds mf = member_folds(m, 15, paper_like);
    CHECK(mf.train.size() == 11);
    CHECK(mf.val.size() == 4);
  }
  CHECK(member_folds(2, 15, paper_like).train.front() == 0);
  const FoldScheme cal{4, 9, 3};
  CHECK(calibration_folds(15, cal) == std::vector<int>{12, 13, 14});
  for (int m = 0; m < 4; ++m) {
    const MemberFolds mf = member_folds(m, 15, cal);
    for (int f : mf.train) CHECK(f < 12);
    for (int f : mf.val) CHECK(f < 12);
    CHECK(mf.train.size() + mf.val.size() == 12);
  }
  CHECK(member_folds(0, 15, cal).train != member_folds(1, 15, cal).train);
  CHECK_THROWS_AS(member_folds(0, 15, FoldScheme{4, 12, 3}), ValidationError);
}

TEST_CASE("lr_at examples and properties") {
  const OptimConfig c;
  CHECK(std::abs(lr_at(0, c) - 1e-3) < 1e-12);
  CHECK(std::abs(lr_at(100, c) - 0.5e-3) < 1e-12);
  CHECK(std::abs(lr_at(200, c) - 0.9e-3) < 1e-12);
  CHECK(std::abs(lr_at(400, c) - 0.81e-3) < 1e-12);
  CHECK_THROWS_AS(lr_at(-1, c), ValidationError);
  for (double e = 0; e < 1000; e += 0.37) {
    CHECK(lr_at(e, c) >= 0.0);
    const double p = std::floor(e / 200);
    CHECK(lr_at(e, c) <= 1e-3 * std::pow(0.9, p) + 1e-15);
  }
  // Continuity within a period: small steps give small changes.
  for (double e = 1; e < 199; e += 7.3) CHECK(std::abs(lr_at(e + 1e-6, c) - lr_at(e, c)) < 1e-10);
}

TEST_CASE("gradient clipping and AdamW") {
  nn::Parameter<float> a("a", {3}), b("b", {2});
  a.grad = {3, 4, 0};
  b.grad = {0, 12};
  const nn::ParameterList<float> ps{&a, &b};
  CHECK(grad_norm(ps) == doctest::Approx(13));
  CHECK(clip_grad_norm(ps, 1.0) == doctest::Approx(13));
  CHECK(grad_norm(ps) <= 1.0);
  CHECK(grad_norm(ps) == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(a.grad[0] / a.grad[1] == doctest::Approx(0.75));
  clip_grad_norm(ps, 5.0);
  CHECK(grad_norm(ps) == doctest::Approx(1.0).epsilon(1e-5));

  OptimConfig oc;
  oc.weight_decay = 0.1;
  nn::Parameter<float> w("w", {2});
  w.value = {1.0f, -2.0f};
  w.grad = {0.5f, -3.0f};
  AdamW opt({&w}, oc);
  opt.step(0.01);
  // First Adam step moves by lr * sign(g) after the decoupled decay.
  CHECK(w.value[0] == doctest::Approx(1.0 * (1 - 0.01 * 0.1) - 0.01).epsilon(1e-5));
  CHECK(w.value[1] == doctest::Approx(-2.0 * (1 - 0.01 * 0.1) + 0.01).epsilon(1e-5));
  opt.zero_grad();
  CHECK(w.grad[0] == 0.0f);
  CHECK(opt.steps() == 1);
}

namespace {

std::vector<CaseRecord> small_phantoms(int n, std::uint64_t seed) {
  std::vector<CaseRecord> out;
  for (int i = 0; i < n; ++i) {
    PhantomSpec s;
    s.shape = {40, 32, 32};
    s.spacing = {3, 3, 3};
    s.n_lesions = 2;
    s.lesion_radius_mm = {6, 10};
    s.rng_seed = seed + i;
    s.case_id = "s" + std::to_string(seed + i);
    out.push_back(generate_phantom(s));
  }
  return out;
}

TrainSetup smoke_setup(int epochs, int steps) {
  TrainSetup s;
  s.optim.lr = 3e-3;
  s.optim.period_epochs = epochs;
  s.train.epochs = epochs;
  s.train.steps_per_epoch = steps;
  s.train.batch_size = 2;
  s.train.augment = false;
  s.train.seed = 5;
  return s;
}

nn::CoarseUNetConfig smoke_coarse() {
  nn::CoarseUNetConfig c;
  c.patch_shape = {16, 16, 16};
  c.encoder_channels = {4, 6, 8, 10};
  c.middle_kernel = 3;
  return c;
}

double mean(std::span<const double> v) {
  double s = 0;
  for (double x : v) s += x;
  return s / v.size();
}

}  // namespace

TEST_CASE("coarse member overfits a small phantom set") {
  const auto cases = small_phantoms(8, 10);
  nn::CoarseUNet<float> net(smoke_coarse());
  net.init(1);
  const TrainResult r = train_coarse_member(net, cases, {}, smoke_setup(10, 20));
  REQUIRE(r.step_losses.size() == 200);
  const std::span<const double> all(r.step_losses);
  const double first = mean(all.subspan(0, 20)), last = mean(all.subspan(180, 20));
  MESSAGE("coarse smoke: first " << first << " last " << last);
  CHECK(last <= 0.7 * first);
}

TEST_CASE("refiner overfits a small phantom set; input has six channels") {
  const auto cases = small_phantoms(8, 30);
  std::vector<RefinerCase> rc;
  for (const auto& c : cases) {
    const auto blurred = gaussian_blur(c.gt_mask->values(), c.gt_mask->shape(), 1.5);
    rc.push_back({c, VolumeGrid(c.gt_mask->geometry(), VolumeKind::Probability, blurred)});
  }
  nn::RefinerConfig cfg;
  cfg.patch_shape = {16, 16, 16};
  cfg.width = 4;
  cfg.stem_kernel = 5;
  nn::Refiner<float> net(cfg);
  net.init(2);
  const TrainResult r = train_refiner(net, rc, {}, smoke_setup(10, 20));
  const std::span<const double> all(r.step_losses);
  const double first = mean(all.subspan(0, 20)), last = mean(all.subspan(180, 20));
  MESSAGE("refiner smoke: first " << first << " last " << last);
  CHECK(last <= 0.7 * first);

  cfg.in_channels = 5;
  nn::Refiner<float> five(cfg);
  CHECK_THROWS_AS(train_refiner(five, rc, {}, smoke_setup(1, 1)), ValidationError);
}

TEST_CASE("training rejects overlapping train/val sets and empty training sets") {
  const auto cases = small_phantoms(3, 50);
  nn::CoarseUNet<float> net(smoke_coarse());
  net.init(1);
  CHECK_THROWS_AS(train_coarse_member(net, cases, {cases[1]}, smoke_setup(1, 1)), ValidationError);
  CHECK_THROWS_AS(train_coarse_member(net, {}, {cases[1]}, smoke_setup(1, 1)), ValidationError);
}

TEST_CASE("training is deterministic under fixed seeds and one thread") {
  const int threads = kernels::max_threads();
  kernels::set_num_threads(1);
  const auto cases = small_phantoms(4, 70);
  std::vector<double> runs[2];
  for (auto& losses : runs) {
    nn::CoarseUNet<float> net(smoke_coarse());
    net.init(3);
    TrainSetup s = smoke_setup(2, 5);
    s.train.augment = true;
    losses = train_coarse_member(net, cases, {}, s).step_losses;
  }
  kernels::set_num_threads(threads);
  REQUIRE(runs[0].size() == runs[1].size());
  for (std::size_t i = 0; i < runs[0].size(); ++i) CHECK(std::abs(runs[0][i] - runs[1][i]) <= 1e-4);
}

TEST_CASE("validation selects the checkpoint and writes logs") {
  const auto cases = small_phantoms(4, 90);
  const auto dir = testing::temp_dir("train_out");
  nn::CoarseUNet<float> net(smoke_coarse());
  net.init(4);
  TrainSetup s = smoke_setup(3, 4);
  const TrainResult r = train_coarse_member(net, {cases[0], cases[1], cases[2]}, {cases[3]}, s,
                                            {dir / "m.ckpt", dir / "m.jsonl", {{"member", 0}}});
  REQUIRE(r.epochs.size() == 3);
  double best = 1e300;
  int arg = -1;
  for (const auto& e : r.epochs) {
    REQUIRE(e.val_loss.has_value());
    if (*e.val_loss < best) {
      best = *e.val_loss;
      arg = e.epoch;
    }
  }
  CHECK(r.best_epoch == arg);
  CHECK(std::filesystem::exists(dir / "m.ckpt"));
  std::ifstream log(dir / "m.jsonl");
  int lines = 0;
  for (std::string line; std::getline(log, line);) ++lines;
  CHECK(lines == 3);
}

TEST_CASE("patch_start and stack_batch") {
  Rng rng(1);
  CHECK(patch_start(10, 4, 5, rng) == 3);
  CHECK(patch_start(10, 4, 0, rng) == 0);
  CHECK(patch_start(10, 4, 9, rng) == 6);
  CHECK(patch_start(3, 8, 1, rng) == -3);
  CHECK(patch_start(3, 8, 0, rng) == -4);
  for (int i = 0; i < 50; ++i) {
    const int s = patch_start(10, 4, std::nullopt, rng);
    CHECK((s >= 0 && s <= 6));
  }
  Tensor<float> a(1, 2, {2, 2, 2}, 1.0f), b(1, 2, {2, 2, 2}, 2.0f), c(1, 3, {2, 2, 2});
  const Tensor<float> ab = stack_batch({a, b});
  CHECK(ab.batch() == 2);
  CHECK(ab.at(1, 1, 1, 1, 1) == 2.0f);
  CHECK_THROWS_AS(stack_batch({a, c}), GeometryError);
}

TEST_CASE("train config JSON") {
  TrainConfig t;
  t.epochs = 3;
  t.seed = 9;
  const TrainConfig back = train_config_from_json(to_json(t));
  CHECK(back.epochs == 3);
  CHECK(back.seed == 9);
  nlohmann::json j = to_json(t);
  j["bogus"] = 1;
  CHECK_THROWS_AS(train_config_from_json(j), ValidationError);
  const OptimConfig o = optim_config_from_json(to_json(OptimConfig{}));
  CHECK(o.period_epochs == 200.0);
  CHECK(o.decay == 0.9);
}

TEST_CASE("refiner optimizer defaults to the shared one and inherits unlisted keys") {
  const ExperimentConfig plain = experiment_config_from_json({{"optim", {{"lr", 0.005}, {"period_epochs", 12}}}});
  CHECK_FALSE(plain.refiner_optim.has_value());
  CHECK(plain.refiner_optimizer().lr == 0.005);
  CHECK_FALSE(to_json(plain).contains("refiner_optim"));

  const ExperimentConfig split = experiment_config_from_json(
      {{"refiner_optim", {{"lr", 0.002}}}, {"optim", {{"lr", 0.005}, {"period_epochs", 12}}}});
  CHECK(split.optim.lr == 0.005);
  CHECK(split.refiner_optimizer().lr == 0.002);
  CHECK(split.refiner_optimizer().period_epochs == 12.0);
  const ExperimentConfig back = experiment_config_from_json(to_json(split));
  CHECK(back.refiner_optimizer().lr == 0.002);
  CHECK(back.refiner_optimizer().period_epochs == 12.0);
  CHECK_THROWS_AS(experiment_config_from_json({{"refiner_optim", {{"lr", -1.0}}}}), ValidationError);
  CHECK_THROWS_AS(experiment_config_from_json({{"refiner_optim", {{"bogus", 1}}}}), ValidationError);
}
