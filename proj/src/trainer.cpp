#include "petseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "petseg/checkpoint.hpp"
#include "petseg/error.hpp"
#include "petseg/metrics.hpp"
#include "petseg/resample.hpp"
#include "petseg/util.hpp"

namespace petseg {

void TrainConfig::validate() const {
  if (epochs < 1 || steps_per_epoch < 1 || batch_size < 1) {
    throw ValidationError("train: epochs, steps_per_epoch and batch_size must be >= 1");
  }
  if (!(foreground_oversample >= 0.0 && foreground_oversample <= 1.0)) {
    throw ValidationError("train: foreground_oversample must be in [0,1]");
  }
  if (!(spacing_augment_probability >= 0.0 && spacing_augment_probability <= 1.0)) {
    throw ValidationError("train: spacing_augment_probability must be in [0,1]");
  }
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"steps_per_epoch", c.steps_per_epoch},
          {"batch_size", c.batch_size},
          {"foreground_oversample", c.foreground_oversample},
          {"augment", c.augment},
          {"spacing_augment_probability", c.spacing_augment_probability},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  for (const auto& [k, v] : j.items()) {
    if (k == "epochs") c.epochs = v.get<int>();
    else if (k == "steps_per_epoch") c.steps_per_epoch = v.get<int>();
    else if (k == "batch_size") c.batch_size = v.get<int>();
    else if (k == "foreground_oversample") c.foreground_oversample = v.get<double>();
    else if (k == "augment") c.augment = v.get<bool>();
    else if (k == "spacing_augment_probability") c.spacing_augment_probability = v.get<double>();
    else if (k == "seed") c.seed = v.get<std::uint64_t>();
    else throw ValidationError("train: unknown key '" + k + "'");
  }
  c.validate();
  return c;
}

nlohmann::json to_json(const EpochLog& e) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"epoch", e.epoch}, {"lr", e.lr}, {"train_loss", e.train_loss}, {"val_loss", opt(e.val_loss)},
          {"val_dice", opt(e.val_dice)}};
}

int patch_start(int n, int p, std::optional<int> center, Rng& rng) {
  const int lo = std::min(0, n - p), hi = std::max(0, n - p);
  if (center) return std::clamp(*center - p / 2, lo, hi);
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

Tensor<float> stack_batch(const std::vector<Tensor<float>>& samples) {
  if (samples.empty()) throw ValidationError("stack_batch: no samples");
  const auto& first = samples.front();
  Tensor<float> out(static_cast<int>(samples.size()), first.channels(), first.spatial());
  for (std::size_t n = 0; n < samples.size(); ++n) {
    if (samples[n].batch() != 1 || samples[n].channels() != first.channels() ||
        !(samples[n].spatial() == first.spatial())) {
      throw GeometryError("stack_batch: sample shapes differ");
    }
    std::copy(samples[n].values().begin(), samples[n].values().end(), out.sample(static_cast<int>(n)));
  }
  return out;
}

namespace {

// A whole volume ready for patch sampling.
struct Sample {
  ChannelStack stack;
  VolumeGrid mask;
  std::vector<std::size_t> foreground;
};

Sample make_sample(ChannelStack stack, VolumeGrid mask) {
  std::vector<std::size_t> fg;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] != 0.0f) fg.push_back(i);
  }
  return {std::move(stack), std::move(mask), std::move(fg)};
}

std::pair<Tensor<float>, Tensor<float>> draw_patch(const Sample& s, const Shape3& patch, const TrainSetup& setup,
                                                   Rng& rng) {
  std::optional<std::size_t> center;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (!s.foreground.empty() && u(rng) < setup.train.foreground_oversample) {
    center = s.foreground[std::uniform_int_distribution<std::size_t>(0, s.foreground.size() - 1)(rng)];
  }
  const Shape3& sh = s.stack.shape();
  std::array<int, 3> c{};
  if (center) {
    c[0] = static_cast<int>(*center % sh.nx);
    c[1] = static_cast<int>((*center / sh.nx) % sh.ny);
    c[2] = static_cast<int>(*center / (static_cast<std::size_t>(sh.nx) * sh.ny));
  }
  std::array<int, 3> start{};
  for (int a = 0; a < 3; ++a) {
    start[a] = patch_start(sh[a], patch[a], center ? std::optional<int>(c[a]) : std::nullopt, rng);
  }
  ChannelStack stack = crop(s.stack, start, patch);
  VolumeGrid mask = crop(s.mask, start, patch, 0.0f);
  if (setup.train.augment) {
    std::tie(stack, mask) = random_flip(stack, mask, setup.augment, rng);
    std::tie(stack, mask) = random_affine(stack, mask, setup.augment, rng);
    stack = pet_intensity_augment(stack, setup.augment, rng);
  }
  return {to_tensor(stack), to_tensor(mask)};
}

std::vector<float> snapshot(const nn::ParameterList<float>& params) {
  std::vector<float> out;
  for (const auto* p : params) out.insert(out.end(), p->value.begin(), p->value.end());
  return out;
}

void restore(const nn::ParameterList<float>& params, const std::vector<float>& values) {
  std::size_t off = 0;
  for (auto* p : params) {
    std::copy(values.begin() + static_cast<std::ptrdiff_t>(off),
              values.begin() + static_cast<std::ptrdiff_t>(off + p->size()), p->value.begin());
    off += p->size();
  }
}

struct ValScore {
  double loss = 0.0;
  std::optional<double> dice;
};

ValScore score(const std::vector<std::pair<VolumeGrid, VolumeGrid>>& prob_and_gt, const TrainSetup& setup) {
  ValScore v;
  double dice = 0.0;
  int nd = 0;
  for (const auto& [prob, gt] : prob_and_gt) {
    v.loss += loss::probability_loss<float>(prob.values(), gt.values(), setup.loss).total;
    if (auto d = case_dice(binarize(prob, setup.pipeline.threshold), gt)) {
      dice += *d;
      ++nd;
    }
  }
  v.loss /= static_cast<double>(prob_and_gt.size());
  if (nd) v.dice = dice / nd;
  return v;
}

// Generic loop shared by both trainers. `step` runs forward/backward on one
// batch and returns its loss; `validate` scores the current weights.
template <typename StepFn, typename ValidateFn>
TrainResult run_training(const nn::ParameterList<float>& params, const TrainSetup& setup, const TrainOutputs& outputs,
                         const nlohmann::json& model_config, StepFn step, ValidateFn validate, bool has_val) {
  setup.train.validate();
  setup.optim.validate();
  setup.loss.validate();
  setup.augment.validate();
  AdamW opt(params, setup.optim);
  TrainResult result;
  std::vector<float> best;
  std::string log_text;
  for (int epoch = 0; epoch < setup.train.epochs; ++epoch) {
    EpochLog log;
    log.epoch = epoch;
    log.lr = lr_at(epoch, setup.optim);
    double total = 0.0;
    for (int s = 0; s < setup.train.steps_per_epoch; ++s) {
      const double lr = lr_at(epoch + static_cast<double>(s) / setup.train.steps_per_epoch, setup.optim);
      opt.zero_grad();
      const double l = step();
      if (!std::isfinite(l)) throw Error("training diverged: non-finite loss");
      clip_grad_norm(params, setup.optim.grad_clip_norm);
      if (grad_norm(params) > setup.optim.grad_clip_norm) throw Error("gradient clipping failed");
      opt.step(lr);
      result.step_losses.push_back(l);
      total += l;
    }
    log.train_loss = total / setup.train.steps_per_epoch;
    if (has_val) {
      const ValScore v = validate();
      log.val_loss = v.loss;
      log.val_dice = v.dice;
    }
    const double sel = log.val_loss.value_or(-static_cast<double>(epoch));
    if (result.best_epoch < 0 || sel < result.best_val_loss) {
      result.best_epoch = epoch;
      result.best_val_loss = sel;
      best = snapshot(params);
      if (!outputs.checkpoint.empty()) {
        nlohmann::json meta = outputs.extra_meta;
        meta["config"] = model_config;
        meta["epoch"] = epoch;
        meta["val_loss"] = log.val_loss ? nlohmann::json(*log.val_loss) : nlohmann::json(nullptr);
        save_checkpoint(outputs.checkpoint, meta, params);
      }
    }
    result.epochs.push_back(log);
    if (!outputs.log.empty()) {
      log_text += to_json(log).dump() + "\n";
      write_text_atomic(outputs.log, log_text);
    }
  }
  if (!has_val) result.best_val_loss = result.epochs.back().train_loss;
  restore(params, best);
  return result;
}

void require_disjoint(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::set<std::string> s(a.begin(), a.end());
  for (const auto& id : b) {
    if (s.count(id)) throw ValidationError("training and validation sets share case '" + id + "'");
  }
}

}  // namespace

TrainResult train_coarse_member(nn::CoarseUNet<float>& net, const std::vector<CaseRecord>& train,
                                const std::vector<CaseRecord>& val, const TrainSetup& setup,
                                const TrainOutputs& outputs) {
  if (train.empty()) throw ValidationError("train_coarse_member: empty training set");
  std::vector<std::string> ti, vi;
  for (const auto& c : train) ti.push_back(c.case_id);
  for (const auto& c : val) vi.push_back(c.case_id);
  require_disjoint(ti, vi);
  const double sp = setup.pipeline.coarse_spacing_mm;
  const Vec3 spacing{sp, sp, sp};
  auto prepare = [&](const CaseRecord& rec) {
    if (!rec.gt_mask) throw ValidationError("case '" + rec.case_id + "' has no ground truth");
    return make_sample(coarse_stack(rec, sp), resample(*rec.gt_mask, spacing, Interpolation::Nearest));
  };
  std::vector<Sample> train_samples, val_samples;
  for (const auto& c : train) train_samples.push_back(prepare(c));
  for (const auto& c : val) val_samples.push_back(prepare(c));

  Rng rng(setup.train.seed);
  const Shape3 patch = net.config().patch_shape;
  const auto scale_weights = loss::deep_supervision_weights(net.config().deep_supervision_levels);
  auto params = net.parameters();
  net.set_input_grad(false);
  auto step = [&]() {
    std::vector<Tensor<float>> xs, gs;
    for (int b = 0; b < setup.train.batch_size; ++b) {
      const auto& s = train_samples[std::uniform_int_distribution<std::size_t>(0, train_samples.size() - 1)(rng)];
      auto [x, g] = draw_patch(s, patch, setup, rng);
      xs.push_back(std::move(x));
      gs.push_back(std::move(g));
    }
    const Tensor<float> x = stack_batch(xs), g = stack_batch(gs);
    const auto scales = net.forward(x, true);
    std::vector<Tensor<float>> grads;
    const double l = loss::combined_loss(scales, g, setup.loss, scale_weights, &grads).total;
    net.backward(grads);
    return l;
  };
  auto validate = [&]() {
    std::vector<std::pair<VolumeGrid, VolumeGrid>> out;
    for (const auto& s : val_samples) {
      out.emplace_back(sliding_window_predict(coarse_patch_model(net), s.stack, setup.pipeline.overlap), s.mask);
    }
    return score(out, setup);
  };
  TrainResult result =
      run_training(params, setup, outputs, nn::to_json(net.config()), step, validate, !val_samples.empty());
  net.set_input_grad(true);
  return result;
}

TrainResult train_refiner(nn::Refiner<float>& net, const std::vector<RefinerCase>& train,
                          const std::vector<RefinerCase>& val, const TrainSetup& setup, const TrainOutputs& outputs) {
  if (train.empty()) throw ValidationError("train_refiner: empty training set");
  if (net.config().in_channels != 6) throw ValidationError("train_refiner: refiner must take 6 channels");
  std::vector<std::string> ti, vi;
  for (const auto& c : train) ti.push_back(c.record.case_id);
  for (const auto& c : val) vi.push_back(c.record.case_id);
  require_disjoint(ti, vi);
  auto prepare = [](const CaseRecord& rec, const VolumeGrid& coarse) {
    if (!rec.gt_mask) throw ValidationError("case '" + rec.case_id + "' has no ground truth");
    require_same_geometry(rec.suv.geometry(), coarse.geometry(), "refiner coarse input");
    return make_sample(with_coarse_mask(build_channel_stack(rec.suv, rec.ct), coarse), *rec.gt_mask);
  };
  std::vector<Sample> train_samples, val_samples;
  for (const auto& c : train) train_samples.push_back(prepare(c.record, c.coarse));
  for (const auto& c : val) val_samples.push_back(prepare(c.record, c.coarse));

  Rng rng(setup.train.seed);
  const Shape3 patch = net.config().patch_shape;
  auto params = net.parameters();
  net.set_input_grad(false);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto step = [&]() {
    std::vector<Tensor<float>> xs, gs;
    for (int b = 0; b < setup.train.batch_size; ++b) {
      const std::size_t idx = std::uniform_int_distribution<std::size_t>(0, train.size() - 1)(rng);
      std::optional<Sample> jittered;
      if (setup.train.augment && u(rng) < setup.train.spacing_augment_probability) {
        const RefinerCase& rc = train[idx];
        CaseRecord rec = random_spacing_resample(rc.record, setup.augment, rng);
        VolumeGrid coarse = resample_onto(rc.coarse, rec.suv.geometry(), Interpolation::Linear);
        jittered = prepare(rec, coarse);
      }
      auto [x, g] = draw_patch(jittered ? *jittered : train_samples[idx], patch, setup, rng);
      xs.push_back(std::move(x));
      gs.push_back(std::move(g));
    }
    const Tensor<float> x = stack_batch(xs), g = stack_batch(gs);
    const Tensor<float> logits = net.forward(x, true);
    Tensor<float> grad;
    const double l = loss::logit_loss(logits, g, setup.loss, &grad).total;
    net.backward(grad);
    return l;
  };
  auto validate = [&]() {
    std::vector<std::pair<VolumeGrid, VolumeGrid>> out;
    for (const auto& s : val_samples) {
      out.emplace_back(sliding_window_predict(refiner_patch_model(net), s.stack, setup.pipeline.overlap), s.mask);
    }
    return score(out, setup);
  };
  TrainResult result =
      run_training(params, setup, outputs, nn::to_json(net.config()), step, validate, !val_samples.empty());
  net.set_input_grad(true);
  return result;
}

}  // namespace petseg
