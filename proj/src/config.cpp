#include "petseg/config.hpp"

#include "petseg/error.hpp"
#include "petseg/util.hpp"

namespace petseg {

namespace {

using nlohmann::json;

json interval(const Interval& i) { return json::array({i.lo, i.hi}); }

Interval interval_from(const json& j, const std::string& key) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 2) throw ValidationError("'" + key + "' must be a [lo, hi] pair");
  return {v[0], v[1]};
}

Vec3 vec3_from(const json& j, const std::string& key) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 3) throw ValidationError("'" + key + "' must have three entries");
  return {v[0], v[1], v[2]};
}

Shape3 shape_from(const json& j, const std::string& key) {
  const auto v = j.get<std::vector<int>>();
  if (v.size() != 3) throw ValidationError("'" + key + "' must have three entries");
  return {v[0], v[1], v[2]};
}

[[noreturn]] void unknown(const char* section, const std::string& key) {
  throw ValidationError(std::string(section) + ": unknown key '" + key + "'");
}

// Wraps json type errors into ValidationError.
template <typename F>
auto guarded(const char* section, F f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw ValidationError(std::string(section) + ": " + e.what());
  }
}

}  // namespace

void SplitConfig::validate() const {
  if (folds < 2) throw ValidationError("split: folds must be >= 2");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ValidationError("split: test_fraction must be in (0,1)");
  scheme.validate(folds);
}

void ExperimentConfig::validate() const {
  phantom.validate();
  cohort.validate();
  augment.validate();
  coarse.validate();
  refiner.validate();
  optim.validate();
  if (refiner_optim) refiner_optim->validate();
  loss.validate();
  pipeline.validate();
  split.validate();
  coarse_train.validate();
  refiner_train.validate();
  if (coarse.in_channels != 5) throw ValidationError("coarse: in_channels must be 5");
  if (refiner.in_channels != 6) throw ValidationError("refiner: in_channels must be 6");
}

json to_json(const PhantomSpec& s) {
  return {{"shape", {s.shape.nx, s.shape.ny, s.shape.nz}},
          {"spacing", s.spacing},
          {"n_lesions", s.n_lesions},
          {"lesion_radius_mm", interval(s.lesion_radius_mm)},
          {"lesion_suv", interval(s.lesion_suv)},
          {"include_hot_organs", s.include_hot_organs},
          {"suv_noise", s.suv_noise},
          {"ct_noise_hu", s.ct_noise_hu},
          {"rng_seed", s.rng_seed}};
}

PhantomSpec phantom_spec_from_json(const json& j) {
  return guarded("phantom", [&] {
    PhantomSpec s;
    for (const auto& [k, v] : j.items()) {
      if (k == "shape") s.shape = shape_from(v, k);
      else if (k == "spacing") s.spacing = vec3_from(v, k);
      else if (k == "n_lesions") s.n_lesions = v.get<int>();
      else if (k == "lesion_radius_mm") s.lesion_radius_mm = interval_from(v, k);
      else if (k == "lesion_suv") s.lesion_suv = interval_from(v, k);
      else if (k == "include_hot_organs") s.include_hot_organs = v.get<bool>();
      else if (k == "suv_noise") s.suv_noise = v.get<double>();
      else if (k == "ct_noise_hu") s.ct_noise_hu = v.get<double>();
      else if (k == "rng_seed") s.rng_seed = v.get<std::uint64_t>();
      else unknown("phantom", k);
    }
    s.validate();
    return s;
  });
}

json to_json(const CohortSpec& s) {
  return {{"n_cases", s.n_cases},
          {"max_lesions", s.max_lesions},
          {"negative_fraction", s.negative_fraction},
          {"multi_study_fraction", s.multi_study_fraction},
          {"seed", s.seed}};
}

CohortSpec cohort_spec_from_json(const json& j) {
  return guarded("cohort", [&] {
    CohortSpec s;
    for (const auto& [k, v] : j.items()) {
      if (k == "n_cases") s.n_cases = v.get<int>();
      else if (k == "max_lesions") s.max_lesions = v.get<int>();
      else if (k == "negative_fraction") s.negative_fraction = v.get<double>();
      else if (k == "multi_study_fraction") s.multi_study_fraction = v.get<double>();
      else if (k == "seed") s.seed = v.get<std::uint64_t>();
      else unknown("cohort", k);
    }
    s.validate();
    return s;
  });
}

json to_json(const AugmentConfig& c) {
  return {{"p_flip", c.p_flip},
          {"rotation_deg", c.rotation_deg},
          {"scale", interval(c.scale)},
          {"pet_blur_sigma", interval(c.pet_blur_sigma)},
          {"pet_brightness", interval(c.pet_brightness)},
          {"pet_contrast", interval(c.pet_contrast)},
          {"pet_gamma", interval(c.pet_gamma)},
          {"spacing_jitter_mm", interval(c.spacing_jitter_mm)},
          {"rng_seed", c.rng_seed}};
}

AugmentConfig augment_config_from_json(const json& j) {
  return guarded("augment", [&] {
    AugmentConfig c;
    for (const auto& [k, v] : j.items()) {
      if (k == "p_flip") c.p_flip = vec3_from(v, k);
      else if (k == "rotation_deg") c.rotation_deg = v.get<double>();
      else if (k == "scale") c.scale = interval_from(v, k);
      else if (k == "pet_blur_sigma") c.pet_blur_sigma = interval_from(v, k);
      else if (k == "pet_brightness") c.pet_brightness = interval_from(v, k);
      else if (k == "pet_contrast") c.pet_contrast = interval_from(v, k);
      else if (k == "pet_gamma") c.pet_gamma = interval_from(v, k);
      else if (k == "spacing_jitter_mm") c.spacing_jitter_mm = interval_from(v, k);
      else if (k == "rng_seed") c.rng_seed = v.get<std::uint64_t>();
      else unknown("augment", k);
    }
    c.validate();
    return c;
  });
}

json to_json(const loss::LossWeights& w) {
  return {{"dice", w.dice}, {"ce", w.ce}, {"sensitivity", w.sensitivity}, {"epsilon", w.epsilon}};
}

loss::LossWeights loss_weights_from_json(const json& j) {
  return guarded("loss", [&] {
    loss::LossWeights w;
    for (const auto& [k, v] : j.items()) {
      if (k == "dice") w.dice = v.get<double>();
      else if (k == "ce") w.ce = v.get<double>();
      else if (k == "sensitivity") w.sensitivity = v.get<double>();
      else if (k == "epsilon") w.epsilon = v.get<double>();
      else unknown("loss", k);
    }
    w.validate();
    return w;
  });
}

json to_json(const SplitConfig& c) {
  return {{"folds", c.folds},
          {"test_fraction", c.test_fraction},
          {"members", c.scheme.members},
          {"train_folds", c.scheme.train_folds},
          {"calibration_folds", c.scheme.calibration_folds}};
}

SplitConfig split_config_from_json(const json& j) {
  return guarded("split", [&] {
    SplitConfig c;
    for (const auto& [k, v] : j.items()) {
      if (k == "folds") c.folds = v.get<int>();
      else if (k == "test_fraction") c.test_fraction = v.get<double>();
      else if (k == "members") c.scheme.members = v.get<int>();
      else if (k == "train_folds") c.scheme.train_folds = v.get<int>();
      else if (k == "calibration_folds") c.scheme.calibration_folds = v.get<int>();
      else unknown("split", k);
    }
    c.validate();
    return c;
  });
}

json to_json(const ExperimentConfig& c) {
  json j = {{"data_root", c.data_root.string()},
          {"output_root", c.output_root.string()},
          {"phantom", to_json(c.phantom)},
          {"cohort", to_json(c.cohort)},
          {"augment", to_json(c.augment)},
          {"coarse", nn::to_json(c.coarse)},
          {"refiner", nn::to_json(c.refiner)},
          {"optim", to_json(c.optim)},
          {"loss", to_json(c.loss)},
          {"pipeline", to_json(c.pipeline)},
          {"split", to_json(c.split)},
          {"coarse_train", to_json(c.coarse_train)},
          {"refiner_train", to_json(c.refiner_train)},
          {"seed", c.seed}};
  if (c.refiner_optim) j["refiner_optim"] = to_json(*c.refiner_optim);
  return j;
}

ExperimentConfig experiment_config_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("experiment config must be a JSON object");
  return guarded("config", [&] {
    ExperimentConfig c;
    const json* refiner_optim = nullptr;
    for (const auto& [k, v] : j.items()) {
      if (k == "data_root") c.data_root = v.get<std::string>();
      else if (k == "output_root") c.output_root = v.get<std::string>();
      else if (k == "phantom") c.phantom = phantom_spec_from_json(v);
      else if (k == "cohort") c.cohort = cohort_spec_from_json(v);
      else if (k == "augment") c.augment = augment_config_from_json(v);
      else if (k == "coarse") c.coarse = nn::coarse_config_from_json(v);
      else if (k == "refiner") c.refiner = nn::refiner_config_from_json(v);
      else if (k == "optim") c.optim = optim_config_from_json(v);
      else if (k == "refiner_optim") refiner_optim = &v;
      else if (k == "loss") c.loss = loss_weights_from_json(v);
      else if (k == "pipeline") c.pipeline = pipeline_params_from_json(v);
      else if (k == "split") c.split = split_config_from_json(v);
      else if (k == "coarse_train") c.coarse_train = train_config_from_json(v);
      else if (k == "refiner_train") c.refiner_train = train_config_from_json(v);
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else unknown("config", k);
    }
    if (refiner_optim) c.refiner_optim = optim_config_from_json(*refiner_optim, c.optim);
    c.validate();
    return c;
  });
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw ValidationError("config " + path.string() + ": " + e.what());
  }
  return experiment_config_from_json(j);
}

}  // namespace petseg
