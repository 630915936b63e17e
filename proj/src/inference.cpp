#include "petseg/inference.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>

#include "petseg/checkpoint.hpp"
#include "petseg/error.hpp"
#include "petseg/nifti.hpp"
#include "petseg/resample.hpp"
#include "petseg/util.hpp"

namespace petseg {

std::vector<int> tile_starts(int extent, int patch, double overlap) {
  if (extent <= patch) return {0};
  const int stride = std::max(1, static_cast<int>(std::floor(patch * (1.0 - overlap))));
  std::vector<int> starts;
  for (int s = 0; s + patch < extent; s += stride) starts.push_back(s);
  starts.push_back(extent - patch);
  return starts;
}

namespace {

std::vector<double> gaussian_importance(const Shape3& patch) {
  std::array<std::vector<double>, 3> axis;
  for (int a = 0; a < 3; ++a) {
    const double sigma = patch[a] / 8.0;
    const double c = 0.5 * (patch[a] - 1);
    for (int i = 0; i < patch[a]; ++i) axis[a].push_back(std::exp(-0.5 * (i - c) * (i - c) / (sigma * sigma)));
  }
  std::vector<double> w(patch.voxels());
  for (int z = 0; z < patch.nz; ++z)
    for (int y = 0; y < patch.ny; ++y)
      for (int x = 0; x < patch.nx; ++x) w[patch.index(x, y, z)] = axis[0][x] * axis[1][y] * axis[2][z];
  return w;
}

}  // namespace

VolumeGrid sliding_window_predict(const PatchModel& model, const Tensor<float>& input, const Geometry& geometry,
                                  double overlap) {
  if (!(overlap >= 0.0 && overlap < 1.0)) throw ValidationError("sliding window: overlap must be in [0, 1)");
  if (input.batch() != 1) throw ValidationError("sliding window: expected a single sample");
  if (input.channels() != model.in_channels) {
    throw ValidationError("sliding window: model expects " + std::to_string(model.in_channels) + " channels, got " +
                          std::to_string(input.channels()));
  }
  if (!(input.spatial() == geometry.shape)) throw GeometryError("sliding window: input/geometry shape mismatch");
  const Shape3& vs = geometry.shape;
  const Shape3& ps = model.patch;
  const std::vector<double> importance = gaussian_importance(ps);
  std::vector<double> num(vs.voxels(), 0.0), den(vs.voxels(), 0.0);
  const auto xs = tile_starts(vs.nx, ps.nx, overlap);
  const auto ys = tile_starts(vs.ny, ps.ny, overlap);
  const auto zs = tile_starts(vs.nz, ps.nz, overlap);
  for (int z0 : zs) {
    for (int y0 : ys) {
      for (int x0 : xs) {
        const Tensor<float> patch = crop_tensor(input, {x0, y0, z0}, ps);
        const std::vector<float> prob = model.predict(patch);
        if (prob.size() != ps.voxels()) throw Error("sliding window: model returned the wrong number of voxels");
        for (int z = 0; z < ps.nz && z0 + z < vs.nz; ++z) {
          for (int y = 0; y < ps.ny && y0 + y < vs.ny; ++y) {
            for (int x = 0; x < ps.nx && x0 + x < vs.nx; ++x) {
              const std::size_t pi = ps.index(x, y, z);
              const std::size_t vi = vs.index(x0 + x, y0 + y, z0 + z);
              num[vi] += importance[pi] * prob[pi];
              den[vi] += importance[pi];
            }
          }
        }
      }
    }
  }
  std::vector<float> out(vs.voxels());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(std::clamp(num[i] / den[i], 0.0, 1.0));
  return VolumeGrid(geometry, VolumeKind::Probability, std::move(out));
}

VolumeGrid sliding_window_predict(const PatchModel& model, const ChannelStack& stack, double overlap) {
  return sliding_window_predict(model, to_tensor(stack), stack.geometry(), overlap);
}

PatchModel coarse_patch_model(nn::CoarseUNet<float>& net) {
  return {net.config().in_channels, net.config().patch_shape, [&net](const Tensor<float>& x) {
            return nn::lesion_probability(net.forward(x, false).front());
          }};
}

PatchModel refiner_patch_model(nn::Refiner<float>& net) {
  return {net.config().in_channels, net.config().patch_shape,
          [&net](const Tensor<float>& x) { return nn::lesion_probability(net.forward(x, false)); }};
}

VolumeGrid binarize(const VolumeGrid& prob, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("binarize: threshold must be in (0, 1)");
  std::vector<float> out(prob.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = prob[i] > threshold ? 1.0f : 0.0f;
  return VolumeGrid(prob.geometry(), VolumeKind::BinaryMask, std::move(out));
}

void PipelineParams::validate() const {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("pipeline: threshold must be in (0, 1)");
  if (!(overlap >= 0.0 && overlap < 1.0)) throw ValidationError("pipeline: overlap must be in [0, 1)");
  if (!(coarse_spacing_mm > 0.0)) throw ValidationError("pipeline: coarse spacing must be positive");
}

nlohmann::json to_json(const PipelineParams& p) {
  return {{"threshold", p.threshold}, {"overlap", p.overlap}, {"coarse_spacing_mm", p.coarse_spacing_mm}};
}

PipelineParams pipeline_params_from_json(const nlohmann::json& j) {
  PipelineParams p;
  for (const auto& [k, v] : j.items()) {
    if (k == "threshold") p.threshold = v.get<double>();
    else if (k == "overlap") p.overlap = v.get<double>();
    else if (k == "coarse_spacing_mm") p.coarse_spacing_mm = v.get<double>();
    else throw ValidationError("pipeline: unknown key '" + k + "'");
  }
  p.validate();
  return p;
}

PipelineBundle PipelineBundle::clone() const {
  PipelineBundle b;
  b.members = members;
  b.stacking = stacking;
  if (refiner) b.refiner = std::make_unique<nn::Refiner<float>>(*refiner);
  b.params = params;
  return b;
}

void PipelineBundle::validate() const {
  if (members.empty()) throw ValidationError("bundle: no coarse members");
  if (!refiner) throw ValidationError("bundle: missing refiner");
  stacking.validate();
  if (stacking.w.size() != members.size()) throw ValidationError("bundle: stacking weight count != member count");
  const auto cfg = to_json(members.front().config());
  for (const auto& m : members) {
    if (to_json(m.config()) != cfg) throw ValidationError("bundle: coarse members have different configs");
  }
  if (members.front().config().in_channels != 5) throw ValidationError("bundle: coarse members need 5 input channels");
  if (refiner->config().in_channels != 6) throw ValidationError("bundle: refiner needs 6 input channels");
  params.validate();
}

nlohmann::json bundle_json(const std::vector<std::string>& member_checkpoints, const StackingWeights& stacking,
                           const std::string& refiner_checkpoint, const PipelineParams& params) {
  return {{"members", member_checkpoints},
          {"stacking", to_json(stacking)},
          {"refiner", refiner_checkpoint},
          {"pipeline", to_json(params)}};
}

PipelineBundle PipelineBundle::load(const std::filesystem::path& dir) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(dir / "bundle.json"));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("bundle.json: " + std::string(e.what()));
  }
  for (const auto& [k, v] : j.items()) {
    if (k != "members" && k != "stacking" && k != "refiner" && k != "pipeline") {
      throw ValidationError("bundle.json: unknown key '" + k + "'");
    }
  }
  PipelineBundle b;
  try {
    for (const auto& name : j.at("members").get<std::vector<std::string>>()) {
      const auto meta = read_checkpoint_meta(dir / name);
      nn::CoarseUNet<float> net(nn::coarse_config_from_json(meta.at("config")));
      load_checkpoint(dir / name, net.parameters());
      b.members.push_back(std::move(net));
    }
    b.stacking = stacking_weights_from_json(j.at("stacking"));
    const auto rpath = dir / j.at("refiner").get<std::string>();
    const auto meta = read_checkpoint_meta(rpath);
    b.refiner = std::make_unique<nn::Refiner<float>>(nn::refiner_config_from_json(meta.at("config")));
    load_checkpoint(rpath, b.refiner->parameters());
    if (j.contains("pipeline")) b.params = pipeline_params_from_json(j.at("pipeline"));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("bundle.json: " + std::string(e.what()));
  }
  b.validate();
  return b;
}

ChannelStack coarse_stack(const CaseRecord& rec, double spacing_mm) {
  const Vec3 s{spacing_mm, spacing_mm, spacing_mm};
  const char* cache = std::getenv("PETSEG_CACHE");
  std::filesystem::path file;
  if (cache && *cache) {
    const Geometry& g = rec.suv.geometry();
    std::ostringstream key;
    key.precision(17);
    key << to_string(g.shape) << ' ' << g.spacing[0] << ' ' << g.spacing[1] << ' ' << g.spacing[2] << ' '
        << g.origin[0] << ' ' << g.origin[1] << ' ' << g.origin[2] << ' ' << spacing_mm;
    const std::uint64_t h = fnv1a(rec.ct.values(), fnv1a(rec.suv.values(), fnv1a(key.str())));
    char name[64];
    std::snprintf(name, sizeof name, "coarse_%016llx.nii.gz", static_cast<unsigned long long>(h));
    file = std::filesystem::path(cache) / name;
    if (std::filesystem::exists(file)) {
      auto channels = nifti::read_channels(file, VolumeKind::Probability);
      std::vector<ChannelName> names;
      for (const auto& w : kStandardWindows) names.push_back(w.name);
      return ChannelStack(std::move(channels), std::move(names));
    }
  }
  ChannelStack stack =
      build_channel_stack(resample(rec.suv, s, Interpolation::Linear), resample(rec.ct, s, Interpolation::Linear));
  if (!file.empty()) {
    std::filesystem::create_directories(file.parent_path());
    nifti::write_channels(file, stack.channels());
  }
  return stack;
}

CoarseResult run_coarse(const CaseRecord& rec, PipelineBundle& bundle) {
  const ChannelStack stack = coarse_stack(rec, bundle.params.coarse_spacing_mm);
  const Tensor<float> input = to_tensor(stack);
  std::vector<VolumeGrid> probs;
  for (auto& m : bundle.members) {
    probs.push_back(sliding_window_predict(coarse_patch_model(m), input, stack.geometry(), bundle.params.overlap));
  }
  std::vector<std::span<const float>> spans;
  for (const auto& p : probs) spans.push_back(p.values());
  std::vector<float> combined(stack.shape().voxels());
  ensemble_combine(spans, bundle.stacking, combined);
  VolumeGrid comb(stack.geometry(), VolumeKind::Probability, std::move(combined));
  VolumeGrid native = resample_onto(comb, rec.suv.geometry(), Interpolation::Linear);
  return {std::move(probs), std::move(comb), std::move(native)};
}

PipelineResult run_pipeline(const CaseRecord& rec, PipelineBundle& bundle) {
  bundle.validate();
  const auto t0 = std::chrono::steady_clock::now();
  CoarseResult coarse = run_coarse(rec, bundle);
  const ChannelStack native = with_coarse_mask(build_channel_stack(rec.suv, rec.ct), coarse.native);
  VolumeGrid refined = sliding_window_predict(refiner_patch_model(*bundle.refiner), native, bundle.params.overlap);
  VolumeGrid mask = binarize(refined, bundle.params.threshold);
  const auto t1 = std::chrono::steady_clock::now();
  VolumeGrid naive = binarize(coarse.native, bundle.params.threshold);
  return {std::move(coarse), std::move(naive), std::move(refined), std::move(mask),
          std::chrono::duration<double>(t1 - t0).count()};
}

}  // namespace petseg
