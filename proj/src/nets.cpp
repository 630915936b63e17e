#include "petseg/nets.hpp"

#include <cmath>
#include <random>
#include <set>

namespace petseg::nn {

namespace {

// Lesion logit offset of the output heads at initialization: softmax
// probability 0.01 for the lesion class.
const double kForegroundBias = -std::log(99.0);

std::string level_name(const char* prefix, int l) { return std::string(prefix) + std::to_string(l); }

template <typename T>
void require_input(const Tensor<T>& x, int channels, const Shape3& patch, const char* what) {
  if (x.channels() != channels || !(x.spatial() == patch)) {
    throw GeometryError(std::string(what) + ": expected input " + std::to_string(channels) + "x" + to_string(patch) +
                        ", got " + std::to_string(x.channels()) + "x" + to_string(x.spatial()));
  }
}

template <typename T>
void accumulate(Tensor<T>& acc, const Tensor<T>& g) {
  if (g.empty()) return;
  if (acc.empty()) {
    acc = g;
    return;
  }
  kernels::add_inplace(g.size(), g.data(), acc.data());
}

nlohmann::json shape_json(const Shape3& s) { return nlohmann::json::array({s.nx, s.ny, s.nz}); }

Shape3 shape_from(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw ValidationError("patch_shape must be an array of three integers");
  return Shape3{j[0].get<int>(), j[1].get<int>(), j[2].get<int>()};
}

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const char* section) {
  if (!j.is_object()) throw ValidationError(std::string(section) + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ValidationError(std::string("unknown key '") + key + "' in " + section);
  }
}

}  // namespace

void CoarseUNetConfig::validate() const {
  if (in_channels < 1 || out_channels < 2) throw ValidationError("coarse: invalid channel counts");
  if (encoder_channels.size() < 2) throw ValidationError("coarse: need at least two encoder levels");
  for (std::size_t i = 0; i < encoder_channels.size(); ++i) {
    if (encoder_channels[i] < 1) throw ValidationError("coarse: encoder channels must be positive");
    if (i > 0 && encoder_channels[i] <= encoder_channels[i - 1]) {
      throw ValidationError("coarse: encoder channel list must be strictly increasing");
    }
  }
  const int div = 1 << (levels() - 1);
  for (int a = 0; a < 3; ++a) {
    if (patch_shape[a] < div || patch_shape[a] % div != 0) {
      throw ValidationError("coarse: patch dims must be divisible by " + std::to_string(div));
    }
  }
  if (middle_kernel < 1 || middle_kernel % 2 == 0) throw ValidationError("coarse: middle kernel must be odd");
  if (deep_supervision_levels < 1 || deep_supervision_levels > levels() - 1) {
    throw ValidationError("coarse: deep_supervision_levels must be in [1, levels-1]");
  }
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ValidationError("coarse: leaky slope must be in [0,1)");
}

void RefinerConfig::validate() const {
  if (in_channels < 1 || out_channels < 2 || width < 1) throw ValidationError("refiner: invalid channel counts");
  if (n_residual_blocks != 4) throw ValidationError("refiner: exactly 4 residual blocks are required");
  for (int k : {stem_kernel, block_kernel, head_kernel}) {
    if (k < 1 || k % 2 == 0) throw ValidationError("refiner: kernels must be odd");
  }
  for (int a = 0; a < 3; ++a) {
    if (patch_shape[a] < 1) throw ValidationError("refiner: invalid patch shape");
  }
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ValidationError("refiner: leaky slope must be in [0,1)");
}

nlohmann::json to_json(const CoarseUNetConfig& c) {
  return {{"in_channels", c.in_channels},
          {"patch_shape", shape_json(c.patch_shape)},
          {"encoder_channels", c.encoder_channels},
          {"middle_kernel", c.middle_kernel},
          {"leaky_slope", c.leaky_slope},
          {"out_channels", c.out_channels},
          {"deep_supervision_levels", c.deep_supervision_levels}};
}

nlohmann::json to_json(const RefinerConfig& c) {
  return {{"in_channels", c.in_channels},       {"patch_shape", shape_json(c.patch_shape)},
          {"stem_kernel", c.stem_kernel},       {"width", c.width},
          {"n_residual_blocks", c.n_residual_blocks}, {"block_kernel", c.block_kernel},
          {"head_kernel", c.head_kernel},       {"leaky_slope", c.leaky_slope},
          {"out_channels", c.out_channels}};
}

CoarseUNetConfig coarse_config_from_json(const nlohmann::json& j) {
  reject_unknown(j,
                 {"in_channels", "patch_shape", "encoder_channels", "middle_kernel", "leaky_slope", "out_channels",
                  "deep_supervision_levels"},
                 "coarse");
  CoarseUNetConfig c;
  c.in_channels = j.value("in_channels", c.in_channels);
  if (j.contains("patch_shape")) c.patch_shape = shape_from(j["patch_shape"]);
  c.encoder_channels = j.value("encoder_channels", c.encoder_channels);
  c.middle_kernel = j.value("middle_kernel", c.middle_kernel);
  c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
  c.out_channels = j.value("out_channels", c.out_channels);
  c.deep_supervision_levels = j.value("deep_supervision_levels", c.deep_supervision_levels);
  c.validate();
  return c;
}

RefinerConfig refiner_config_from_json(const nlohmann::json& j) {
  reject_unknown(j,
                 {"in_channels", "patch_shape", "stem_kernel", "width", "n_residual_blocks", "block_kernel",
                  "head_kernel", "leaky_slope", "out_channels"},
                 "refiner");
  RefinerConfig c;
  c.in_channels = j.value("in_channels", c.in_channels);
  if (j.contains("patch_shape")) c.patch_shape = shape_from(j["patch_shape"]);
  c.stem_kernel = j.value("stem_kernel", c.stem_kernel);
  c.width = j.value("width", c.width);
  c.n_residual_blocks = j.value("n_residual_blocks", c.n_residual_blocks);
  c.block_kernel = j.value("block_kernel", c.block_kernel);
  c.head_kernel = j.value("head_kernel", c.head_kernel);
  c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
  c.out_channels = j.value("out_channels", c.out_channels);
  c.validate();
  return c;
}

template <typename T>
CoarseUNet<T>::CoarseUNet(CoarseUNetConfig config)
    : config_((config.validate(), std::move(config))),
      head_("head", config_.encoder_channels.front(), config_.out_channels, 1) {
  const auto& ch = config_.encoder_channels;
  const int L = config_.levels();
  const T slope = static_cast<T>(config_.leaky_slope);
  encoder_.reserve(L);
  for (int l = 0; l < L; ++l) {
    encoder_.emplace_back(level_name("enc", l), l == 0 ? config_.in_channels : ch[l - 1], ch[l], 3, l == 0 ? 1 : 2,
                          slope);
  }
  for (int m = 0; m < 2; ++m) {
    middle_.emplace_back(level_name("middle", m), ch[L - 1], ch[L - 1], config_.middle_kernel, 1, slope);
  }
  for (int l = 0; l < L - 1; ++l) {
    up_.emplace_back(level_name("up", l), ch[l + 1], ch[l]);
    decoder_.emplace_back(level_name("dec", l), 2 * ch[l], ch[l], 3, 1, slope);
  }
  for (int k = 1; k <= config_.deep_supervision_levels; ++k) {
    ds_heads_.emplace_back(level_name("ds_head", k), ch[k], config_.out_channels, 1);
  }
}

template <typename T>
void CoarseUNet<T>::init(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& b : encoder_) b.init(rng);
  for (auto& b : middle_) b.init(rng);
  for (auto& u : up_) u.init(rng);
  for (auto& b : decoder_) b.init(rng);
  head_.init(rng, 1.0);
  head_.set_bias(1, static_cast<T>(kForegroundBias));
  for (auto& h : ds_heads_) {
    h.init(rng, 1.0);
    h.set_bias(1, static_cast<T>(kForegroundBias));
  }
}

template <typename T>
ParameterList<T> CoarseUNet<T>::parameters() {
  ParameterList<T> out;
  for (auto& b : encoder_) b.collect(out);
  for (auto& b : middle_) b.collect(out);
  for (auto& u : up_) u.collect(out);
  for (auto& b : decoder_) b.collect(out);
  head_.collect(out);
  for (auto& h : ds_heads_) h.collect(out);
  return out;
}

template <typename T>
std::vector<Tensor<T>> CoarseUNet<T>::forward(const Tensor<T>& x, bool training) {
  require_input(x, config_.in_channels, config_.patch_shape, "coarse_forward");
  const int L = config_.levels();
  std::vector<Tensor<T>> skips(L);
  skips[0] = encoder_[0].forward(x, training);
  for (int l = 1; l < L; ++l) skips[l] = encoder_[l].forward(skips[l - 1], training);

  std::vector<Tensor<T>> features(L);
  features[L - 1] = middle_[1].forward(middle_[0].forward(skips[L - 1], training), training);
  for (int l = L - 2; l >= 0; --l) {
    Tensor<T> up = up_[l].forward(features[l + 1], training);
    features[l] = decoder_[l].forward(concat_channels(up, skips[l]), training);
    if (!training && l + 1 > config_.deep_supervision_levels) features[l + 1] = Tensor<T>();
    skips[l] = Tensor<T>();
  }

  std::vector<Tensor<T>> scales;
  scales.reserve(config_.deep_supervision_levels + 1);
  scales.push_back(head_.forward(features[0], training));
  for (int k = 1; k <= config_.deep_supervision_levels; ++k) {
    scales.push_back(ds_heads_[k - 1].forward(features[k], training));
  }
  return scales;
}

template <typename T>
Tensor<T> CoarseUNet<T>::backward(const std::vector<Tensor<T>>& grads) {
  const int L = config_.levels();
  std::vector<Tensor<T>> grad_features(L);
  if (!grads.empty() && !grads[0].empty()) grad_features[0] = head_.backward(grads[0]);
  for (int k = 1; k <= config_.deep_supervision_levels; ++k) {
    if (k < static_cast<int>(grads.size()) && !grads[k].empty()) {
      accumulate(grad_features[k], ds_heads_[k - 1].backward(grads[k]));
    }
  }

  std::vector<Tensor<T>> grad_skips(L);
  for (int l = 0; l < L - 1; ++l) {
    if (grad_features[l].empty()) {
      throw Error("coarse backward: missing gradient at decoder level " + std::to_string(l));
    }
    Tensor<T> grad_cat = decoder_[l].backward(grad_features[l]);
    Tensor<T> grad_up, grad_skip;
    split_channels(grad_cat, config_.encoder_channels[l], grad_up, grad_skip);
    accumulate(grad_features[l + 1], up_[l].backward(grad_up));
    accumulate(grad_skips[l], grad_skip);
  }
  accumulate(grad_skips[L - 1], middle_[0].backward(middle_[1].backward(grad_features[L - 1])));
  for (int l = L - 1; l >= 1; --l) accumulate(grad_skips[l - 1], encoder_[l].backward(grad_skips[l]));
  return encoder_[0].backward(grad_skips[0]);
}

template <typename T>
Refiner<T>::Refiner(RefinerConfig config)
    : config_((config.validate(), std::move(config))),
      stem_("stem", config_.in_channels, config_.width, config_.stem_kernel, 1, static_cast<T>(config_.leaky_slope)),
      head_("head", config_.width, config_.out_channels, config_.head_kernel) {
  for (int b = 0; b < config_.n_residual_blocks; ++b) {
    const std::string name = level_name("block", b);
    blocks_.push_back(Block{Conv3d<T>(name + ".conv", config_.width, config_.width, config_.block_kernel),
                            LeakyReLU<T>(static_cast<T>(config_.leaky_slope)),
                            InstanceNorm3d<T>(name + ".norm", config_.width)});
  }
}

template <typename T>
void Refiner<T>::init(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  stem_.init(rng);
  for (auto& b : blocks_) b.conv.init(rng, std::sqrt(2.0 / (1.0 + config_.leaky_slope * config_.leaky_slope)));
  head_.init(rng, 1.0);
  head_.set_bias(1, static_cast<T>(kForegroundBias));
}

template <typename T>
ParameterList<T> Refiner<T>::parameters() {
  ParameterList<T> out;
  stem_.collect(out);
  for (auto& b : blocks_) {
    b.conv.collect(out);
    b.norm.collect(out);
  }
  head_.collect(out);
  return out;
}

template <typename T>
Tensor<T> Refiner<T>::forward(const Tensor<T>& x, bool training) {
  require_input(x, config_.in_channels, config_.patch_shape, "refiner_forward");
  Tensor<T> h = stem_.forward(x, training);
  for (auto& b : blocks_) {
    Tensor<T> r = b.norm.forward(b.act.forward(b.conv.forward(h, training), training), training);
    kernels::add_inplace(h.size(), h.data(), r.data());
    h = std::move(r);
  }
  return head_.forward(h, training);
}

template <typename T>
Tensor<T> Refiner<T>::backward(const Tensor<T>& grad) {
  Tensor<T> g = head_.backward(grad);
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
    Tensor<T> through = it->conv.backward(it->act.backward(it->norm.backward(g)));
    kernels::add_inplace(g.size(), g.data(), through.data());
    g = std::move(through);
  }
  return stem_.backward(g);
}

template <typename T>
std::vector<T> lesion_probability(const Tensor<T>& logits, int sample) {
  if (logits.channels() != 2) throw GeometryError("lesion_probability: expected 2 logit channels");
  const T* bg = logits.channel(sample, 0);
  const T* fg = logits.channel(sample, 1);
  std::vector<T> p(logits.voxels());
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = static_cast<T>(1.0 / (1.0 + std::exp(static_cast<double>(bg[i]) - static_cast<double>(fg[i]))));
  }
  return p;
}

template class CoarseUNet<float>;
template class CoarseUNet<double>;
template class Refiner<float>;
template class Refiner<double>;
template std::vector<float> lesion_probability<float>(const Tensor<float>&, int);
template std::vector<double> lesion_probability<double>(const Tensor<double>&, int);

}  // namespace petseg::nn
