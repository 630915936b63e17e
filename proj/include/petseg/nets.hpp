#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "json.hpp"
#include "petseg/layers.hpp"

namespace petseg::nn {

struct CoarseUNetConfig {
  int in_channels = 5;
  Shape3 patch_shape{128, 96, 96};
  std::vector<int> encoder_channels{64, 96, 128, 156};
  int middle_kernel = 9;
  double leaky_slope = 0.01;
  int out_channels = 2;
  // Auxiliary heads at scales 1/2 .. 1/2^levels.
  int deep_supervision_levels = 3;

  int levels() const { return static_cast<int>(encoder_channels.size()); }
  void validate() const;
};

struct RefinerConfig {
  int in_channels = 6;
  Shape3 patch_shape{64, 64, 64};
  int stem_kernel = 9;
  int width = 32;
  int n_residual_blocks = 4;
  int block_kernel = 3;
  int head_kernel = 3;
  double leaky_slope = 0.01;
  int out_channels = 2;

  void validate() const;
};

nlohmann::json to_json(const CoarseUNetConfig& c);
nlohmann::json to_json(const RefinerConfig& c);
CoarseUNetConfig coarse_config_from_json(const nlohmann::json& j);
RefinerConfig refiner_config_from_json(const nlohmann::json& j);

// Encoder: level 0 keeps the input resolution, every further level halves it
// with a stride-2 convolution. Bottleneck: two middle_kernel^3 convolutions.
// Decoder: stride-2 transposed convolutions + skip concatenation.
// Output `scales[0]` is the full-resolution logit map; scales[k] (k >= 1) is
// the deep-supervision logit map at 1/2^k resolution.
template <typename T>
class CoarseUNet {
 public:
  explicit CoarseUNet(CoarseUNetConfig config);

  std::vector<Tensor<T>> forward(const Tensor<T>& x, bool training);
  // grads[k] matches forward()'s scales[k]; an empty tensor means zero.
  // Accumulates parameter gradients, returns the input gradient.
  Tensor<T> backward(const std::vector<Tensor<T>>& grads);

  ParameterList<T> parameters();
  void init(std::uint64_t seed);
  const CoarseUNetConfig& config() const { return config_; }
  // Training does not need d(loss)/d(input); turning it off makes backward()
  // return an empty tensor.
  void set_input_grad(bool on) { encoder_.front().set_input_grad(on); }

 private:
  CoarseUNetConfig config_;
  std::vector<ConvNormAct<T>> encoder_;
  std::vector<ConvNormAct<T>> middle_;
  std::vector<UpConv3d<T>> up_;
  std::vector<ConvNormAct<T>> decoder_;
  Conv3d<T> head_;
  std::vector<Conv3d<T>> ds_heads_;
};

// Stem (stem_kernel^3 conv, instance norm, leaky ReLU), then residual blocks
// x + norm(act(conv3(x))), then a head_kernel^3 convolution to the logits.
template <typename T>
class Refiner {
 public:
  explicit Refiner(RefinerConfig config);

  Tensor<T> forward(const Tensor<T>& x, bool training);
  Tensor<T> backward(const Tensor<T>& grad);

  ParameterList<T> parameters();
  void init(std::uint64_t seed);
  const RefinerConfig& config() const { return config_; }
  void set_input_grad(bool on) { stem_.set_input_grad(on); }

 private:
  struct Block {
    Conv3d<T> conv;
    LeakyReLU<T> act;
    InstanceNorm3d<T> norm;
  };

  RefinerConfig config_;
  ConvNormAct<T> stem_;
  std::vector<Block> blocks_;
  Conv3d<T> head_;
};

// Softmax over the two logit channels, returning channel 1 (lesion).
template <typename T>
std::vector<T> lesion_probability(const Tensor<T>& logits, int sample = 0);

}  // namespace petseg::nn
