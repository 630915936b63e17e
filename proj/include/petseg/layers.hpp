#pragma once

#include <random>
#include <string>
#include <vector>

#include "petseg/kernels.hpp"
#include "petseg/tensor.hpp"

namespace petseg::nn {

template <typename T>
struct Parameter {
  std::string name;
  std::vector<int> shape;
  std::vector<T> value;
  std::vector<T> grad;

  Parameter(std::string n, std::vector<int> s);
  std::size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

template <typename T>
using ParameterList = std::vector<Parameter<T>*>;

// Layers cache whatever their backward pass needs when `training` is set;
// in inference mode forward() keeps nothing.

template <typename T>
class Conv3d {
 public:
  Conv3d(const std::string& name, int in_channels, int out_channels, int kernel, int stride = 1);

  Tensor<T> forward(const Tensor<T>& x, bool training);
  Tensor<T> backward(const Tensor<T>& grad_out);
  void collect(ParameterList<T>& out) { out.push_back(&weight_); out.push_back(&bias_); }
  void init(std::mt19937_64& rng, double gain);

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int kernel() const { return kernel_; }
  int stride() const { return stride_; }
  // When off, backward() returns an empty tensor and skips the data gradient.
  void set_input_grad(bool on) { input_grad_ = on; }
  void set_bias(int channel, T value) { bias_.value.at(channel) = value; }

 private:
  int in_, out_, kernel_, stride_;
  bool input_grad_ = true;
  Parameter<T> weight_;
  Parameter<T> bias_;
  Tensor<T> input_;
};

// Transposed convolution with kernel == stride == 2.
template <typename T>
class UpConv3d {
 public:
  UpConv3d(const std::string& name, int in_channels, int out_channels);

  Tensor<T> forward(const Tensor<T>& x, bool training);
  Tensor<T> backward(const Tensor<T>& grad_out);
  void collect(ParameterList<T>& out) { out.push_back(&weight_); out.push_back(&bias_); }
  void init(std::mt19937_64& rng);

 private:
  int in_, out_;
  Parameter<T> weight_;
  Parameter<T> bias_;
  Tensor<T> input_;
};

template <typename T>
class InstanceNorm3d {
 public:
  InstanceNorm3d(const std::string& name, int channels, double eps = 1e-5);

  Tensor<T> forward(const Tensor<T>& x, bool training);
  Tensor<T> backward(const Tensor<T>& grad_out);
  void collect(ParameterList<T>& out) { out.push_back(&gamma_); out.push_back(&beta_); }

 private:
  int channels_;
  double eps_;
  Parameter<T> gamma_;
  Parameter<T> beta_;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
};

template <typename T>
class LeakyReLU {
 public:
  explicit LeakyReLU(T slope = T(0.01)) : slope_(slope) {}
  Tensor<T> forward(const Tensor<T>& x, bool training);
  Tensor<T> backward(const Tensor<T>& grad_out);
  T slope() const { return slope_; }

 private:
  T slope_;
  Tensor<T> output_;
};

// conv -> instance norm -> leaky ReLU
template <typename T>
class ConvNormAct {
 public:
  ConvNormAct(const std::string& name, int in_channels, int out_channels, int kernel, int stride, T slope);

  Tensor<T> forward(const Tensor<T>& x, bool training);
  Tensor<T> backward(const Tensor<T>& grad_out);
  void collect(ParameterList<T>& out);
  void init(std::mt19937_64& rng);
  int out_channels() const { return conv_.out_channels(); }
  void set_input_grad(bool on) { conv_.set_input_grad(on); }

 private:
  Conv3d<T> conv_;
  InstanceNorm3d<T> norm_;
  LeakyReLU<T> act_;
};

// Channel concatenation helpers for skip connections.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
void split_channels(const Tensor<T>& ab, int channels_a, Tensor<T>& a, Tensor<T>& b);

}  // namespace petseg::nn
