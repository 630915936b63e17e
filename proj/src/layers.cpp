#include "petseg/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

namespace petseg::nn {

template <typename T>
Parameter<T>::Parameter(std::string n, std::vector<int> s) : name(std::move(n)), shape(std::move(s)) {
  const auto count = static_cast<std::size_t>(std::accumulate(shape.begin(), shape.end(), 1L, std::multiplies<>()));
  value.assign(count, T(0));
  grad.assign(count, T(0));
}

template <typename T>
Conv3d<T>::Conv3d(const std::string& name, int in_channels, int out_channels, int kernel, int stride)
    : in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride),
      weight_(name + ".weight", {out_channels, in_channels, kernel, kernel, kernel}),
      bias_(name + ".bias", {out_channels}) {
  if (in_channels < 1 || out_channels < 1) throw ValidationError(name + ": channel counts must be positive");
  if (kernel < 1 || kernel % 2 == 0) throw ValidationError(name + ": kernel size must be odd");
  if (stride < 1) throw ValidationError(name + ": stride must be positive");
}

template <typename T>
void Conv3d<T>::init(std::mt19937_64& rng, double gain) {
  const double fan_in = static_cast<double>(in_) * kernel_ * kernel_ * kernel_;
  std::normal_distribution<double> dist(0.0, gain / std::sqrt(fan_in));
  for (auto& w : weight_.value) w = static_cast<T>(dist(rng));
  std::fill(bias_.value.begin(), bias_.value.end(), T(0));
}

template <typename T>
Tensor<T> Conv3d<T>::forward(const Tensor<T>& x, bool training) {
  if (x.channels() != in_) {
    throw GeometryError(weight_.name + ": expected " + std::to_string(in_) + " input channels, got " +
                        std::to_string(x.channels()));
  }
  const auto s = kernels::make_conv_shape(in_, out_, kernel_, stride_, x.spatial());
  Tensor<T> y(x.batch(), out_, s.out);
  for (int n = 0; n < x.batch(); ++n) {
    kernels::conv3d_forward(s, x.sample(n), weight_.value.data(), bias_.value.data(), y.sample(n));
  }
  input_ = training ? x : Tensor<T>();
  return y;
}

template <typename T>
Tensor<T> Conv3d<T>::backward(const Tensor<T>& grad_out) {
  if (input_.empty()) throw Error(weight_.name + ": backward without a training forward pass");
  const auto s = kernels::make_conv_shape(in_, out_, kernel_, stride_, input_.spatial());
  Tensor<T> grad_in;
  if (input_grad_) grad_in = Tensor<T>(input_.batch(), in_, input_.spatial());
  for (int n = 0; n < input_.batch(); ++n) {
    kernels::conv3d_backward_params(s, input_.sample(n), grad_out.sample(n), weight_.grad.data(), bias_.grad.data());
    if (input_grad_) kernels::conv3d_backward_data(s, weight_.value.data(), grad_out.sample(n), grad_in.sample(n));
  }
  input_ = Tensor<T>();
  return grad_in;
}

template <typename T>
UpConv3d<T>::UpConv3d(const std::string& name, int in_channels, int out_channels)
    : in_(in_channels), out_(out_channels), weight_(name + ".weight", {in_channels, out_channels, 2, 2, 2}),
      bias_(name + ".bias", {out_channels}) {}

template <typename T>
void UpConv3d<T>::init(std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(in_)));
  for (auto& w : weight_.value) w = static_cast<T>(dist(rng));
  std::fill(bias_.value.begin(), bias_.value.end(), T(0));
}

template <typename T>
Tensor<T> UpConv3d<T>::forward(const Tensor<T>& x, bool training) {
  if (x.channels() != in_) throw GeometryError(weight_.name + ": input channel mismatch");
  kernels::UpConvShape s{in_, out_, 2, x.spatial()};
  Tensor<T> y(x.batch(), out_, s.out());
  for (int n = 0; n < x.batch(); ++n) {
    kernels::upconv3d_forward(s, x.sample(n), weight_.value.data(), bias_.value.data(), y.sample(n));
  }
  input_ = training ? x : Tensor<T>();
  return y;
}

template <typename T>
Tensor<T> UpConv3d<T>::backward(const Tensor<T>& grad_out) {
  if (input_.empty()) throw Error(weight_.name + ": backward without a training forward pass");
  kernels::UpConvShape s{in_, out_, 2, input_.spatial()};
  Tensor<T> grad_in(input_.batch(), in_, input_.spatial());
  for (int n = 0; n < input_.batch(); ++n) {
    kernels::upconv3d_backward_params(s, input_.sample(n), grad_out.sample(n), weight_.grad.data(),
                                      bias_.grad.data());
    kernels::upconv3d_backward_data(s, weight_.value.data(), grad_out.sample(n), grad_in.sample(n));
  }
  input_ = Tensor<T>();
  return grad_in;
}

template <typename T>
InstanceNorm3d<T>::InstanceNorm3d(const std::string& name, int channels, double eps)
    : channels_(channels), eps_(eps), gamma_(name + ".weight", {channels}), beta_(name + ".bias", {channels}) {
  std::fill(gamma_.value.begin(), gamma_.value.end(), T(1));
}

template <typename T>
Tensor<T> InstanceNorm3d<T>::forward(const Tensor<T>& x, bool training) {
  if (x.channels() != channels_) throw GeometryError(gamma_.name + ": channel mismatch");
  Tensor<T> y(x.batch(), channels_, x.spatial());
  Tensor<T> xhat(x.batch(), channels_, x.spatial());
  std::vector<T> inv_std(static_cast<std::size_t>(x.batch()) * channels_);
  for (int n = 0; n < x.batch(); ++n) {
    kernels::instance_norm_forward(channels_, x.voxels(), x.sample(n), gamma_.value.data(), beta_.value.data(), eps_,
                                   y.sample(n), xhat.sample(n), inv_std.data() + n * channels_);
  }
  if (training) {
    xhat_ = std::move(xhat);
    inv_std_ = std::move(inv_std);
  } else {
    xhat_ = Tensor<T>();
    inv_std_.clear();
  }
  return y;
}

template <typename T>
Tensor<T> InstanceNorm3d<T>::backward(const Tensor<T>& grad_out) {
  if (xhat_.empty()) throw Error(gamma_.name + ": backward without a training forward pass");
  Tensor<T> grad_in(xhat_.batch(), channels_, xhat_.spatial());
  for (int n = 0; n < xhat_.batch(); ++n) {
    kernels::instance_norm_backward(channels_, xhat_.voxels(), grad_out.sample(n), xhat_.sample(n),
                                    inv_std_.data() + n * channels_, gamma_.value.data(), grad_in.sample(n),
                                    gamma_.grad.data(), beta_.grad.data());
  }
  xhat_ = Tensor<T>();
  return grad_in;
}

template <typename T>
Tensor<T> LeakyReLU<T>::forward(const Tensor<T>& x, bool training) {
  Tensor<T> y(x.batch(), x.channels(), x.spatial());
  kernels::leaky_relu_forward(x.size(), x.data(), slope_, y.data());
  output_ = training ? y : Tensor<T>();
  return y;
}

template <typename T>
Tensor<T> LeakyReLU<T>::backward(const Tensor<T>& grad_out) {
  if (output_.empty()) throw Error("leaky relu: backward without a training forward pass");
  Tensor<T> grad_in(output_.batch(), output_.channels(), output_.spatial());
  kernels::leaky_relu_backward(output_.size(), output_.data(), grad_out.data(), slope_, grad_in.data());
  output_ = Tensor<T>();
  return grad_in;
}

template <typename T>
ConvNormAct<T>::ConvNormAct(const std::string& name, int in_channels, int out_channels, int kernel, int stride,
                            T slope)
    : conv_(name + ".conv", in_channels, out_channels, kernel, stride), norm_(name + ".norm", out_channels),
      act_(slope) {}

template <typename T>
Tensor<T> ConvNormAct<T>::forward(const Tensor<T>& x, bool training) {
  return act_.forward(norm_.forward(conv_.forward(x, training), training), training);
}

template <typename T>
Tensor<T> ConvNormAct<T>::backward(const Tensor<T>& grad_out) {
  return conv_.backward(norm_.backward(act_.backward(grad_out)));
}

template <typename T>
void ConvNormAct<T>::collect(ParameterList<T>& out) {
  conv_.collect(out);
  norm_.collect(out);
}

template <typename T>
void ConvNormAct<T>::init(std::mt19937_64& rng) {
  const double slope = static_cast<double>(act_.slope());
  conv_.init(rng, std::sqrt(2.0 / (1.0 + slope * slope)));
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.batch() != b.batch() || !(a.spatial() == b.spatial())) throw GeometryError("concat: shape mismatch");
  Tensor<T> out(a.batch(), a.channels() + b.channels(), a.spatial());
  const std::size_t na = static_cast<std::size_t>(a.channels()) * a.voxels();
  const std::size_t nb = static_cast<std::size_t>(b.channels()) * b.voxels();
  for (int n = 0; n < a.batch(); ++n) {
    std::copy_n(a.sample(n), na, out.sample(n));
    std::copy_n(b.sample(n), nb, out.sample(n) + na);
  }
  return out;
}

template <typename T>
void split_channels(const Tensor<T>& ab, int channels_a, Tensor<T>& a, Tensor<T>& b) {
  a = Tensor<T>(ab.batch(), channels_a, ab.spatial());
  b = Tensor<T>(ab.batch(), ab.channels() - channels_a, ab.spatial());
  const std::size_t na = static_cast<std::size_t>(a.channels()) * ab.voxels();
  const std::size_t nb = static_cast<std::size_t>(b.channels()) * ab.voxels();
  for (int n = 0; n < ab.batch(); ++n) {
    std::copy_n(ab.sample(n), na, a.sample(n));
    std::copy_n(ab.sample(n) + na, nb, b.sample(n));
  }
}

#define PETSEG_INSTANTIATE(T)                                                                 \
  template struct Parameter<T>;                                                              \
  template class Conv3d<T>;                                                                  \
  template class UpConv3d<T>;                                                                \
  template class InstanceNorm3d<T>;                                                          \
  template class LeakyReLU<T>;                                                               \
  template class ConvNormAct<T>;                                                             \
  template Tensor<T> concat_channels<T>(const Tensor<T>&, const Tensor<T>&);                 \
  template void split_channels<T>(const Tensor<T>&, int, Tensor<T>&, Tensor<T>&);

PETSEG_INSTANTIATE(float)
PETSEG_INSTANTIATE(double)
#undef PETSEG_INSTANTIATE

}  // namespace petseg::nn
