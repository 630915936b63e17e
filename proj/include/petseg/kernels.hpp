#pragma once

// Compute kernels behind the network layers. Everything here operates on a
// single sample; batching is done by the callers. The convolutions lower to
// im2col + BLAS GEMM over bounded z-slabs, the remaining loops are OpenMP
// parallel. kernels_reference.hpp holds plain serial versions used as test
// oracles and benchmark baselines.

#include <cstddef>

#include "petseg/volume.hpp"

namespace petseg::kernels {

struct ConvShape {
  int in_channels = 1;
  int out_channels = 1;
  int kernel = 3;
  int stride = 1;
  int pad = 1;
  Shape3 in{};
  Shape3 out{};

  std::size_t patch_size() const {
    return static_cast<std::size_t>(in_channels) * static_cast<std::size_t>(kernel * kernel * kernel);
  }
};

Shape3 conv_output_shape(const Shape3& in, int kernel, int stride, int pad);
ConvShape make_conv_shape(int in_channels, int out_channels, int kernel, int stride, const Shape3& in);

// Weight layout [out][in][kz][ky][kx]. `out` is overwritten.
template <typename T>
void conv3d_forward(const ConvShape& s, const T* in, const T* weight, const T* bias, T* out);

// grad_in is overwritten.
template <typename T>
void conv3d_backward_data(const ConvShape& s, const T* weight, const T* grad_out, T* grad_in);

// grad_weight and grad_bias are accumulated into.
template <typename T>
void conv3d_backward_params(const ConvShape& s, const T* in, const T* grad_out, T* grad_weight, T* grad_bias);

// Transposed convolution with kernel == stride == factor (no overlap).
// Weight layout [in][out][kz][ky][kx]; output spatial = factor * input.
struct UpConvShape {
  int in_channels = 1;
  int out_channels = 1;
  int factor = 2;
  Shape3 in{};
  Shape3 out() const { return Shape3{in.nx * factor, in.ny * factor, in.nz * factor}; }
};

template <typename T>
void upconv3d_forward(const UpConvShape& s, const T* in, const T* weight, const T* bias, T* out);
template <typename T>
void upconv3d_backward_data(const UpConvShape& s, const T* weight, const T* grad_out, T* grad_in);
template <typename T>
void upconv3d_backward_params(const UpConvShape& s, const T* in, const T* grad_out, T* grad_weight, T* grad_bias);

// Per-channel normalization over `voxels` values. Writes the normalized
// input `xhat` and per-channel 1/sigma for the backward pass.
template <typename T>
void instance_norm_forward(int channels, std::size_t voxels, const T* in, const T* gamma, const T* beta, double eps,
                           T* out, T* xhat, T* inv_std);
// grad_in overwritten; grad_gamma / grad_beta accumulated.
template <typename T>
void instance_norm_backward(int channels, std::size_t voxels, const T* grad_out, const T* xhat, const T* inv_std,
                            const T* gamma, T* grad_in, T* grad_gamma, T* grad_beta);

template <typename T>
void leaky_relu_forward(std::size_t n, const T* in, T slope, T* out);
// Uses the forward output (same sign as the input for slope > 0).
template <typename T>
void leaky_relu_backward(std::size_t n, const T* out, const T* grad_out, T slope, T* grad_in);

// y += x
template <typename T>
void add_inplace(std::size_t n, const T* x, T* y);

int max_threads();
void set_num_threads(int n);

}  // namespace petseg::kernels
