#pragma once

// Serial, loop-nest reference versions of the kernels in kernels.hpp.
// Kept for verification and benchmarking; not used by the pipeline.

#include "petseg/kernels.hpp"

namespace petseg::kernels::reference {

template <typename T>
void conv3d_forward(const ConvShape& s, const T* in, const T* weight, const T* bias, T* out);
template <typename T>
void conv3d_backward_data(const ConvShape& s, const T* weight, const T* grad_out, T* grad_in);
template <typename T>
void conv3d_backward_params(const ConvShape& s, const T* in, const T* grad_out, T* grad_weight, T* grad_bias);

template <typename T>
void upconv3d_forward(const UpConvShape& s, const T* in, const T* weight, const T* bias, T* out);
template <typename T>
void upconv3d_backward_data(const UpConvShape& s, const T* weight, const T* grad_out, T* grad_in);

template <typename T>
void instance_norm_forward(int channels, std::size_t voxels, const T* in, const T* gamma, const T* beta, double eps,
                           T* out);

}  // namespace petseg::kernels::reference
