#include "petseg/kernels_reference.hpp"

#include <cmath>

namespace petseg::kernels::reference {

template <typename T>
void conv3d_forward(const ConvShape& s, const T* in, const T* weight, const T* bias, T* out) {
  const int k = s.kernel;
  for (int co = 0; co < s.out_channels; ++co) {
    for (int z = 0; z < s.out.nz; ++z) {
      for (int y = 0; y < s.out.ny; ++y) {
        for (int x = 0; x < s.out.nx; ++x) {
          double acc = bias ? bias[co] : 0.0;
          for (int ci = 0; ci < s.in_channels; ++ci) {
            for (int kz = 0; kz < k; ++kz) {
              const int iz = z * s.stride - s.pad + kz;
              if (iz < 0 || iz >= s.in.nz) continue;
              for (int ky = 0; ky < k; ++ky) {
                const int iy = y * s.stride - s.pad + ky;
                if (iy < 0 || iy >= s.in.ny) continue;
                for (int kx = 0; kx < k; ++kx) {
                  const int ix = x * s.stride - s.pad + kx;
                  if (ix < 0 || ix >= s.in.nx) continue;
                  const T w = weight[(((static_cast<std::size_t>(co) * s.in_channels + ci) * k + kz) * k + ky) * k + kx];
                  acc += static_cast<double>(w) * in[ci * s.in.voxels() + s.in.index(ix, iy, iz)];
                }
              }
            }
          }
          out[co * s.out.voxels() + s.out.index(x, y, z)] = static_cast<T>(acc);
        }
      }
    }
  }
}

template <typename T>
void conv3d_backward_data(const ConvShape& s, const T* weight, const T* grad_out, T* grad_in) {
  const int k = s.kernel;
  for (std::size_t i = 0; i < static_cast<std::size_t>(s.in_channels) * s.in.voxels(); ++i) grad_in[i] = T(0);
  for (int co = 0; co < s.out_channels; ++co) {
    for (int z = 0; z < s.out.nz; ++z) {
      for (int y = 0; y < s.out.ny; ++y) {
        for (int x = 0; x < s.out.nx; ++x) {
          const T g = grad_out[co * s.out.voxels() + s.out.index(x, y, z)];
          for (int ci = 0; ci < s.in_channels; ++ci) {
            for (int kz = 0; kz < k; ++kz) {
              const int iz = z * s.stride - s.pad + kz;
              if (iz < 0 || iz >= s.in.nz) continue;
              for (int ky = 0; ky < k; ++ky) {
                const int iy = y * s.stride - s.pad + ky;
                if (iy < 0 || iy >= s.in.ny) continue;
                for (int kx = 0; kx < k; ++kx) {
                  const int ix = x * s.stride - s.pad + kx;
                  if (ix < 0 || ix >= s.in.nx) continue;
                  const T w = weight[(((static_cast<std::size_t>(co) * s.in_channels + ci) * k + kz) * k + ky) * k + kx];
                  grad_in[ci * s.in.voxels() + s.in.index(ix, iy, iz)] += w * g;
                }
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv3d_backward_params(const ConvShape& s, const T* in, const T* grad_out, T* grad_weight, T* grad_bias) {
  const int k = s.kernel;
  for (int co = 0; co < s.out_channels; ++co) {
    for (int z = 0; z < s.out.nz; ++z) {
      for (int y = 0; y < s.out.ny; ++y) {
        for (int x = 0; x < s.out.nx; ++x) {
          const T g = grad_out[co * s.out.voxels() + s.out.index(x, y, z)];
          if (grad_bias) grad_bias[co] += g;
          for (int ci = 0; ci < s.in_channels; ++ci) {
            for (int kz = 0; kz < k; ++kz) {
              const int iz = z * s.stride - s.pad + kz;
              if (iz < 0 || iz >= s.in.nz) continue;
              for (int ky = 0; ky < k; ++ky) {
                const int iy = y * s.stride - s.pad + ky;
                if (iy < 0 || iy >= s.in.ny) continue;
                for (int kx = 0; kx < k; ++kx) {
                  const int ix = x * s.stride - s.pad + kx;
                  if (ix < 0 || ix >= s.in.nx) continue;
                  grad_weight[(((static_cast<std::size_t>(co) * s.in_channels + ci) * k + kz) * k + ky) * k + kx] +=
                      g * in[ci * s.in.voxels() + s.in.index(ix, iy, iz)];
                }
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void upconv3d_forward(const UpConvShape& s, const T* in, const T* weight, const T* bias, T* out) {
  const int f = s.factor;
  const Shape3 os = s.out();
  for (int co = 0; co < s.out_channels; ++co) {
    for (int z = 0; z < os.nz; ++z) {
      for (int y = 0; y < os.ny; ++y) {
        for (int x = 0; x < os.nx; ++x) {
          const int off = ((z % f) * f + (y % f)) * f + (x % f);
          double acc = bias ? bias[co] : 0.0;
          for (int ci = 0; ci < s.in_channels; ++ci) {
            const T w = weight[(static_cast<std::size_t>(ci) * s.out_channels + co) * f * f * f + off];
            acc += static_cast<double>(w) * in[ci * s.in.voxels() + s.in.index(x / f, y / f, z / f)];
          }
          out[co * os.voxels() + os.index(x, y, z)] = static_cast<T>(acc);
        }
      }
    }
  }
}

template <typename T>
void upconv3d_backward_data(const UpConvShape& s, const T* weight, const T* grad_out, T* grad_in) {
  const int f = s.factor;
  const Shape3 os = s.out();
  for (std::size_t i = 0; i < static_cast<std::size_t>(s.in_channels) * s.in.voxels(); ++i) grad_in[i] = T(0);
  for (int co = 0; co < s.out_channels; ++co) {
    for (int z = 0; z < os.nz; ++z) {
      for (int y = 0; y < os.ny; ++y) {
        for (int x = 0; x < os.nx; ++x) {
          const int off = ((z % f) * f + (y % f)) * f + (x % f);
          const T g = grad_out[co * os.voxels() + os.index(x, y, z)];
          for (int ci = 0; ci < s.in_channels; ++ci) {
            const T w = weight[(static_cast<std::size_t>(ci) * s.out_channels + co) * f * f * f + off];
            grad_in[ci * s.in.voxels() + s.in.index(x / f, y / f, z / f)] += w * g;
          }
        }
      }
    }
  }
}

template <typename T>
void instance_norm_forward(int channels, std::size_t voxels, const T* in, const T* gamma, const T* beta, double eps,
                           T* out) {
  for (int c = 0; c < channels; ++c) {
    const T* x = in + c * voxels;
    double mean = 0.0;
    for (std::size_t i = 0; i < voxels; ++i) mean += x[i];
    mean /= static_cast<double>(voxels);
    double var = 0.0;
    for (std::size_t i = 0; i < voxels; ++i) var += (x[i] - mean) * (x[i] - mean);
    var /= static_cast<double>(voxels);
    const double g = gamma ? gamma[c] : 1.0;
    const double b = beta ? beta[c] : 0.0;
    for (std::size_t i = 0; i < voxels; ++i) out[c * voxels + i] = static_cast<T>(g * (x[i] - mean) / std::sqrt(var + eps) + b);
  }
}

#define PETSEG_INSTANTIATE(T)                                                                         \
  template void conv3d_forward<T>(const ConvShape&, const T*, const T*, const T*, T*);               \
  template void conv3d_backward_data<T>(const ConvShape&, const T*, const T*, T*);                   \
  template void conv3d_backward_params<T>(const ConvShape&, const T*, const T*, T*, T*);             \
  template void upconv3d_forward<T>(const UpConvShape&, const T*, const T*, const T*, T*);           \
  template void upconv3d_backward_data<T>(const UpConvShape&, const T*, const T*, T*);               \
  template void instance_norm_forward<T>(int, std::size_t, const T*, const T*, const T*, double, T*);

PETSEG_INSTANTIATE(float)
PETSEG_INSTANTIATE(double)
#undef PETSEG_INSTANTIATE

}  // namespace petseg::kernels::reference
