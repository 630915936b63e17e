#include "petseg/kernels.hpp"

#include <cblas.h>
#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "petseg/error.hpp"

namespace petseg::kernels {

namespace {

// Upper bound on the im2col buffer, in elements.
constexpr std::size_t kColumnBudget = std::size_t{1} << 22;

using Index = std::ptrdiff_t;

void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda, const float* b,
          int ldb, float beta, float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha,
              a, lda, b, ldb, beta, c, ldc);
}

void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a, int lda, const double* b,
          int ldb, double beta, double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha,
              a, lda, b, ldb, beta, c, ldc);
}

bool is_pointwise(const ConvShape& s) { return s.kernel == 1 && s.stride == 1 && s.pad == 0; }

// Output z-slab height so that the column buffer stays within budget.
int slab_height(std::size_t rows, const Shape3& out) {
  const std::size_t plane = static_cast<std::size_t>(out.nx) * static_cast<std::size_t>(out.ny);
  const std::size_t per_slab = std::max<std::size_t>(1, rows * plane);
  return static_cast<int>(std::clamp<std::size_t>(kColumnBudget / per_slab, 1, static_cast<std::size_t>(out.nz)));
}

// Fills col[rows x (z1-z0)*ny*nx] for output slab [z0, z1).
template <typename T>
void im2col(const ConvShape& s, const T* in, int z0, int z1, T* col) {
  const int k = s.kernel;
  const int k3 = k * k * k;
  const Index rows = static_cast<Index>(s.in_channels) * k3;
  const int onx = s.out.nx, ony = s.out.ny;
  const std::size_t cols = static_cast<std::size_t>(z1 - z0) * ony * onx;
#pragma omp parallel for schedule(static)
  for (Index r = 0; r < rows; ++r) {
    const int ci = static_cast<int>(r / k3);
    const int off = static_cast<int>(r % k3);
    const int kz = off / (k * k), ky = (off / k) % k, kx = off % k;
    const T* src = in + static_cast<std::size_t>(ci) * s.in.voxels();
    T* dst = col + static_cast<std::size_t>(r) * cols;
    for (int z = z0; z < z1; ++z) {
      const int iz = z * s.stride - s.pad + kz;
      for (int y = 0; y < ony; ++y) {
        T* row = dst + (static_cast<std::size_t>(z - z0) * ony + y) * onx;
        const int iy = y * s.stride - s.pad + ky;
        if (iz < 0 || iz >= s.in.nz || iy < 0 || iy >= s.in.ny) {
          std::fill(row, row + onx, T(0));
          continue;
        }
        const T* line = src + s.in.index(0, iy, iz);
        if (s.stride == 1) {
          const int shift = kx - s.pad;
          const int x_lo = std::clamp(-shift, 0, onx);
          const int x_hi = std::clamp(s.in.nx - shift, x_lo, onx);
          std::fill(row, row + x_lo, T(0));
          std::copy(line + x_lo + shift, line + x_hi + shift, row + x_lo);
          std::fill(row + x_hi, row + onx, T(0));
        } else {
          for (int x = 0; x < onx; ++x) {
            const int ix = x * s.stride - s.pad + kx;
            row[x] = (ix >= 0 && ix < s.in.nx) ? line[ix] : T(0);
          }
        }
      }
    }
  }
}

// Accumulates col back into grad_in. Parallel over input channels so that
// no two threads touch the same voxel.
template <typename T>
void col2im(const ConvShape& s, const T* col, int z0, int z1, T* grad_in) {
  const int k = s.kernel;
  const int k3 = k * k * k;
  const int onx = s.out.nx, ony = s.out.ny;
  const std::size_t cols = static_cast<std::size_t>(z1 - z0) * ony * onx;
#pragma omp parallel for schedule(static)
  for (Index ci = 0; ci < s.in_channels; ++ci) {
    T* dst = grad_in + static_cast<std::size_t>(ci) * s.in.voxels();
    for (int off = 0; off < k3; ++off) {
      const int kz = off / (k * k), ky = (off / k) % k, kx = off % k;
      const T* src = col + (static_cast<std::size_t>(ci) * k3 + off) * cols;
      for (int z = z0; z < z1; ++z) {
        const int iz = z * s.stride - s.pad + kz;
        if (iz < 0 || iz >= s.in.nz) continue;
        for (int y = 0; y < ony; ++y) {
          const int iy = y * s.stride - s.pad + ky;
          if (iy < 0 || iy >= s.in.ny) continue;
          const T* row = src + (static_cast<std::size_t>(z - z0) * ony + y) * onx;
          T* line = dst + s.in.index(0, iy, iz);
          if (s.stride == 1) {
            const int shift = kx - s.pad;
            const int x_lo = std::clamp(-shift, 0, onx);
            const int x_hi = std::clamp(s.in.nx - shift, x_lo, onx);
            for (int x = x_lo; x < x_hi; ++x) line[x + shift] += row[x];
          } else {
            for (int x = 0; x < onx; ++x) {
              const int ix = x * s.stride - s.pad + kx;
              if (ix >= 0 && ix < s.in.nx) line[ix] += row[x];
            }
          }
        }
      }
    }
  }
}

// Large stride-1 kernels skip the kx axis in the column buffer: columns are
// laid out over x-padded output rows, and each kx is a column offset into
// the same buffer. The buffer is k times smaller than a full im2col.
bool use_row_shift(const ConvShape& s) { return s.stride == 1 && s.kernel >= 5; }

struct RowShift {
  int k, xp, rows;
  std::size_t plane;
  int slab;

  explicit RowShift(const ConvShape& s)
      : k(s.kernel), xp(s.out.nx + s.kernel - 1), rows(s.in_channels * s.kernel * s.kernel),
        plane(static_cast<std::size_t>(s.out.ny) * static_cast<std::size_t>(s.out.nx + s.kernel - 1)) {
    const std::size_t per_slab = std::max<std::size_t>(1, static_cast<std::size_t>(rows) * plane);
    slab = static_cast<int>(std::clamp<std::size_t>(kColumnBudget / per_slab, 1, static_cast<std::size_t>(s.out.nz)));
  }
  std::size_t cols(int z0, int z1) const { return static_cast<std::size_t>(z1 - z0) * plane; }
  std::size_t ld() const { return static_cast<std::size_t>(slab) * plane + static_cast<std::size_t>(k - 1); }
};

// col[r][zz][y][xq] = in[ci][z + kz - pad][y + ky - pad][xq - pad], r = (ci, kz, ky).
template <typename T>
void row_im2col(const ConvShape& s, const RowShift& g, const T* in, int z0, int z1, T* col) {
  const int k = s.kernel;
  const int ony = s.out.ny;
  const std::size_t ld = g.ld();
#pragma omp parallel for schedule(static)
  for (Index r = 0; r < g.rows; ++r) {
    const int ci = static_cast<int>(r / (k * k));
    const int kz = static_cast<int>(r / k) % k, ky = static_cast<int>(r % k);
    const T* src = in + static_cast<std::size_t>(ci) * s.in.voxels();
    T* dst = col + static_cast<std::size_t>(r) * ld;
    for (int z = z0; z < z1; ++z) {
      const int iz = z - s.pad + kz;
      for (int y = 0; y < ony; ++y) {
        T* row = dst + (static_cast<std::size_t>(z - z0) * ony + y) * g.xp;
        const int iy = y - s.pad + ky;
        if (iz < 0 || iz >= s.in.nz || iy < 0 || iy >= s.in.ny) {
          std::fill(row, row + g.xp, T(0));
          continue;
        }
        const T* line = src + s.in.index(0, iy, iz);
        const int x_lo = std::min(s.pad, g.xp);
        const int x_hi = std::clamp(s.in.nx + s.pad, x_lo, g.xp);
        std::fill(row, row + x_lo, T(0));
        std::copy(line + x_lo - s.pad, line + x_hi - s.pad, row + x_lo);
        std::fill(row + x_hi, row + g.xp, T(0));
      }
    }
    std::fill(dst + g.cols(z0, z1), dst + ld, T(0));
  }
}

template <typename T>
void row_col2im(const ConvShape& s, const RowShift& g, const T* col, int z0, int z1, T* grad_in) {
  const int k = s.kernel;
  const int ony = s.out.ny;
  const std::size_t ld = g.ld();
#pragma omp parallel for schedule(static)
  for (Index ci = 0; ci < s.in_channels; ++ci) {
    T* dst = grad_in + static_cast<std::size_t>(ci) * s.in.voxels();
    for (int off = 0; off < k * k; ++off) {
      const int kz = off / k, ky = off % k;
      const T* src = col + (static_cast<std::size_t>(ci) * k * k + off) * ld;
      for (int z = z0; z < z1; ++z) {
        const int iz = z - s.pad + kz;
        if (iz < 0 || iz >= s.in.nz) continue;
        for (int y = 0; y < ony; ++y) {
          const int iy = y - s.pad + ky;
          if (iy < 0 || iy >= s.in.ny) continue;
          const T* row = src + (static_cast<std::size_t>(z - z0) * ony + y) * g.xp;
          T* line = dst + s.in.index(0, iy, iz);
          const int x_lo = std::min(s.pad, g.xp);
          const int x_hi = std::clamp(s.in.nx + s.pad, x_lo, g.xp);
          for (int x = x_lo; x < x_hi; ++x) line[x - s.pad] += row[x];
        }
      }
    }
  }
}

// Weight [co][r][kx] -> k matrices [kx][co][r].
template <typename T>
std::vector<T> split_kx(const ConvShape& s, const RowShift& g, const T* weight) {
  std::vector<T> w(static_cast<std::size_t>(g.k) * s.out_channels * g.rows);
  for (int kx = 0; kx < g.k; ++kx) {
    for (int co = 0; co < s.out_channels; ++co) {
      for (int r = 0; r < g.rows; ++r) {
        w[(static_cast<std::size_t>(kx) * s.out_channels + co) * g.rows + r] =
            weight[(static_cast<std::size_t>(co) * g.rows + r) * g.k + kx];
      }
    }
  }
  return w;
}

// Copies grad_out rows of slab [z0, z1) into an x-padded buffer, zero beyond nx.
template <typename T>
void pad_rows(const ConvShape& s, const RowShift& g, const T* grad_out, int z0, int z1, T* dst) {
  const std::size_t n = g.cols(z0, z1);
  const std::size_t lines = static_cast<std::size_t>(z1 - z0) * s.out.ny;
#pragma omp parallel for schedule(static)
  for (Index co = 0; co < s.out_channels; ++co) {
    const T* src = grad_out + static_cast<std::size_t>(co) * s.out.voxels() + s.out.index(0, 0, z0);
    for (std::size_t l = 0; l < lines; ++l) {
      T* row = dst + static_cast<std::size_t>(co) * n + l * g.xp;
      std::copy(src + l * s.out.nx, src + (l + 1) * s.out.nx, row);
      std::fill(row + s.out.nx, row + g.xp, T(0));
    }
  }
}

template <typename T>
void row_shift_forward(const ConvShape& s, const T* in, const T* weight, T* out) {
  const RowShift g(s);
  const std::vector<T> w = split_kx(s, g, weight);
  std::vector<T> col(static_cast<std::size_t>(g.rows) * g.ld());
  std::vector<T> acc(static_cast<std::size_t>(s.out_channels) * g.slab * g.plane);
  const int ld = static_cast<int>(g.ld());
  for (int z0 = 0; z0 < s.out.nz; z0 += g.slab) {
    const int z1 = std::min(s.out.nz, z0 + g.slab);
    const int n = static_cast<int>(g.cols(z0, z1));
    row_im2col(s, g, in, z0, z1, col.data());
    for (int kx = 0; kx < g.k; ++kx) {
      gemm(false, false, s.out_channels, n, g.rows, T(1), w.data() + static_cast<std::size_t>(kx) * s.out_channels * g.rows,
           g.rows, col.data() + kx, ld, kx == 0 ? T(0) : T(1), acc.data(), n);
    }
    const std::size_t lines = static_cast<std::size_t>(z1 - z0) * s.out.ny;
#pragma omp parallel for schedule(static)
    for (Index co = 0; co < s.out_channels; ++co) {
      T* dst = out + static_cast<std::size_t>(co) * s.out.voxels() + s.out.index(0, 0, z0);
      const T* src = acc.data() + static_cast<std::size_t>(co) * n;
      for (std::size_t l = 0; l < lines; ++l) std::copy(src + l * g.xp, src + l * g.xp + s.out.nx, dst + l * s.out.nx);
    }
  }
}

template <typename T>
void row_shift_backward_data(const ConvShape& s, const T* weight, const T* grad_out, T* grad_in) {
  const RowShift g(s);
  const std::vector<T> w = split_kx(s, g, weight);
  std::vector<T> col(static_cast<std::size_t>(g.rows) * g.ld());
  std::vector<T> gpad(static_cast<std::size_t>(s.out_channels) * g.slab * g.plane);
  const int ld = static_cast<int>(g.ld());
  std::fill(grad_in, grad_in + static_cast<std::size_t>(s.in_channels) * s.in.voxels(), T(0));
  for (int z0 = 0; z0 < s.out.nz; z0 += g.slab) {
    const int z1 = std::min(s.out.nz, z0 + g.slab);
    const int n = static_cast<int>(g.cols(z0, z1));
    pad_rows(s, g, grad_out, z0, z1, gpad.data());
    std::fill(col.begin(), col.end(), T(0));
    for (int kx = 0; kx < g.k; ++kx) {
      gemm(true, false, g.rows, n, s.out_channels, T(1), w.data() + static_cast<std::size_t>(kx) * s.out_channels * g.rows,
           g.rows, gpad.data(), n, T(1), col.data() + kx, ld);
    }
    row_col2im(s, g, col.data(), z0, z1, grad_in);
  }
}

template <typename T>
void row_shift_backward_params(const ConvShape& s, const T* in, const T* grad_out, T* grad_weight) {
  const RowShift g(s);
  std::vector<T> col(static_cast<std::size_t>(g.rows) * g.ld());
  std::vector<T> gpad(static_cast<std::size_t>(s.out_channels) * g.slab * g.plane);
  std::vector<T> gw(static_cast<std::size_t>(g.k) * s.out_channels * g.rows, T(0));
  const int ld = static_cast<int>(g.ld());
  for (int z0 = 0; z0 < s.out.nz; z0 += g.slab) {
    const int z1 = std::min(s.out.nz, z0 + g.slab);
    const int n = static_cast<int>(g.cols(z0, z1));
    pad_rows(s, g, grad_out, z0, z1, gpad.data());
    row_im2col(s, g, in, z0, z1, col.data());
    for (int kx = 0; kx < g.k; ++kx) {
      gemm(false, true, s.out_channels, g.rows, n, T(1), gpad.data(), n, col.data() + kx, ld, T(1),
           gw.data() + static_cast<std::size_t>(kx) * s.out_channels * g.rows, g.rows);
    }
  }
  for (int kx = 0; kx < g.k; ++kx) {
    for (int co = 0; co < s.out_channels; ++co) {
      for (int r = 0; r < g.rows; ++r) {
        grad_weight[(static_cast<std::size_t>(co) * g.rows + r) * g.k + kx] +=
            gw[(static_cast<std::size_t>(kx) * s.out_channels + co) * g.rows + r];
      }
    }
  }
}

}  // namespace

Shape3 conv_output_shape(const Shape3& in, int kernel, int stride, int pad) {
  Shape3 out;
  for (int a = 0; a < 3; ++a) {
    const int n = (in[a] + 2 * pad - kernel) / stride + 1;
    if (n < 1) throw GeometryError("convolution input " + to_string(in) + " too small for kernel " + std::to_string(kernel));
    out[a] = n;
  }
  return out;
}

ConvShape make_conv_shape(int in_channels, int out_channels, int kernel, int stride, const Shape3& in) {
  ConvShape s;
  s.in_channels = in_channels;
  s.out_channels = out_channels;
  s.kernel = kernel;
  s.stride = stride;
  s.pad = kernel / 2;
  s.in = in;
  s.out = conv_output_shape(in, kernel, stride, s.pad);
  return s;
}

template <typename T>
void conv3d_forward(const ConvShape& s, const T* in, const T* weight, const T* bias, T* out) {
  const std::size_t n_out = s.out.voxels();
  const int rows = static_cast<int>(s.patch_size());
  if (is_pointwise(s)) {
    gemm(false, false, s.out_channels, static_cast<int>(n_out), s.in_channels, T(1), weight, s.in_channels, in,
         static_cast<int>(n_out), T(0), out, static_cast<int>(n_out));
  } else if (use_row_shift(s)) {
    row_shift_forward(s, in, weight, out);
  } else {
    const int slab = slab_height(static_cast<std::size_t>(rows), s.out);
    std::vector<T> col(static_cast<std::size_t>(rows) * slab * s.out.ny * s.out.nx);
    for (int z0 = 0; z0 < s.out.nz; z0 += slab) {
      const int z1 = std::min(s.out.nz, z0 + slab);
      const int cols = (z1 - z0) * s.out.ny * s.out.nx;
      im2col(s, in, z0, z1, col.data());
      gemm(false, false, s.out_channels, cols, rows, T(1), weight, rows, col.data(), cols, T(0),
           out + s.out.index(0, 0, z0), static_cast<int>(n_out));
    }
  }
  if (bias) {
#pragma omp parallel for schedule(static)
    for (Index co = 0; co < s.out_channels; ++co) {
      T* o = out + static_cast<std::size_t>(co) * n_out;
      const T b = bias[co];
      for (std::size_t i = 0; i < n_out; ++i) o[i] += b;
    }
  }
}

template <typename T>
void conv3d_backward_data(const ConvShape& s, const T* weight, const T* grad_out, T* grad_in) {
  const std::size_t n_out = s.out.voxels();
  const int rows = static_cast<int>(s.patch_size());
  if (is_pointwise(s)) {
    gemm(true, false, s.in_channels, static_cast<int>(n_out), s.out_channels, T(1), weight, s.in_channels, grad_out,
         static_cast<int>(n_out), T(0), grad_in, static_cast<int>(n_out));
    return;
  }
  if (use_row_shift(s)) {
    row_shift_backward_data(s, weight, grad_out, grad_in);
    return;
  }
  std::fill(grad_in, grad_in + static_cast<std::size_t>(s.in_channels) * s.in.voxels(), T(0));
  const int slab = slab_height(static_cast<std::size_t>(rows), s.out);
  std::vector<T> col(static_cast<std::size_t>(rows) * slab * s.out.ny * s.out.nx);
  for (int z0 = 0; z0 < s.out.nz; z0 += slab) {
    const int z1 = std::min(s.out.nz, z0 + slab);
    const int cols = (z1 - z0) * s.out.ny * s.out.nx;
    gemm(true, false, rows, cols, s.out_channels, T(1), weight, rows, grad_out + s.out.index(0, 0, z0),
         static_cast<int>(n_out), T(0), col.data(), cols);
    col2im(s, col.data(), z0, z1, grad_in);
  }
}

template <typename T>
void conv3d_backward_params(const ConvShape& s, const T* in, const T* grad_out, T* grad_weight, T* grad_bias) {
  const std::size_t n_out = s.out.voxels();
  const int rows = static_cast<int>(s.patch_size());
  if (is_pointwise(s)) {
    gemm(false, true, s.out_channels, s.in_channels, static_cast<int>(n_out), T(1), grad_out, static_cast<int>(n_out),
         in, static_cast<int>(n_out), T(1), grad_weight, s.in_channels);
  } else if (use_row_shift(s)) {
    row_shift_backward_params(s, in, grad_out, grad_weight);
  } else {
    const int slab = slab_height(static_cast<std::size_t>(rows), s.out);
    std::vector<T> col(static_cast<std::size_t>(rows) * slab * s.out.ny * s.out.nx);
    for (int z0 = 0; z0 < s.out.nz; z0 += slab) {
      const int z1 = std::min(s.out.nz, z0 + slab);
      const int cols = (z1 - z0) * s.out.ny * s.out.nx;
      im2col(s, in, z0, z1, col.data());
      gemm(false, true, s.out_channels, rows, cols, T(1), grad_out + s.out.index(0, 0, z0), static_cast<int>(n_out),
           col.data(), cols, T(1), grad_weight, rows);
    }
  }
  if (grad_bias) {
#pragma omp parallel for schedule(static)
    for (Index co = 0; co < s.out_channels; ++co) {
      const T* g = grad_out + static_cast<std::size_t>(co) * n_out;
      double acc = 0.0;
      for (std::size_t i = 0; i < n_out; ++i) acc += g[i];
      grad_bias[co] += static_cast<T>(acc);
    }
  }
}

namespace {

// Input z-slab height for the transposed convolution scratch buffer.
int upconv_slab(const UpConvShape& s) {
  const std::size_t rows = static_cast<std::size_t>(s.out_channels) * s.factor * s.factor * s.factor;
  const std::size_t plane = static_cast<std::size_t>(s.in.nx) * s.in.ny;
  return static_cast<int>(std::clamp<std::size_t>(kColumnBudget / std::max<std::size_t>(1, rows * plane), 1,
                                                  static_cast<std::size_t>(s.in.nz)));
}

}  // namespace

template <typename T>
void upconv3d_forward(const UpConvShape& s, const T* in, const T* weight, const T* bias, T* out) {
  const int f = s.factor, f3 = f * f * f;
  const int rows = s.out_channels * f3;
  const std::size_t n_in = s.in.voxels();
  const Shape3 os = s.out();
  const std::size_t n_out = os.voxels();
  const int slab = upconv_slab(s);
  std::vector<T> cols(static_cast<std::size_t>(rows) * slab * s.in.ny * s.in.nx);
  for (int z0 = 0; z0 < s.in.nz; z0 += slab) {
    const int z1 = std::min(s.in.nz, z0 + slab);
    const int nc = (z1 - z0) * s.in.ny * s.in.nx;
    gemm(true, false, rows, nc, s.in_channels, T(1), weight, rows, in + s.in.index(0, 0, z0), static_cast<int>(n_in),
         T(0), cols.data(), nc);
#pragma omp parallel for schedule(static)
    for (Index co = 0; co < s.out_channels; ++co) {
      T* o = out + static_cast<std::size_t>(co) * n_out;
      const T b = bias ? bias[co] : T(0);
      for (int off = 0; off < f3; ++off) {
        const int a = off / (f * f), bb = (off / f) % f, c = off % f;
        const T* src = cols.data() + (static_cast<std::size_t>(co) * f3 + off) * nc;
        for (int z = z0; z < z1; ++z) {
          for (int y = 0; y < s.in.ny; ++y) {
            const T* row = src + (static_cast<std::size_t>(z - z0) * s.in.ny + y) * s.in.nx;
            T* line = o + os.index(c, f * y + bb, f * z + a);
            for (int x = 0; x < s.in.nx; ++x) line[f * x] = row[x] + b;
          }
        }
      }
    }
  }
}

namespace {

template <typename T>
void gather_upconv(const UpConvShape& s, const T* grad_out, int z0, int z1, T* cols) {
  const int f = s.factor, f3 = f * f * f;
  const Shape3 os = s.out();
  const std::size_t n_out = os.voxels();
  const std::size_t nc = static_cast<std::size_t>(z1 - z0) * s.in.ny * s.in.nx;
#pragma omp parallel for schedule(static)
  for (Index co = 0; co < s.out_channels; ++co) {
    const T* g = grad_out + static_cast<std::size_t>(co) * n_out;
    for (int off = 0; off < f3; ++off) {
      const int a = off / (f * f), bb = (off / f) % f, c = off % f;
      T* dst = cols + (static_cast<std::size_t>(co) * f3 + off) * nc;
      for (int z = z0; z < z1; ++z) {
        for (int y = 0; y < s.in.ny; ++y) {
          T* row = dst + (static_cast<std::size_t>(z - z0) * s.in.ny + y) * s.in.nx;
          const T* line = g + os.index(c, f * y + bb, f * z + a);
          for (int x = 0; x < s.in.nx; ++x) row[x] = line[f * x];
        }
      }
    }
  }
}

}  // namespace

template <typename T>
void upconv3d_backward_data(const UpConvShape& s, const T* weight, const T* grad_out, T* grad_in) {
  const int f3 = s.factor * s.factor * s.factor;
  const int rows = s.out_channels * f3;
  const std::size_t n_in = s.in.voxels();
  const int slab = upconv_slab(s);
  std::vector<T> cols(static_cast<std::size_t>(rows) * slab * s.in.ny * s.in.nx);
  for (int z0 = 0; z0 < s.in.nz; z0 += slab) {
    const int z1 = std::min(s.in.nz, z0 + slab);
    const int nc = (z1 - z0) * s.in.ny * s.in.nx;
    gather_upconv(s, grad_out, z0, z1, cols.data());
    gemm(false, false, s.in_channels, nc, rows, T(1), weight, rows, cols.data(), nc, T(0),
         grad_in + s.in.index(0, 0, z0), static_cast<int>(n_in));
  }
}

template <typename T>
void upconv3d_backward_params(const UpConvShape& s, const T* in, const T* grad_out, T* grad_weight, T* grad_bias) {
  const int f3 = s.factor * s.factor * s.factor;
  const int rows = s.out_channels * f3;
  const std::size_t n_in = s.in.voxels();
  const int slab = upconv_slab(s);
  std::vector<T> cols(static_cast<std::size_t>(rows) * slab * s.in.ny * s.in.nx);
  for (int z0 = 0; z0 < s.in.nz; z0 += slab) {
    const int z1 = std::min(s.in.nz, z0 + slab);
    const int nc = (z1 - z0) * s.in.ny * s.in.nx;
    gather_upconv(s, grad_out, z0, z1, cols.data());
    gemm(false, true, s.in_channels, rows, nc, T(1), in + s.in.index(0, 0, z0), static_cast<int>(n_in), cols.data(),
         nc, T(1), grad_weight, rows);
  }
  if (grad_bias) {
    const std::size_t n_out = s.out().voxels();
#pragma omp parallel for schedule(static)
    for (Index co = 0; co < s.out_channels; ++co) {
      const T* g = grad_out + static_cast<std::size_t>(co) * n_out;
      double acc = 0.0;
      for (std::size_t i = 0; i < n_out; ++i) acc += g[i];
      grad_bias[co] += static_cast<T>(acc);
    }
  }
}

template <typename T>
void instance_norm_forward(int channels, std::size_t voxels, const T* in, const T* gamma, const T* beta, double eps,
                           T* out, T* xhat, T* inv_std) {
#pragma omp parallel for schedule(static)
  for (Index c = 0; c < channels; ++c) {
    const T* x = in + static_cast<std::size_t>(c) * voxels;
    double sum = 0.0;
    for (std::size_t i = 0; i < voxels; ++i) sum += x[i];
    const double mean = sum / static_cast<double>(voxels);
    double sq = 0.0;
    for (std::size_t i = 0; i < voxels; ++i) {
      const double d = x[i] - mean;
      sq += d * d;
    }
    const double istd = 1.0 / std::sqrt(sq / static_cast<double>(voxels) + eps);
    inv_std[c] = static_cast<T>(istd);
    T* xh = xhat + static_cast<std::size_t>(c) * voxels;
    T* y = out + static_cast<std::size_t>(c) * voxels;
    const T g = gamma ? gamma[c] : T(1);
    const T b = beta ? beta[c] : T(0);
    const T m = static_cast<T>(mean);
    const T is = static_cast<T>(istd);
    for (std::size_t i = 0; i < voxels; ++i) {
      xh[i] = (x[i] - m) * is;
      y[i] = g * xh[i] + b;
    }
  }
}

template <typename T>
void instance_norm_backward(int channels, std::size_t voxels, const T* grad_out, const T* xhat, const T* inv_std,
                            const T* gamma, T* grad_in, T* grad_gamma, T* grad_beta) {
#pragma omp parallel for schedule(static)
  for (Index c = 0; c < channels; ++c) {
    const T* dy = grad_out + static_cast<std::size_t>(c) * voxels;
    const T* xh = xhat + static_cast<std::size_t>(c) * voxels;
    double sum_dy = 0.0, sum_dy_xh = 0.0;
    for (std::size_t i = 0; i < voxels; ++i) {
      sum_dy += dy[i];
      sum_dy_xh += static_cast<double>(dy[i]) * xh[i];
    }
    if (grad_gamma) grad_gamma[c] += static_cast<T>(sum_dy_xh);
    if (grad_beta) grad_beta[c] += static_cast<T>(sum_dy);
    const double g = gamma ? gamma[c] : 1.0;
    const double nv = static_cast<double>(voxels);
    const T mean_dxh = static_cast<T>(g * sum_dy / nv);
    const T mean_dxh_xh = static_cast<T>(g * sum_dy_xh / nv);
    const T scale = static_cast<T>(inv_std[c]);
    const T gg = static_cast<T>(g);
    T* dx = grad_in + static_cast<std::size_t>(c) * voxels;
    for (std::size_t i = 0; i < voxels; ++i) dx[i] = scale * (gg * dy[i] - mean_dxh - xh[i] * mean_dxh_xh);
  }
}

template <typename T>
void leaky_relu_forward(std::size_t n, const T* in, T slope, T* out) {
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < static_cast<Index>(n); ++i) out[i] = in[i] > T(0) ? in[i] : slope * in[i];
}

template <typename T>
void leaky_relu_backward(std::size_t n, const T* out, const T* grad_out, T slope, T* grad_in) {
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < static_cast<Index>(n); ++i) grad_in[i] = out[i] > T(0) ? grad_out[i] : slope * grad_out[i];
}

template <typename T>
void add_inplace(std::size_t n, const T* x, T* y) {
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < static_cast<Index>(n); ++i) y[i] += x[i];
}

int max_threads() { return omp_get_max_threads(); }

void set_num_threads(int n) {
  if (n < 1) throw ValidationError("thread count must be >= 1");
  omp_set_num_threads(n);
  openblas_set_num_threads(n);
}

#define PETSEG_INSTANTIATE(T)                                                                                        \
  template void conv3d_forward<T>(const ConvShape&, const T*, const T*, const T*, T*);                              \
  template void conv3d_backward_data<T>(const ConvShape&, const T*, const T*, T*);                                  \
  template void conv3d_backward_params<T>(const ConvShape&, const T*, const T*, T*, T*);                            \
  template void upconv3d_forward<T>(const UpConvShape&, const T*, const T*, const T*, T*);                          \
  template void upconv3d_backward_data<T>(const UpConvShape&, const T*, const T*, T*);                              \
  template void upconv3d_backward_params<T>(const UpConvShape&, const T*, const T*, T*, T*);                        \
  template void instance_norm_forward<T>(int, std::size_t, const T*, const T*, const T*, double, T*, T*, T*);       \
  template void instance_norm_backward<T>(int, std::size_t, const T*, const T*, const T*, const T*, T*, T*, T*);    \
  template void leaky_relu_forward<T>(std::size_t, const T*, T, T*);                                                \
  template void leaky_relu_backward<T>(std::size_t, const T*, const T*, T, T*);                                     \
  template void add_inplace<T>(std::size_t, const T*, T*);

PETSEG_INSTANTIATE(float)
PETSEG_INSTANTIATE(double)
#undef PETSEG_INSTANTIATE

}  // namespace petseg::kernels
