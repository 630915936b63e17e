#include "petseg/resample.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "petseg/error.hpp"

namespace petseg {

namespace {

struct AxisTaps {
  std::vector<int> lo;
  std::vector<int> hi;
  std::vector<float> w_hi;
};

AxisTaps linear_taps(int n_out, double out_origin, double out_spacing, int n_in, double in_origin, double in_spacing) {
  AxisTaps t;
  t.lo.resize(n_out);
  t.hi.resize(n_out);
  t.w_hi.resize(n_out);
  for (int i = 0; i < n_out; ++i) {
    const double pos = std::clamp((out_origin + i * out_spacing - in_origin) / in_spacing, 0.0, n_in - 1.0);
    const int lo = std::min(static_cast<int>(std::floor(pos)), n_in - 1);
    t.lo[i] = lo;
    t.hi[i] = std::min(lo + 1, n_in - 1);
    t.w_hi[i] = static_cast<float>(pos - lo);
  }
  return t;
}

std::vector<int> nearest_taps(int n_out, double out_origin, double out_spacing, int n_in, double in_origin,
                              double in_spacing) {
  std::vector<int> idx(n_out);
  for (int i = 0; i < n_out; ++i) {
    const double pos = (out_origin + i * out_spacing - in_origin) / in_spacing;
    idx[i] = std::clamp(static_cast<int>(std::floor(pos + 0.5)), 0, n_in - 1);
  }
  return idx;
}

}  // namespace

Geometry resampled_geometry(const Geometry& in, const Vec3& target_spacing) {
  Geometry out;
  for (int a = 0; a < 3; ++a) {
    if (!(target_spacing[a] > 0.0)) throw ValidationError("target spacing must be strictly positive");
    const double extent = in.shape[a] * in.spacing[a];
    out.shape[a] = std::max(1, static_cast<int>(std::lround(extent / target_spacing[a])));
    out.spacing[a] = target_spacing[a];
    out.origin[a] = in.origin[a] - 0.5 * in.spacing[a] + 0.5 * target_spacing[a];
  }
  return out;
}

VolumeGrid resample(const VolumeGrid& grid, const Vec3& target_spacing, Interpolation mode) {
  return resample_onto(grid, resampled_geometry(grid.geometry(), target_spacing), mode);
}

VolumeGrid resample_onto(const VolumeGrid& grid, const Geometry& target, Interpolation mode) {
  if (mode == Interpolation::Linear && is_mask_kind(grid.kind())) {
    throw ValidationError("LINEAR interpolation requested on a mask volume; use NEAREST");
  }
  const Geometry& in = grid.geometry();
  const Shape3& os = target.shape;
  const float* src = grid.values().data();
  std::vector<float> out(os.voxels());

  if (mode == Interpolation::Nearest) {
    std::array<std::vector<int>, 3> idx;
    for (int a = 0; a < 3; ++a) {
      idx[a] = nearest_taps(os[a], target.origin[a], target.spacing[a], in.shape[a], in.origin[a], in.spacing[a]);
    }
#pragma omp parallel for schedule(static)
    for (int z = 0; z < os.nz; ++z) {
      for (int y = 0; y < os.ny; ++y) {
        const float* line = src + in.shape.index(0, idx[1][y], idx[2][z]);
        float* dst = out.data() + os.index(0, y, z);
        for (int x = 0; x < os.nx; ++x) dst[x] = line[idx[0][x]];
      }
    }
  } else {
    std::array<AxisTaps, 3> taps;
    for (int a = 0; a < 3; ++a) {
      taps[a] = linear_taps(os[a], target.origin[a], target.spacing[a], in.shape[a], in.origin[a], in.spacing[a]);
    }
    const bool clamp01 = grid.kind() == VolumeKind::Probability;
#pragma omp parallel for schedule(static)
    for (int z = 0; z < os.nz; ++z) {
      const int z0 = taps[2].lo[z], z1 = taps[2].hi[z];
      const float wz = taps[2].w_hi[z];
      for (int y = 0; y < os.ny; ++y) {
        const int y0 = taps[1].lo[y], y1 = taps[1].hi[y];
        const float wy = taps[1].w_hi[y];
        const float* l00 = src + in.shape.index(0, y0, z0);
        const float* l10 = src + in.shape.index(0, y1, z0);
        const float* l01 = src + in.shape.index(0, y0, z1);
        const float* l11 = src + in.shape.index(0, y1, z1);
        float* dst = out.data() + os.index(0, y, z);
        for (int x = 0; x < os.nx; ++x) {
          const int x0 = taps[0].lo[x], x1 = taps[0].hi[x];
          const float wx = taps[0].w_hi[x];
          const float c00 = l00[x0] + wx * (l00[x1] - l00[x0]);
          const float c10 = l10[x0] + wx * (l10[x1] - l10[x0]);
          const float c01 = l01[x0] + wx * (l01[x1] - l01[x0]);
          const float c11 = l11[x0] + wx * (l11[x1] - l11[x0]);
          const float c0 = c00 + wy * (c10 - c00);
          const float c1 = c01 + wy * (c11 - c01);
          float v = c0 + wz * (c1 - c0);
          if (clamp01) v = std::clamp(v, 0.0f, 1.0f);
          dst[x] = v;
        }
      }
    }
  }
  return VolumeGrid(target, grid.kind(), std::move(out));
}

float sample_linear(const float* values, const Shape3& shape, double x, double y, double z, float outside) {
  if (x < -0.5 || y < -0.5 || z < -0.5 || x > shape.nx - 0.5 || y > shape.ny - 0.5 || z > shape.nz - 0.5) {
    return outside;
  }
  const double cx = std::clamp(x, 0.0, shape.nx - 1.0);
  const double cy = std::clamp(y, 0.0, shape.ny - 1.0);
  const double cz = std::clamp(z, 0.0, shape.nz - 1.0);
  const int x0 = static_cast<int>(std::floor(cx)), y0 = static_cast<int>(std::floor(cy)),
            z0 = static_cast<int>(std::floor(cz));
  const int x1 = std::min(x0 + 1, shape.nx - 1), y1 = std::min(y0 + 1, shape.ny - 1), z1 = std::min(z0 + 1, shape.nz - 1);
  const double fx = cx - x0, fy = cy - y0, fz = cz - z0;
  auto v = [&](int xi, int yi, int zi) { return static_cast<double>(values[shape.index(xi, yi, zi)]); };
  const double c00 = v(x0, y0, z0) * (1 - fx) + v(x1, y0, z0) * fx;
  const double c10 = v(x0, y1, z0) * (1 - fx) + v(x1, y1, z0) * fx;
  const double c01 = v(x0, y0, z1) * (1 - fx) + v(x1, y0, z1) * fx;
  const double c11 = v(x0, y1, z1) * (1 - fx) + v(x1, y1, z1) * fx;
  const double c0 = c00 * (1 - fy) + c10 * fy;
  const double c1 = c01 * (1 - fy) + c11 * fy;
  return static_cast<float>(c0 * (1 - fz) + c1 * fz);
}

float sample_nearest(const float* values, const Shape3& shape, double x, double y, double z, float outside) {
  const int xi = static_cast<int>(std::floor(x + 0.5)), yi = static_cast<int>(std::floor(y + 0.5)),
            zi = static_cast<int>(std::floor(z + 0.5));
  if (xi < 0 || yi < 0 || zi < 0 || xi >= shape.nx || yi >= shape.ny || zi >= shape.nz) return outside;
  return values[shape.index(xi, yi, zi)];
}

}  // namespace petseg
