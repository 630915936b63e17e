#include "petseg/augment.hpp"

#include <cmath>
#include <numbers>

#include "petseg/error.hpp"
#include "petseg/resample.hpp"

namespace petseg {

namespace {

double draw(const Interval& r, Rng& rng) {
  if (r.lo == r.hi) {
    rng.discard(1);
    return r.lo;
  }
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

void require_aligned(const ChannelStack& stack, const VolumeGrid& mask, const char* what) {
  require_same_geometry(stack.geometry(), mask.geometry(), what);
  if (!is_mask_kind(mask.kind())) throw ValidationError(std::string(what) + ": mask must be a mask kind");
}

std::vector<float> flip_values(std::span<const float> v, const Shape3& s, const std::array<bool, 3>& axes) {
  std::vector<float> out(v.size());
  for (int z = 0; z < s.nz; ++z) {
    const int sz = axes[2] ? s.nz - 1 - z : z;
    for (int y = 0; y < s.ny; ++y) {
      const int sy = axes[1] ? s.ny - 1 - y : y;
      for (int x = 0; x < s.nx; ++x) {
        const int sx = axes[0] ? s.nx - 1 - x : x;
        out[s.index(x, y, z)] = v[s.index(sx, sy, sz)];
      }
    }
  }
  return out;
}

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 mul(const Mat3& a, const Mat3& b) {
  Mat3 r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) r[i][j] += a[i][k] * b[k][j];
  return r;
}

Mat3 rotation(const Vec3& deg) {
  const double d2r = std::numbers::pi / 180.0;
  const double a = deg[0] * d2r, b = deg[1] * d2r, c = deg[2] * d2r;
  const Mat3 rx{{{1, 0, 0}, {0, std::cos(a), -std::sin(a)}, {0, std::sin(a), std::cos(a)}}};
  const Mat3 ry{{{std::cos(b), 0, std::sin(b)}, {0, 1, 0}, {-std::sin(b), 0, std::cos(b)}}};
  const Mat3 rz{{{std::cos(c), -std::sin(c), 0}, {std::sin(c), std::cos(c), 0}, {0, 0, 1}}};
  return mul(rz, mul(ry, rx));
}

template <typename Sampler>
std::vector<float> warp(std::span<const float> v, const Geometry& g, const Mat3& inv, double inv_scale, Sampler sample) {
  const Shape3& s = g.shape;
  std::vector<float> out(v.size());
  Vec3 c{};
  for (int a = 0; a < 3; ++a) c[a] = 0.5 * (s[a] - 1);
#pragma omp parallel for schedule(static)
  for (int z = 0; z < s.nz; ++z) {
    for (int y = 0; y < s.ny; ++y) {
      for (int x = 0; x < s.nx; ++x) {
        // Output voxel -> mm offset from center -> inverse transform -> input voxel.
        const Vec3 p{(x - c[0]) * g.spacing[0], (y - c[1]) * g.spacing[1], (z - c[2]) * g.spacing[2]};
        Vec3 q{};
        for (int i = 0; i < 3; ++i) q[i] = inv_scale * (inv[i][0] * p[0] + inv[i][1] * p[1] + inv[i][2] * p[2]);
        out[s.index(x, y, z)] =
            sample(v.data(), s, c[0] + q[0] / g.spacing[0], c[1] + q[1] / g.spacing[1], c[2] + q[2] / g.spacing[2]);
      }
    }
  }
  return out;
}

}  // namespace

void AugmentConfig::validate() const {
  for (double p : p_flip) {
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("augment: p_flip must be in [0,1]");
  }
  if (!(rotation_deg >= 0.0)) throw ValidationError("augment: rotation range must be >= 0");
  for (const Interval* r : {&scale, &pet_blur_sigma, &pet_brightness, &pet_contrast, &pet_gamma, &spacing_jitter_mm}) {
    if (!r->valid()) throw ValidationError("augment: ranges must be non-empty");
  }
  if (!(scale.lo > 0.0)) throw ValidationError("augment: scale range must be positive");
  if (!(pet_gamma.lo > 0.0)) throw ValidationError("augment: gamma range must be positive");
  if (!(pet_blur_sigma.lo >= 0.0)) throw ValidationError("augment: blur sigma must be >= 0");
  if (!(pet_contrast.lo >= 0.0)) throw ValidationError("augment: contrast must be >= 0");
  if (!(spacing_jitter_mm.lo > 0.0)) throw ValidationError("augment: spacing jitter must be positive");
}

StackAndMask apply_flip(const ChannelStack& stack, const VolumeGrid& mask, const std::array<bool, 3>& axes) {
  require_aligned(stack, mask, "flip");
  std::vector<VolumeGrid> channels;
  for (const auto& c : stack.channels()) {
    channels.emplace_back(c.geometry(), c.kind(), flip_values(c.values(), c.shape(), axes));
  }
  VolumeGrid m(mask.geometry(), mask.kind(), flip_values(mask.values(), mask.shape(), axes));
  return {ChannelStack(std::move(channels), stack.names()), std::move(m)};
}

StackAndMask random_flip(const ChannelStack& stack, const VolumeGrid& mask, const AugmentConfig& cfg, Rng& rng) {
  std::array<bool, 3> axes{};
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int a = 0; a < 3; ++a) axes[a] = u(rng) < cfg.p_flip[a];
  return apply_flip(stack, mask, axes);
}

StackAndMask apply_affine(const ChannelStack& stack, const VolumeGrid& mask, const Vec3& rotation_deg, double scale) {
  require_aligned(stack, mask, "affine");
  if (!(scale > 0.0)) throw ValidationError("affine: scale must be positive");
  const Mat3 r = rotation(rotation_deg);
  Mat3 inv{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) inv[i][j] = r[j][i];
  const Geometry& g = stack.geometry();
  auto lin = [](const float* v, const Shape3& s, double x, double y, double z) { return sample_linear(v, s, x, y, z, 0.0f); };
  auto near = [](const float* v, const Shape3& s, double x, double y, double z) { return sample_nearest(v, s, x, y, z, 0.0f); };
  std::vector<VolumeGrid> channels;
  for (const auto& c : stack.channels()) {
    auto out = warp(c.values(), g, inv, 1.0 / scale, lin);
    for (float& v : out) v = std::clamp(v, 0.0f, 1.0f);
    channels.emplace_back(g, c.kind(), std::move(out));
  }
  VolumeGrid m(mask.geometry(), mask.kind(), warp(mask.values(), g, inv, 1.0 / scale, near));
  return {ChannelStack(std::move(channels), stack.names()), std::move(m)};
}

StackAndMask random_affine(const ChannelStack& stack, const VolumeGrid& mask, const AugmentConfig& cfg, Rng& rng) {
  Vec3 deg{};
  for (int a = 0; a < 3; ++a) deg[a] = draw({-cfg.rotation_deg, cfg.rotation_deg}, rng);
  const double s = draw(cfg.scale, rng);
  return apply_affine(stack, mask, deg, s);
}

std::vector<float> gaussian_blur(std::span<const float> values, const Shape3& shape, double sigma) {
  std::vector<float> cur(values.begin(), values.end());
  if (sigma <= 0.0) return cur;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> taps(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) total += taps[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& t : taps) t /= total;
  std::vector<float> next(cur.size());
  for (int axis = 0; axis < 3; ++axis) {
    const int n = shape[axis];
    const std::size_t stride = axis == 0 ? 1 : (axis == 1 ? shape.nx : static_cast<std::size_t>(shape.nx) * shape.ny);
#pragma omp parallel for schedule(static)
    for (int z = 0; z < shape.nz; ++z) {
      for (int y = 0; y < shape.ny; ++y) {
        for (int x = 0; x < shape.nx; ++x) {
          const int pos = axis == 0 ? x : (axis == 1 ? y : z);
          const std::size_t base = shape.index(x, y, z) - pos * stride;
          double acc = 0.0;
          for (int t = -radius; t <= radius; ++t) {
            const int q = std::clamp(pos + t, 0, n - 1);
            acc += taps[t + radius] * cur[base + q * stride];
          }
          next[shape.index(x, y, z)] = static_cast<float>(acc);
        }
      }
    }
    std::swap(cur, next);
  }
  return cur;
}

ChannelStack apply_pet_intensity(const ChannelStack& stack, const PetIntensityParams& p) {
  if (!stack.is_standard() && !stack.is_refiner()) throw ValidationError("pet_intensity_augment: unknown channel layout");
  std::vector<VolumeGrid> channels = stack.channels();
  for (ChannelName name : {ChannelName::Suv, ChannelName::SuvHot}) {
    const int ci = stack.index_of(name);
    const VolumeGrid& src = channels[ci];
    std::vector<float> v = gaussian_blur(src.values(), src.shape(), p.blur_sigma);
    if (p.brightness != 0.0) {
      for (float& x : v) x = static_cast<float>(x + p.brightness);
    }
    if (p.contrast != 1.0) {
      double mean = 0.0;
      for (float x : v) mean += x;
      mean /= static_cast<double>(v.size());
      for (float& x : v) x = static_cast<float>((x - mean) * p.contrast + mean);
    }
    for (float& x : v) x = std::clamp(x, 0.0f, 1.0f);
    if (p.gamma != 1.0) {
      for (float& x : v) x = static_cast<float>(std::pow(static_cast<double>(x), p.gamma));
    }
    channels[ci] = VolumeGrid(src.geometry(), VolumeKind::Probability, std::move(v));
  }
  return ChannelStack(std::move(channels), stack.names());
}

ChannelStack pet_intensity_augment(const ChannelStack& stack, const AugmentConfig& cfg, Rng& rng) {
  PetIntensityParams p;
  p.blur_sigma = draw(cfg.pet_blur_sigma, rng);
  p.brightness = draw(cfg.pet_brightness, rng);
  p.contrast = draw(cfg.pet_contrast, rng);
  p.gamma = draw(cfg.pet_gamma, rng);
  return apply_pet_intensity(stack, p);
}

CaseRecord resample_case(const CaseRecord& rec, const Vec3& spacing) {
  std::optional<VolumeGrid> mask;
  if (rec.gt_mask) mask = resample(*rec.gt_mask, spacing, Interpolation::Nearest);
  return make_case(rec.case_id, resample(rec.suv, spacing, Interpolation::Linear),
                   resample(rec.ct, spacing, Interpolation::Linear), std::move(mask), rec.patient_id);
}

CaseRecord random_spacing_resample(const CaseRecord& rec, const AugmentConfig& cfg, Rng& rng) {
  const double s = draw(cfg.spacing_jitter_mm, rng);
  return resample_case(rec, {s, s, s});
}

}  // namespace petseg
