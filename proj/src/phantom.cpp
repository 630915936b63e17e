#include "petseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "petseg/error.hpp"

namespace petseg {

namespace {

constexpr double kBodyHu = 40.0;
constexpr double kAirHu = -1000.0;
constexpr double kLungHu = -800.0;
constexpr double kBodySuv = 1.2;
constexpr double kLungSuv = 0.4;
constexpr Interval kOrganSuv{8.0, 20.0};
constexpr int kPlacementRetries = 2000;

struct Ellipsoid {
  Vec3 center;
  Vec3 semi;
  // Value of sum((p-c)/semi)^2; <= 1 inside.
  double level(const Vec3& p) const {
    double s = 0.0;
    for (int a = 0; a < 3; ++a) {
      const double d = (p[a] - center[a]) / semi[a];
      s += d * d;
    }
    return s;
  }
};

struct Sphere {
  Vec3 center;
  double radius;
  double suv;
};

}  // namespace

void PhantomSpec::validate() const {
  if (shape.nx < 4 || shape.ny < 4 || shape.nz < 4) throw ValidationError("phantom shape must be >= 4 per axis");
  for (double s : spacing) {
    if (!(s > 0)) throw ValidationError("phantom spacing must be positive");
  }
  if (n_lesions < 0) throw ValidationError("n_lesions must be >= 0");
  if (!lesion_radius_mm.valid() || !lesion_suv.valid()) throw ValidationError("phantom ranges must be non-empty");
  const double max_spacing = std::max({spacing[0], spacing[1], spacing[2]});
  if (lesion_radius_mm.lo < max_spacing) throw ValidationError("lesion radii must be at least one voxel");
  if (!(lesion_suv.lo > 2.0 && lesion_suv.hi < 30.0)) throw ValidationError("lesion SUV range must lie within (2, 30)");
  if (suv_noise < 0 || ct_noise_hu < 0) throw ValidationError("noise levels must be non-negative");
}

CaseRecord generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.rng_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  const Shape3& sh = spec.shape;
  Geometry geom;
  geom.shape = sh;
  geom.spacing = spec.spacing;
  Vec3 half{};
  for (int a = 0; a < 3; ++a) {
    half[a] = 0.5 * sh[a] * spec.spacing[a];
    // Volume centered on the world origin.
    geom.origin[a] = -half[a] + 0.5 * spec.spacing[a];
  }
  auto world = [&](int x, int y, int z) {
    return Vec3{geom.origin[0] + x * spec.spacing[0], geom.origin[1] + y * spec.spacing[1],
                geom.origin[2] + z * spec.spacing[2]};
  };
  auto scaled = [&](double fx, double fy, double fz) { return Vec3{fx * half[0], fy * half[1], fz * half[2]}; };

  const Ellipsoid body{{0, 0, 0}, scaled(0.85, 0.75, 0.92)};
  const Ellipsoid lungs[2] = {{scaled(-0.45, 0.0, 0.35), scaled(0.22, 0.45, 0.30)},
                              {scaled(0.45, 0.0, 0.35), scaled(0.22, 0.45, 0.30)}};

  std::vector<Ellipsoid> organs;
  std::vector<double> organ_suv;
  if (spec.include_hot_organs) {
    auto jitter = [&]() { return uniform(-0.04, 0.04); };
    organs.push_back({scaled(jitter(), -0.1 + jitter(), 0.12 + jitter()), scaled(0.24, 0.26, 0.22)});
    organs.push_back({scaled(jitter(), 0.05 + jitter(), -0.68 + jitter()), scaled(0.20, 0.24, 0.20)});
    for (std::size_t i = 0; i < organs.size(); ++i) organ_suv.push_back(uniform(kOrganSuv.lo, kOrganSuv.hi));
  }

  // Lesions: fully inside the body, clear of the organs and of each other by
  // at least two voxels so that each one is its own 26-connected component.
  const double gap = 2.0 * std::max({spec.spacing[0], spec.spacing[1], spec.spacing[2]});
  std::vector<Sphere> lesions;
  for (int i = 0; i < spec.n_lesions; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementRetries && !placed; ++attempt) {
      const double r = uniform(spec.lesion_radius_mm.lo, spec.lesion_radius_mm.hi);
      Vec3 c{};
      for (int a = 0; a < 3; ++a) c[a] = uniform(-body.semi[a], body.semi[a]);
      const Ellipsoid shrunk{body.center, {body.semi[0] - r - gap, body.semi[1] - r - gap, body.semi[2] - r - gap}};
      if (shrunk.semi[0] <= 0 || shrunk.semi[1] <= 0 || shrunk.semi[2] <= 0 || shrunk.level(c) > 1.0) continue;
      bool clear = true;
      for (const auto& o : organs) {
        const Ellipsoid grown{o.center, {o.semi[0] + r + gap, o.semi[1] + r + gap, o.semi[2] + r + gap}};
        if (grown.level(c) <= 1.0) clear = false;
      }
      for (const auto& l : lesions) {
        double d2 = 0.0;
        for (int a = 0; a < 3; ++a) d2 += (c[a] - l.center[a]) * (c[a] - l.center[a]);
        if (std::sqrt(d2) < r + l.radius + gap) clear = false;
      }
      if (!clear) continue;
      lesions.push_back({c, r, uniform(spec.lesion_suv.lo, spec.lesion_suv.hi)});
      placed = true;
    }
    if (!placed) {
      throw ValidationError("phantom '" + spec.case_id + "': cannot place " + std::to_string(spec.n_lesions) +
                            " lesions without overlap");
    }
  }

  const std::size_t n = sh.voxels();
  std::vector<float> suv(n), ct(n), mask(n, 0.0f);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int z = 0; z < sh.nz; ++z) {
    for (int y = 0; y < sh.ny; ++y) {
      for (int x = 0; x < sh.nx; ++x) {
        const std::size_t i = sh.index(x, y, z);
        const Vec3 p = world(x, y, z);
        double hu = kAirHu, s = 0.0;
        const bool in_body = body.level(p) <= 1.0;
        if (in_body) {
          hu = kBodyHu;
          s = kBodySuv;
          for (const auto& l : lungs) {
            if (l.level(p) <= 1.0) {
              hu = kLungHu;
              s = kLungSuv;
            }
          }
          for (std::size_t o = 0; o < organs.size(); ++o) {
            if (organs[o].level(p) <= 1.0) {
              hu = kBodyHu;
              s = organ_suv[o];
            }
          }
        }
        int lesion = -1;
        for (std::size_t k = 0; k < lesions.size(); ++k) {
          double d2 = 0.0;
          for (int a = 0; a < 3; ++a) d2 += (p[a] - lesions[k].center[a]) * (p[a] - lesions[k].center[a]);
          if (d2 <= lesions[k].radius * lesions[k].radius) lesion = static_cast<int>(k);
        }
        if (lesion >= 0) {
          hu = kBodyHu;
          s = lesions[lesion].suv;
          mask[i] = 1.0f;
        }
        // Noise draws happen for every voxel so the stream does not depend on anatomy.
        const double ns = gauss(rng);
        const double nc = gauss(rng);
        if (in_body) {
          s *= 1.0 + spec.suv_noise * ns;
          hu += spec.ct_noise_hu * nc;
        }
        if (lesion >= 0) s = std::clamp(s, spec.lesion_suv.lo, spec.lesion_suv.hi);
        suv[i] = static_cast<float>(std::max(0.0, s));
        ct[i] = static_cast<float>(hu);
      }
    }
  }

  return make_case(spec.case_id, VolumeGrid(geom, VolumeKind::Suv, std::move(suv)),
                   VolumeGrid(geom, VolumeKind::Hu, std::move(ct)),
                   VolumeGrid(geom, VolumeKind::BinaryMask, std::move(mask)), spec.patient_id);
}

}  // namespace petseg

namespace petseg {

void CohortSpec::validate() const {
  if (n_cases < 1) throw ValidationError("cohort: n_cases must be >= 1");
  if (max_lesions < 1) throw ValidationError("cohort: max_lesions must be >= 1");
  if (!(negative_fraction >= 0.0 && negative_fraction <= 1.0)) throw ValidationError("cohort: negative_fraction in [0,1]");
  if (!(multi_study_fraction >= 0.0 && multi_study_fraction <= 1.0)) {
    throw ValidationError("cohort: multi_study_fraction in [0,1]");
  }
}

std::vector<PhantomSpec> cohort_specs(const PhantomSpec& base, const CohortSpec& cohort) {
  cohort.validate();
  std::mt19937_64 rng(cohort.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<PhantomSpec> out;
  const int width = std::max(3, static_cast<int>(std::to_string(cohort.n_cases - 1).size()));
  for (int i = 0; i < cohort.n_cases; ++i) {
    PhantomSpec s = base;
    s.rng_seed = cohort.seed + static_cast<std::uint64_t>(i);
    const bool negative = unit(rng) < cohort.negative_fraction;
    const int lesions = std::uniform_int_distribution<int>(1, cohort.max_lesions)(rng);
    s.n_lesions = negative ? 0 : lesions;
    std::string idx = std::to_string(i);
    s.case_id = "case_" + std::string(width - idx.size(), '0') + idx;
    const bool shared = unit(rng) < cohort.multi_study_fraction;
    s.patient_id = (i > 0 && shared) ? out.back().patient_id : "patient_" + std::string(width - idx.size(), '0') + idx;
    out.push_back(s);
  }
  return out;
}

}  // namespace petseg
