#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "petseg/case_io.hpp"

namespace petseg {

// Synthetic whole-body PET/CT study: body ellipsoid (+40 HU), two lung
// ellipsoids (-800 HU), optionally two physiologic hot organs (SUV 8-20, not
// in the ground truth) and `n_lesions` spherical lesions (in the ground truth).
struct PhantomSpec {
  Shape3 shape{96, 72, 72};
  Vec3 spacing{2.0, 2.0, 2.0};
  int n_lesions = 3;
  Interval lesion_radius_mm{6.0, 14.0};
  Interval lesion_suv{4.0, 15.0};
  bool include_hot_organs = true;
  // Relative SUV noise and absolute CT noise (HU); 0 gives a noiseless phantom.
  double suv_noise = 0.08;
  double ct_noise_hu = 12.0;
  std::uint64_t rng_seed = 0;
  std::string case_id = "phantom";
  std::string patient_id;

  void validate() const;
};

// Deterministic for a fixed spec. Throws ValidationError when the lesions
// cannot be placed without overlap after bounded retries.
CaseRecord generate_phantom(const PhantomSpec& spec);

}  // namespace petseg

namespace petseg {

// A synthetic cohort: case i uses rng_seed = seed + i, a lesion count drawn
// uniformly from [1, max_lesions] (or 0 for negative controls), and with
// probability multi_study_fraction shares its patient id with case i - 1.
struct CohortSpec {
  int n_cases = 12;
  int max_lesions = 4;
  double negative_fraction = 0.2;
  double multi_study_fraction = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

std::vector<PhantomSpec> cohort_specs(const PhantomSpec& base, const CohortSpec& cohort);

}  // namespace petseg
