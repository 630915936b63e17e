#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "petseg/volume.hpp"

namespace petseg {

struct CaseRecord {
  std::string case_id;
  std::string patient_id;
  VolumeGrid suv;
  VolumeGrid ct;
  std::optional<VolumeGrid> gt_mask;
  int lesion_count = 0;
  double lesion_volume_ml = 0.0;
};

// Validates alignment (1e-3 mm) and kinds, and derives the lesion statistics
// from the mask. An empty patient id defaults to the case id.
CaseRecord make_case(std::string case_id, VolumeGrid suv, VolumeGrid ct, std::optional<VolumeGrid> gt_mask,
                     std::string patient_id = {});

struct CasePaths {
  std::filesystem::path suv;
  std::filesystem::path ct;
  std::optional<std::filesystem::path> mask;
  std::string patient_id;
};

CaseRecord load_case(const std::string& case_id, const CasePaths& paths);

// case_id -> {"suv", "ct", "mask"?, "patient"?} with paths relative to the
// manifest's directory. Entries are kept sorted by case id.
struct Manifest {
  std::filesystem::path root;
  std::map<std::string, CasePaths> cases;
};

Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

// Writes <dir>/<id>_suv.nii.gz, _ct.nii.gz and (if present) _mask.nii.gz.
CasePaths save_case(const std::filesystem::path& dir, const CaseRecord& record);

}  // namespace petseg
