#include "petseg/case_io.hpp"

#include <fstream>

#include "json.hpp"
#include "petseg/components.hpp"
#include "petseg/error.hpp"
#include "petseg/nifti.hpp"
#include "petseg/util.hpp"

namespace petseg {

namespace fs = std::filesystem;

CaseRecord make_case(std::string case_id, VolumeGrid suv, VolumeGrid ct, std::optional<VolumeGrid> gt_mask,
                     std::string patient_id) {
  if (suv.kind() != VolumeKind::Suv) throw ValidationError(case_id + ": PET volume must be of kind SUV");
  if (ct.kind() != VolumeKind::Hu) throw ValidationError(case_id + ": CT volume must be of kind HU");
  require_same_geometry(suv.geometry(), ct.geometry(), case_id + ": SUV/CT");
  CaseRecord rec{std::move(case_id), std::move(patient_id), std::move(suv), std::move(ct), std::move(gt_mask), 0, 0.0};
  if (rec.patient_id.empty()) rec.patient_id = rec.case_id;
  if (rec.gt_mask) {
    if (rec.gt_mask->kind() != VolumeKind::BinaryMask) throw ValidationError(rec.case_id + ": mask must be binary");
    require_same_geometry(rec.suv.geometry(), rec.gt_mask->geometry(), rec.case_id + ": SUV/mask");
    rec.lesion_count = label_components(rec.gt_mask->values(), rec.gt_mask->shape()).count;
    rec.lesion_volume_ml = static_cast<double>(rec.gt_mask->count_nonzero()) * rec.gt_mask->voxel_volume_ml();
  }
  return rec;
}

CaseRecord load_case(const std::string& case_id, const CasePaths& paths) {
  VolumeGrid suv = nifti::read_volume(paths.suv, VolumeKind::Suv);
  VolumeGrid ct = nifti::read_volume(paths.ct, VolumeKind::Hu);
  std::optional<VolumeGrid> mask;
  if (paths.mask) mask = nifti::read_volume(*paths.mask, VolumeKind::BinaryMask);
  return make_case(case_id, std::move(suv), std::move(ct), std::move(mask), paths.patient_id);
}

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed manifest " + path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw ValidationError("manifest must map case ids to entries");
  Manifest m;
  m.root = path.parent_path();
  for (const auto& [id, entry] : j.items()) {
    if (!entry.is_object() || !entry.contains("suv") || !entry.contains("ct")) {
      throw ValidationError("manifest entry '" + id + "' needs 'suv' and 'ct'");
    }
    for (const auto& [key, _] : entry.items()) {
      if (key != "suv" && key != "ct" && key != "mask" && key != "patient") {
        throw ValidationError("unknown key '" + key + "' in manifest entry '" + id + "'");
      }
    }
    CasePaths p;
    p.suv = m.root / entry["suv"].get<std::string>();
    p.ct = m.root / entry["ct"].get<std::string>();
    if (entry.contains("mask") && !entry["mask"].is_null()) p.mask = m.root / entry["mask"].get<std::string>();
    p.patient_id = entry.value("patient", id);
    m.cases.emplace(id, std::move(p));
  }
  return m;
}

void write_manifest(const fs::path& path, const Manifest& manifest) {
  const fs::path base = path.parent_path().empty() ? fs::path(".") : path.parent_path();
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [id, p] : manifest.cases) {
    nlohmann::json e;
    e["suv"] = fs::relative(p.suv, base).generic_string();
    e["ct"] = fs::relative(p.ct, base).generic_string();
    if (p.mask) e["mask"] = fs::relative(*p.mask, base).generic_string();
    e["patient"] = p.patient_id.empty() ? id : p.patient_id;
    j[id] = std::move(e);
  }
  write_text_atomic(path, j.dump(2) + "\n");
}

CasePaths save_case(const fs::path& dir, const CaseRecord& record) {
  CasePaths p;
  p.suv = dir / (record.case_id + "_suv.nii.gz");
  p.ct = dir / (record.case_id + "_ct.nii.gz");
  nifti::write_volume(p.suv, record.suv);
  nifti::write_volume(p.ct, record.ct);
  if (record.gt_mask) {
    p.mask = dir / (record.case_id + "_mask.nii.gz");
    nifti::write_volume(*p.mask, *record.gt_mask);
  }
  p.patient_id = record.patient_id;
  return p;
}

}  // namespace petseg
