#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "petseg/case_io.hpp"
#include "petseg/components.hpp"
#include "petseg/error.hpp"
#include "petseg/nifti.hpp"
#include "petseg/phantom.hpp"
#include "petseg/resample.hpp"

using namespace petseg;
using testing::geom;

TEST_CASE("VolumeGrid validates spacing, shape and kind values") {
  Geometry g = geom({2, 2, 2});
  CHECK_NOTHROW(VolumeGrid(g, VolumeKind::BinaryMask, std::vector<float>(8, 1.0f)));
  CHECK_THROWS_AS(VolumeGrid(g, VolumeKind::BinaryMask, std::vector<float>(8, 2.0f)), ValidationError);
  CHECK_THROWS_AS(VolumeGrid(g, VolumeKind::Probability, std::vector<float>(8, 1.5f)), ValidationError);
  CHECK_THROWS_AS(VolumeGrid(g, VolumeKind::LabelMap, std::vector<float>(8, 0.5f)), ValidationError);
  CHECK_THROWS_AS(VolumeGrid(g, VolumeKind::LabelMap, std::vector<float>(8, -1.0f)), ValidationError);
  CHECK_THROWS_AS(VolumeGrid(g, VolumeKind::Suv, std::vector<float>(7, 1.0f)), ValidationError);
  Geometry bad = g;
  bad.spacing[1] = 0.0;
  CHECK_THROWS_AS(VolumeGrid(bad, VolumeKind::Suv, std::vector<float>(8, 1.0f)), ValidationError);
  bad = g;
  bad.shape.nz = 0;
  CHECK_THROWS_AS(VolumeGrid(bad, VolumeKind::Suv, std::vector<float>{}), ValidationError);
}

TEST_CASE("NIfTI round trip keeps values and geometry") {
  const auto dir = testing::temp_dir("nifti");
  Geometry g;
  g.shape = {5, 4, 3};
  g.spacing = {1.5, 2.0, 2.5};
  g.origin = {-10.0, 4.0, 7.5};
  std::vector<float> v(g.shape.voxels());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(i) * 0.25f - 3.0f;
  const VolumeGrid suv(g, VolumeKind::Hu, v);
  nifti::write_volume(dir / "a.nii.gz", suv);
  const VolumeGrid back = nifti::read_volume(dir / "a.nii.gz", VolumeKind::Hu);
  CHECK(back == suv);

  const VolumeGrid mask = testing::random_mask(g.shape, 0.3, 4).with_kind(VolumeKind::BinaryMask);
  const VolumeGrid m2(g, VolumeKind::BinaryMask, std::vector<float>(mask.values().begin(), mask.values().end()));
  nifti::write_volume(dir / "m.nii.gz", m2);
  CHECK(nifti::read_volume(dir / "m.nii.gz", VolumeKind::BinaryMask) == m2);

  nifti::write_channels(dir / "c.nii.gz", {suv, suv});
  const auto ch = nifti::read_channels(dir / "c.nii.gz", VolumeKind::Hu);
  REQUIRE(ch.size() == 2);
  CHECK(ch[1] == suv);
}

TEST_CASE("load_case: aligned triplet, misalignment and invalid mask") {
  const auto dir = testing::temp_dir("load_case");
  const Geometry g64 = geom({8, 8, 8}, 2.0);
  const Geometry g63 = geom({8, 8, 7}, 2.0);
  const VolumeGrid suv = VolumeGrid::filled(g64, VolumeKind::Suv, 1.0f);
  const VolumeGrid ct = VolumeGrid::filled(g64, VolumeKind::Hu, 0.0f);
  const VolumeGrid mask = testing::ball({8, 8, 8}, {4, 4, 4}, 2, 2.0);
  nifti::write_volume(dir / "suv.nii.gz", suv);
  nifti::write_volume(dir / "ct.nii.gz", ct);
  nifti::write_volume(dir / "mask.nii.gz", mask);
  nifti::write_volume(dir / "ct63.nii.gz", VolumeGrid::filled(g63, VolumeKind::Hu, 0.0f));
  nifti::write_image(dir / "mask2.nii.gz", {g64, 1, std::vector<float>(g64.shape.voxels(), 2.0f)},
                     nifti::StorageType::UInt8);

  const CaseRecord rec = load_case("c", {dir / "suv.nii.gz", dir / "ct.nii.gz", dir / "mask.nii.gz", "p"});
  CHECK(rec.suv.shape() == rec.ct.shape());
  CHECK(rec.gt_mask->shape() == rec.suv.shape());
  CHECK(rec.lesion_count == 1);
  CHECK(rec.lesion_volume_ml == doctest::Approx(mask.count_nonzero() * 8.0 / 1000.0));
  CHECK_THROWS_AS(load_case("c", {dir / "suv.nii.gz", dir / "ct63.nii.gz", std::nullopt, ""}), GeometryError);
  CHECK_THROWS_AS(load_case("c", {dir / "suv.nii.gz", dir / "ct.nii.gz", dir / "mask2.nii.gz", ""}), ValidationError);
  CHECK_THROWS_AS(load_case("c", {dir / "nope.nii.gz", dir / "ct.nii.gz", std::nullopt, ""}), Error);
}

TEST_CASE("manifest round trip and unknown keys") {
  const auto dir = testing::temp_dir("manifest");
  Manifest m;
  m.root = dir;
  m.cases["a"] = {dir / "a_suv.nii.gz", dir / "a_ct.nii.gz", dir / "a_mask.nii.gz", "pa"};
  m.cases["b"] = {dir / "b_suv.nii.gz", dir / "b_ct.nii.gz", std::nullopt, "pb"};
  write_manifest(dir / "manifest.json", m);
  const Manifest back = read_manifest(dir / "manifest.json");
  REQUIRE(back.cases.size() == 2);
  CHECK(back.cases.at("a").suv == m.cases.at("a").suv);
  CHECK(back.cases.at("a").mask.has_value());
  CHECK_FALSE(back.cases.at("b").mask.has_value());
  CHECK(back.cases.at("b").patient_id == "pb");
  std::ofstream(dir / "bad.json") << R"({"a": {"suv": "x", "ct": "y", "colour": "red"}})";
  CHECK_THROWS_AS(read_manifest(dir / "bad.json"), ValidationError);
}

TEST_CASE("resample: identity, constants, mask kinds") {
  Geometry g = geom({6, 5, 4}, 2.0);
  std::vector<float> v(g.shape.voxels());
  std::mt19937 rng(3);
  for (auto& x : v) x = std::uniform_real_distribution<float>(0, 10)(rng);
  const VolumeGrid grid(g, VolumeKind::Suv, v);
  const VolumeGrid same = resample(grid, {2, 2, 2}, Interpolation::Linear);
  CHECK(same == grid);

  const VolumeGrid c = VolumeGrid::filled(g, VolumeKind::Hu, -42.5f);
  for (Vec3 s : {Vec3{1, 1, 1}, Vec3{3, 3, 3}, Vec3{0.7, 5.0, 2.2}}) {
    const VolumeGrid r = resample(c, s, Interpolation::Linear);
    CHECK(r.spacing() == s);
    for (float x : r.values()) CHECK(x == doctest::Approx(-42.5f));
    for (int a = 0; a < 3; ++a) {
      // Physical extent preserved within one output voxel.
      CHECK(std::abs(r.shape()[a] * s[a] - g.shape[a] * g.spacing[a]) <= s[a] / 2 + 1e-9);
    }
  }
  const VolumeGrid mask = testing::ball({8, 8, 8}, {4, 4, 4}, 3);
  CHECK_THROWS_AS(resample(mask, {2, 2, 2}, Interpolation::Linear), ValidationError);
  const VolumeGrid m2 = resample(mask, {0.5, 3.0, 1.7}, Interpolation::Nearest);
  CHECK(m2.kind() == VolumeKind::BinaryMask);
  for (float x : m2.values()) CHECK((x == 0.0f || x == 1.0f));
}

TEST_CASE("resample: 2 mm sphere of radius 12 mm to 6 mm keeps the analytic volume") {
  const double r = 12.0;
  const VolumeGrid m = testing::ball({40, 40, 40}, {19.5, 19.5, 19.5}, r / 2.0, 2.0);
  const VolumeGrid d = resample(m, {6, 6, 6}, Interpolation::Nearest);
  const double analytic = 4.0 / 3.0 * std::numbers::pi * r * r * r / 1000.0;
  const double got = d.count_nonzero() * d.voxel_volume_ml();
  CHECK(std::abs(got - analytic) / analytic < 0.20);
}

TEST_CASE("resample: NEAREST never invents labels") {
  Geometry g = geom({9, 7, 5}, 1.3);
  std::vector<float> v(g.shape.voxels());
  std::mt19937 rng(9);
  for (auto& x : v) x = static_cast<float>(std::uniform_int_distribution<int>(0, 6)(rng) * 3);
  const VolumeGrid labels(g, VolumeKind::LabelMap, v);
  const std::set<float> in(v.begin(), v.end());
  for (Vec3 s : {Vec3{0.5, 0.5, 0.5}, Vec3{2.9, 1.1, 4.0}}) {
    const VolumeGrid r = resample(labels, s, Interpolation::Nearest);
    for (float x : r.values()) CHECK(in.count(x) == 1);
  }
}

TEST_CASE("resample round trip on a smooth phantom changes mean |SUV| by < 5% of the range") {
  PhantomSpec spec;
  spec.shape = {48, 36, 36};
  spec.spacing = {2, 2, 2};
  spec.suv_noise = 0;
  spec.ct_noise_hu = 0;
  spec.rng_seed = 5;
  const CaseRecord rec = generate_phantom(spec);
  const VolumeGrid down = resample(rec.suv, {6, 6, 6}, Interpolation::Linear);
  const VolumeGrid back = resample_onto(down, rec.suv.geometry(), Interpolation::Linear);
  double mean_in = 0, mean_back = 0, lo = 1e30, hi = -1e30;
  for (std::size_t i = 0; i < back.size(); ++i) {
    mean_in += std::abs(rec.suv[i]);
    mean_back += std::abs(back[i]);
    lo = std::min<double>(lo, rec.suv[i]);
    hi = std::max<double>(hi, rec.suv[i]);
  }
  mean_in /= back.size();
  mean_back /= back.size();
  CHECK(std::abs(mean_in - mean_back) < 0.05 * (hi - lo));
}

TEST_CASE("phantom: negative control, determinism, analytic lesion volume, stats") {
  PhantomSpec spec;
  spec.shape = {48, 40, 40};
  spec.n_lesions = 0;
  spec.rng_seed = 11;
  const CaseRecord neg = generate_phantom(spec);
  CHECK(neg.gt_mask->count_nonzero() == 0);
  CHECK(neg.lesion_count == 0);
  float hottest = 0;
  for (float v : neg.suv.values()) hottest = std::max(hottest, v);
  CHECK(hottest >= 8.0f * 0.7f);

  spec.n_lesions = 3;
  spec.rng_seed = 7;
  const CaseRecord a = generate_phantom(spec);
  const CaseRecord b = generate_phantom(spec);
  CHECK(a.suv == b.suv);
  CHECK(a.ct == b.ct);
  CHECK(*a.gt_mask == *b.gt_mask);
  CHECK(a.lesion_count == 3);

  int n;
  testing::bfs_labels(*a.gt_mask, &n);
  CHECK(n == a.lesion_count);

  // Lesion SUV inside the configured range; CT near the design values.
  for (std::size_t i = 0; i < a.suv.size(); ++i) {
    if ((*a.gt_mask)[i] != 0.0f) {
      CHECK(a.suv[i] >= spec.lesion_suv.lo);
      CHECK(a.suv[i] <= spec.lesion_suv.hi);
    }
  }
  const Shape3& s = a.ct.shape();
  CHECK(a.ct.at(s.nx / 2, s.ny / 2, s.nz / 2) == doctest::Approx(40.0).epsilon(2.0));
  CHECK(a.ct.at(0, 0, 0) == doctest::Approx(-1000.0));

  spec.n_lesions = 1;
  spec.lesion_radius_mm = {10.0, 10.0};
  spec.spacing = {2, 2, 2};
  spec.shape = {64, 56, 56};
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    spec.rng_seed = seed;
    const CaseRecord one = generate_phantom(spec);
    CHECK(std::abs(one.lesion_volume_ml - 4.19) / 4.19 < 0.15);
  }
}

TEST_CASE("phantom: lung region and lesion count invariant across seeds") {
  PhantomSpec spec;
  spec.shape = {48, 36, 36};
  spec.spacing = {4, 4, 4};
  spec.n_lesions = 4;
  spec.lesion_radius_mm = {4.0, 10.0};
  int lung = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    spec.rng_seed = seed;
    const CaseRecord r = generate_phantom(spec);
    int n;
    testing::bfs_labels(*r.gt_mask, &n);
    CHECK(n == r.lesion_count);
    CHECK(r.lesion_count == 4);
    for (float v : r.ct.values()) lung += std::abs(v + 800.0f) < 60.0f;
  }
  CHECK(lung > 0);
}

TEST_CASE("phantom: impossible placement fails, invalid specs rejected") {
  PhantomSpec spec;
  spec.shape = {16, 16, 16};
  spec.spacing = {2, 2, 2};
  spec.n_lesions = 40;
  spec.lesion_radius_mm = {6, 8};
  CHECK_THROWS_AS(generate_phantom(spec), ValidationError);
  PhantomSpec bad;
  bad.lesion_radius_mm = {1.0, 3.0};
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = PhantomSpec{};
  bad.lesion_suv = {1.0, 12.0};
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = PhantomSpec{};
  bad.lesion_radius_mm = {9.0, 8.0};
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}
