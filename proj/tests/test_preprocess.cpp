#include <cmath>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "petseg/error.hpp"
#include "petseg/preprocess.hpp"

using namespace petseg;
using testing::geom;

namespace {

float window1(float v, double lo, double hi) {
  return window_normalize(VolumeGrid::filled(geom({1, 1, 1}), VolumeKind::Hu, v), lo, hi)[0];
}

}  // namespace

TEST_CASE("window_normalize examples") {
  CHECK(window1(15.0f, 0, 30) == doctest::Approx(0.5));
  CHECK(window1(-150.0f, -150, 300) == 0.0f);
  CHECK(window1(300.0f, -150, 300) == 1.0f);
  CHECK(window1(1.0f, 2, 10) == 0.0f);
  CHECK(window1(12.0f, 2, 10) == 1.0f);
  CHECK_THROWS_AS(window1(1.0f, 5, 5), ValidationError);
  CHECK_THROWS_AS(window1(1.0f, 6, 5), ValidationError);
}

TEST_CASE("window_normalize is monotone and idempotent on (0,1)") {
  std::mt19937 rng(1);
  std::uniform_real_distribution<float> u(-2000, 2000);
  std::vector<float> v(500);
  for (auto& x : v) x = u(rng);
  std::sort(v.begin(), v.end());
  const VolumeGrid g(geom({500, 1, 1}), VolumeKind::Hu, v);
  const VolumeGrid w = window_normalize(g, -1000, -200);
  for (std::size_t i = 1; i < w.size(); ++i) CHECK(w[i] >= w[i - 1]);
  const VolumeGrid again = window_normalize(w, 0, 1);
  CHECK(again == w);
}

TEST_CASE("build_channel_stack: hand-evaluated channels and order") {
  const Geometry g = geom({3, 2, 2});
  const VolumeGrid suv = VolumeGrid::filled(g, VolumeKind::Suv, 5.0f);
  const VolumeGrid ct = VolumeGrid::filled(g, VolumeKind::Hu, 0.0f);
  const ChannelStack s = build_channel_stack(suv, ct);
  REQUIRE(s.size() == 5);
  CHECK(s.is_standard());
  const double expect[5] = {5.0 / 30.0, 150.0 / 450.0, 100.0 / 200.0, 1.0, 3.0 / 8.0};
  for (int c = 0; c < 5; ++c) {
    for (float v : s.channel(c).values()) CHECK(v == doctest::Approx(expect[c]).epsilon(1e-6));
  }
  CHECK(to_string(s.names()[0]) == "SUV");
  CHECK(to_string(s.names()[1]) == "CT");
  CHECK(to_string(s.names()[2]) == "CT_Soft");
  CHECK(to_string(s.names()[3]) == "CT_Lung");
  CHECK(to_string(s.names()[4]) == "SUV_hot");

  const ChannelStack lung = build_channel_stack(suv, VolumeGrid::filled(g, VolumeKind::Hu, -1000.0f));
  for (float v : lung.channel(ChannelName::CtLung).values()) CHECK(v == 0.0f);

  Geometry other = g;
  other.origin[2] = 1.0;
  CHECK_THROWS_AS(build_channel_stack(suv, VolumeGrid::filled(other, VolumeKind::Hu, 0.0f)), GeometryError);
}

TEST_CASE("build_channel_stack stays in [0,1] for arbitrary finite inputs") {
  std::mt19937 rng(2);
  std::uniform_real_distribution<float> u(-1e6f, 1e6f);
  const Geometry g = geom({10, 10, 10});
  std::vector<float> a(g.shape.voxels()), b(g.shape.voxels());
  for (auto& x : a) x = u(rng);
  for (auto& x : b) x = u(rng);
  const ChannelStack s = build_channel_stack(VolumeGrid(g, VolumeKind::Suv, a), VolumeGrid(g, VolumeKind::Hu, b));
  for (const auto& c : s.channels())
    for (float v : c.values()) CHECK((v >= 0.0f && v <= 1.0f));
}

TEST_CASE("with_coarse_mask appends the sixth channel; crop pads with zeros") {
  const Geometry g = geom({4, 4, 4});
  const ChannelStack s = build_channel_stack(VolumeGrid::filled(g, VolumeKind::Suv, 3.0f),
                                             VolumeGrid::filled(g, VolumeKind::Hu, 10.0f));
  const ChannelStack r = with_coarse_mask(s, VolumeGrid::filled(g, VolumeKind::Probability, 0.25f));
  CHECK(r.size() == 6);
  CHECK(r.is_refiner());
  CHECK(r.names()[5] == ChannelName::CoarseMask);
  CHECK_THROWS_AS(with_coarse_mask(r, VolumeGrid::filled(g, VolumeKind::Probability, 0.25f)), ValidationError);

  const Tensor<float> t = to_tensor(r);
  CHECK(t.channels() == 6);
  CHECK(t.at(0, 5, 1, 2, 3) == 0.25f);

  const ChannelStack c = crop(s, {-1, 2, 0}, {3, 3, 3});
  CHECK(c.shape() == Shape3{3, 3, 3});
  CHECK(c.channel(0).at(0, 0, 0) == 0.0f);
  CHECK(c.channel(0).at(1, 0, 0) == doctest::Approx(0.1));
  CHECK(c.channel(0).at(1, 2, 0) == 0.0f);
  CHECK(c.geometry().origin[0] == doctest::Approx(-1.0));
}
