#include <cmath>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "petseg/checkpoint.hpp"
#include "petseg/ensemble.hpp"
#include "petseg/error.hpp"
#include "petseg/nets.hpp"

using namespace petseg;
using namespace petseg::nn;
using testing::geom;

namespace {

CoarseUNetConfig tiny_coarse(Shape3 patch = {16, 16, 16}) {
  CoarseUNetConfig c;
  c.patch_shape = patch;
  c.encoder_channels = {2, 3, 4, 5};
  c.middle_kernel = 3;
  return c;
}

RefinerConfig tiny_refiner(Shape3 patch = {8, 8, 8}) {
  RefinerConfig c;
  c.patch_shape = patch;
  c.width = 3;
  c.stem_kernel = 3;
  return c;
}

template <typename T>
Tensor<T> random_input(int n, int c, Shape3 s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  Tensor<T> t(n, c, s);
  for (auto& v : t.values()) v = static_cast<T>(u(rng));
  return t;
}

bool all_finite(const Tensor<float>& t) {
  for (float v : t.values())
    if (!std::isfinite(v)) return false;
  return true;
}

// Linear functional sum(out * r) over every output scale.
double probe(const std::vector<Tensor<double>>& out, const std::vector<Tensor<double>>& r) {
  double s = 0;
  for (std::size_t k = 0; k < out.size(); ++k)
    for (std::size_t i = 0; i < out[k].size(); ++i) s += out[k][i] * r[k][i];
  return s;
}

double rel(double a, double b) { return std::abs(a - b) / std::max(1e-4, std::max(std::abs(a), std::abs(b))); }

}  // namespace

TEST_CASE("coarse UNet output shapes and finiteness") {
  CoarseUNet<float> net(tiny_coarse({32, 16, 24}));
  net.init(1);
  const auto out = net.forward(random_input<float>(2, 5, {32, 16, 24}, 2), false);
  REQUIRE(out.size() == 4);
  CHECK(out[0].channels() == 2);
  CHECK(out[0].batch() == 2);
  CHECK(out[0].spatial() == Shape3{32, 16, 24});
  CHECK(out[1].spatial() == Shape3{16, 8, 12});
  CHECK(out[2].spatial() == Shape3{8, 4, 6});
  CHECK(out[3].spatial() == Shape3{4, 2, 3});
  for (const auto& o : out) CHECK(all_finite(o));
  const auto zero = net.forward(Tensor<float>(1, 5, {32, 16, 24}), false);
  for (const auto& o : zero) CHECK(all_finite(o));

  CHECK_THROWS_AS(net.forward(Tensor<float>(1, 5, {16, 16, 24}), false), GeometryError);
  CHECK_THROWS_AS(net.forward(Tensor<float>(1, 4, {32, 16, 24}), false), GeometryError);
  CoarseUNetConfig bad = tiny_coarse({30, 16, 24});
  CHECK_THROWS_AS(CoarseUNet<float>{bad}, ValidationError);
}

TEST_CASE("refiner output shape, finiteness and channel-6 sensitivity") {
  Refiner<float> net(tiny_refiner({10, 8, 6}));
  net.init(3);
  Tensor<float> x = random_input<float>(1, 6, {10, 8, 6}, 4);
  const Tensor<float> y = net.forward(x, false);
  CHECK(y.channels() == 2);
  CHECK(y.spatial() == Shape3{10, 8, 6});
  CHECK(all_finite(y));
  for (std::size_t i = 0; i < x.voxels(); ++i) x.channel(0, 5)[i] = 1.0f - x.channel(0, 5)[i];
  const Tensor<float> y2 = net.forward(x, false);
  double diff = 0;
  for (std::size_t i = 0; i < y.size(); ++i) diff += std::abs(y[i] - y2[i]);
  CHECK(diff > 1e-3);
  CHECK_THROWS_AS(net.forward(Tensor<float>(1, 5, {10, 8, 6}), false), GeometryError);
  RefinerConfig bad = tiny_refiner();
  bad.n_residual_blocks = 3;
  CHECK_THROWS_AS(Refiner<float>{bad}, ValidationError);
}

TEST_CASE("lesion_probability is a softmax over two channels") {
  Tensor<float> logits(1, 2, {3, 1, 1});
  logits.channel(0, 0)[0] = 0;
  logits.channel(0, 1)[0] = 0;
  logits.channel(0, 0)[1] = 0;
  logits.channel(0, 1)[1] = 2;
  logits.channel(0, 0)[2] = 50;
  logits.channel(0, 1)[2] = -50;
  const auto p = lesion_probability(logits);
  CHECK(p[0] == doctest::Approx(0.5));
  CHECK(p[1] == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))));
  CHECK(p[2] >= 0.0f);
  CHECK(p[2] < 1e-6f);
}

TEST_CASE("coarse UNet gradients match central differences (double)") {
  CoarseUNet<double> net(tiny_coarse());
  net.init(5);
  const Tensor<double> x = random_input<double>(1, 5, {16, 16, 16}, 6);
  auto out = net.forward(x, true);
  std::vector<Tensor<double>> r;
  std::mt19937_64 rng(7);
  std::normal_distribution<double> nd(0, 1);
  for (const auto& o : out) {
    Tensor<double> t(o.batch(), o.channels(), o.spatial());
    for (auto& v : t.values()) v = nd(rng);
    r.push_back(std::move(t));
  }
  auto params = net.parameters();
  for (auto* p : params) p->zero_grad();
  const Tensor<double> gx = net.backward(r);

  const double h = 1e-6;
  std::uniform_int_distribution<std::size_t> pick_p(0, params.size() - 1);
  for (int trial = 0; trial < 10; ++trial) {
    auto* p = params[pick_p(rng)];
    const std::size_t i = std::uniform_int_distribution<std::size_t>(0, p->size() - 1)(rng);
    const double v0 = p->value[i];
    p->value[i] = v0 + h;
    const double fp = probe(net.forward(x, false), r);
    p->value[i] = v0 - h;
    const double fm = probe(net.forward(x, false), r);
    p->value[i] = v0;
    CAPTURE(p->name);
    CAPTURE(p->grad[i]);
    CHECK(rel((fp - fm) / (2 * h), p->grad[i]) < 1e-3);
  }
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t i = std::uniform_int_distribution<std::size_t>(0, x.size() - 1)(rng);
    Tensor<double> xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    const double fd = (probe(net.forward(xp, false), r) - probe(net.forward(xm, false), r)) / (2 * h);
    CHECK(rel(fd, gx[i]) < 1e-3);
  }
}

TEST_CASE("refiner gradients match central differences (double)") {
  Refiner<double> net(tiny_refiner());
  net.init(8);
  const Tensor<double> x = random_input<double>(2, 6, {8, 8, 8}, 9);
  const Tensor<double> out = net.forward(x, true);
  std::mt19937_64 rng(10);
  std::normal_distribution<double> nd(0, 1);
  Tensor<double> r(out.batch(), out.channels(), out.spatial());
  for (auto& v : r.values()) v = nd(rng);
  auto params = net.parameters();
  for (auto* p : params) p->zero_grad();
  const Tensor<double> gx = net.backward(r);
  auto f = [&](const Tensor<double>& in) { return probe({net.forward(in, false)}, {r}); };
  const double h = 1e-6;
  for (auto* p : params) {
    const std::size_t i = std::uniform_int_distribution<std::size_t>(0, p->size() - 1)(rng);
    const double v0 = p->value[i];
    p->value[i] = v0 + h;
    const double fp = f(x);
    p->value[i] = v0 - h;
    const double fm = f(x);
    p->value[i] = v0;
    CAPTURE(p->name);
    CAPTURE(p->grad[i]);
    CHECK(rel((fp - fm) / (2 * h), p->grad[i]) < 1e-3);
  }
  for (int trial = 0; trial < 10; ++trial) {
    // Channel 6 (index 5) included explicitly.
    const std::size_t i = trial < 5 ? x.voxels() * 5 + trial * 37 : std::uniform_int_distribution<std::size_t>(0, x.size() - 1)(rng);
    Tensor<double> xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    CHECK(rel((f(xp) - f(xm)) / (2 * h), gx[i]) < 1e-3);
  }
  net.set_input_grad(false);
  net.forward(x, true);
  CHECK(net.backward(r).empty());
}

TEST_CASE("ensemble_combine examples and properties") {
  const Geometry g = geom({2, 2, 1});
  auto P = [&](std::vector<float> v) { return VolumeGrid(g, VolumeKind::Probability, std::move(v)); };
  const std::vector<VolumeGrid> maps{P({0.2f, 0.1f, 0.9f, 0.0f}), P({0.4f, 0.3f, 0.1f, 0.0f}),
                                     P({0.6f, 0.5f, 0.2f, 1.0f}), P({0.8f, 0.7f, 0.3f, 1.0f})};
  StackingWeights sel{{1, 0, 0, 0}, 0.0};
  CHECK(ensemble_combine(maps, sel) == maps[0]);
  const VolumeGrid avg = ensemble_combine(maps, StackingWeights::uniform(4));
  CHECK(avg[0] == doctest::Approx(0.5));
  const std::vector<VolumeGrid> same(4, maps[2]);
  const VolumeGrid c = ensemble_combine(same, StackingWeights{{0.1, 0.2, 0.3, 0.4}, 0.0});
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(maps[2][i]));
  const VolumeGrid clamped = ensemble_combine(maps, StackingWeights{{2, 2, 2, 2}, 0.5});
  for (float v : clamped.values()) CHECK((v >= 0.0f && v <= 1.0f));

  // Permuting members together with their weights changes nothing.
  const StackingWeights w{{0.1, 0.5, 0.2, 0.3}, 0.05};
  const std::vector<VolumeGrid> perm{maps[2], maps[0], maps[3], maps[1]};
  const StackingWeights wp{{0.2, 0.1, 0.3, 0.5}, 0.05};
  const VolumeGrid a = ensemble_combine(maps, w), b = ensemble_combine(perm, wp);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-6));

  CHECK_THROWS_AS(ensemble_combine(maps, StackingWeights{{1, -0.1, 0, 0}, 0}), ValidationError);
  CHECK_THROWS_AS(ensemble_combine(maps, StackingWeights{{1, 0, 0}, 0}), ValidationError);
  Geometry g2 = g;
  g2.spacing[0] = 2;
  std::vector<VolumeGrid> mixed = maps;
  mixed[3] = VolumeGrid(g2, VolumeKind::Probability, std::vector<float>(4, 0.0f));
  CHECK_THROWS_AS(ensemble_combine(mixed, sel), GeometryError);
}

namespace {

// Ten toy cases: member 0 is perfect, the others are noise.
std::vector<CalibrationCase> toy_set(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0, 1);
  std::vector<CalibrationCase> cases;
  for (int c = 0; c < 10; ++c) {
    const VolumeGrid t = testing::random_mask({8, 8, 4}, 0.2, seed * 100 + c);
    std::vector<VolumeGrid> m{t.with_kind(VolumeKind::Probability)};
    for (int k = 1; k < 4; ++k) {
      std::vector<float> v(t.size());
      for (auto& x : v) x = u(rng);
      m.emplace_back(t.geometry(), VolumeKind::Probability, std::move(v));
    }
    cases.push_back({std::move(m), t});
  }
  return cases;
}

// Non-negative least squares by exhaustive active-set enumeration: the
// independent oracle for "weight concentrates on the perfect member".
std::vector<double> nnls_oracle(const std::vector<CalibrationCase>& cases) {
  const int M = 4;
  double best = 1e300;
  std::vector<double> best_w(M, 0.0);
  for (int mask = 1; mask < (1 << M); ++mask) {
    std::vector<int> act;
    for (int k = 0; k < M; ++k)
      if (mask >> k & 1) act.push_back(k);
    const int n = static_cast<int>(act.size());
    std::vector<double> A(n * n, 0.0), b(n, 0.0);
    for (const auto& c : cases)
      for (std::size_t i = 0; i < c.target.size(); ++i) {
        for (int a = 0; a < n; ++a) {
          b[a] += c.member_probs[act[a]][i] * c.target[i];
          for (int d = 0; d < n; ++d) A[a * n + d] += c.member_probs[act[a]][i] * c.member_probs[act[d]][i];
        }
      }
    // Gaussian elimination.
    for (int p = 0; p < n; ++p) {
      for (int r = p + 1; r < n; ++r) {
        const double f = A[r * n + p] / A[p * n + p];
        for (int q = p; q < n; ++q) A[r * n + q] -= f * A[p * n + q];
        b[r] -= f * b[p];
      }
    }
    std::vector<double> x(n);
    for (int p = n - 1; p >= 0; --p) {
      double s = b[p];
      for (int q = p + 1; q < n; ++q) s -= A[p * n + q] * x[q];
      x[p] = s / A[p * n + p];
    }
    if (*std::min_element(x.begin(), x.end()) < 0) continue;
    double sse = 0;
    for (const auto& c : cases)
      for (std::size_t i = 0; i < c.target.size(); ++i) {
        double y = 0;
        for (int a = 0; a < n; ++a) y += x[a] * c.member_probs[act[a]][i];
        sse += (y - c.target[i]) * (y - c.target[i]);
      }
    if (sse < best) {
      best = sse;
      std::fill(best_w.begin(), best_w.end(), 0.0);
      for (int a = 0; a < n; ++a) best_w[act[a]] = x[a];
    }
  }
  return best_w;
}

}  // namespace

TEST_CASE("fit_stacking_weights concentrates on a planted perfect member") {
  const loss::LossWeights lw;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto cases = toy_set(seed);
    const auto oracle = nnls_oracle(cases);
    double ot = 0;
    for (double x : oracle) ot += x;
    CHECK(oracle[0] / ot >= 0.9);

    const StackingFit fit = fit_stacking_weights(cases, lw);
    for (double x : fit.weights.w) CHECK(x >= 0.0);
    CHECK(fit.weights.w[0] / fit.weights.total() >= 0.9);
    const double best_member = *std::min_element(fit.member_losses.begin(), fit.member_losses.end());
    CHECK(fit.loss <= best_member + 1e-6);
    CHECK(fit.loss == doctest::Approx(stacking_loss(cases, fit.weights, lw)));
    CHECK(fit_stacking_weights(cases, lw).weights.w == fit.weights.w);
  }
}

TEST_CASE("fit_stacking_weights on identical members matches the single-member loss") {
  const loss::LossWeights lw;
  auto cases = toy_set(4);
  for (auto& c : cases) {
    const VolumeGrid m = c.member_probs[1];
    c.member_probs.assign(4, m);
  }
  const StackingFit fit = fit_stacking_weights(cases, lw);
  CHECK(fit.loss <= fit.member_losses[0] + 1e-6);
  for (double l : fit.member_losses) CHECK(l == doctest::Approx(fit.member_losses[0]));
  CHECK_THROWS_AS(fit_stacking_weights({}, lw), ValidationError);
}

TEST_CASE("stacking weights JSON round trip") {
  const StackingWeights w{{0.5, 0.25, 0.0, 1.5}, -0.125};
  const StackingWeights back = stacking_weights_from_json(to_json(w));
  CHECK(back.w == w.w);
  CHECK(back.bias == w.bias);
  nlohmann::json j = to_json(w);
  j["extra"] = 1;
  CHECK_THROWS_AS(stacking_weights_from_json(j), ValidationError);
}

TEST_CASE("checkpoint round trip and mismatch detection") {
  const auto dir = testing::temp_dir("ckpt");
  CoarseUNet<float> a(tiny_coarse()), b(tiny_coarse());
  a.init(11);
  b.init(12);
  const nlohmann::json cfg = to_json(a.config());
  save_checkpoint(dir / "a.ckpt", {{"config", cfg}, {"kind", "coarse"}}, a.parameters());
  CHECK(read_checkpoint_meta(dir / "a.ckpt")["kind"] == "coarse");
  load_checkpoint(dir / "a.ckpt", b.parameters(), &cfg);
  const auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value == pb[i]->value);
  const Tensor<float> x = random_input<float>(1, 5, {16, 16, 16}, 1);
  CHECK(a.forward(x, false)[0].values()[17] == b.forward(x, false)[0].values()[17]);

  CoarseUNetConfig other = tiny_coarse();
  other.encoder_channels = {2, 3, 4, 6};
  CoarseUNet<float> c(other);
  CHECK_THROWS(load_checkpoint(dir / "a.ckpt", c.parameters()));
  const nlohmann::json ocfg = to_json(other);
  CHECK_THROWS(load_checkpoint(dir / "a.ckpt", b.parameters(), &ocfg));
  Refiner<float> r(tiny_refiner());
  CHECK_THROWS(load_checkpoint(dir / "a.ckpt", r.parameters()));
  CHECK_THROWS_AS(read_checkpoint_meta(dir / "missing.ckpt"), IoError);
}

TEST_CASE("network configs round-trip through JSON") {
  const CoarseUNetConfig c = tiny_coarse({32, 16, 24});
  CHECK(to_json(coarse_config_from_json(to_json(c))) == to_json(c));
  const RefinerConfig r = tiny_refiner();
  CHECK(to_json(refiner_config_from_json(to_json(r))) == to_json(r));
  CoarseUNetConfig d;
  CHECK(d.patch_shape == Shape3{128, 96, 96});
  CHECK(d.encoder_channels == std::vector<int>{64, 96, 128, 156});
  CHECK(d.middle_kernel == 9);
  RefinerConfig rd;
  CHECK(rd.patch_shape == Shape3{64, 64, 64});
  CHECK(rd.stem_kernel == 9);
  CHECK(rd.n_residual_blocks == 4);
}
