#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "petseg/kernels.hpp"
#include "petseg/kernels_reference.hpp"

using namespace petseg;
using namespace petseg::kernels;

namespace {

std::vector<float> random_vec(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1, 1);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// args: channels, edge, kernel
ConvShape conv_shape(const benchmark::State& st) {
  const int c = static_cast<int>(st.range(0)), e = static_cast<int>(st.range(1)), k = static_cast<int>(st.range(2));
  return make_conv_shape(c, c, k, 1, Shape3{e, e, e});
}

void set_conv_counters(benchmark::State& st, const ConvShape& s) {
  const double flops = 2.0 * s.out_channels * s.patch_size() * s.out.voxels();
  st.counters["GFLOP/s"] = benchmark::Counter(flops, benchmark::Counter::kIsIterationInvariantRate,
                                              benchmark::Counter::kIs1000);
}

void BM_ConvForwardReference(benchmark::State& st) {
  const ConvShape s = conv_shape(st);
  const auto in = random_vec(s.in_channels * s.in.voxels(), 1);
  const auto w = random_vec(s.out_channels * s.patch_size(), 2);
  const auto b = random_vec(s.out_channels, 3);
  std::vector<float> out(s.out_channels * s.out.voxels());
  for (auto _ : st) {
    reference::conv3d_forward(s, in.data(), w.data(), b.data(), out.data());
    benchmark::DoNotOptimize(out.data());
  }
  set_conv_counters(st, s);
}

// args: channels, edge, kernel, threads
void BM_ConvForwardParallel(benchmark::State& st) {
  set_num_threads(static_cast<int>(st.range(3)));
  const ConvShape s = conv_shape(st);
  const auto in = random_vec(s.in_channels * s.in.voxels(), 1);
  const auto w = random_vec(s.out_channels * s.patch_size(), 2);
  const auto b = random_vec(s.out_channels, 3);
  std::vector<float> out(s.out_channels * s.out.voxels());
  for (auto _ : st) {
    conv3d_forward(s, in.data(), w.data(), b.data(), out.data());
    benchmark::DoNotOptimize(out.data());
  }
  set_conv_counters(st, s);
}

void BM_ConvBackwardDataReference(benchmark::State& st) {
  const ConvShape s = conv_shape(st);
  const auto g = random_vec(s.out_channels * s.out.voxels(), 1);
  const auto w = random_vec(s.out_channels * s.patch_size(), 2);
  std::vector<float> gin(s.in_channels * s.in.voxels());
  for (auto _ : st) {
    reference::conv3d_backward_data(s, w.data(), g.data(), gin.data());
    benchmark::DoNotOptimize(gin.data());
  }
  set_conv_counters(st, s);
}

void BM_ConvBackwardDataParallel(benchmark::State& st) {
  set_num_threads(static_cast<int>(st.range(3)));
  const ConvShape s = conv_shape(st);
  const auto g = random_vec(s.out_channels * s.out.voxels(), 1);
  const auto w = random_vec(s.out_channels * s.patch_size(), 2);
  std::vector<float> gin(s.in_channels * s.in.voxels());
  for (auto _ : st) {
    conv3d_backward_data(s, w.data(), g.data(), gin.data());
    benchmark::DoNotOptimize(gin.data());
  }
  set_conv_counters(st, s);
}

// args: in channels, input edge
UpConvShape up_shape(const benchmark::State& st) {
  UpConvShape s;
  s.in_channels = static_cast<int>(st.range(0));
  s.out_channels = s.in_channels / 2;
  const int e = static_cast<int>(st.range(1));
  s.in = Shape3{e, e, e};
  return s;
}

void BM_UpConvForwardReference(benchmark::State& st) {
  const UpConvShape s = up_shape(st);
  const auto in = random_vec(s.in_channels * s.in.voxels(), 1);
  const auto w = random_vec(s.in_channels * s.out_channels * 8, 2);
  std::vector<float> out(s.out_channels * s.out().voxels());
  for (auto _ : st) {
    reference::upconv3d_forward(s, in.data(), w.data(), static_cast<const float*>(nullptr), out.data());
    benchmark::DoNotOptimize(out.data());
  }
}

void BM_UpConvForwardParallel(benchmark::State& st) {
  set_num_threads(static_cast<int>(st.range(2)));
  const UpConvShape s = up_shape(st);
  const auto in = random_vec(s.in_channels * s.in.voxels(), 1);
  const auto w = random_vec(s.in_channels * s.out_channels * 8, 2);
  std::vector<float> out(s.out_channels * s.out().voxels());
  for (auto _ : st) {
    upconv3d_forward(s, in.data(), w.data(), static_cast<const float*>(nullptr), out.data());
    benchmark::DoNotOptimize(out.data());
  }
}

// args: channels, edge
void BM_InstanceNormReference(benchmark::State& st) {
  const int c = static_cast<int>(st.range(0));
  const std::size_t v = static_cast<std::size_t>(st.range(1) * st.range(1) * st.range(1));
  const auto in = random_vec(c * v, 1);
  std::vector<float> out(c * v);
  for (auto _ : st) {
    reference::instance_norm_forward(c, v, in.data(), static_cast<const float*>(nullptr),
                                     static_cast<const float*>(nullptr), 1e-5, out.data());
    benchmark::DoNotOptimize(out.data());
  }
}

void BM_InstanceNormParallel(benchmark::State& st) {
  set_num_threads(static_cast<int>(st.range(2)));
  const int c = static_cast<int>(st.range(0));
  const std::size_t v = static_cast<std::size_t>(st.range(1) * st.range(1) * st.range(1));
  const auto in = random_vec(c * v, 1);
  std::vector<float> out(c * v), xhat(c * v), inv(c);
  for (auto _ : st) {
    instance_norm_forward(c, v, in.data(), static_cast<const float*>(nullptr), static_cast<const float*>(nullptr),
                          1e-5, out.data(), xhat.data(), inv.data());
    benchmark::DoNotOptimize(out.data());
  }
}

const int kThreads = max_threads();

}  // namespace

BENCHMARK(BM_ConvForwardReference)->Args({8, 16, 3})->Args({16, 24, 3})->Args({8, 12, 9})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvForwardParallel)
    ->Args({8, 16, 3, 1})->Args({16, 24, 3, 1})->Args({8, 12, 9, 1})
    ->Args({16, 24, 3, kThreads})->Args({32, 32, 3, kThreads})
    ->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackwardDataReference)->Args({8, 16, 3})->Args({16, 24, 3})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackwardDataParallel)
    ->Args({8, 16, 3, 1})->Args({16, 24, 3, 1})->Args({16, 24, 3, kThreads})
    ->Unit(benchmark::kMillisecond);
BENCHMARK(BM_UpConvForwardReference)->Args({32, 16})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_UpConvForwardParallel)->Args({32, 16, 1})->Args({32, 16, kThreads})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_InstanceNormReference)->Args({16, 32})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_InstanceNormParallel)->Args({16, 32, 1})->Args({16, 32, kThreads})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
