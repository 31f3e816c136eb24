#include "freehand/baseline.hpp"
#include "freehand/compounding.hpp"
#include "freehand/correlation.hpp"
#include "freehand/model.hpp"
#include "freehand/ops.hpp"
#include "freehand/scan_sim.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace freehand;
using ad::Tensor;

namespace {

Tensor uniform(const ad::Shape& shape, std::uint64_t seed, bool grad = false) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> v(ad::numel_of(shape));
  for (auto& x : v) x = u(rng);
  return Tensor::from(shape, std::move(v), grad);
}

void BM_Conv2dForward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const Tensor x = uniform({4, c, 32, 32}, 1), w = uniform({2 * c, c, 3, 3}, 2), b = uniform({2 * c}, 3);
  ad::NoGradGuard g;
  for (auto _ : state) benchmark::DoNotOptimize(ad::conv2d(x, w, b, {1, 1}));
}
BENCHMARK(BM_Conv2dForward)->Arg(8)->Arg(16)->Arg(32);

void BM_Conv2dBackward(benchmark::State& state) {
  Tensor x = uniform({4, 16, 32, 32}, 1, true), w = uniform({32, 16, 3, 3}, 2, true), b = uniform({32}, 3, true);
  for (auto _ : state) {
    x.zero_grad();
    w.zero_grad();
    b.zero_grad();
    ad::backward(ad::sum(ad::conv2d(x, w, b, {1, 1})));
  }
}
BENCHMARK(BM_Conv2dBackward);

void BM_Correlate(benchmark::State& state) {
  const auto hw = static_cast<std::size_t>(state.range(0));
  const Tensor a = uniform({8, hw, hw}, 4), b = uniform({8, hw, hw}, 5);
  ad::NoGradGuard g;
  for (auto _ : state) benchmark::DoNotOptimize(correlate(a, b, CorrConfig{9, 5, 3}));
}
BENCHMARK(BM_Correlate)->Arg(16)->Arg(32)->Arg(64);

void BM_ToyForward(benchmark::State& state) {
  const MotionNet net(ModelConfig::toy(), 1);
  const Tensor a = uniform({1, 9, 64, 64}, 6), b = uniform({1, 9, 64, 64}, 7);
  ad::NoGradGuard g;
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(a, b));
}
BENCHMARK(BM_ToyForward)->Unit(benchmark::kMillisecond);

void BM_Compound(benchmark::State& state) {
  const ScanSequence s = simulate_scan(dataset_scan_spec(3, 0, 48));
  for (auto _ : state) benchmark::DoNotOptimize(compound(s, s.truth, 0.1));
}
BENCHMARK(BM_Compound)->Unit(benchmark::kMillisecond);

void BM_BaselineStep(benchmark::State& state) {
  const ImageGeometry geom{64, 64, 0.1484, 0.1484};
  const DecorrModel m = calibrate(make_calibration_pairs(geom, {0.05, 0.1, 0.2, 0.4, 0.8}, 2, 8));
  const ScanSequence s = simulate_scan(dataset_scan_spec(3, 1, 4));
  for (auto _ : state) benchmark::DoNotOptimize(estimate_step(frame_view(s, 0), frame_view(s, 1), s.geom, m));
}
BENCHMARK(BM_BaselineStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
