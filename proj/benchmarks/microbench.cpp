#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "cmudrn/conv_kernels.hpp"
#include "cmudrn/data.hpp"
#include "cmudrn/nets.hpp"
#include "cmudrn/train.hpp"

using namespace cmudrn;

namespace {

template <class Scalar>
std::vector<Scalar> noise(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  std::vector<Scalar> v(n);
  for (auto& x : v) x = static_cast<Scalar>(d(rng));
  return v;
}

// 16 -> 16 channel 3x3 conv on a side x side image; reports MAC/s.
template <class Scalar>
void BM_Conv16(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const Shape in{1, 16, side, side};
  const auto spec = ConvSpec::same(16, 16);
  const auto x = noise<Scalar>(in.numel(), 1);
  const auto w = noise<Scalar>(spec.weight_shape().numel(), 2);
  const auto b = noise<Scalar>(16, 3);
  std::vector<Scalar> out(spec.output_shape(in).numel());
  for (auto _ : state) {
    kernels::conv2d_forward<Scalar>(x, in, w, b, spec, out);
    benchmark::DoNotOptimize(out.data());
  }
  const double macs = static_cast<double>(side * side * 16 * 16 * 9);
  state.counters["MAC/s"] = benchmark::Counter(macs, benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Conv16<float>)->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Conv16<double>)->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);

void BM_ConvBackward16(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const Shape in{1, 16, side, side};
  const auto spec = ConvSpec::same(16, 16);
  const auto x = noise<double>(in.numel(), 1);
  const auto w = noise<double>(spec.weight_shape().numel(), 2);
  const auto g = noise<double>(spec.output_shape(in).numel(), 3);
  std::vector<double> gx(x.size()), gw(w.size()), gb(16);
  for (auto _ : state) {
    kernels::conv2d_backward(x, in, w, spec, g, gx, gw, gb);
    benchmark::DoNotOptimize(gx.data());
  }
}
BENCHMARK(BM_ConvBackward16)->Arg(64)->Unit(benchmark::kMicrosecond);

// Full graph-free forward, args: side, T.
template <class Scalar>
void BM_InferenceForward(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const auto params = nets::init_params(1, 16, static_cast<int>(state.range(1)));
  const nets::InferenceModel<Scalar> model(params);
  const Shape shape{1, 3, side, side};
  const auto x = noise<Scalar>(shape.numel(), 4);
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(x, shape));
}
BENCHMARK(BM_InferenceForward<float>)->Args({128, 1})->Args({128, 4})->Args({128, 7})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_InferenceForward<double>)->Args({128, 3})->Unit(benchmark::kMillisecond);

// One optimizer step (forward, backward, Adam) at batch 1.
void BM_TrainStep(benchmark::State& state) {
  train::TrainConfig cfg;
  cfg.batch_size = 1;
  train::Trainer trainer(cfg);
  const auto side = static_cast<std::size_t>(state.range(0));
  const auto tuples = data::make_tuples(data::gen_clean(1, 1, side), 1);
  for (auto _ : state) benchmark::DoNotOptimize(trainer.train_step(tuples[0].rain));
}
BENCHMARK(BM_TrainStep)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
