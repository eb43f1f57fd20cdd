// Hot-path microbenchmarks: GEMM, convolution, attention, resampling.
#include <benchmark/benchmark.h>

#include "ipt/degrade.hpp"
#include "ipt/model.hpp"
#include "ipt/nn.hpp"
#include "ipt/ops.hpp"
#include "ipt/rng.hpp"

namespace {

using namespace ipt;

void BM_Matmul(benchmark::State& state) {
  const std::int64_t n = state.range(0);
  Rng rng(1);
  Tensor a = randn({n, n}, rng), b = randn({n, n}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(matmul(a, b));
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(128)->Arg(512);

void BM_Conv2d(benchmark::State& state) {
  const std::int64_t c = state.range(0);
  Rng rng(2);
  Tensor x = randn({1, c, 48, 48}, rng);
  Tensor w = randn({c, c, 3, 3}, rng);
  Tensor bias = randn({c}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(conv2d(x, w, bias, 1, 1));
  }
}
BENCHMARK(BM_Conv2d)->Arg(8)->Arg(32);

void BM_Attention(benchmark::State& state) {
  const std::int64_t n = state.range(0), d = 128;
  Rng rng(3);
  Tensor x = randn({n, d}, rng);
  MhaParams w{randn({d, d}, rng), randn({d, d}, rng), randn({d, d}, rng), randn({d, d}, rng)};
  for (auto _ : state) {
    benchmark::DoNotOptimize(multi_head_attention(x, x, x, w, 4));
  }
}
BENCHMARK(BM_Attention)->Arg(144)->Arg(576);

void BM_Bicubic(benchmark::State& state) {
  ImageBuffer img(256, 256);
  Rng rng(4);
  for (double& p : img.pixels) p = rng.next_uniform();
  for (auto _ : state) {
    benchmark::DoNotOptimize(bicubic_resize(img, 1, 2));
  }
}
BENCHMARK(BM_Bicubic);

void BM_ForwardBackwardStep(benchmark::State& state) {
  // One training step of the tiny model, the unit the convergence oracle pays for.
  ModelConfig cfg = desk_config({TaskSpec::from_id("noise30")});
  IptModel model = IptModel::init(cfg, 7);
  Rng rng(5);
  Tensor x = randn({1, 3, 48, 48}, rng, 0.1, 0.5);
  Tensor y = randn({1, 3, 48, 48}, rng, 0.1, 0.5);
  for (auto _ : state) {
    Tape tape;
    model.for_each_param([&](const std::string&, Tensor& t) { tape.watch(t); });
    Tensor out = model.forward(x, "noise30");
    Tensor loss = mean_all(abs_t(sub(out, y)));
    tape.backward(loss);
    benchmark::DoNotOptimize(loss.item());
  }
}
BENCHMARK(BM_ForwardBackwardStep);

}  // namespace

BENCHMARK_MAIN();
