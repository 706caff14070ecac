#include <benchmark/benchmark.h>

#include "mtl/encoders.hpp"
#include "mtl/metrics.hpp"
#include "mtl/model.hpp"
#include "mtl/postprocess.hpp"

namespace {

using namespace mtl;

Tensor random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  std::vector<double> values(rows * cols);
  for (double& v : values) v = rng.uniform(-1, 1);
  return Tensor::from_values({rows, cols}, std::move(values));
}

void BM_Matmul(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  Tensor a = random_matrix(n, n, rng);
  Tensor b = random_matrix(n, n, rng);
  for (auto _ : state) {
    Tensor c = matmul(a, b);
    benchmark::DoNotOptimize(c.values().data());
  }
  state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(128);

void BM_EncoderSegmentForward(benchmark::State& state) {
  const EncoderKind kind = static_cast<EncoderKind>(state.range(0));
  EncoderConfig config;
  config.kind = kind;
  config.input_dim = 64;
  config.hidden_dim = 64;
  config.layers = kind == EncoderKind::TRM ? 2 : 2;
  config.heads = 4;
  config.ffn_dim = 64;
  config.dropout = 0.0;
  ParamStore params;
  Rng init(3);
  TemporalEncoder encoder(config, params, "enc", init);
  Rng data_rng(4);
  Tensor features = random_matrix(64, 64, data_rng);
  Rng fwd(0);
  for (auto _ : state) {
    NoGradGuard guard;
    HiddenCarry carry = encoder.make_carry();
    Tensor out = encoder.forward(features, carry, false, fwd);
    benchmark::DoNotOptimize(out.values().data());
  }
  state.SetItemsProcessed(state.iterations() * 64);  // frames per pass
}
BENCHMARK(BM_EncoderSegmentForward)
    ->Arg(static_cast<int>(EncoderKind::GRU))
    ->Arg(static_cast<int>(EncoderKind::LSTM))
    ->Arg(static_cast<int>(EncoderKind::TRM));

void BM_TrainStep(benchmark::State& state) {
  ModelSpec spec;
  spec.framework = Framework::SBE;
  spec.encoder.kind = EncoderKind::GRU;
  spec.encoder.input_dim = 32;
  spec.encoder.hidden_dim = 32;
  spec.encoder.layers = 2;
  spec.encoder.dropout = 0.0;
  spec.bottom_layers = 1;
  spec.tasks.tasks = {Task::V, Task::EXPR};
  spec.head_hidden = {32, 16};
  Model model(spec, 5);
  Rng data_rng(6);
  Tensor features = random_matrix(32, 32, data_rng);
  Rng fwd(0);
  for (auto _ : state) {
    ModelCarry carry = model.make_carry();
    TaskOutputs out = model.forward(features, carry, true, fwd);
    Tensor loss = sum(mul(out.raw.at(Task::V), out.raw.at(Task::V)));
    backward(loss);
    model.params().zero_grad();
    benchmark::DoNotOptimize(loss.item());
  }
}
BENCHMARK(BM_TrainStep);

void BM_Ccc(benchmark::State& state) {
  const std::size_t n = 100000;
  Rng rng(7);
  std::vector<double> a(n), b(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = rng.uniform(-1, 1);
    b[i] = rng.uniform(-1, 1);
  }
  for (auto _ : state) benchmark::DoNotOptimize(ccc(a, b));
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_Ccc);

void BM_Smooth(benchmark::State& state) {
  const std::size_t n = 100000;
  Rng rng(8);
  std::vector<double> series(n);
  for (double& v : series) v = rng.uniform(-1, 1);
  for (auto _ : state) {
    std::vector<double> out = smooth(series, 11);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_Smooth);

}  // namespace

BENCHMARK_MAIN();
