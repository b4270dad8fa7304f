// Parallel kernels against the serial reference on a synthetic training set.
#include <memory>
#include <numeric>

#include <benchmark/benchmark.h>
#include <omp.h>

#include "debias/ensemble.hpp"
#include "debias/kernels.hpp"
#include "debias/rng.hpp"
#include "debias/synth.hpp"

namespace {

using namespace debias;

struct Setup {
  Dataset data;
  Model model;
  EncodedDataset enc;
  std::vector<std::size_t> batch;
  EnsembleContext ctx;
};

const Setup& setup() {
  static const Setup s = [] {
    SynthConfig c;
    c.num_classes = 3;
    c.train_size = 4096;
    c.biases = {{SynthBiasKind::kLexical, 0.9}};
    Dataset data = generate(c).train;
    ModelSpec spec{"main", Arch::kMlp, InputMode::kPair, {128, 128}, 64, 3, 1};
    Model model = make_model(spec, std::make_shared<const Vocab>(build_vocab(data)));
    Rng rng(1, "bench-params");
    for (auto& p : model.parameters()) p += rng.uniform(-0.1, 0.1);
    EncodedDataset enc = kernels::encode_dataset(model, data);
    std::vector<std::size_t> batch(data.size());
    std::iota(batch.begin(), batch.end(), 0);
    EnsembleContext ctx;
    BiasSource src;
    for (std::size_t i = 0; i < data.size(); ++i) src.probs.push_back({0.6, 0.3, 0.1});
    ctx.sources.push_back(std::move(src));
    return Setup{std::move(data), std::move(model), std::move(enc), std::move(batch),
                 std::move(ctx)};
  }();
  return s;
}

void threads(const benchmark::State& state) { omp_set_num_threads(static_cast<int>(state.range(0))); }

void BM_GradientKernel(benchmark::State& state) {
  const Setup& s = setup();
  threads(state);
  const PoeLoss loss(s.ctx);
  kernels::BatchGradient bg(s.model);
  std::vector<double> grad(s.model.parameter_count());
  for (auto _ : state) benchmark::DoNotOptimize(bg(s.model, s.enc, s.batch, loss, grad));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(s.batch.size()));
}

void BM_GradientReference(benchmark::State& state) {
  const Setup& s = setup();
  const PoeLoss loss(s.ctx);
  std::vector<double> grad(s.model.parameter_count());
  for (auto _ : state)
    benchmark::DoNotOptimize(reference::batch_loss_and_gradient(s.model, s.enc, s.batch, loss, grad));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(s.batch.size()));
}

void BM_PredictKernel(benchmark::State& state) {
  const Setup& s = setup();
  threads(state);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::predict_proba_all(s.model, s.enc));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(s.enc.size()));
}

void BM_PredictReference(benchmark::State& state) {
  const Setup& s = setup();
  for (auto _ : state) benchmark::DoNotOptimize(reference::predict_proba_all(s.model, s.enc));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(s.enc.size()));
}

void BM_EncodeKernel(benchmark::State& state) {
  const Setup& s = setup();
  threads(state);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::encode_dataset(s.model, s.data));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(s.data.size()));
}

void BM_EncodeReference(benchmark::State& state) {
  const Setup& s = setup();
  for (auto _ : state) benchmark::DoNotOptimize(reference::encode_dataset(s.model, s.data));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(s.data.size()));
}

void thread_counts(benchmark::internal::Benchmark* b) {
  for (int t = 1; t <= omp_get_num_procs(); t *= 2) b->Arg(t);
}

BENCHMARK(BM_GradientKernel)->Apply(thread_counts)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GradientReference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_PredictKernel)->Apply(thread_counts)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_PredictReference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EncodeKernel)->Apply(thread_counts)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EncodeReference)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
