#include "diffalign/canonical.hpp"
#include "diffalign/datagen.hpp"
#include "diffalign/denoiser.hpp"
#include "diffalign/sampler.hpp"

#include <benchmark/benchmark.h>

using namespace diffalign;

namespace {

DenoiserConfig bench_config(Variant v, Alphabet alphabet) {
  DenoiserConfig c;
  c.variant = v;
  c.alphabet = alphabet;
  c.layers = 2;
  c.hidden = 32;
  c.heads = 4;
  c.pe_dim = 6;
  c.max_blank_nodes = kEditMaxNewNodes;
  return c;
}

const PairedDataset& edit_data() {
  static const PairedDataset d = gen_edit_translation(64, EditOptions{}, 1);
  return d;
}

void BM_Forward(benchmark::State& state) {
  const auto v = static_cast<Variant>(state.range(0));
  const PairedDataset& d = edit_data();
  const DenoiserConfig c = bench_config(v, d.alphabet);
  const DenoiserParams p = init_params(c, 1);
  const PairedRecord& r = d.records.front();
  const Condition cond{r.y, r.mapping, c.uses_pe() ? laplacian_pe(r.y, c.pe_dim, c.pe_largest) : Eigen::MatrixXd()};
  for (auto _ : state) benchmark::DoNotOptimize(forward(p, c, r.x, cond, 50, 100));
  state.SetLabel(to_string(v));
}
BENCHMARK(BM_Forward)->DenseRange(0, 3);

void BM_LossAndGradients(benchmark::State& state) {
  const PairedDataset& d = edit_data();
  const DenoiserConfig c = bench_config(Variant::pe_skip, d.alphabet);
  const DenoiserParams p = init_params(c, 1);
  const NoiseProcess process = NoiseProcess::make(100, TransitionKind::absorbing, d.alphabet);
  Rng rng(2);
  std::vector<TrainingExample> batch;
  for (int i = 0; i < state.range(0); ++i) {
    const PairedRecord& r = d.records[static_cast<std::size_t>(i) % d.records.size()];
    const int t = 1 + static_cast<int>(rng.below(100));
    const Condition cond{r.y, r.mapping, laplacian_pe(r.y, c.pe_dim, c.pe_largest)};
    batch.push_back({r.x, cond, t, forward_sample(process, r.x, t, rng)});
  }
  for (auto _ : state) benchmark::DoNotOptimize(loss_and_gradients(p, c, batch, 100));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_LossAndGradients)->Arg(1)->Arg(32);

void BM_SampleChain(benchmark::State& state) {
  const PairedDataset& d = edit_data();
  const DenoiserConfig c = bench_config(Variant::pe_skip, d.alphabet);
  const Model m{c, init_params(c, 1), NoiseProcess::make(100, TransitionKind::absorbing, d.alphabet)};
  const Graph& y = d.records.front().y;
  const int n = y.size() + kEditMaxNewNodes;
  const Condition cond{y, NodeMapping::identity_prefix(n, y.size()), laplacian_pe(y, c.pe_dim, c.pe_largest)};
  std::uint64_t seed = 0;
  for (auto _ : state) {
    Rng rng(seed++);
    benchmark::DoNotOptimize(run_chain(m, cond, n, static_cast<int>(state.range(0)), std::nullopt, nullptr, rng));
  }
}
BENCHMARK(BM_SampleChain)->Arg(1)->Arg(10)->Arg(100)->Unit(benchmark::kMillisecond);

void BM_CanonicalForm(benchmark::State& state) {
  const PairedDataset& d = edit_data();
  std::size_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(canonical_form(d.records[i++ % d.records.size()].x));
}
BENCHMARK(BM_CanonicalForm);

}  // namespace

BENCHMARK_MAIN();
