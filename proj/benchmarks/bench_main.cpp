#include <benchmark/benchmark.h>

#include "dpf/convex_lab.hpp"
#include "dpf/datasets.hpp"
#include "dpf/pruning.hpp"
#include "dpf/trainers.hpp"

using namespace dpf;

namespace {

struct Setup {
  MLPModel model;
  Batch batch;
};

Setup make_setup(std::size_t width) {
  const auto data = make_blobs(4, 20, 2000, 0.5, 1);
  std::vector<std::size_t> idx(32);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return {init_model(mlp_specs(std::vector<std::size_t>{20, width, width, 4}), 1), select_rows(data.train, idx)};
}

void BM_ForwardBackward(benchmark::State& st) {
  const auto s = make_setup(static_cast<std::size_t>(st.range(0)));
  for (auto _ : st) {
    auto fwd = forward(s.model, s.model.params, s.batch);
    auto g = backward(s.model, s.model.params, s.batch, fwd.cache);
    benchmark::DoNotOptimize(g.values.data());
  }
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(s.batch.rows));
}
BENCHMARK(BM_ForwardBackward)->Arg(64)->Arg(256);

void BM_MagnitudeMask(benchmark::State& st) {
  const auto s = make_setup(static_cast<std::size_t>(st.range(0)));
  for (auto _ : st) {
    auto m = magnitude_mask(s.model.params, 0.9, PruneScope::global);
    benchmark::DoNotOptimize(m.num_pruned());
  }
}
BENCHMARK(BM_MagnitudeMask)->Arg(64)->Arg(256);

void BM_DpfStep(benchmark::State& st) {
  const auto s = make_setup(64);
  TrainConfig cfg;
  auto state = TrainState::start(s.model.params, magnitude_mask(s.model.params, 0.9, PruneScope::global));
  for (auto _ : st) {
    state = dpf_step(std::move(state), s.model, s.batch, 1e-3, cfg);
    benchmark::DoNotOptimize(state.x.values.data());
  }
}
BENCHMARK(BM_DpfStep);

void BM_QuadraticTheorem1(benchmark::State& st) {
  const auto p = lab::make_quadratic(50, 0.01, 1.0, 1, 1.0, false);
  lab::LabOptions opt;
  opt.trace_stride = 1000;
  for (auto _ : st) {
    auto r = lab::run_theorem1(p, 0.5, st.range(0), 1, opt);
    benchmark::DoNotOptimize(r.sampled_value);
  }
  st.SetItemsProcessed(st.iterations() * st.range(0));
}
BENCHMARK(BM_QuadraticTheorem1)->Arg(10000);

}  // namespace
BENCHMARK_MAIN();
