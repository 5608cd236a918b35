#include <benchmark/benchmark.h>

#include <random>

#include "dynxl/dyneval.hpp"
#include "dynxl/harness.hpp"

using namespace dynxl;

namespace {

Tensor random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist;
  Tensor t({rows, cols});
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

ModelConfig bench_config(std::size_t segment_len) {
  ModelConfig c;
  c.vocab_size = 80;
  c.n_layers = 2;
  c.d_model = 64;
  c.n_heads = 4;
  c.d_head = 16;
  c.d_ff = 256;
  c.segment_len = segment_len;
  c.mem_len = segment_len;
  return c;
}

std::vector<TokenId> random_ids(std::size_t n, std::size_t vocab) {
  std::mt19937_64 rng(7);
  std::vector<TokenId> ids(n);
  for (auto& t : ids) t = static_cast<TokenId>(rng() % vocab);
  return ids;
}

void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  Tensor out({n, n});
  for (auto _ : state) {
    kernels::gemm(a, false, b, false, out, false);
    benchmark::DoNotOptimize(out.values().data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n * n));
}
BENCHMARK(BM_Gemm)->Arg(32)->Arg(64)->Arg(128);

void BM_ForwardSegment(benchmark::State& state) {
  const ModelConfig c = bench_config(static_cast<std::size_t>(state.range(0)));
  const ModelParams p = init_model(c, 1);
  const auto ids = random_ids(c.segment_len, c.vocab_size);
  const SegmentMemory memory = evaluate_segment(p, ids, empty_memory(c), false).memory;
  for (auto _ : state) {
    Graph g;
    auto fwd = forward_segment(g, p, ids, memory, {.params_require_grad = false});
    benchmark::DoNotOptimize(fwd.loss.value()[0]);
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * c.segment_len));
}
BENCHMARK(BM_ForwardSegment)->Arg(32)->Arg(64);

void BM_DynevalSegment(benchmark::State& state) {
  const ModelConfig c = bench_config(32);
  const ModelParams p = init_model(c, 1);
  const TokenStream stream(random_ids(c.segment_len * 16, c.vocab_size), c.vocab_size);
  DynevalConfig d;
  d.learning_rate = 1e-3;
  for (auto _ : state) {
    AdaptState s(p);
    const EvalReport r = dynamic_eval(s, stream, d);
    benchmark::DoNotOptimize(r.total_nats);
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * stream.size()));
}
BENCHMARK(BM_DynevalSegment)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
