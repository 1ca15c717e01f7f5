#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "talign/autodiff.hpp"
#include "talign/eval.hpp"
#include "talign/losses.hpp"
#include "talign/model.hpp"

namespace {

talign::Tensor random_tensor(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  talign::Tensor t(r, c);
  for (double& x : t.data()) x = u(rng);
  return t;
}

void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const talign::Tensor a = random_tensor(n, n, 1), b = random_tensor(n, n, 2);
  talign::Tensor out(n, n);
  for (auto _ : state) {
    talign::gemm(a, false, b, false, out, false);
    benchmark::DoNotOptimize(out.data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(2 * n * n * n));
}
BENCHMARK(BM_Gemm)->Arg(32)->Arg(64)->Arg(128)->Arg(256);

talign::ModelConfig bench_config() {
  talign::ModelConfig mc;
  mc.n_layers = 2;
  mc.n_heads = 4;
  mc.d_model = 32;
  mc.max_T = 48;
  mc.vocab_size = 256;
  return mc;
}

std::vector<std::vector<std::size_t>> bench_tokens(std::size_t k) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back({i % 256, (3 * i + 1) % 256, (7 * i + 2) % 256});
  return out;
}

// One training window: forward only, then forward plus backward.
void BM_Forward(benchmark::State& state) {
  const auto mc = bench_config();
  const auto params = talign::init_params(mc, 0);
  const talign::Tensor feats = random_tensor(48, mc.c_raw, 3);
  const auto tokens = bench_tokens(12);
  for (auto _ : state) {
    talign::Tape tape(false);
    auto out = talign::forward(tape, mc, params, feats, tokens);
    benchmark::DoNotOptimize(out.alignment.value().data().data());
  }
}
BENCHMARK(BM_Forward);

void BM_ForwardBackward(benchmark::State& state) {
  const auto mc = bench_config();
  const auto params = talign::init_params(mc, 0);
  const talign::Tensor feats = random_tensor(48, mc.c_raw, 3);
  const auto tokens = bench_tokens(12);
  for (auto _ : state) {
    talign::Tape tape;
    auto out = talign::forward(tape, mc, params, feats, tokens);
    auto grads = tape.backward(talign::ad::sum(talign::ad::add(out.alignment, out.alignment_dual)));
    benchmark::DoNotOptimize(grads.size());
  }
}
BENCHMARK(BM_ForwardBackward);

void BM_DtwDecode(benchmark::State& state) {
  const auto k = static_cast<std::size_t>(state.range(0));
  const talign::Tensor a = random_tensor(k, 8 * k, 4);
  for (auto _ : state) benchmark::DoNotOptimize(talign::dtw_decode(a).cost);
}
BENCHMARK(BM_DtwDecode)->Arg(4)->Arg(16)->Arg(64);

void BM_SoftDtw(benchmark::State& state) {
  const auto k = static_cast<std::size_t>(state.range(0));
  const talign::Tensor a = random_tensor(k, 8 * k, 5);
  for (auto _ : state) {
    talign::Tape tape;
    const auto v = talign::soft_dtw_loss(tape.constant(a), 0.1);
    benchmark::DoNotOptimize(v.value()(0, 0));
  }
}
BENCHMARK(BM_SoftDtw)->Arg(4)->Arg(16)->Arg(64);

}  // namespace

BENCHMARK_MAIN();
