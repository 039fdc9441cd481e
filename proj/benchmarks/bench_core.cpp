#include <benchmark/benchmark.h>

#include <vector>

#include "lgap/autoenc.hpp"
#include "lgap/losses.hpp"
#include "lgap/metrics.hpp"
#include "lgap/nets.hpp"
#include "lgap/ops.hpp"
#include "lgap/stats.hpp"

using namespace lgap;

namespace {

Tensor randn(Shape shape, std::uint64_t seed) {
    Rng rng(seed);
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = static_cast<float>(rng.normal());
    return t;
}

void BM_Gemm(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const Tensor a = randn({n, n}, 1), b = randn({n, n}, 2);
    Tensor c({n, n});
    for (auto _ : state) {
        nn::kernels::gemm(false, false, n, n, n, a.data(), b.data(), 0.0f, c.data());
        benchmark::DoNotOptimize(c.data());
    }
    state.counters["GFLOP/s"] =
        benchmark::Counter(2.0 * static_cast<double>(n * n * n), benchmark::Counter::kIsIterationInvariantRate,
                           benchmark::Counter::kIs1000);
}
BENCHMARK(BM_Gemm)->Arg(64)->Arg(128)->Arg(256);

void BM_Conv2dForwardBackward(benchmark::State& state) {
    const auto c = static_cast<std::size_t>(state.range(0));
    nn::Parameter w{"w", randn({c, c, 3, 3}, 3), {}}, b{"b", Tensor({c}), {}};
    const Tensor x = randn({8, c, 16, 16}, 4);
    for (auto _ : state) {
        nn::backward(nn::mean(nn::conv2d(nn::Variable(x), nn::var(w), nn::var(b), 1, 1)));
        w.zero_grad();
        b.zero_grad();
    }
}
BENCHMARK(BM_Conv2dForwardBackward)->Arg(16)->Arg(48);

void BM_LatentClassifierStep(benchmark::State& state) {
    nets::ClassifierConfig cfg{{4, 8, 8}, 6, {}, {}};
    nets::LatentClassifier model(cfg, 0);
    const auto n = static_cast<std::size_t>(state.range(0));
    const Tensor x = randn({n, 4, 8, 8}, 5);
    std::vector<std::uint32_t> y(n, 1);
    Rng rng(6);
    for (auto _ : state) {
        nn::backward(losses::noise_conditioned_loss(model, x, y, {}, rng));
        nn::zero_grad(model);
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_LatentClassifierStep)->Arg(1)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_Decode(benchmark::State& state) {
    autoenc::Autoencoder ae(autoenc::AutoencoderConfig{}, 0);
    const auto n = static_cast<std::size_t>(state.range(0));
    const Tensor z = randn({n, 4, 8, 8}, 7);
    for (auto _ : state) benchmark::DoNotOptimize(autoenc::decode(ae, z));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_Decode)->Arg(1)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_FrequencyScramble(benchmark::State& state) {
    const autoenc::Scrambler s(autoenc::ScramblerKind::frequency_permutation, 1, {4, 8, 8});
    const Tensor z = randn({64, 4, 8, 8}, 8);
    for (auto _ : state) benchmark::DoNotOptimize(s.scramble(z));
}
BENCHMARK(BM_FrequencyScramble);

void BM_WilcoxonExact(benchmark::State& state) {
    Rng rng(9);
    std::vector<double> d(static_cast<std::size_t>(state.range(0)));
    for (auto& v : d) v = rng.normal() + 0.3;
    const auto pairs = stats::PairedSample::from_differences(d);
    for (auto _ : state) benchmark::DoNotOptimize(stats::wilcoxon_signed_rank(pairs, stats::Sidedness::less));
}
BENCHMARK(BM_WilcoxonExact)->Arg(12)->Arg(25);

void BM_Ssim(benchmark::State& state) {
    Tensor a = randn({1, 64, 64}, 10), b = randn({1, 64, 64}, 11);
    for (auto _ : state) benchmark::DoNotOptimize(metrics::ssim(a, b));
}
BENCHMARK(BM_Ssim);

void BM_AucMacro(benchmark::State& state) {
    const std::size_t n = 1000, k = 6;
    const Tensor scores = randn({n, k}, 12);
    std::vector<std::uint32_t> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<std::uint32_t>(i % k);
    for (auto _ : state) benchmark::DoNotOptimize(metrics::auc_macro_ovr(y, scores, k));
}
BENCHMARK(BM_AucMacro);

}  // namespace

BENCHMARK_MAIN();
