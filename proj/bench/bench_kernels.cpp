// Serial reference vs OpenMP kernel timings. The second range argument is the
// thread count for the parallel variants (0 = OpenMP default).

#include <benchmark/benchmark.h>

#include <random>

#include "sbsteer/kernels.hpp"
#include "sbsteer/toy_transformer.hpp"

using namespace sbsteer;

namespace {

std::vector<Vector> normal_points(int n, int dim, std::uint64_t seed, double shift = 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(shift, 1.0);
    std::vector<Vector> out(static_cast<std::size_t>(n), Vector(dim));
    for (auto& v : out)
        for (int d = 0; d < dim; ++d)
            v[d] = normal(rng);
    return out;
}

GaussianMixturePotential bench_potential(int dim, int g) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<MixtureComponent> comps;
    for (int i = 0; i < g; ++i) {
        MixtureComponent c{-std::log(static_cast<double>(g)), Vector(dim), Vector::Constant(dim, -0.3)};
        for (int d = 0; d < dim; ++d)
            c.center[d] = normal(rng);
        comps.push_back(std::move(c));
    }
    return GaussianMixturePotential(0.5, std::move(comps));
}

void BM_SdeEndpointsSerial(benchmark::State& state) {
    const auto pot = bench_potential(8, 10);
    const auto starts = normal_points(static_cast<int>(state.range(0)), 8, 1);
    for (auto _ : state)
        benchmark::DoNotOptimize(kernels::sde_endpoints_serial(pot, starts, 1.0, 100, 2));
}

void BM_SdeEndpoints(benchmark::State& state) {
    const auto pot = bench_potential(8, 10);
    const auto starts = normal_points(static_cast<int>(state.range(0)), 8, 1);
    for (auto _ : state)
        benchmark::DoNotOptimize(kernels::sde_endpoints(pot, starts, 1.0, 100, 2, static_cast<int>(state.range(1))));
}

void BM_EnergyDistanceSerial(benchmark::State& state) {
    const auto xs = normal_points(static_cast<int>(state.range(0)), 2, 4);
    const auto ys = normal_points(static_cast<int>(state.range(0)), 2, 5, 0.1);
    for (auto _ : state)
        benchmark::DoNotOptimize(kernels::energy_distance_serial(xs, ys));
}

void BM_EnergyDistance(benchmark::State& state) {
    const auto xs = normal_points(static_cast<int>(state.range(0)), 2, 4);
    const auto ys = normal_points(static_cast<int>(state.range(0)), 2, 5, 0.1);
    for (auto _ : state)
        benchmark::DoNotOptimize(kernels::energy_distance(xs, ys, static_cast<int>(state.range(1))));
}

void BM_LossTerms(benchmark::State& state) {
    const auto pot = bench_potential(8, 10);
    const auto s0 = normal_points(static_cast<int>(state.range(0)), 8, 6);
    const auto s1 = normal_points(static_cast<int>(state.range(0)), 8, 7, 1.0);
    for (auto _ : state)
        benchmark::DoNotOptimize(kernels::loss_terms(pot, s0, s1, static_cast<int>(state.range(1))));
}

void BM_GenerateDatasetSerial(benchmark::State& state) {
    const auto cfg = default_toy_config(0);
    const auto w = ToyWeights::random(cfg);
    for (auto _ : state)
        benchmark::DoNotOptimize(generate_dataset(cfg, w, static_cast<int>(state.range(0)), 1));
}

void BM_GenerateDataset(benchmark::State& state) {
    const auto cfg = default_toy_config(0);
    const auto w = ToyWeights::random(cfg);
    for (auto _ : state)
        benchmark::DoNotOptimize(
            kernels::generate_dataset(cfg, w, static_cast<int>(state.range(0)), 1, static_cast<int>(state.range(1))));
}

void BM_ProbeAllSerial(benchmark::State& state) {
    const auto cfg = default_toy_config(0);
    const auto records = generate_dataset(cfg, ToyWeights::random(cfg), static_cast<int>(state.range(0)), 1);
    for (auto _ : state)
        benchmark::DoNotOptimize(probe_all(records, 2));
}

void BM_ProbeAll(benchmark::State& state) {
    const auto cfg = default_toy_config(0);
    const auto records = generate_dataset(cfg, ToyWeights::random(cfg), static_cast<int>(state.range(0)), 1);
    for (auto _ : state)
        benchmark::DoNotOptimize(kernels::probe_all(records, 2, static_cast<int>(state.range(1))));
}

} // namespace

BENCHMARK(BM_SdeEndpointsSerial)->Arg(512)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SdeEndpoints)->Args({512, 1})->Args({512, 0})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EnergyDistanceSerial)->Arg(2000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EnergyDistance)->Args({2000, 1})->Args({2000, 0})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_LossTerms)->Args({4096, 1})->Args({4096, 0})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GenerateDatasetSerial)->Arg(50)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GenerateDataset)->Args({50, 1})->Args({50, 0})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ProbeAllSerial)->Arg(100)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ProbeAll)->Args({100, 1})->Args({100, 0})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
