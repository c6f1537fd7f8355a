#include <benchmark/benchmark.h>

#include <vector>

#include <Eigen/Dense>

#include "semad/drift_metrics.hpp"
#include "semad/geometry_probe.hpp"
#include "semad/rng.hpp"
#include "semad/stats_engine.hpp"
#include "semad/synth_deform.hpp"

using namespace semad;

namespace {

Eigen::MatrixXd gaussian(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
    Rng rng(seed);
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal();
    return m;
}

const PairedEmbeddings& default_pair() {
    static const PairedEmbeddings p = simulate(default_scenario());
    return p;
}

}  // namespace

static void BM_DriftScore(benchmark::State& state) {
    const auto d = static_cast<std::size_t>(state.range(0));
    Rng rng(1);
    std::vector<float> a(d), b(d);
    for (std::size_t j = 0; j < d; ++j) {
        a[j] = static_cast<float>(rng.normal());
        b[j] = static_cast<float>(rng.normal());
    }
    for (auto _ : state) benchmark::DoNotOptimize(drift_score(a, b));
    state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_DriftScore)->Arg(64)->Arg(768)->Arg(4096);

static void BM_SdsReport(benchmark::State& state) {
    const auto& p = default_pair();
    for (auto _ : state) benchmark::DoNotOptimize(sds(p));
}
BENCHMARK(BM_SdsReport);

static void BM_Evr(benchmark::State& state) {
    const auto r = gaussian(16, state.range(0), 2);
    for (auto _ : state) benchmark::DoNotOptimize(evr(r, 2));
}
BENCHMARK(BM_Evr)->Arg(64)->Arg(768);

static void BM_EvrReport(benchmark::State& state) {
    const auto& p = default_pair();
    const auto threads = static_cast<std::size_t>(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(evr_report(p, 2, threads));
}
BENCHMARK(BM_EvrReport)->Arg(1)->Arg(4)->UseRealTime();

static void BM_Sensitivity(benchmark::State& state) {
    const auto& p = default_pair();
    const auto threads = static_cast<std::size_t>(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(local_sensitivity(p, kDefaultEpsilon, threads));
}
BENCHMARK(BM_Sensitivity)->Arg(1)->Arg(4)->UseRealTime();

static void BM_Procrustes(benchmark::State& state) {
    const auto& p = default_pair();
    for (auto _ : state) benchmark::DoNotOptimize(procrustes_align(p));
}
BENCHMARK(BM_Procrustes);

static void BM_Kde(benchmark::State& state) {
    Rng rng(3);
    std::vector<double> x(static_cast<std::size_t>(state.range(0)));
    for (auto& v : x) v = rng.normal();
    for (auto _ : state) benchmark::DoNotOptimize(kde(x));
}
BENCHMARK(BM_Kde)->Arg(100)->Arg(2000);

static void BM_Simulate(benchmark::State& state) {
    const auto s = default_scenario();
    for (auto _ : state) benchmark::DoNotOptimize(simulate(s));
}
BENCHMARK(BM_Simulate);

BENCHMARK_MAIN();
