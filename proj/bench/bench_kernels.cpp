// Serial reference kernels against their OpenMP counterparts.
//
//   ./build/bench/dkps_bench --benchmark_filter=Pairwise

#include <random>
#include <vector>

#include <benchmark/benchmark.h>
#include <omp.h>

#include "dkps/kernels.hpp"

namespace {

struct Blocks {
    std::vector<std::vector<double>> data;
    std::vector<const double*> pointers;

    Blocks(std::size_t count, std::size_t length) : data(count, std::vector<double>(length)) {
        std::mt19937_64 gen(count * 31 + length);
        std::normal_distribution<double> normal;
        for (auto& block : data) {
            for (double& v : block)
                v = normal(gen);
            pointers.push_back(block.data());
        }
    }
};

// Models x (queries * embedding dim).
void shapes(benchmark::internal::Benchmark* b) {
    for (long n : {64, 256})
        for (long length : {256 * 8, 1024 * 64})
            b->Args({n, length});
}

template <auto Kernel>
void pairwise(benchmark::State& state) {
    const Blocks blocks(static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)));
    std::vector<double> out(blocks.pointers.size() * blocks.pointers.size());
    for (auto _ : state) {
        Kernel(blocks.pointers, static_cast<std::size_t>(state.range(1)), out.data());
        benchmark::DoNotOptimize(out.data());
    }
    const double pairs = 0.5 * static_cast<double>(state.range(0) * (state.range(0) - 1));
    state.SetItemsProcessed(static_cast<std::int64_t>(pairs) * state.iterations());
    state.counters["threads"] = omp_get_max_threads();
}

template <auto Kernel>
void cross(benchmark::State& state) {
    const Blocks rows(16, static_cast<std::size_t>(state.range(1)));
    const Blocks cols(static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)));
    std::vector<double> out(rows.pointers.size() * cols.pointers.size());
    for (auto _ : state) {
        Kernel(rows.pointers, cols.pointers, static_cast<std::size_t>(state.range(1)), out.data());
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(16 * state.range(0) * state.iterations());
    state.counters["threads"] = omp_get_max_threads();
}

void PairwiseSerial(benchmark::State& state) { pairwise<dkps::kernels::serial::pairwise_frobenius>(state); }
void PairwiseOpenMP(benchmark::State& state) { pairwise<dkps::kernels::omp::pairwise_frobenius>(state); }
void CrossSerial(benchmark::State& state) { cross<dkps::kernels::serial::cross_frobenius>(state); }
void CrossOpenMP(benchmark::State& state) { cross<dkps::kernels::omp::cross_frobenius>(state); }

} // namespace

BENCHMARK(PairwiseSerial)->Apply(shapes)->Unit(benchmark::kMillisecond);
BENCHMARK(PairwiseOpenMP)->Apply(shapes)->Unit(benchmark::kMillisecond);
BENCHMARK(CrossSerial)->Apply(shapes)->Unit(benchmark::kMillisecond);
BENCHMARK(CrossOpenMP)->Apply(shapes)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
