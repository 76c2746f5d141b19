#include <benchmark/benchmark.h>

#include <cmath>
#include <random>

#include "tcm/coder.hpp"
#include "tcm/entropy.hpp"

namespace {

using namespace tcm;

struct Corpus {
    coder::CdfTables tables;
    std::vector<std::int32_t> symbols;
    std::vector<std::uint32_t> indices;
};

// Latent-like data: one table per distinct scale, values drawn from it.
Corpus gaussian_corpus(std::size_t n, int scales) {
    Corpus c;
    std::mt19937_64 rng(1);
    std::vector<double> sigma;
    for (int i = 0; i < scales; ++i) {
        sigma.push_back(kScaleFloor * std::pow(20.0 / kScaleFloor, i / double(scales - 1)));
        c.tables.add(coder::gaussian_cdf(sigma.back()));
    }
    for (std::size_t k = 0; k < n; ++k) {
        const auto t = static_cast<std::uint32_t>(rng() % scales);
        c.indices.push_back(t);
        c.symbols.push_back(static_cast<int>(std::nearbyint(std::normal_distribution<double>(0, sigma[t])(rng))));
    }
    return c;
}

void BM_Encode(benchmark::State& state) {
    const Corpus c = gaussian_corpus(static_cast<std::size_t>(state.range(0)), 64);
    for (auto _ : state) benchmark::DoNotOptimize(coder::encode_symbols(c.symbols, c.indices, c.tables));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Encode)->Arg(1 << 12)->Arg(1 << 16)->Arg(1 << 20);

void BM_Decode(benchmark::State& state) {
    const Corpus c = gaussian_corpus(static_cast<std::size_t>(state.range(0)), 64);
    const auto bytes = coder::encode_symbols(c.symbols, c.indices, c.tables);
    for (auto _ : state) benchmark::DoNotOptimize(coder::decode_symbols(bytes, c.indices, c.tables));
    state.SetItemsProcessed(state.iterations() * state.range(0));
    state.counters["bits/symbol"] = 8.0 * bytes.size() / state.range(0);
}
BENCHMARK(BM_Decode)->Arg(1 << 12)->Arg(1 << 16)->Arg(1 << 20);

void BM_GaussianTable(benchmark::State& state) {
    const double sigma = state.range(0) / 10.0;
    for (auto _ : state) benchmark::DoNotOptimize(coder::gaussian_cdf(sigma));
}
BENCHMARK(BM_GaussianTable)->Arg(2)->Arg(20)->Arg(300);

}  // namespace
