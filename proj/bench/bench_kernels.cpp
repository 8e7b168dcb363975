// Reference vs OpenMP kernels on Cora-sized shapes (2708 nodes, about 13k
// edges with self-loops, 1433 sparse input features, 32 channels).

#include <algorithm>
#include <random>

#include <benchmark/benchmark.h>

#include "lpgnas/kernels/kernels.hpp"

using namespace lpgnas;
using namespace lpgnas::kernels;

namespace {

constexpr std::size_t kNodes = 2708;
constexpr std::size_t kFeatures = 1433;
constexpr std::size_t kHidden = 32;

struct Fixture {
  std::vector<std::size_t> src, dst;
  Segments by_dst;
  CsrMatrix features;
  std::vector<Real> dense_in, weight, edge_values, scores, node_values;

  Fixture() {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<Real> u(-1, 1);
    for (std::size_t v = 0; v < kNodes; ++v) {
      src.push_back(v);
      dst.push_back(v);
    }
    for (std::size_t e = 0; e < 5278; ++e) {
      const std::size_t a = rng() % kNodes, b = rng() % kNodes;
      src.insert(src.end(), {a, b});
      dst.insert(dst.end(), {b, a});
    }
    by_dst = Segments::build(dst, kNodes);

    features.rows = kNodes;
    features.cols = kFeatures;
    features.offsets.push_back(0);
    for (std::size_t v = 0; v < kNodes; ++v) {
      std::vector<std::size_t> cols;
      for (int j = 0; j < 18; ++j) cols.push_back(rng() % kFeatures);
      std::sort(cols.begin(), cols.end());
      cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
      for (std::size_t c : cols) {
        features.indices.push_back(c);
        features.values.push_back(1);
      }
      features.offsets.push_back(features.indices.size());
    }
    auto fill = [&](std::vector<Real>& v, std::size_t n) {
      v.resize(n);
      for (Real& x : v) x = u(rng);
    };
    fill(dense_in, kNodes * kHidden);
    fill(weight, kFeatures * kHidden);
    fill(edge_values, src.size() * kHidden);
    fill(scores, src.size());
    fill(node_values, kNodes * kHidden);
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

template <bool Parallel>
void bm_spmm(benchmark::State& state) {
  const Fixture& f = fixture();
  std::vector<Real> out(kNodes * kHidden);
  for (auto _ : state) {
    if constexpr (Parallel) parallel::spmm(f.features, f.weight.data(), out.data(), kHidden, false);
    else reference::spmm(f.features, f.weight.data(), out.data(), kHidden, false);
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void bm_gemm(benchmark::State& state) {
  const Fixture& f = fixture();
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  std::vector<Real> w(kHidden * n, 0.5), out(kNodes * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      parallel::gemm(f.dense_in.data(), w.data(), out.data(), kNodes, kHidden, n, false, false, false);
    else
      reference::gemm(f.dense_in.data(), w.data(), out.data(), kNodes, kHidden, n, false, false, false);
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void bm_segment_reduce(benchmark::State& state) {
  const Fixture& f = fixture();
  const auto mode = static_cast<Reduce>(state.range(0));
  std::vector<Real> out(kNodes * kHidden);
  std::vector<std::size_t> arg(kNodes * kHidden);
  for (auto _ : state) {
    if constexpr (Parallel)
      parallel::segment_reduce(f.edge_values.data(), kHidden, f.by_dst, mode, out.data(), arg.data());
    else
      reference::segment_reduce(f.edge_values.data(), kHidden, f.by_dst, mode, out.data(), arg.data());
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void bm_segment_softmax(benchmark::State& state) {
  const Fixture& f = fixture();
  std::vector<Real> out(f.scores.size());
  for (auto _ : state) {
    if constexpr (Parallel) parallel::segment_softmax(f.scores.data(), f.by_dst, out.data());
    else reference::segment_softmax(f.scores.data(), f.by_dst, out.data());
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void bm_gather_scatter(benchmark::State& state) {
  const Fixture& f = fixture();
  std::vector<Real> gathered(f.src.size() * kHidden), out(kNodes * kHidden);
  for (auto _ : state) {
    std::fill(out.begin(), out.end(), 0);
    if constexpr (Parallel) {
      parallel::gather_rows(f.node_values.data(), kHidden, f.src, gathered.data());
      parallel::scatter_add_rows(gathered.data(), kHidden, f.by_dst, out.data());
    } else {
      reference::gather_rows(f.node_values.data(), kHidden, f.src, gathered.data());
      reference::scatter_add_rows(gathered.data(), kHidden, f.by_dst, out.data());
    }
    benchmark::DoNotOptimize(out.data());
  }
}

}  // namespace

BENCHMARK(bm_spmm<false>)->Name("spmm/reference");
BENCHMARK(bm_spmm<true>)->Name("spmm/parallel");
BENCHMARK(bm_gemm<false>)->Name("gemm/reference")->Arg(32)->Arg(256);
BENCHMARK(bm_gemm<true>)->Name("gemm/parallel")->Arg(32)->Arg(256);
BENCHMARK(bm_segment_reduce<false>)->Name("segment_reduce/reference")->DenseRange(0, 2);
BENCHMARK(bm_segment_reduce<true>)->Name("segment_reduce/parallel")->DenseRange(0, 2);
BENCHMARK(bm_segment_softmax<false>)->Name("segment_softmax/reference");
BENCHMARK(bm_segment_softmax<true>)->Name("segment_softmax/parallel");
BENCHMARK(bm_gather_scatter<false>)->Name("gather_scatter/reference");
BENCHMARK(bm_gather_scatter<true>)->Name("gather_scatter/parallel");

BENCHMARK_MAIN();
