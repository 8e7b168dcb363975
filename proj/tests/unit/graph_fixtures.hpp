#pragma once

// Small random graphs for supernet and search tests.

#include <random>

#include "lpgnas/graphdata/graph.hpp"

namespace lpgnas::testing {

inline graph::RawDataset random_dataset(std::size_t n, std::size_t extra_edges, std::size_t f,
                                        std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<Real> value(-1, 1);
  graph::RawDataset d;
  d.name = "toy";
  d.n = n;
  d.f = f;
  d.c = c;
  for (std::size_t v = 1; v < n; ++v) d.edges.emplace_back(v - 1, v);  // a path keeps it connected
  for (std::size_t i = 0; i < extra_edges; ++i) d.edges.emplace_back(rng() % n, rng() % n);
  d.features.rows = n;
  d.features.cols = f;
  d.features.offsets.push_back(0);
  for (std::size_t v = 0; v < n; ++v) {
    for (std::size_t j = 0; j < f; ++j) {
      d.features.indices.push_back(j);
      d.features.values.push_back(value(rng));
    }
    d.features.offsets.push_back(d.features.values.size());
  }
  d.labels.resize(n);
  d.labelled.assign(n, 1);
  for (std::size_t v = 0; v < n; ++v) d.labels[v] = static_cast<int>(rng() % c);
  return d;
}

inline graph::Graph random_graph(std::size_t n, std::size_t extra_edges, std::size_t f,
                                 std::size_t c, std::uint64_t seed) {
  return graph::preprocess(random_dataset(n, extra_edges, f, c, seed),
                           {.row_normalise = false, .split_seed = seed});
}

}  // namespace lpgnas::testing
