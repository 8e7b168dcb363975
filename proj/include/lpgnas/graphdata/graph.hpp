#pragma once

// Citation-style node classification datasets: on-disk format, preprocessing
// into an immutable Graph, splits, sampling and metrics.
//
// Dataset directory layout:
//   meta.json     {"name", "n", "f", "c", "label_arity": "single"|"multi",
//                  "feature_format": "dense"|"sparse"}
//   edges.tsv     "<u>\t<v>" per line (direction ignored)
//   features.tsv  dense:  "<node>\t<x_0>\t...\t<x_{f-1}>"
//                 sparse: "<node>\t<feature>\t<value>" (absent entries are 0)
//   labels.tsv    single: "<node>\t<class>"; multi: "<node>\t<c-bit string>"
//                 nodes without a line are unlabelled.

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lpgnas/autodiff/ops.hpp"

namespace lpgnas::graph {

using ad::Tensor;
using kernels::CsrMatrix;
using kernels::Segments;

// Dataset contents as stored on disk, before preprocessing.
struct RawDataset {
  std::string name;
  std::size_t n = 0;
  std::size_t f = 0;
  std::size_t c = 0;
  bool multi_label = false;
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  CsrMatrix features;                // n x f
  std::vector<int> labels;           // single-label: class or -1
  Tensor label_matrix;               // multi-label: n x c of {0,1}
  std::vector<std::uint8_t> labelled;

  void validate() const;
};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

struct LoadOptions {
  bool row_normalise = false;
  std::uint64_t split_seed = 0;
};

// Preprocessed graph. Edges are sorted by (target, source); every node has a
// self-loop and every edge its reverse.
struct Graph {
  std::string name;
  std::size_t n = 0;
  std::size_t f = 0;
  std::size_t c = 0;
  bool multi_label = false;

  std::vector<std::size_t> edge_src;
  std::vector<std::size_t> edge_dst;
  std::vector<std::size_t> reverse_edge;  // id of (v, u) for edge (u, v)
  Segments by_dst;                         // groups edges by target
  Segments by_src;                         // groups edges by source
  std::vector<std::size_t> degree;         // in-degree including the self-loop

  std::shared_ptr<const ad::SparseOperand> features;  // n x f
  std::vector<int> labels;
  Tensor label_matrix;
  std::vector<std::uint8_t> labelled;
  Split split;

  std::size_t num_edges() const { return edge_src.size(); }
  Tensor dense_features() const;
  std::vector<std::uint8_t> mask(std::span<const std::size_t> nodes) const;
};

RawDataset read_dataset_dir(const std::filesystem::path& dir);
void write_dataset_dir(const RawDataset& data, const std::filesystem::path& dir);

// Reads the LINQS raw citation files <name>.content / <name>.cites. Nodes keep
// file order, classes are numbered in sorted name order, citations naming
// unknown papers are dropped.
RawDataset read_linqs(const std::filesystem::path& dir, const std::string& name);

Graph preprocess(RawDataset data, const LoadOptions& options = {});

// Loads root/name, or root itself if it already holds meta.json.
Graph load_dataset(const std::filesystem::path& root, const std::string& name,
                   const LoadOptions& options = {});

// Seeded shuffle of the labelled nodes cut 6:2:2.
Split make_split(std::span<const std::uint8_t> labelled, std::uint64_t seed);

// Uniform k-node sample without replacement, induced subgraph, ascending
// original ids; split membership is inherited.
Graph sample_subgraph(const Graph& g, std::size_t k, std::uint64_t seed);

// Argmax accuracy over `rows` (lowest class on ties).
Real accuracy(const Tensor& scores, std::span<const int> labels,
              std::span<const std::size_t> rows);
// Micro-averaged F1 with predictions logit > 0 (sigmoid > 0.5).
Real micro_f1(const Tensor& logits, const Tensor& targets, std::span<const std::size_t> rows);
// accuracy or micro-F1 depending on the graph's label arity.
Real evaluate(const Graph& g, const Tensor& logits, std::span<const std::size_t> rows);

}  // namespace lpgnas::graph
