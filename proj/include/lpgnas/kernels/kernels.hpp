#pragma once

// Dense, sparse and segment kernels behind the autodiff ops.
//
// Every kernel exists twice with the same signature: `reference` is a plain
// serial loop nest kept as the test oracle, `parallel` distributes output
// rows (or segments) over OpenMP threads. Each output element is accumulated
// in the same order in both versions, so results are bitwise identical and
// independent of the thread count.

#include <cstddef>
#include <span>
#include <vector>

#include "lpgnas/common.hpp"

namespace lpgnas::kernels {

// Grouping of `index.size()` items into `num_segments` buckets. `order` lists
// item ids bucket by bucket, ascending within a bucket (stable counting sort),
// so "lowest item id" tie-breaks fall out of a forward scan.
struct Segments {
  std::size_t num_segments = 0;
  std::vector<std::size_t> index;    // bucket of each item
  std::vector<std::size_t> offsets;  // num_segments + 1
  std::vector<std::size_t> order;    // item ids grouped by bucket

  std::size_t num_items() const { return index.size(); }
  std::size_t count(std::size_t s) const { return offsets[s + 1] - offsets[s]; }

  static Segments build(std::span<const std::size_t> index, std::size_t num_segments);
};

// Compressed sparse row matrix.
struct CsrMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> offsets;  // rows + 1
  std::vector<std::size_t> indices;
  std::vector<Real> values;

  std::size_t nnz() const { return values.size(); }
  CsrMatrix transpose() const;
  void validate() const;
};

enum class Reduce { sum, mean, max };

namespace reference {

// C(m x n) (+)= op(A) * op(B) where op(A) is m x k. With trans_a, A is stored
// k x m; with trans_b, B is stored n x k.
void gemm(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k,
          std::size_t n, bool trans_a, bool trans_b, bool accumulate);

// C(rows x n) (+)= A * B for CSR A (rows x cols) and dense B (cols x n).
void spmm(const CsrMatrix& a, const Real* b, Real* c, std::size_t n, bool accumulate);

// out(num_segments x d) = reduction of the rows of values(E x d) per segment.
// Empty segments produce zeros. For max, argmax receives the winning item id
// per output element (lowest id on ties).
void segment_reduce(const Real* values, std::size_t d, const Segments& seg,
                    Reduce mode, Real* out, std::size_t* argmax);

// Per-segment softmax of a length-E vector, stabilised by the segment max.
void segment_softmax(const Real* scores, const Segments& seg, Real* out);

// d_scores = y * (dy - sum over the segment of y * dy).
void segment_softmax_backward(const Real* y, const Real* dy, const Segments& seg,
                              Real* d_scores);

// out(E x d) = rows of src selected by idx.
void gather_rows(const Real* src, std::size_t d, std::span<const std::size_t> idx,
                 Real* out);

// out(num_segments x d) += rows of src(E x d) grouped by seg.
void scatter_add_rows(const Real* src, std::size_t d, const Segments& seg, Real* out);

}  // namespace reference

// Same contracts as reference, OpenMP over output rows / segments.
namespace parallel {

void gemm(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k,
          std::size_t n, bool trans_a, bool trans_b, bool accumulate);
void spmm(const CsrMatrix& a, const Real* b, Real* c, std::size_t n, bool accumulate);
void segment_reduce(const Real* values, std::size_t d, const Segments& seg,
                    Reduce mode, Real* out, std::size_t* argmax);
void segment_softmax(const Real* scores, const Segments& seg, Real* out);
void segment_softmax_backward(const Real* y, const Real* dy, const Segments& seg,
                              Real* d_scores);
void gather_rows(const Real* src, std::size_t d, std::span<const std::size_t> idx,
                 Real* out);
void scatter_add_rows(const Real* src, std::size_t d, const Segments& seg, Real* out);

}  // namespace parallel

// Number of OpenMP threads the parallel kernels will use (1 without OpenMP).
int max_threads();

}  // namespace lpgnas::kernels
