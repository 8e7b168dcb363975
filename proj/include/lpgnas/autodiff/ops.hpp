#pragma once

#include <memory>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "lpgnas/autodiff/tape.hpp"
#include "lpgnas/kernels/kernels.hpp"

namespace lpgnas::ad {

using kernels::CsrMatrix;
using kernels::Reduce;
using kernels::Segments;

// Constant sparse left operand with its transpose precomputed for backward.
struct SparseOperand {
  explicit SparseOperand(CsrMatrix m) : matrix(std::move(m)), transposed(matrix.transpose()) {}
  CsrMatrix matrix;
  CsrMatrix transposed;
};

enum class ActivationKind { none, sigmoid, tanh, softplus, relu, leaky_relu, relu6, elu };

inline constexpr Real kLeakyReluSlope = 0.01;
inline constexpr Real kEluAlpha = 1.0;
inline constexpr Real kSoftplusBeta = 1.0;

std::string_view activation_name(ActivationKind kind);
ActivationKind activation_from_name(std::string_view name);

// Pointwise evaluation and derivative, shared with tests.
Real activate(ActivationKind kind, Real x);
Real activate_derivative(ActivationKind kind, Real x);

Var matmul(Var a, Var b);
Var sparse_matmul(std::shared_ptr<const SparseOperand> a, Var b);

// Binary elementwise ops. `b` may match `a` exactly or broadcast as a row
// vector (1 x cols), a column vector (rows x 1) or a scalar (1 x 1).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, Real factor);

Var concat_cols(std::span<const Var> parts);

// out[e] = x[index[e]]. `grouping` must be Segments::build(index, x.rows());
// it keeps the backward scatter deterministic. Both must outlive the tape.
Var gather_rows(Var x, const Segments& grouping);

// Segment (per-destination) reductions over the rows of `messages`.
// `targets.index` gives the destination of every row.
Var segment_aggregate(Var messages, const Segments& targets, Reduce mode);
Var segment_softmax(Var scores, const Segments& targets);

Var activation(Var x, ActivationKind kind);
Var leaky_relu(Var x, Real slope);

// Inverted dropout: identity when !train or p == 0.
Var dropout(Var x, Real p, std::mt19937_64& rng, bool train);

// Row-wise softmax.
Var softmax_rows(Var logits);
// Sum of each row, rows x 1.
Var row_sum(Var x);
Var sum(Var x);
Var mean(Var x);

// Mean softmax cross-entropy over the selected rows.
Var softmax_cross_entropy(Var logits, std::span<const int> labels,
                          std::span<const std::size_t> rows);
// Mean sigmoid binary cross-entropy over selected rows and all columns.
Var sigmoid_binary_cross_entropy(Var logits, const Tensor& targets,
                                 std::span<const std::size_t> rows);

}  // namespace lpgnas::ad
