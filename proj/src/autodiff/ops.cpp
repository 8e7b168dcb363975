#include "lpgnas/autodiff/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace lpgnas::ad {

namespace kp = kernels::parallel;

namespace {

enum class Broadcast { same, row, col, scalar };

Broadcast broadcast_mode(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::same;
  if (b.size() == 1) return Broadcast::scalar;
  if (b.rows() == 1 && b.cols() == a.cols() && b.rank() == 2) return Broadcast::row;
  if (b.rows() == a.rows() && b.cols() == 1) return Broadcast::col;
  throw DimensionError(std::string(op) + ": cannot broadcast " + shape_string(b.shape()) +
                       " onto " + shape_string(a.shape()));
}

std::size_t bindex(Broadcast mode, std::size_t i, std::size_t cols) {
  switch (mode) {
    case Broadcast::same:
      return i;
    case Broadcast::row:
      return i % cols;
    case Broadcast::col:
      return i / cols;
    case Broadcast::scalar:
      return 0;
  }
  return 0;
}

// Sum a full-shape gradient down to the broadcast operand's shape.
Tensor reduce_to(const Tensor& g, const Tensor& like, Broadcast mode) {
  if (mode == Broadcast::same) return g;
  Tensor out = Tensor::zeros_like(like);
  const std::size_t cols = g.cols();
  for (std::size_t i = 0; i < g.size(); ++i) out[bindex(mode, i, cols)] += g[i];
  return out;
}

Real stable_sigmoid(Real x) {
  if (x >= 0) return 1 / (1 + std::exp(-x));
  const Real e = std::exp(x);
  return e / (1 + e);
}

}  // namespace

std::string_view activation_name(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::none: return "none";
    case ActivationKind::sigmoid: return "sigmoid";
    case ActivationKind::tanh: return "tanh";
    case ActivationKind::softplus: return "softplus";
    case ActivationKind::relu: return "relu";
    case ActivationKind::leaky_relu: return "leaky_relu";
    case ActivationKind::relu6: return "relu6";
    case ActivationKind::elu: return "elu";
  }
  return "?";
}

ActivationKind activation_from_name(std::string_view name) {
  for (int k = 0; k < 8; ++k) {
    const auto kind = static_cast<ActivationKind>(k);
    if (activation_name(kind) == name) return kind;
  }
  throw ArgumentError("unknown activation '" + std::string(name) + "'");
}

Real activate(ActivationKind kind, Real x) {
  switch (kind) {
    case ActivationKind::none: return x;
    case ActivationKind::sigmoid: return stable_sigmoid(x);
    case ActivationKind::tanh: return std::tanh(x);
    case ActivationKind::softplus: {
      const Real bx = kSoftplusBeta * x;
      const Real sp = bx > 0 ? bx + std::log1p(std::exp(-bx)) : std::log1p(std::exp(bx));
      return sp / kSoftplusBeta;
    }
    case ActivationKind::relu: return std::max<Real>(0, x);
    case ActivationKind::leaky_relu:
      return std::max<Real>(0, x) + kLeakyReluSlope * std::min<Real>(0, x);
    case ActivationKind::relu6: return std::min<Real>(std::max<Real>(0, x), 6);
    case ActivationKind::elu:
      return std::max<Real>(0, x) + std::min<Real>(0, kEluAlpha * std::expm1(x));
  }
  return x;
}

Real activate_derivative(ActivationKind kind, Real x) {
  switch (kind) {
    case ActivationKind::none: return 1;
    case ActivationKind::sigmoid: {
      const Real s = stable_sigmoid(x);
      return s * (1 - s);
    }
    case ActivationKind::tanh: {
      const Real t = std::tanh(x);
      return 1 - t * t;
    }
    case ActivationKind::softplus: return stable_sigmoid(kSoftplusBeta * x);
    case ActivationKind::relu: return x > 0 ? 1 : 0;
    case ActivationKind::leaky_relu: return x > 0 ? 1 : kLeakyReluSlope;
    case ActivationKind::relu6: return (x > 0 && x < 6) ? 1 : 0;
    case ActivationKind::elu: return x > 0 ? 1 : kEluAlpha * std::exp(x);
  }
  return 1;
}

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows())
    throw DimensionError("matmul: inner dimensions differ, " + shape_string(av.shape()) +
                         " x " + shape_string(bv.shape()));
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor out = Tensor::matrix(m, n);
  kp::gemm(av.data().data(), bv.data().data(), out.data().data(), m, k, n, false, false,
           false);
  return a.tape().record(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, const Tensor& g) {
    if (a.requires_grad()) {
      // dA = dC * B^T
      Tensor& ga = t.grad_buffer(a);
      kp::gemm(g.data().data(), b.value().data().data(), ga.data().data(), m, n, k, false,
               true, true);
    }
    if (b.requires_grad()) {
      // dB = A^T * dC
      Tensor& gb = t.grad_buffer(b);
      kp::gemm(a.value().data().data(), g.data().data(), gb.data().data(), k, m, n, true,
               false, true);
    }
  });
}

Var sparse_matmul(std::shared_ptr<const SparseOperand> a, Var b) {
  const Tensor& bv = b.value();
  if (a->matrix.cols != bv.rows())
    throw DimensionError("sparse_matmul: inner dimensions differ (" +
                         std::to_string(a->matrix.cols) + " vs " + std::to_string(bv.rows()) +
                         ")");
  const std::size_t n = bv.cols();
  Tensor out = Tensor::matrix(a->matrix.rows, n);
  kp::spmm(a->matrix, bv.data().data(), out.data().data(), n, false);
  return b.tape().record(std::move(out), {b}, [a, b, n](Tape& t, const Tensor& g) {
    kp::spmm(a->transposed, g.data().data(), t.grad_buffer(b).data().data(), n, true);
  });
}

Var add(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Broadcast mode = broadcast_mode(av, bv, "add");
  Tensor out = av;
  const std::size_t cols = av.cols();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[bindex(mode, i, cols)];
  return a.tape().record(std::move(out), {a, b}, [a, b, mode](Tape& t, const Tensor& g) {
    t.accumulate_grad(a, g);
    if (b.requires_grad()) t.accumulate_grad(b, reduce_to(g, b.value(), mode));
  });
}

Var sub(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Broadcast mode = broadcast_mode(av, bv, "sub");
  Tensor out = av;
  const std::size_t cols = av.cols();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[bindex(mode, i, cols)];
  return a.tape().record(std::move(out), {a, b}, [a, b, mode](Tape& t, const Tensor& g) {
    t.accumulate_grad(a, g);
    if (b.requires_grad()) {
      Tensor neg = reduce_to(g, b.value(), mode);
      for (Real& v : neg.data()) v = -v;
      t.accumulate_grad(b, neg);
    }
  });
}

Var mul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Broadcast mode = broadcast_mode(av, bv, "mul");
  Tensor out = av;
  const std::size_t cols = av.cols();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[bindex(mode, i, cols)];
  return a.tape().record(std::move(out), {a, b}, [a, b, mode, cols](Tape& t, const Tensor& g) {
    const Tensor& av2 = a.value();
    const Tensor& bv2 = b.value();
    if (a.requires_grad()) {
      Tensor& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[bindex(mode, i, cols)];
    }
    if (b.requires_grad()) {
      Tensor& gb = t.grad_buffer(b);
      if (mode == Broadcast::same) {
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av2[i];
      } else {
        Tensor partial = Tensor::zeros_like(bv2);
        for (std::size_t i = 0; i < g.size(); ++i)
          partial[bindex(mode, i, cols)] += g[i] * av2[i];
        for (std::size_t i = 0; i < partial.size(); ++i) gb[i] += partial[i];
      }
    }
  });
}

Var scale(Var a, Real factor) {
  Tensor out = a.value();
  for (Real& v : out.data()) v *= factor;
  return a.tape().record(std::move(out), {a}, [a, factor](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ArgumentError("concat_cols: no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw DimensionError("concat_cols: row counts differ");
    widths.push_back(p.cols());
    total += p.cols();
  }
  Tensor out = Tensor::matrix(rows, total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < widths[k]; ++c) out(r, offset + c) = v(r, c);
    offset += widths[k];
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape().record(
      std::move(out), parts, [inputs, widths, rows, total](Tape& t, const Tensor& g) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < inputs.size(); ++k) {
          if (inputs[k].requires_grad()) {
            Tensor& gk = t.grad_buffer(inputs[k]);
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t c = 0; c < widths[k]; ++c) gk(r, c) += g[r * total + off + c];
          }
          off += widths[k];
        }
      });
}

Var gather_rows(Var x, const Segments& grouping) {
  const Tensor& xv = x.value();
  if (grouping.num_segments != xv.rows())
    throw DimensionError("gather_rows: grouping built for " +
                         std::to_string(grouping.num_segments) + " rows, input has " +
                         std::to_string(xv.rows()));
  const std::size_t d = xv.cols();
  Tensor out = Tensor::matrix(grouping.num_items(), d);
  kp::gather_rows(xv.data().data(), d, grouping.index, out.data().data());
  const Segments* seg = &grouping;
  return x.tape().record(std::move(out), {x}, [x, seg, d](Tape& t, const Tensor& g) {
    kp::scatter_add_rows(g.data().data(), d, *seg, t.grad_buffer(x).data().data());
  });
}

Var segment_aggregate(Var messages, const Segments& targets, Reduce mode) {
  const Tensor& mv = messages.value();
  if (mv.rows() != targets.num_items())
    throw DimensionError("segment_aggregate: " + std::to_string(mv.rows()) +
                         " messages but " + std::to_string(targets.num_items()) + " targets");
  const std::size_t d = mv.cols();
  const std::size_t n = targets.num_segments;
  Tensor out = Tensor::matrix(n, d);
  std::vector<std::size_t> argmax;
  if (mode == Reduce::max) argmax.resize(n * d);
  kp::segment_reduce(mv.data().data(), d, targets, mode, out.data().data(), argmax.data());
  const Segments* seg = &targets;
  return messages.tape().record(
      std::move(out), {messages},
      [messages, seg, mode, d, argmax = std::move(argmax)](Tape& t, const Tensor& g) {
        Tensor& gm = t.grad_buffer(messages);
        const std::size_t items = seg->num_items();
        if (mode == Reduce::max) {
          for (std::size_t i = 0; i < argmax.size(); ++i)
            if (argmax[i] != std::numeric_limits<std::size_t>::max())
              gm[argmax[i] * d + i % d] += g[i];
          return;
        }
        for (std::size_t e = 0; e < items; ++e) {
          const std::size_t s = seg->index[e];
          const Real w = mode == Reduce::mean ? Real{1} / static_cast<Real>(seg->count(s)) : 1;
          for (std::size_t j = 0; j < d; ++j) gm[e * d + j] += g[s * d + j] * w;
        }
      });
}

Var segment_softmax(Var scores, const Segments& targets) {
  const Tensor& sv = scores.value();
  if (sv.size() != targets.num_items())
    throw DimensionError("segment_softmax: " + std::to_string(sv.size()) + " scores but " +
                         std::to_string(targets.num_items()) + " targets");
  Tensor out(sv.shape());
  kp::segment_softmax(sv.data().data(), targets, out.data().data());
  const Segments* seg = &targets;
  Tensor y = out;
  return scores.tape().record(std::move(out), {scores},
                              [scores, y = std::move(y), seg](Tape& t, const Tensor& g) {
                                Tensor ds = Tensor::zeros_like(g);
                                kp::segment_softmax_backward(y.data().data(), g.data().data(),
                                                             *seg, ds.data().data());
                                t.accumulate_grad(scores, ds);
                              });
}

Var activation(Var x, ActivationKind kind) {
  if (kind == ActivationKind::none) {
    Tensor out = x.value();
    return x.tape().record(std::move(out), {x},
                           [x](Tape& t, const Tensor& g) { t.accumulate_grad(x, g); });
  }
  Tensor out = x.value();
  for (Real& v : out.data()) v = activate(kind, v);
  return x.tape().record(std::move(out), {x}, [x, kind](Tape& t, const Tensor& g) {
    const Tensor& xv = x.value();
    Tensor& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * activate_derivative(kind, xv[i]);
  });
}

Var leaky_relu(Var x, Real slope) {
  Tensor out = x.value();
  for (Real& v : out.data()) v = v > 0 ? v : slope * v;
  return x.tape().record(std::move(out), {x}, [x, slope](Tape& t, const Tensor& g) {
    const Tensor& xv = x.value();
    Tensor& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += xv[i] > 0 ? g[i] : slope * g[i];
  });
}

Var dropout(Var x, Real p, std::mt19937_64& rng, bool train) {
  if (!train || p <= 0) return x;
  if (p >= 1) throw ArgumentError("dropout probability must be < 1");
  const Real keep_scale = 1 / (1 - p);
  Tensor mask(x.value().shape());
  for (Real& m : mask.data()) m = uniform01(rng) < p ? 0 : keep_scale;
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return x.tape().record(std::move(out), {x},
                         [x, mask = std::move(mask)](Tape& t, const Tensor& g) {
                           Tensor& gx = t.grad_buffer(x);
                           for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
                         });
}

Var softmax_rows(Var logits) {
  const Tensor& lv = logits.value();
  const std::size_t rows = lv.rows(), cols = lv.cols();
  Tensor out(lv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t c = 0; c < cols; ++c) mx = std::max(mx, lv[r * cols + c]);
    Real s = 0;
    for (std::size_t c = 0; c < cols; ++c) s += out[r * cols + c] = std::exp(lv[r * cols + c] - mx);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] /= s;
  }
  Tensor y = out;
  return logits.tape().record(
      std::move(out), {logits}, [logits, y = std::move(y), rows, cols](Tape& t, const Tensor& g) {
        Tensor& gl = t.grad_buffer(logits);
        for (std::size_t r = 0; r < rows; ++r) {
          Real dot = 0;
          for (std::size_t c = 0; c < cols; ++c) dot += y[r * cols + c] * g[r * cols + c];
          for (std::size_t c = 0; c < cols; ++c)
            gl[r * cols + c] += y[r * cols + c] * (g[r * cols + c] - dot);
        }
      });
}

Var row_sum(Var x) {
  const Tensor& xv = x.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  Tensor out = Tensor::matrix(rows, 1);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r] += xv[r * cols + c];
  return x.tape().record(std::move(out), {x}, [x, cols](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i / cols];
  });
}

Var sum(Var x) {
  Real s = 0;
  for (Real v : x.value().data()) s += v;
  return x.tape().record(Tensor::scalar(s), {x}, [x](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(x);
    for (Real& v : gx.data()) v += g[0];
  });
}

Var mean(Var x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw ArgumentError("mean of an empty tensor");
  return scale(sum(x), Real{1} / static_cast<Real>(n));
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels,
                          std::span<const std::size_t> rows) {
  const Tensor& lv = logits.value();
  const std::size_t cols = lv.cols();
  if (labels.size() != lv.rows())
    throw DimensionError("softmax_cross_entropy: label count does not match logits rows");
  if (rows.empty()) throw ArgumentError("softmax_cross_entropy: empty row selection");
  Tensor probs = Tensor::matrix(rows.size(), cols);
  Real total = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t r = rows[i];
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= cols)
      throw IndexError("softmax_cross_entropy: label out of range at row " + std::to_string(r));
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t c = 0; c < cols; ++c) mx = std::max(mx, lv(r, c));
    Real s = 0;
    for (std::size_t c = 0; c < cols; ++c) s += probs(i, c) = std::exp(lv(r, c) - mx);
    for (std::size_t c = 0; c < cols; ++c) probs(i, c) /= s;
    total += mx + std::log(s) - lv(r, static_cast<std::size_t>(y));
  }
  const Real inv = Real{1} / static_cast<Real>(rows.size());
  std::vector<std::size_t> row_copy(rows.begin(), rows.end());
  std::vector<int> label_copy;
  label_copy.reserve(rows.size());
  for (std::size_t r : rows) label_copy.push_back(labels[r]);
  return logits.tape().record(
      Tensor::scalar(total * inv), {logits},
      [logits, probs = std::move(probs), row_copy = std::move(row_copy),
       label_copy = std::move(label_copy), inv, cols](Tape& t, const Tensor& g) {
        Tensor& gl = t.grad_buffer(logits);
        for (std::size_t i = 0; i < row_copy.size(); ++i) {
          const std::size_t r = row_copy[i];
          for (std::size_t c = 0; c < cols; ++c) {
            const Real target = static_cast<std::size_t>(label_copy[i]) == c ? 1 : 0;
            gl(r, c) += g[0] * inv * (probs(i, c) - target);
          }
        }
      });
}

Var sigmoid_binary_cross_entropy(Var logits, const Tensor& targets,
                                 std::span<const std::size_t> rows) {
  const Tensor& lv = logits.value();
  if (!targets.same_shape(lv))
    throw DimensionError("sigmoid_binary_cross_entropy: target shape " +
                         shape_string(targets.shape()) + " vs logits " +
                         shape_string(lv.shape()));
  if (rows.empty()) throw ArgumentError("sigmoid_binary_cross_entropy: empty row selection");
  const std::size_t cols = lv.cols();
  Real total = 0;
  for (std::size_t r : rows)
    for (std::size_t c = 0; c < cols; ++c) {
      const Real z = lv(r, c);
      total += std::max<Real>(z, 0) - z * targets(r, c) + std::log1p(std::exp(-std::abs(z)));
    }
  const Real inv = Real{1} / static_cast<Real>(rows.size() * cols);
  std::vector<std::size_t> row_copy(rows.begin(), rows.end());
  return logits.tape().record(
      Tensor::scalar(total * inv), {logits},
      [logits, targets, row_copy = std::move(row_copy), inv, cols](Tape& t, const Tensor& g) {
        Tensor& gl = t.grad_buffer(logits);
        const Tensor& lv2 = logits.value();
        for (std::size_t r : row_copy)
          for (std::size_t c = 0; c < cols; ++c)
            gl(r, c) += g[0] * inv * (stable_sigmoid(lv2(r, c)) - targets(r, c));
      });
}

}  // namespace lpgnas::ad
