#include <cmath>
#include <limits>

#include "lpgnas/kernels/kernels.hpp"

namespace lpgnas::kernels::reference {

void gemm(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k,
          std::size_t n, bool trans_a, bool trans_b, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      Real acc = accumulate ? c[i * n + j] : Real{0};
      for (std::size_t p = 0; p < k; ++p) {
        const Real av = trans_a ? a[p * m + i] : a[i * k + p];
        const Real bv = trans_b ? b[j * k + p] : b[p * n + j];
        acc += av * bv;
      }
      c[i * n + j] = acc;
    }
  }
}

void spmm(const CsrMatrix& a, const Real* b, Real* c, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      Real acc = accumulate ? c[i * n + j] : Real{0};
      for (std::size_t p = a.offsets[i]; p < a.offsets[i + 1]; ++p)
        acc += a.values[p] * b[a.indices[p] * n + j];
      c[i * n + j] = acc;
    }
  }
}

void segment_reduce(const Real* values, std::size_t d, const Segments& seg,
                    Reduce mode, Real* out, std::size_t* argmax) {
  const std::size_t n = seg.num_segments;
  const std::size_t items = seg.num_items();
  if (mode == Reduce::max) {
    std::vector<bool> seen(n, false);
    for (std::size_t i = 0; i < n * d; ++i) {
      out[i] = 0;
      argmax[i] = std::numeric_limits<std::size_t>::max();
    }
    for (std::size_t e = 0; e < items; ++e) {
      const std::size_t s = seg.index[e];
      for (std::size_t j = 0; j < d; ++j) {
        const Real v = values[e * d + j];
        if (!seen[s] || v > out[s * d + j]) {
          out[s * d + j] = v;
          argmax[s * d + j] = e;
        }
      }
      seen[s] = true;
    }
    return;
  }
  for (std::size_t i = 0; i < n * d; ++i) out[i] = 0;
  for (std::size_t e = 0; e < items; ++e) {
    const std::size_t s = seg.index[e];
    for (std::size_t j = 0; j < d; ++j) out[s * d + j] += values[e * d + j];
  }
  if (mode == Reduce::mean) {
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t count = seg.count(s);
      if (count == 0) continue;
      for (std::size_t j = 0; j < d; ++j) out[s * d + j] /= static_cast<Real>(count);
    }
  }
}

void segment_softmax(const Real* scores, const Segments& seg, Real* out) {
  const std::size_t n = seg.num_segments;
  const std::size_t items = seg.num_items();
  std::vector<Real> max(n, -std::numeric_limits<Real>::infinity());
  std::vector<Real> sum(n, 0);
  for (std::size_t e = 0; e < items; ++e)
    max[seg.index[e]] = std::max(max[seg.index[e]], scores[e]);
  for (std::size_t e = 0; e < items; ++e) {
    out[e] = std::exp(scores[e] - max[seg.index[e]]);
    sum[seg.index[e]] += out[e];
  }
  for (std::size_t e = 0; e < items; ++e) out[e] /= sum[seg.index[e]];
}

void segment_softmax_backward(const Real* y, const Real* dy, const Segments& seg,
                              Real* d_scores) {
  std::vector<Real> dot(seg.num_segments, 0);
  const std::size_t items = seg.num_items();
  for (std::size_t e = 0; e < items; ++e) dot[seg.index[e]] += y[e] * dy[e];
  for (std::size_t e = 0; e < items; ++e) d_scores[e] = y[e] * (dy[e] - dot[seg.index[e]]);
}

void gather_rows(const Real* src, std::size_t d, std::span<const std::size_t> idx,
                 Real* out) {
  for (std::size_t e = 0; e < idx.size(); ++e)
    for (std::size_t j = 0; j < d; ++j) out[e * d + j] = src[idx[e] * d + j];
}

void scatter_add_rows(const Real* src, std::size_t d, const Segments& seg, Real* out) {
  for (std::size_t e = 0; e < seg.num_items(); ++e)
    for (std::size_t j = 0; j < d; ++j) out[seg.index[e] * d + j] += src[e * d + j];
}

}  // namespace lpgnas::kernels::reference
