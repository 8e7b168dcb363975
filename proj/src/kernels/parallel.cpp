#include <cmath>
#include <cstdint>
#include <limits>

#include "lpgnas/kernels/kernels.hpp"

namespace lpgnas::kernels::parallel {

namespace {
using Index = std::int64_t;  // OpenMP loop counters must be signed
}

void gemm(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k,
          std::size_t n, bool trans_a, bool trans_b, bool accumulate) {
  const Index rows = static_cast<Index>(m);
  if (trans_b) {
#pragma omp parallel for schedule(static)
    for (Index ii = 0; ii < rows; ++ii) {
      const auto i = static_cast<std::size_t>(ii);
      for (std::size_t j = 0; j < n; ++j) {
        Real acc = accumulate ? c[i * n + j] : Real{0};
        const Real* brow = b + j * k;
        if (trans_a) {
          for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * brow[p];
        } else {
          const Real* arow = a + i * k;
          for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
        }
        c[i * n + j] = acc;
      }
    }
    return;
  }
#pragma omp parallel for schedule(static)
  for (Index ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    Real* crow = c + i * n;
    if (!accumulate)
      for (std::size_t j = 0; j < n; ++j) crow[j] = 0;
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = trans_a ? a[p * m + i] : a[i * k + p];
      const Real* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void spmm(const CsrMatrix& a, const Real* b, Real* c, std::size_t n, bool accumulate) {
  const Index rows = static_cast<Index>(a.rows);
#pragma omp parallel for schedule(dynamic, 64)
  for (Index ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    Real* crow = c + i * n;
    if (!accumulate)
      for (std::size_t j = 0; j < n; ++j) crow[j] = 0;
    for (std::size_t p = a.offsets[i]; p < a.offsets[i + 1]; ++p) {
      const Real v = a.values[p];
      const Real* brow = b + a.indices[p] * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += v * brow[j];
    }
  }
}

void segment_reduce(const Real* values, std::size_t d, const Segments& seg,
                    Reduce mode, Real* out, std::size_t* argmax) {
  const Index n = static_cast<Index>(seg.num_segments);
#pragma omp parallel for schedule(dynamic, 64)
  for (Index ss = 0; ss < n; ++ss) {
    const auto s = static_cast<std::size_t>(ss);
    Real* orow = out + s * d;
    const std::size_t begin = seg.offsets[s];
    const std::size_t end = seg.offsets[s + 1];
    if (mode == Reduce::max) {
      std::size_t* arow = argmax + s * d;
      for (std::size_t j = 0; j < d; ++j) {
        orow[j] = 0;
        arow[j] = std::numeric_limits<std::size_t>::max();
      }
      for (std::size_t p = begin; p < end; ++p) {
        const std::size_t e = seg.order[p];
        const Real* vrow = values + e * d;
        for (std::size_t j = 0; j < d; ++j) {
          if (p == begin || vrow[j] > orow[j]) {
            orow[j] = vrow[j];
            arow[j] = e;
          }
        }
      }
      continue;
    }
    for (std::size_t j = 0; j < d; ++j) orow[j] = 0;
    for (std::size_t p = begin; p < end; ++p) {
      const Real* vrow = values + seg.order[p] * d;
      for (std::size_t j = 0; j < d; ++j) orow[j] += vrow[j];
    }
    if (mode == Reduce::mean && end > begin) {
      const auto count = static_cast<Real>(end - begin);
      for (std::size_t j = 0; j < d; ++j) orow[j] /= count;
    }
  }
}

void segment_softmax(const Real* scores, const Segments& seg, Real* out) {
  const Index n = static_cast<Index>(seg.num_segments);
#pragma omp parallel for schedule(dynamic, 64)
  for (Index ss = 0; ss < n; ++ss) {
    const auto s = static_cast<std::size_t>(ss);
    const std::size_t begin = seg.offsets[s];
    const std::size_t end = seg.offsets[s + 1];
    Real max = -std::numeric_limits<Real>::infinity();
    for (std::size_t p = begin; p < end; ++p) max = std::max(max, scores[seg.order[p]]);
    Real sum = 0;
    for (std::size_t p = begin; p < end; ++p) {
      const std::size_t e = seg.order[p];
      out[e] = std::exp(scores[e] - max);
      sum += out[e];
    }
    for (std::size_t p = begin; p < end; ++p) out[seg.order[p]] /= sum;
  }
}

void segment_softmax_backward(const Real* y, const Real* dy, const Segments& seg,
                              Real* d_scores) {
  const Index n = static_cast<Index>(seg.num_segments);
#pragma omp parallel for schedule(dynamic, 64)
  for (Index ss = 0; ss < n; ++ss) {
    const auto s = static_cast<std::size_t>(ss);
    Real dot = 0;
    for (std::size_t p = seg.offsets[s]; p < seg.offsets[s + 1]; ++p) {
      const std::size_t e = seg.order[p];
      dot += y[e] * dy[e];
    }
    for (std::size_t p = seg.offsets[s]; p < seg.offsets[s + 1]; ++p) {
      const std::size_t e = seg.order[p];
      d_scores[e] = y[e] * (dy[e] - dot);
    }
  }
}

void gather_rows(const Real* src, std::size_t d, std::span<const std::size_t> idx,
                 Real* out) {
  const Index items = static_cast<Index>(idx.size());
#pragma omp parallel for schedule(static)
  for (Index ee = 0; ee < items; ++ee) {
    const auto e = static_cast<std::size_t>(ee);
    const Real* srow = src + idx[e] * d;
    Real* orow = out + e * d;
    for (std::size_t j = 0; j < d; ++j) orow[j] = srow[j];
  }
}

void scatter_add_rows(const Real* src, std::size_t d, const Segments& seg, Real* out) {
  const Index n = static_cast<Index>(seg.num_segments);
#pragma omp parallel for schedule(dynamic, 64)
  for (Index ss = 0; ss < n; ++ss) {
    const auto s = static_cast<std::size_t>(ss);
    Real* orow = out + s * d;
    for (std::size_t p = seg.offsets[s]; p < seg.offsets[s + 1]; ++p) {
      const Real* srow = src + seg.order[p] * d;
      for (std::size_t j = 0; j < d; ++j) orow[j] += srow[j];
    }
  }
}

}  // namespace lpgnas::kernels::parallel
