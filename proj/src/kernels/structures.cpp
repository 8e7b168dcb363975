#include <string>

#include "lpgnas/kernels/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace lpgnas::kernels {

Segments Segments::build(std::span<const std::size_t> index, std::size_t num_segments) {
  Segments seg;
  seg.num_segments = num_segments;
  seg.index.assign(index.begin(), index.end());
  seg.offsets.assign(num_segments + 1, 0);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= num_segments)
      throw IndexError("segment index " + std::to_string(index[i]) + " at item " +
                       std::to_string(i) + " out of range for " +
                       std::to_string(num_segments) + " segments");
    ++seg.offsets[index[i] + 1];
  }
  for (std::size_t s = 0; s < num_segments; ++s) seg.offsets[s + 1] += seg.offsets[s];
  seg.order.resize(index.size());
  std::vector<std::size_t> cursor(seg.offsets.begin(), seg.offsets.end() - 1);
  for (std::size_t i = 0; i < index.size(); ++i) seg.order[cursor[index[i]]++] = i;
  return seg;
}

void CsrMatrix::validate() const {
  if (offsets.size() != rows + 1 || offsets.front() != 0 || offsets.back() != nnz() ||
      indices.size() != nnz())
    throw StructuralError("CSR offsets inconsistent with nnz");
  for (std::size_t r = 0; r < rows; ++r)
    if (offsets[r] > offsets[r + 1]) throw StructuralError("CSR offsets not monotone");
  for (std::size_t c : indices)
    if (c >= cols) throw IndexError("CSR column index out of range");
}

CsrMatrix CsrMatrix::transpose() const {
  CsrMatrix t;
  t.rows = cols;
  t.cols = rows;
  t.offsets.assign(cols + 1, 0);
  for (std::size_t c : indices) ++t.offsets[c + 1];
  for (std::size_t c = 0; c < cols; ++c) t.offsets[c + 1] += t.offsets[c];
  t.indices.resize(nnz());
  t.values.resize(nnz());
  std::vector<std::size_t> cursor(t.offsets.begin(), t.offsets.end() - 1);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t p = offsets[r]; p < offsets[r + 1]; ++p) {
      const std::size_t dst = cursor[indices[p]]++;
      t.indices[dst] = r;
      t.values[dst] = values[p];
    }
  }
  return t;
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace lpgnas::kernels
