#include <doctest.h>

#include <random>

#include "lpgnas/kernels/kernels.hpp"

using namespace lpgnas;
using namespace lpgnas::kernels;

namespace {

std::vector<Real> random_vector(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<Real> dist(-2, 2);
  std::vector<Real> v(n);
  for (Real& x : v) x = dist(rng);
  return v;
}

CsrMatrix random_csr(std::size_t rows, std::size_t cols, double density, std::mt19937_64& rng) {
  std::bernoulli_distribution keep(density);
  std::uniform_real_distribution<Real> dist(-1, 1);
  CsrMatrix m;
  m.rows = rows;
  m.cols = cols;
  m.offsets.push_back(0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c)
      if (keep(rng)) {
        m.indices.push_back(c);
        m.values.push_back(dist(rng));
      }
    m.offsets.push_back(m.indices.size());
  }
  return m;
}

}  // namespace

TEST_CASE("gemm: parallel matches reference bitwise for every transpose combination") {
  std::mt19937_64 rng(7);
  const std::size_t m = 37, k = 19, n = 23;
  const auto a = random_vector(m * k, rng);
  const auto b = random_vector(k * n, rng);
  for (bool ta : {false, true})
    for (bool tb : {false, true})
      for (bool acc : {false, true}) {
        auto c_ref = random_vector(m * n, rng);
        auto c_par = c_ref;
        reference::gemm(a.data(), b.data(), c_ref.data(), m, k, n, ta, tb, acc);
        parallel::gemm(a.data(), b.data(), c_par.data(), m, k, n, ta, tb, acc);
        CHECK(c_ref == c_par);
      }
}

TEST_CASE("gemm: identity leaves the operand unchanged") {
  std::vector<Real> eye{1, 0, 0, 1};
  std::vector<Real> x{3, -1, 2, 5, 0.5, 7};
  std::vector<Real> out(6);
  parallel::gemm(eye.data(), x.data(), out.data(), 2, 2, 3, false, false, false);
  CHECK(out == x);
}

TEST_CASE("spmm: parallel matches reference and the transpose is consistent") {
  std::mt19937_64 rng(11);
  const CsrMatrix a = random_csr(40, 30, 0.2, rng);
  a.validate();
  const auto b = random_vector(30 * 5, rng);
  std::vector<Real> ref(40 * 5), par(40 * 5);
  reference::spmm(a, b.data(), ref.data(), 5, false);
  parallel::spmm(a, b.data(), par.data(), 5, false);
  CHECK(ref == par);

  const CsrMatrix t = a.transpose();
  t.validate();
  CHECK(t.rows == 30);
  CHECK(t.nnz() == a.nnz());
  const CsrMatrix back = t.transpose();
  CHECK(back.offsets == a.offsets);
  CHECK(back.indices == a.indices);
  CHECK(back.values == a.values);
}

TEST_CASE("segments: build groups items stably and rejects bad indices") {
  std::vector<std::size_t> idx{2, 0, 2, 1, 0};
  const Segments seg = Segments::build(idx, 4);
  CHECK(seg.offsets == std::vector<std::size_t>{0, 2, 3, 5, 5});
  CHECK(seg.order == std::vector<std::size_t>{1, 4, 3, 0, 2});
  CHECK(seg.count(3) == 0);
  std::vector<std::size_t> bad{0, 4};
  CHECK_THROWS_AS(Segments::build(bad, 4), IndexError);
}

TEST_CASE("segment kernels: parallel matches reference bitwise") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> node(0, 19);
  std::vector<std::size_t> idx(120);
  for (auto& i : idx) i = node(rng);
  const Segments seg = Segments::build(idx, 25);  // some empty segments
  const std::size_t d = 6;
  const auto values = random_vector(idx.size() * d, rng);

  for (Reduce mode : {Reduce::sum, Reduce::mean, Reduce::max}) {
    std::vector<Real> ref(25 * d), par(25 * d);
    std::vector<std::size_t> aref(25 * d), apar(25 * d);
    reference::segment_reduce(values.data(), d, seg, mode, ref.data(), aref.data());
    parallel::segment_reduce(values.data(), d, seg, mode, par.data(), apar.data());
    CHECK(ref == par);
    if (mode == Reduce::max) CHECK(aref == apar);
  }

  const auto scores = random_vector(idx.size(), rng);
  std::vector<Real> sref(idx.size()), spar(idx.size());
  reference::segment_softmax(scores.data(), seg, sref.data());
  parallel::segment_softmax(scores.data(), seg, spar.data());
  CHECK(sref == spar);

  const auto dy = random_vector(idx.size(), rng);
  std::vector<Real> bref(idx.size()), bpar(idx.size());
  reference::segment_softmax_backward(sref.data(), dy.data(), seg, bref.data());
  parallel::segment_softmax_backward(sref.data(), dy.data(), seg, bpar.data());
  CHECK(bref == bpar);

  std::vector<Real> gref(idx.size() * d), gpar(idx.size() * d);
  const auto src = random_vector(25 * d, rng);
  reference::gather_rows(src.data(), d, idx, gref.data());
  parallel::gather_rows(src.data(), d, idx, gpar.data());
  CHECK(gref == gpar);

  std::vector<Real> cref(25 * d, 1.0), cpar(25 * d, 1.0);
  reference::scatter_add_rows(values.data(), d, seg, cref.data());
  parallel::scatter_add_rows(values.data(), d, seg, cpar.data());
  CHECK(cref == cpar);
}

TEST_CASE("segment_reduce max: ties resolve to the lowest item id") {
  std::vector<std::size_t> idx{0, 0, 0};
  const Segments seg = Segments::build(idx, 1);
  std::vector<Real> values{1, 3, 3};
  std::vector<Real> out(1);
  std::vector<std::size_t> arg(1);
  parallel::segment_reduce(values.data(), 1, seg, Reduce::max, out.data(), arg.data());
  CHECK(out[0] == 3);
  CHECK(arg[0] == 1);
}
