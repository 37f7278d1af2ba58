#include <gtest/gtest.h>

#include <cmath>
#include <complex>

#include "cvh/grid.hpp"
#include "cvh/snapshot.hpp"

using namespace cvh;

namespace {

template <Placement P, int NC>
void fill_integers(Field<P, NC>& f, Rng& rng) {
  f.for_each([&](int c, int i, int j, int k, std::size_t id) {
    f.data()[id] = f.is_free(c, i, j, k) ? std::floor(rng.uniform(-50, 50)) : 0.0;
  });
}

template <Placement P, int NC>
double plain_dot(const Field<P, NC>& a, const Field<P, NC>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
  return s;
}

class BothModes : public ::testing::TestWithParam<Mode> {};

}  // namespace

TEST_P(BothModes, CurlGradAndDivCurlVanishExactly) {
  const BoxGrid g = BoxGrid::unit(16, GetParam());
  Rng rng(1);
  NodalVectorField u(g);
  fill_integers(u, rng);
  const auto cg = curl(grad(u));
  EXPECT_EQ(cg.max_abs(), 0.0);

  EdgeTensorField p(g);
  fill_integers(p, rng);
  EXPECT_EQ(div_faces(curl(p)).max_abs(), 0.0);

  // Real-valued fields: zero up to rounding.
  u.fill_random(rng);
  p.fill_random(rng);
  EXPECT_LE(curl(grad(u)).max_abs(), 1e-12 * grad(u).max_abs() * 16);
  EXPECT_LE(div_faces(curl(p)).max_abs(), 1e-12 * curl(p).max_abs() * 16);
}

TEST_P(BothModes, CurlAdjointness) {
  const BoxGrid g = BoxGrid::unit(8, GetParam());
  Rng rng(2);
  for (int s = 0; s < 100; ++s) {
    EdgeTensorField p(g);
    FaceTensorField q(g);
    p.fill_random(rng);
    q.fill_random(rng);
    const double lhs = inner(curl(p), q), rhs = inner(p, curl_adjoint(q));
    EXPECT_LE(std::abs(lhs - rhs), 1e-12 * norm_l2(p) * norm_l2(q));
  }
}

TEST_P(BothModes, DivIsNegativeGradAdjoint) {
  const BoxGrid g = BoxGrid::unit(8, GetParam());
  Rng rng(3);
  for (int s = 0; s < 20; ++s) {
    NodalVectorField u(g);
    EdgeTensorField t(g);
    u.fill_random(rng);
    t.fill_random(rng);
    EXPECT_LE(std::abs(inner(grad(u), t) + inner(u, div(t))), 1e-12 * norm_l2(grad(u)) * norm_l2(t));
  }
}

TEST_P(BothModes, CellEdgeAverageAndCornerRestrictionAreTransposes) {
  const BoxGrid g = BoxGrid::unit(6, GetParam());
  Rng rng(4);
  CellTensorField c(g);
  EdgeTensorField e(g);
  QuadTensorField qf(g);
  c.fill_random(rng);
  e.fill_random(rng);
  qf.fill_random(rng);
  EXPECT_NEAR(plain_dot(cell_to_edges(c), e), plain_dot(c, edges_to_cell(e)), 1e-12 * c.size());
  EXPECT_NEAR(plain_dot(corner_restrict(e), qf), plain_dot(e, corner_restrict_transpose(qf)), 1e-12 * qf.size());
}

TEST_P(BothModes, CornerQuadratureReproducesEdgeInnerProduct) {
  const BoxGrid g = BoxGrid::unit(6, GetParam());
  Rng rng(5);
  EdgeTensorField e(g);
  e.fill_random(rng);
  const auto r = corner_restrict(e);
  EXPECT_NEAR(inner(r, r) / 8.0, inner(e, e), 1e-12 * inner(e, e));
}

INSTANTIATE_TEST_SUITE_P(Grid, BothModes, ::testing::Values(Mode::torus, Mode::microhard));

TEST(Grid, FourierModeSymbol) {
  const int N = 8;
  const BoxGrid g = BoxGrid::unit(N, Mode::torus);
  const std::array<int, 3> kv{1, 2, 3};
  // p_{r,a} = Re(A_{ra} exp(i k.x)) evaluated at the edge origin node; the stencil
  // symbol is D_a = (exp(i k_a h) - 1)/h, so curl p = Re(exp(i k.x) (D x A_r)).
  std::array<std::complex<double>, 9> A;
  for (int c = 0; c < 9; ++c) A[c] = {0.3 * c - 1.0, 0.1 * c};
  const double h = 1.0 / N;
  std::array<std::complex<double>, 3> D;
  for (int a = 0; a < 3; ++a)
    D[a] = (std::exp(std::complex<double>(0, 2 * M_PI * kv[a] * h)) - 1.0) / h;
  EdgeTensorField p(g);
  p.for_each([&](int c, int i, int j, int k, std::size_t id) {
    const double ph = 2 * M_PI * (kv[0] * i + kv[1] * j + kv[2] * k) * h;
    p.data()[id] = (A[c] * std::exp(std::complex<double>(0, ph))).real();
  });
  const auto q = curl(p);
  double err = 0;
  q.for_each([&](int comp, int i, int j, int k, std::size_t id) {
    const int r = comp / 3, a = comp % 3, b = (a + 1) % 3, c = (a + 2) % 3;
    const double ph = 2 * M_PI * (kv[0] * i + kv[1] * j + kv[2] * k) * h;
    const auto sym = D[b] * A[3 * r + c] - D[c] * A[3 * r + b];
    err = std::max(err, std::abs(q.data()[id] - (sym * std::exp(std::complex<double>(0, ph))).real()));
  });
  EXPECT_LE(err, 1e-11);
}

TEST(Grid, AffineGradientAndConstants) {
  const BoxGrid g = BoxGrid::unit(8, Mode::microhard);
  const double A[3][3] = {{1, 2, 3}, {-1, 0.5, 2}, {0, 0, 4}};
  NodalVectorField u(g);
  u.for_each([&](int r, int i, int j, int k, std::size_t id) {
    u.data()[id] = (A[r][0] * i + A[r][1] * j + A[r][2] * k) * g.h[0];
  });
  const auto gu = grad(u);
  gu.for_each([&](int c, int i, int j, int k, std::size_t id) {
    if (gu.valid(c, i, j, k)) {
      EXPECT_NEAR(gu.data()[id], A[c / 3][c % 3], 1e-12);
    }
  });
  const BoxGrid t = BoxGrid::unit(8, Mode::torus);
  NodalVectorField c(t);
  for (auto& v : c.data()) v = 2.5;
  EXPECT_EQ(grad(c).max_abs(), 0.0);
  NodalScalar s(t);
  for (auto& v : s.data()) v = -3.0;
  EXPECT_NEAR(norm_l2(s), 3.0, 1e-14);
  EXPECT_EQ(inner(NodalScalar(t), s), 0.0);
}

TEST(Grid, MaskIdempotenceAndViolationMessage) {
  const BoxGrid g = BoxGrid::unit(5, Mode::microhard);
  Rng rng(6);
  EdgeTensorField p(g);
  for (auto& v : p.data()) v = rng.uniform();
  EdgeTensorField once = p;
  once.apply_mask();
  EdgeTensorField twice = once;
  twice.apply_mask();
  EXPECT_EQ(once.data(), twice.data());
  // A tangential x-edge on the face y=1 (j = N) is constrained.
  EdgeTensorField bad(g);
  bad(0, 2, 5, 2) = 1.0;
  try {
    curl(bad);
    FAIL() << "expected a mask violation";
  } catch (const PreconditionError& e) {
    EXPECT_NE(std::string(e.what()).find("y=1"), std::string::npos) << e.what();
  }
  EXPECT_THROW(BoxGrid::unit(3, Mode::torus), PreconditionError);
}

TEST(Grid, CurlCurlOutputIsMasked) {
  const BoxGrid g = BoxGrid::unit(6, Mode::microhard);
  Rng rng(8);
  EdgeTensorField p(g);
  p.fill_random(rng);
  EXPECT_NO_THROW(curl_curl(p).check_mask("test"));
}

TEST(Snapshot, RoundTrip) {
  const BoxGrid g = BoxGrid::unit(4, Mode::microhard);
  Rng rng(9);
  FaceTensorField q(g);
  q.fill_random(rng);
  const std::string bytes = encode_snapshot(q);
  EXPECT_EQ(bytes.substr(0, 4), "CVHF");
  EXPECT_EQ(bytes.size(), 4 + 4 * 6 + 8 * q.size());
  SnapshotHeader hdr;
  const auto vals = decode_snapshot(bytes, hdr);
  EXPECT_EQ(hdr.placement, Placement::face);
  EXPECT_EQ(hdr.ncomp, 9u);
  EXPECT_EQ(hdr.dims[0], 5u);
  EXPECT_EQ(vals, q.data());
  // Little-endian version word.
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5], 0);
}
