#include <gtest/gtest.h>

#include <cmath>

#include "cvh/unfolding.hpp"

using namespace cvh;

namespace {

CellScalar random_cells(const BoxGrid& g, std::uint64_t seed) {
  Rng rng(seed);
  CellScalar v(g);
  v.fill_random(rng);
  return v;
}

double cell_integral(const CellScalar& v, const std::function<bool(int, int, int)>& keep) {
  double s = 0.0;
  v.for_each([&](int, int i, int j, int k, std::size_t id) {
    if (keep(i, j, k)) s += v.grid().cell_volume() * v.data()[id];
  });
  return s;
}

double cell_lq(const CellScalar& v, double q, const std::function<bool(int, int, int)>& keep) {
  double s = 0.0;
  v.for_each([&](int, int i, int j, int k, std::size_t id) {
    if (keep(i, j, k)) s += v.grid().cell_volume() * std::pow(std::abs(v.data()[id]), q);
  });
  return std::pow(s, 1.0 / q);
}

constexpr double kTwoPi = 2.0 * M_PI;

}  // namespace

TEST(Unfolding, EtaOneAndOscillationCollapse) {
  const BoxGrid g = BoxGrid::unit(8, Mode::microhard);
  const auto v = random_cells(g, 1);
  const auto geom1 = UnfoldGeometry::aligned(g, 1);
  const auto t1 = unfold_field(v, geom1);
  for (int k = 0; k < 8; ++k)
    for (int j = 0; j < 8; ++j)
      for (int i = 0; i < 8; ++i) EXPECT_EQ(t1(0, 0, geom1.y_index(i, j, k)), v(0, i, j, k));

  const BoxGrid gf = BoxGrid::unit(32, Mode::microhard);
  const auto geom = UnfoldGeometry::aligned(gf, 4);
  CellScalar s(gf);
  s.for_each([&](int, int i, int, int, std::size_t id) { s.data()[id] = std::sin(kTwoPi * (i + 0.5) / 32.0 * 4.0); });
  const auto ts = unfold_field(s, geom);
  for (std::size_t m = 0; m < geom.num_macro(); ++m)
    for (int x = 0; x < geom.c; ++x) {
      const double expect = std::sin(kTwoPi * geom.y_point(x, 0, 0)[0]);
      EXPECT_NEAR(ts(0, m, geom.y_index(x, 3, 5)), expect, 1e-12);
    }
}

TEST(Unfolding, IntegralNormAndLinearityIdentities) {
  const BoxGrid g = BoxGrid::unit(16, Mode::microhard);
  const auto geom = UnfoldGeometry::aligned(g, 4);
  const auto v = random_cells(g, 2), w = random_cells(g, 3);
  const auto tv = unfold_field(v, geom);
  const auto all = [](int, int, int) { return true; };
  const double iv = cell_integral(v, all);
  EXPECT_NEAR(tv.integral(0), iv, 1e-12 * std::abs(iv) + 1e-15);
  for (double q : {1.5, 2.0, 3.0}) {
    const double n = cell_lq(v, q, all);
    EXPECT_NEAR(tv.norm_lq(q), n, 1e-12 * n);
  }
  CellScalar lin = 2.5 * v + w;
  const auto tl = unfold_field(lin, geom);
  const auto expect = 2.5 * tv + unfold_field(w, geom);
  EXPECT_LE((tl - expect).norm_l2(), 1e-15 * tl.norm_l2());
  // Snapshot header carries the Y extents.
  SnapshotHeader h;
  const auto vals = decode_snapshot(tv.snapshot(), h);
  EXPECT_EQ(h.placement, Placement::two_scale);
  EXPECT_EQ(h.ydims[0], 4u);
  EXPECT_EQ(vals, tv.data());
}

TEST(Unfolding, OffsetBoxBoundaryLayer) {
  // Omega = [0, 18/16)^3 with eta = 1/4: the last slab of every axis is Lambda_eta.
  const BoxGrid g({18, 18, 18}, {1.0 / 16, 1.0 / 16, 1.0 / 16}, Mode::microhard);
  const auto geom = UnfoldGeometry::offset(g, 4);
  EXPECT_EQ(geom.whole[0], 4);
  EXPECT_EQ(geom.macro[0], 5);
  auto v = random_cells(g, 4);
  v *= 3.0;
  v.for_each([&](int, int, int, int, std::size_t id) { v.data()[id] += 0.5; });
  const auto tv = unfold_field(v, geom);
  const auto hat = [&](int i, int j, int k) { return geom.in_omega_hat(i, j, k); };
  const auto lam = [&](int i, int j, int k) { return !geom.in_omega_hat(i, j, k); };
  const double ihat = cell_integral(v, hat);
  EXPECT_NEAR(tv.integral(0), ihat, 1e-12 * std::abs(ihat));
  CellScalar av(g);
  av.for_each([&](int, int, int, int, std::size_t id) { av.data()[id] = std::abs(v.data()[id]); });
  const double mismatch = std::abs(tv.integral(0) - cell_integral(v, [](int, int, int) { return true; }));
  EXPECT_GT(mismatch, 0.0);
  EXPECT_LE(mismatch, cell_integral(av, lam) * (1 + 1e-12));
  EXPECT_NEAR(tv.norm_lq(2.0), cell_lq(v, 2.0, hat), 1e-12 * tv.norm_lq(2.0));
  // Rows of cells crossing the far faces are zero.
  for (std::size_t y = 0; y < geom.num_y(); ++y) EXPECT_EQ(tv(0, geom.macro_index(4, 1, 2), y), 0.0);
}

TEST(Unfolding, MisalignedEtaNamesDivisibility) {
  const BoxGrid g = BoxGrid::unit(16, Mode::microhard);
  try {
    UnfoldGeometry::aligned(g, 3);
    FAIL();
  } catch (const PreconditionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("divide"), std::string::npos) << msg;
    EXPECT_NE(msg.find("1/3"), std::string::npos) << msg;
  }
}

TEST(Unfolding, AverageY) {
  const BoxGrid g = BoxGrid::unit(16, Mode::microhard);
  const auto geom = UnfoldGeometry::aligned(g, 4);
  TwoScaleField<1> ts(geom);
  for (std::size_t m = 0; m < geom.num_macro(); ++m)
    for (std::size_t y = 0; y < geom.num_y(); ++y) ts(0, m, y) = 1.0 + 0.1 * static_cast<double>(m);
  const auto a = average_y(ts);
  EXPECT_NEAR(a(0, 5, 0, 0), 1.1, 1e-14);
  for (int z = 0; z < geom.c; ++z)
    for (int y = 0; y < geom.c; ++y)
      for (int x = 0; x < geom.c; ++x)
        for (std::size_t m = 0; m < geom.num_macro(); ++m)
          ts(0, m, geom.y_index(x, y, z)) = std::sin(kTwoPi * geom.y_point(x, y, z)[0]);
  EXPECT_LE(average_y(ts).max_abs(), 1e-15);
  // Piecewise eta-cell means of a random field.
  const auto v = random_cells(g, 5);
  const auto av = average_y(unfold_field(v, geom));
  for (int Z = 0; Z < 4; ++Z)
    for (int Y = 0; Y < 4; ++Y)
      for (int X = 0; X < 4; ++X) {
        double s = 0.0;
        for (int k = 0; k < 4; ++k)
          for (int j = 0; j < 4; ++j)
            for (int i = 0; i < 4; ++i) s += v(0, 4 * X + i, 4 * Y + j, 4 * Z + k);
        EXPECT_NEAR(av(0, 4 * X + 1, 4 * Y + 2, 4 * Z + 3), s / 64.0, 1e-15);
      }
}

TEST(Unfolding, FlowRulesAndResolventIdentity) {
  const BoxGrid g = BoxGrid::unit(16, Mode::microhard);
  const auto geom = UnfoldGeometry::aligned(g, 4);
  PeriodicFlowField constant{Pattern::homogeneous(), {FlowRule::norton_hoff(1.0, 2.0)}};
  const auto uc = unfold_flow(constant, geom);
  for (std::size_t m = 0; m < geom.num_macro(); ++m)
    for (std::size_t y = 0; y < geom.num_y(); ++y) EXPECT_EQ(uc.index[m * geom.num_y() + y], 0);

  PeriodicFlowField cb{Pattern::checkerboard(), {FlowRule::norton_hoff(0.5, 2.0), FlowRule::linear(3.0)}};
  const auto u = unfold_flow(cb, geom);
  for (std::size_t m = 1; m < geom.num_macro(); ++m)
    for (std::size_t y = 0; y < geom.num_y(); ++y) EXPECT_EQ(u.index[m * geom.num_y() + y], u.index[y]);
  for (int z = 0; z < geom.c; ++z)
    for (int y = 0; y < geom.c; ++y)
      for (int x = 0; x < geom.c; ++x)
        EXPECT_EQ(u.index[geom.y_index(x, y, z)], cb.pattern.phase(geom.y_point(x, y, z)));
  EXPECT_LE(resolvent_unfolding_discrepancy(cb, u, 0.7, 2000), 1e-12);

  // Boundary-layer filler: power law with the local exponent.
  const BoxGrid go({18, 18, 18}, {1.0 / 16, 1.0 / 16, 1.0 / 16}, Mode::microhard);
  const auto gout = UnfoldGeometry::offset(go, 4);
  const auto uo = unfold_flow(cb, gout);
  const auto& filler = uo.rule(gout.macro_index(4, 0, 0), 0);
  EXPECT_EQ(filler.kind, FlowKind::power_law);
  EXPECT_EQ(filler.q, cb.rule_at(gout.y_point(0, 0, 0)).q);
}

TEST(Unfolding, GradientSplitFirstOrder) {
  GradientSplitCase cs;
  cs.u = [](const Point3& x) {
    return Point3{std::sin(kTwoPi * x[0]) * std::cos(kTwoPi * x[1]), 0.5 * std::sin(kTwoPi * x[2]), 0.0};
  };
  cs.grad_u = [](const Point3& x) {
    Tensor3 t = Tensor3::zero();
    t(0, 0) = kTwoPi * std::cos(kTwoPi * x[0]) * std::cos(kTwoPi * x[1]);
    t(0, 1) = -kTwoPi * std::sin(kTwoPi * x[0]) * std::sin(kTwoPi * x[1]);
    t(1, 2) = 0.5 * kTwoPi * std::cos(kTwoPi * x[2]);
    return t;
  };
  cs.w = [](const Point3& x, const Point3& y) {
    const double phi = 1.0 + 0.5 * std::sin(kTwoPi * x[1]);
    return Point3{phi * std::sin(kTwoPi * y[0]), 0.3 * phi * std::cos(kTwoPi * y[2]), 0.0};
  };
  const auto rep = gradient_split_test(cs, {4, 8, 16});
  for (double r : rep.ratios()) EXPECT_GE(r, 1.8);
  EXPECT_LT(rep.mean_error[2], rep.mean_error[0]);

  // w = 0: only the macro gradient's own discretisation and sampling error remains.
  GradientSplitCase c0 = cs;
  c0.w = [](const Point3&, const Point3&) { return Point3{0, 0, 0}; };
  const auto r0 = gradient_split_test(c0, {4, 8, 16});
  for (std::size_t i = 0; i < 3; ++i) {
    // Independent: fine-grid distance of the cell gradient to grad u at the eta-cell centres.
    const int K = 4 << i, N = 4 * K;
    const BoxGrid g = BoxGrid::unit(N, Mode::torus);
    NodalVectorField u(g);
    u.for_each([&](int r, int a, int b, int c, std::size_t id) { u.data()[id] = cs.u({a * g.h[0], b * g.h[1], c * g.h[2]})[r]; });
    const auto G = detail::cell_gradient(u);
    double s = 0.0;
    for (int k = 0; k < N; ++k)
      for (int j = 0; j < N; ++j)
        for (int a = 0; a < N; ++a) {
          const Point3 xc{(a / 4 + 0.5) / K, (j / 4 + 0.5) / K, (k / 4 + 0.5) / K};
          s += g.cell_volume() * std::pow(frob_norm(cell_tensor(G, a, j, k) - cs.grad_u(xc)), 2);
        }
    EXPECT_NEAR(r0.error[i], std::sqrt(s), 1e-12 * std::sqrt(s));
    EXPECT_LT(r0.error[i], rep.error[i]);
  }

  EXPECT_THROW(gradient_split_test(cs, {4, 8}), ConfigError);
}

TEST(Unfolding, CurlCurlSplit) {
  // Pure oscillation: p = 0, phi = 1, single Y-mode. The limit is reproduced exactly.
  CurlSplitCase pure;
  const auto zero = [](const Point3&) { return Tensor3::zero(); };
  pure.p = pure.curl_p = pure.curlcurl_p = zero;
  pure.phi = [](const Point3&) { return 1.0; };
  pure.v1 = [](const Point3& y) {
    Tensor3 t = Tensor3::zero();
    t(0, 1) = std::sin(kTwoPi * y[0]);
    t(2, 0) = std::cos(kTwoPi * y[1]);
    return t;
  };
  const auto rp = curlcurl_split_test(pure, {4, 8, 16});
  for (double e : rp.error) EXPECT_LE(e, 1e-9);
  // Hand symbol on the 4-cell Y-grid: D*D sin(2 pi y) = (4/h^2) sin^2(pi h) sin(2 pi y) on
  // edges, and the edge-to-cell average contributes cos(pi h). Each mode has mean square 1/2.
  const double hy = 0.25;
  const double amp = 4.0 / (hy * hy) * std::pow(std::sin(M_PI * hy), 2) * std::cos(M_PI * hy);
  for (double nrm : rp.field_norm) EXPECT_NEAR(nrm, amp, 1e-12 * amp);
  EXPECT_LE(rp.aux_error[2], rp.aux_error[0]);

  CurlSplitCase cs = pure;
  cs.p = [](const Point3& x) {
    Tensor3 t = Tensor3::zero();
    t(0, 1) = std::sin(kTwoPi * x[0]);
    return t;
  };
  cs.curl_p = [](const Point3& x) {
    Tensor3 t = Tensor3::zero();
    t(0, 2) = kTwoPi * std::cos(kTwoPi * x[0]);
    return t;
  };
  cs.curlcurl_p = [](const Point3& x) {
    Tensor3 t = Tensor3::zero();
    t(0, 1) = kTwoPi * kTwoPi * std::sin(kTwoPi * x[0]);
    return t;
  };
  cs.phi = [](const Point3& x) { return 1.0 + 0.5 * std::sin(kTwoPi * x[1]); };
  const auto rep = curlcurl_split_test(cs, {4, 8, 16});
  for (double r : rep.ratios()) EXPECT_GE(r, 1.8);
  EXPECT_GT(rep.aux_error[0], rep.aux_error[1]);
  EXPECT_GT(rep.aux_error[1], rep.aux_error[2]);
  EXPECT_GT(rep.mean_error[0], rep.mean_error[1]);
  EXPECT_GT(rep.mean_error[1], rep.mean_error[2]);
}
