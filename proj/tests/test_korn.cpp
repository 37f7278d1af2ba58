#include <gtest/gtest.h>

#include "cvh/korn.hpp"

using namespace cvh;

TEST(Korn, MatrixMatchesQuadraticForm) {
  const BoxGrid g = BoxGrid::unit(5, Mode::microhard);
  EdgeTensorField p(g);
  const EdgeDofMap dofs(p);
  const SpMat B = korn_matrix(g, dofs);
  Rng rng(1);
  for (int s = 0; s < 5; ++s) {
    p.fill_random(rng);
    const auto x = dofs.gather(p);
    const auto kp = korn_parts(p);
    const double quad = x.dot(B * x) * g.cell_volume();
    EXPECT_NEAR(quad, kp.sym2 + kp.curl2, 1e-12 * quad);
    EXPECT_NEAR(kp.p2, x.squaredNorm() * g.cell_volume(), 1e-12 * kp.p2);
  }
}

TEST(Korn, ConvergesAndBoundsSampleRatios) {
  const BoxGrid g = BoxGrid::unit(6, Mode::microhard);
  const auto rep = korn_constant(g);
  EXPECT_LE(rep.residual, 1e-8);
  EXPECT_LE(rep.lambda_lower, rep.lambda_min);
  EXPECT_GT(rep.lambda_min, 0.0);
  // Rayleigh quotient of the eigenvector reproduces lambda and is scale invariant.
  const auto kp = korn_parts(rep.eigenvector);
  EXPECT_NEAR(kp.rayleigh(), rep.lambda_min, 1e-8 * rep.lambda_min);
  auto scaled = rep.eigenvector;
  scaled *= 37.5;
  EXPECT_NEAR(korn_parts(scaled).rayleigh(), kp.rayleigh(), 1e-12 * kp.rayleigh());
  Rng rng(2);
  for (int s = 0; s < 20; ++s) {
    EdgeTensorField p(g);
    p.fill_random(rng);
    EXPECT_LE(korn_parts(p).ratio(), rep.constant * (1 + 1e-12));
  }
  // Symmetric-at-corners fields have ||sym p|| = ||p||, so their ratio is at most 1.
  EdgeTensorField d(g);
  d.for_each([&](int c, int i, int j, int k, std::size_t id) {
    if (c % 4 == 0 && d.is_free(c, i, j, k)) d.data()[id] = 1.0;
  });
  EXPECT_LE(korn_parts(d).ratio(), 1.0);
}

TEST(Korn, TorusRejected) {
  try {
    korn_constant(BoxGrid::unit(6, Mode::torus));
    FAIL();
  } catch (const PreconditionError& e) {
    EXPECT_NE(std::string(e.what()).find("skew"), std::string::npos);
  }
  // The counterexample itself: constant skew field on the torus.
  EdgeTensorField w(BoxGrid::unit(6, Mode::torus));
  w.for_each([&](int c, int, int, int, std::size_t id) {
    w.data()[id] = (c == 1) ? 1.0 : (c == 3 ? -1.0 : 0.0);
  });
  const auto kp = korn_parts(w);
  EXPECT_GT(kp.p2, 0.0);
  EXPECT_LE(kp.sym2, 1e-30);
  EXPECT_LE(kp.curl2, 1e-30);
}
