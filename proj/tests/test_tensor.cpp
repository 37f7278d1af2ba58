#include <gtest/gtest.h>

#include "cvh/random.hpp"
#include "cvh/tensor.hpp"

using namespace cvh;

TEST(Tensor, BasicProjections) {
  EXPECT_EQ(sym(Tensor3::identity()), Tensor3::identity());
  EXPECT_EQ(dev(Tensor3::identity()), Tensor3::zero());
  EXPECT_EQ(frob_inner(Tensor3::unit(0, 1), Tensor3::unit(1, 0)), 0.0);
  EXPECT_EQ(frob_inner(Tensor3::unit(0, 1), Tensor3::unit(0, 1)), 1.0);
}

TEST(Tensor, RandomDecompositionIdentities) {
  Rng rng(7);
  for (int s = 0; s < 10000; ++s) {
    const Tensor3 t = rng.tensor(3.0), u = rng.tensor();
    EXPECT_LE(frob_norm(sym(t) + skew(t) - t), 0x1p-52 * frob_norm(t));
    EXPECT_LE(std::abs(trace(dev(t))), 1e-15 * (1 + frob_norm(t)));
    EXPECT_LE(std::abs(frob_inner(sym(t), skew(u))), 1e-15 * frob_norm(t) * frob_norm(u) + 1e-300);
    const double n2 = frob_inner(t, t);
    EXPECT_NEAR(n2, frob_inner(sym(t), sym(t)) + frob_inner(skew(t), skew(t)), 1e-12 * n2);
    const Tensor3 st = sym(t);
    const double s2 = frob_inner(st, st);
    EXPECT_NEAR(s2, frob_inner(dev(st), dev(st)) + trace(t) * trace(t) / 3.0, 1e-12 * s2);
  }
}

TEST(Elasticity, ApplyExamples) {
  const IsotropicElasticity c{1.0, 1.0};
  EXPECT_EQ(c.apply(Tensor3::zero()), Tensor3::zero());
  EXPECT_EQ(c.apply(Tensor3::identity()), 5.0 * Tensor3::identity());
}

TEST(Elasticity, InverseSymmetryAndBound) {
  Rng rng(11);
  const IsotropicElasticity c{2.3, 0.7};
  const double bound = c.min_eigenvalue();
  for (int s = 0; s < 2000; ++s) {
    const Tensor3 e = sym(rng.tensor()), f = sym(rng.tensor());
    const Tensor3 back = c.apply_inverse(c.apply(e));
    EXPECT_LE(frob_norm(back - e), 1e-12 * frob_norm(e));
    EXPECT_NEAR(frob_inner(c.apply(e), f), frob_inner(e, c.apply(f)), 1e-12 * frob_norm(e) * frob_norm(f) * 10);
    EXPECT_GE(frob_inner(c.apply(e), e), (1 - 1e-12) * bound * frob_inner(e, e));
  }
  // The bound is attained: pure shear gives 2 mu, pure dilatation 3 lambda + 2 mu.
  const Tensor3 shear = sym(Tensor3::unit(0, 1));
  EXPECT_NEAR(frob_inner(c.apply(shear), shear) / frob_inner(shear, shear), 2 * c.mu, 1e-14);
}

TEST(Elasticity, RejectsAsymmetricInputAndIndefiniteModuli) {
  const IsotropicElasticity c{1.0, 1.0};
  EXPECT_THROW(c.apply(Tensor3::unit(0, 1)), PreconditionError);
  EXPECT_THROW((IsotropicElasticity{-1.0, 1.0}).validate(), PreconditionError);
  EXPECT_NO_THROW((IsotropicElasticity{-0.6, 1.0}).validate());
}

TEST(Elasticity, MandelMatchesTensorForm) {
  Rng rng(3);
  const IsotropicElasticity c{1.4, 0.9};
  for (int s = 0; s < 100; ++s) {
    const Tensor3 e = sym(rng.tensor());
    EXPECT_LE(frob_norm(apply_stiffness(c.mandel(), e) - c.apply(e)), 1e-13);
    EXPECT_NEAR(to_mandel(e).dot(to_mandel(e)), frob_inner(e, e), 1e-14);
  }
}
