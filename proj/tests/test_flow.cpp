#include <gtest/gtest.h>

#include "cvh/flow.hpp"

using namespace cvh;

namespace {

double bisect(double (*f)(double), double lo, double hi) {
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) < 0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

std::vector<FlowRule> all_rules() {
  return {FlowRule::norton_hoff(1.0, 2.0), FlowRule::norton_hoff(0.5, 0.5), FlowRule::norton_hoff(0.0, 3.0),
          FlowRule::linear(1.0), FlowRule::linear(2.5, Projection::deviatoric),
          FlowRule::norton_hoff(0.8, 1.5, Projection::irrotational), FlowRule::power_law(1.5),
          FlowRule::power_law(3.0)};
}

}  // namespace

TEST(Flow, EvaluateExamples) {
  const auto nh = FlowRule::norton_hoff(1.0, 2.0);
  EXPECT_EQ(nh.evaluate(Tensor3::zero()), Tensor3::zero());
  const Tensor3 half = (0.5 / frob_norm(Tensor3::unit(0, 1))) * Tensor3::unit(0, 1);
  EXPECT_EQ(nh.evaluate(half), Tensor3::zero());
  // At the yield surface the bracket is zero.
  EXPECT_EQ(nh.evaluate(Tensor3::unit(1, 2)), Tensor3::zero());
  Rng rng(1);
  const auto id = FlowRule::norton_hoff(0.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    const Tensor3 s = rng.tensor();
    EXPECT_LE(frob_norm(id.evaluate(s) - s), 1e-15 * frob_norm(s));
  }
}

TEST(Flow, ResolventExamples) {
  const auto nh = FlowRule::norton_hoff(1.0, 2.0);
  EXPECT_EQ(nh.resolvent(0.5, Tensor3::zero()), Tensor3::zero());
  const Tensor3 inside = 0.9 * Tensor3::unit(2, 0);
  EXPECT_EQ(nh.resolvent(0.5, inside), inside);
  Rng rng(2);
  const auto id = FlowRule::norton_hoff(0.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    const Tensor3 w = rng.tensor(4.0);
    EXPECT_LE(frob_norm(id.resolvent(0.7, w) - w / 1.7), 1e-15 * frob_norm(w));
  }
  // |w| = 3, lambda = 0.5: modulus solves s + 0.5 (s - 1)^2 = 3.
  const double s_oracle = bisect([](double s) { return s + 0.5 * (s - 1) * (s - 1) - 3.0; }, 1.0, 3.0);
  Tensor3 dir = rng.tensor();
  dir *= 3.0 / frob_norm(dir);
  const Tensor3 v = nh.resolvent(0.5, dir);
  EXPECT_NEAR(frob_norm(v), s_oracle, 1e-13);
}

TEST(Flow, ResolventResidualAndIdentity) {
  Rng rng(3);
  for (const auto& g : all_rules()) {
    for (int i = 0; i < 2000; ++i) {
      const double lambda = std::pow(10.0, rng.uniform(-3, 1));
      const Tensor3 w = rng.tensor(std::pow(10.0, rng.uniform(-2, 1.5)));
      const Tensor3 v = g.resolvent(lambda, w);
      EXPECT_LE(frob_norm(v + lambda * g.evaluate(v) - w), 1e-12 * (1 + frob_norm(w))) << g.describe();
      const Tensor3 back = g.resolvent(lambda, v + lambda * g.evaluate(v));
      EXPECT_LE(frob_norm(back - v), 1e-11 * (1 + frob_norm(v))) << g.describe();
    }
  }
}

TEST(Flow, NonexpansiveAndYosidaMonotone) {
  Rng rng(4);
  for (const auto& g : all_rules()) {
    double worst_ne = 0, worst_mono = 0;
    for (int i = 0; i < 10000; ++i) {
      const Tensor3 w1 = rng.tensor(3.0), w2 = rng.tensor(3.0);
      worst_ne = std::max(worst_ne, frob_norm(g.resolvent(0.3, w1) - g.resolvent(0.3, w2)) - frob_norm(w1 - w2));
      worst_mono = std::min(worst_mono, frob_inner(g.yosida(0.3, w1) - g.yosida(0.3, w2), w1 - w2));
    }
    EXPECT_LE(worst_ne, 1e-10) << g.describe();
    EXPECT_GE(worst_mono, -1e-10) << g.describe();
  }
}

TEST(Flow, YosidaConsistencyAndLinearClosedForm) {
  Rng rng(5);
  const auto lin = FlowRule::linear(2.0);
  for (int i = 0; i < 100; ++i) {
    const Tensor3 v = rng.tensor(2.0);
    EXPECT_LE(frob_norm(lin.yosida(0.4, v) - (2.0 / (1 + 0.8)) * v), 1e-14 * frob_norm(v));
  }
  for (const auto& g : all_rules()) {
    for (int i = 0; i < 500; ++i) {
      const Tensor3 v = rng.tensor(3.0);
      const Tensor3 y = g.yosida(0.2, v);
      EXPECT_LE(frob_norm(y - g.evaluate(g.resolvent(0.2, v))), 1e-10 * (1 + frob_norm(v))) << g.describe();
    }
  }
}

TEST(Flow, YosidaApproachesRuleAsLambdaShrinks) {
  const auto nh = FlowRule::norton_hoff(1.0, 2.0);
  Rng rng(6);
  Tensor3 v = rng.tensor();
  v *= 2.5 / frob_norm(v);
  double prev = 1e300;
  for (double lambda : {1.0, 0.1, 0.01}) {
    const double d = frob_norm(nh.yosida(lambda, v) - nh.evaluate(v));
    EXPECT_LT(d, prev);
    prev = d;
  }
  EXPECT_LT(prev, 0.1);
}

TEST(Flow, WeightedResolventSolvesItsEquation) {
  Rng rng(7);
  for (auto g : all_rules()) {
    g = trace_free(g);
    for (int i = 0; i < 2000; ++i) {
      const double ls = std::pow(10.0, rng.uniform(-3, 1)), lk = std::pow(10.0, rng.uniform(-3, 1));
      const Tensor3 W = rng.tensor(std::pow(10.0, rng.uniform(-1, 1.5)));
      const Tensor3 S = g.weighted_resolvent(ls, lk, W);
      const Tensor3 G = g.evaluate(S);
      const Tensor3 res = S + ls * sym(G) + lk * skew(G) - W;
      EXPECT_LE(frob_norm(res), 1e-11 * (1 + frob_norm(W))) << g.describe();
      EXPECT_LE(std::abs(trace(G)), 1e-12 * (1 + frob_norm(G)));
    }
  }
}

TEST(Flow, ClassMCertificates) {
  const auto lin = class_m_certificate(FlowRule::linear(1.0), 2000, 5.0, 1);
  EXPECT_TRUE(lin.passed);
  EXPECT_DOUBLE_EQ(lin.alpha, 1.0);
  EXPECT_EQ(lin.m, 0.0);
  EXPECT_GE(lin.worst_margin, -1e-12);
  EXPECT_LE(lin.worst_margin, 1e-12);  // equality case

  const auto nh = class_m_certificate(FlowRule::norton_hoff(1.0, 2.0), 10000, 6.0, 2);
  EXPECT_TRUE(nh.passed);
  EXPECT_DOUBLE_EQ(nh.q, 3.0);
  EXPECT_DOUBLE_EQ(nh.q_star, 1.5);
  EXPECT_TRUE(nh.fitted);
  EXPECT_GT(nh.m, 0.0);
  EXPECT_GE(nh.min_monotonicity, -1e-12);

  FlowRule bad = FlowRule::linear(1.0);
  bad.q_star = 3.0;
  EXPECT_THROW(class_m_certificate(bad, 10, 1.0, 3), ConfigError);
}

TEST(Flow, GraphDistance) {
  Rng rng(8);
  std::vector<Tensor3> pts;
  for (int i = 0; i < 200; ++i) pts.push_back(rng.tensor(3.0));
  const auto a = FlowRule::norton_hoff(1.0, 2.0);
  EXPECT_EQ(graph_distance(a, a, 0.5, pts), 0.0);
  const double eps = 0.1, lambda = 0.5;
  double expect = 0;
  for (const auto& v : pts)
    expect = std::max(expect, frob_norm(v) * lambda * eps / ((1 + lambda) * (1 + lambda * (1 + eps))));
  EXPECT_NEAR(graph_distance(FlowRule::linear(1.0), FlowRule::linear(1.0 + eps), lambda, pts), expect, 1e-14);
  double prev = 1e300;
  for (int n = 1; n <= 6; ++n) {
    const double d = graph_distance(FlowRule::norton_hoff(1.0 + std::pow(10.0, -n), 2.0), a, lambda, pts);
    EXPECT_LT(d, prev);
    prev = d;
  }
  EXPECT_LT(prev, 1e-6);
}
