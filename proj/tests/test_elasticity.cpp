#include <gtest/gtest.h>

#include <cmath>

#include "cvh/elasticity.hpp"

using namespace cvh;

namespace {

const IsotropicElasticity kSoft{1.0, 1.0};
const IsotropicElasticity kHard{2.0, 3.0};

double nodal_inner(const NodalVectorField& a, const NodalVectorField& b) {
  double s = 0.0;
  a.for_each([&](int c, int i, int j, int k, std::size_t id) { s += a.weight(c, i, j, k) * a.data()[id] * b.data()[id]; });
  return s;
}

double corner_inner(const QuadTensorField& a, const QuadTensorField& b) {
  return inner(a, b) / 8.0;
}

// u_r = c_r sin(pi x) sin(pi y) sin(pi z) and its exact body force for isotropic C.
constexpr std::array<double, 3> kC{1.0, -0.5, 0.75};

std::array<double, 3> exact_u(const std::array<double, 3>& x) {
  const double S = std::sin(M_PI * x[0]) * std::sin(M_PI * x[1]) * std::sin(M_PI * x[2]);
  return {kC[0] * S, kC[1] * S, kC[2] * S};
}

std::array<double, 3> exact_b(const std::array<double, 3>& x, const IsotropicElasticity& C) {
  std::array<double, 3> s, c;
  for (int a = 0; a < 3; ++a) {
    s[a] = std::sin(M_PI * x[a]);
    c[a] = std::cos(M_PI * x[a]);
  }
  auto d2 = [&](int r, int a) {  // d_r d_a S
    if (r == a) return -M_PI * M_PI * s[0] * s[1] * s[2];
    double v = M_PI * M_PI;
    for (int e = 0; e < 3; ++e) v *= (e == r || e == a) ? c[e] : s[e];
    return v;
  };
  std::array<double, 3> b{};
  for (int r = 0; r < 3; ++r) {
    double graddiv = 0.0;
    for (int a = 0; a < 3; ++a) graddiv += kC[a] * d2(r, a);
    const double lap = kC[r] * 3.0 * d2(0, 0);
    b[r] = -(C.mu * lap + (C.lambda + C.mu) * graddiv);
  }
  return b;
}

template <class F>
NodalVectorField nodal_from(const BoxGrid& g, F&& fn) {
  NodalVectorField u(g);
  u.for_each([&](int c, int i, int j, int k, std::size_t id) {
    if (u.is_free(c, i, j, k)) u.data()[id] = fn({i * g.h[0], j * g.h[1], k * g.h[2]})[static_cast<std::size_t>(c)];
  });
  return u;
}

}  // namespace

TEST(Elasticity, ElementKernelAndSymmetry) {
  const BoxGrid g = BoxGrid::unit(4, Mode::torus);
  const ElasticityOperator op(CoefficientField::homogeneous(g, kHard));
  Mat24 K = Mat24::Zero();
  const double w = g.cell_volume() / 8.0;
  for (int d = 0; d < 8; ++d) K += w * op.corner_matrix(d).transpose() * kHard.mandel() * op.corner_matrix(d);
  EXPECT_LE((K - K.transpose()).norm(), 1e-14 * K.norm());
  EXPECT_GE(Eigen::SelfAdjointEigenSolver<Mat24>(K).eigenvalues()[0], -1e-12 * K.norm());
  // Translations and infinitesimal rotations are strain free.
  for (int m = 0; m < 6; ++m) {
    Vec24 u;
    for (int ln = 0; ln < 8; ++ln) {
      const std::array<double, 3> x{(ln & 1) * g.h[0], ((ln >> 1) & 1) * g.h[1], ((ln >> 2) & 1) * g.h[2]};
      Tensor3 W = Tensor3::zero();
      std::array<double, 3> t{};
      if (m < 3) {
        t[static_cast<std::size_t>(m)] = 1.0;
      } else {
        const int a = m - 3, b = (a + 1) % 3;
        W(a, b) = 1.0;
        W(b, a) = -1.0;
      }
      for (int r = 0; r < 3; ++r) {
        u[3 * ln + r] = t[r];
        for (int c = 0; c < 3; ++c) u[3 * ln + r] += W(r, c) * x[c];
      }
    }
    EXPECT_LE((K * u).norm(), 1e-12 * K.norm());
  }
}

TEST(Elasticity, RecoversDiscreteManufacturedSolution) {
  const BoxGrid g = BoxGrid::unit(16, Mode::microhard);
  const auto coef = CoefficientField::sample(g, Pattern::checkerboard(), kSoft, kHard, 4);
  const ElasticityOperator op(coef, 1e-12);
  const auto u_star = nodal_from(g, exact_u);
  const auto b = op.operator_as_body_force(u_star);
  const auto sol = op.solve(nullptr, &b);
  EXPECT_LE(norm_l2(sol.u - u_star), 1e-9 * norm_l2(u_star));
}

TEST(Elasticity, SecondOrderGridConvergence) {
  std::vector<double> err;
  for (int N : {8, 16}) {
    const BoxGrid g = BoxGrid::unit(N, Mode::microhard);
    const auto b = nodal_from(g, [](const std::array<double, 3>& x) { return exact_b(x, kHard); });
    const auto sol = solve_elasticity(CoefficientField::homogeneous(g, kHard), nullptr, &b);
    err.push_back(norm_l2(sol.u - nodal_from(g, exact_u)));
  }
  EXPECT_GE(err[0] / err[1], 3.0) << err[0] << " " << err[1];
}

TEST(Elasticity, EnergyIdentity) {
  const BoxGrid g = BoxGrid::unit(8, Mode::microhard);
  const auto coef = CoefficientField::sample(g, Pattern::laminate(0.5, 1), kSoft, kHard, 4);
  Rng rng(3);
  NodalVectorField b(g);
  b.fill_random(rng);
  CellTensorField ep(g);
  for (int k = 0; k < 8; ++k)
    for (int j = 0; j < 8; ++j)
      for (int i = 0; i < 8; ++i) set_cell_tensor(ep, i, j, k, sym(rng.tensor(0.1)));
  const auto sol = solve_elasticity(coef, &ep, &b, 1e-12);
  const double bu = nodal_inner(b, sol.u);
  // Weak form tested with u itself.
  QuadTensorField eps_u = sol.strain;
  EXPECT_NEAR(corner_inner(sol.stress, eps_u), bu, 1e-9 * std::abs(bu));
  // Elastic energy = (b, u) - (sigma, eps_p) over two.
  QuadTensorField ep_c(g);
  for (int k = 0; k < 8; ++k)
    for (int j = 0; j < 8; ++j)
      for (int i = 0; i < 8; ++i)
        for (int d = 0; d < 8; ++d) set_corner_tensor(ep_c, d, i, j, k, cell_tensor(ep, i, j, k));
  const double energy = elastic_energy(sol, &ep);
  EXPECT_NEAR(2.0 * energy, bu - corner_inner(sol.stress, ep_c), 1e-9 * std::abs(bu));
  EXPECT_GT(energy, 0.0);
}

TEST(Elasticity, TorusEigenstrainAndMeanStrain) {
  const BoxGrid g = BoxGrid::unit(6, Mode::torus);
  const auto coef = CoefficientField::homogeneous(g, kHard);
  CellTensorField ep(g);
  Tensor3 e0 = sym(Rng(4).tensor());
  for (int k = 0; k < 6; ++k)
    for (int j = 0; j < 6; ++j)
      for (int i = 0; i < 6; ++i) set_cell_tensor(ep, i, j, k, e0);
  const auto sol = solve_elasticity(coef, &ep, nullptr);
  EXPECT_LE(sol.u.max_abs(), 1e-12);
  const Tensor3 expect = -1.0 * kHard.apply(e0);
  EXPECT_LE(frob_norm(cell_tensor(sol.stress_cell, 2, 3, 4) - expect), 1e-12 * frob_norm(expect));

  const ElasticityOperator op(coef);
  const Tensor3 E = sym(Rng(5).tensor());
  const auto s2 = op.solve(nullptr, nullptr, E);
  EXPECT_LE(frob_norm(cell_tensor(s2.stress_cell, 1, 1, 1) - kHard.apply(E)), 1e-12 * frob_norm(kHard.apply(E)));

  CellTensorField bad(g);
  bad(1, 0, 0, 0) = 1.0;
  EXPECT_THROW(solve_elasticity(coef, &bad, nullptr), PreconditionError);
}

TEST(Elasticity, LaminateClosedFormMatchesLayerEquations) {
  for (double f : {0.5, 0.3}) {
    const Stiffness C = laminate_effective_tensor(kSoft, kHard, f);
    // Independent route: per unit macro strain, strain jumps d (x) e0 chosen so that
    // traction on the layer normal is continuous and the mean strain is E.
    for (int m = 0; m < 6; ++m) {
      Mandel6 em = Mandel6::Zero();
      em[m] = 1.0;
      const Tensor3 E = from_mandel(em);
      auto layer_strain = [&](const Eigen::Vector3d& d, double scale) {
        Tensor3 j = Tensor3::zero();
        for (int r = 0; r < 3; ++r) j(r, 0) = scale * d[r];
        return E + sym(j);
      };
      auto jump = [&](const Eigen::Vector3d& d) {
        const Tensor3 s1 = kSoft.apply(layer_strain(d, 1.0));
        const Tensor3 s2 = kHard.apply(layer_strain(d, -f / (1 - f)));
        return Eigen::Vector3d(s1(0, 0) - s2(0, 0), s1(1, 0) - s2(1, 0), s1(2, 0) - s2(2, 0));
      };
      Eigen::Matrix3d J;
      const Eigen::Vector3d j0 = jump(Eigen::Vector3d::Zero());
      for (int c = 0; c < 3; ++c) J.col(c) = jump(Eigen::Vector3d::Unit(c)) - j0;
      const Eigen::Vector3d d = J.lu().solve(-j0);
      const Tensor3 sbar =
          f * kSoft.apply(layer_strain(d, 1.0)) + (1 - f) * kHard.apply(layer_strain(d, -f / (1 - f)));
      const Mandel6 col = to_mandel(sbar);
      for (int r = 0; r < 6; ++r) EXPECT_NEAR(C(r, m), col[r], 1e-12 * C.norm());
    }
  }
  // Equal fractions of shear moduli 1 and 3: across-layer shear is the harmonic mean.
  const Stiffness C = laminate_effective_tensor(kSoft, kHard, 0.5);
  EXPECT_NEAR(C(5, 5) / 2.0, 1.5, 1e-14);
  EXPECT_NEAR(C(3, 3) / 2.0, 2.0, 1e-14);
}

TEST(Elasticity, DiscreteLaminateIsExact) {
  const int N = 8;
  const BoxGrid g = BoxGrid::unit(N, Mode::torus);
  const auto coef = CoefficientField::sample(g, Pattern::laminate(0.5, 0), kSoft, kHard, N);
  const ElasticityOperator op(coef, 1e-12);
  const Stiffness C = laminate_effective_tensor(kSoft, kHard, 0.5);
  for (int m = 0; m < 6; ++m) {
    Mandel6 em = Mandel6::Zero();
    em[m] = 1.0;
    const auto sol = op.solve(nullptr, nullptr, from_mandel(em));
    Tensor3 mean = Tensor3::zero();
    for (std::size_t c = 0; c < 9; ++c) {
      double s = 0.0;
      for (std::size_t i = 0; i < sol.stress_cell.per_comp(); ++i) s += sol.stress_cell.data()[c * sol.stress_cell.per_comp() + i];
      mean[c] = s / static_cast<double>(sol.stress_cell.per_comp());
    }
    const Mandel6 col = to_mandel(mean);
    for (int r = 0; r < 6; ++r) EXPECT_NEAR(col[r], C(r, m), 1e-9 * C.norm());
  }
}

TEST(Elasticity, RejectsIndefiniteCoefficients) {
  const BoxGrid g = BoxGrid::unit(4, Mode::microhard);
  Stiffness bad = Stiffness::Identity();
  bad(0, 0) = -1.0;
  EXPECT_THROW(ElasticityOperator(CoefficientField(g, bad)), PreconditionError);
}
