#include <gtest/gtest.h>

#include "cvh/helmholtz.hpp"

using namespace cvh;

namespace {

double rel(const EdgeVectorField& a, const EdgeVectorField& b) { return norm_l2(a - b) / std::max(1e-300, norm_l2(b)); }

EdgeVectorField random_edge(const BoxGrid& g, std::uint64_t seed) {
  Rng rng(seed);
  EdgeVectorField v(g);
  v.fill_random(rng);
  return v;
}

}  // namespace

TEST(Helmholtz, PureGradientPureCurlConstant) {
  const BoxGrid g = BoxGrid::unit(12, Mode::torus);
  Rng rng(1);
  NodalScalar z0(g);
  z0.fill_random(rng);
  const auto vg = grad(z0);
  const auto pg = decompose(vg);
  EXPECT_LE(norm_l2(pg.curl_part()), 1e-10 * norm_l2(vg));
  EXPECT_LE(rel(pg.gradient_part(), vg), 1e-10);
  EXPECT_LE(norm_l2(pg.harmonic), 1e-10 * norm_l2(vg));

  EdgeVectorField a(g);
  a.fill_random(rng);
  const FaceVectorField w0 = curl(a);  // divergence free
  const auto vc = curl_adjoint(w0);
  const auto pc = decompose(vc);
  EXPECT_LE(norm_l2(pc.gradient_part()), 1e-10 * norm_l2(vc));
  EXPECT_LE(rel(pc.curl_part(), vc), 1e-10);

  EdgeVectorField c(g);
  c.for_each([&](int comp, int, int, int, std::size_t id) { c.data()[id] = 1.5 - comp; });
  const auto pk = decompose(c);
  EXPECT_LE(rel(pk.harmonic, c), 1e-14);
  EXPECT_LE(norm_l2(pk.gradient_part()) + norm_l2(pk.curl_part()), 1e-10);
}

TEST(Helmholtz, TorusReconstructionOrthogonalityIdempotence) {
  const BoxGrid g = BoxGrid::unit(16, Mode::torus);
  const auto v = random_edge(g, 2);
  const auto p = decompose(v);
  const double nv = norm_l2(v);
  EXPECT_LE(norm_l2(p.reconstruct() - v), 1e-10 * nv);
  const auto gz = p.gradient_part(), cw = p.curl_part();
  EXPECT_LE(std::abs(inner(gz, cw)), 1e-10 * nv * nv);
  EXPECT_LE(std::abs(inner(gz, p.harmonic)), 1e-10 * nv * nv);
  EXPECT_LE(std::abs(inner(cw, p.harmonic)), 1e-10 * nv * nv);
  EXPECT_LE(div_faces(p.stream).max_abs(), 1e-10 * nv);
  const auto again = decompose(p.harmonic + gz + cw);
  EXPECT_LE(rel(again.gradient_part(), gz), 1e-9);
  EXPECT_LE(rel(again.curl_part(), cw), 1e-9);
  EXPECT_LE(rel(again.harmonic, p.harmonic), 1e-9);
}

TEST(Helmholtz, CgPathAgreesWithFourierOnTorus) {
  const BoxGrid g = BoxGrid::unit(8, Mode::torus);
  const auto v = random_edge(g, 3);
  HelmholtzOptions cg;
  cg.method = HelmholtzMethod::cg;
  const auto a = decompose(v), b = decompose(v, cg);
  EXPECT_LE(rel(b.gradient_part(), a.gradient_part()), 1e-9);
  EXPECT_LE(rel(b.curl_part(), a.curl_part()), 1e-9);
  EXPECT_LE(rel(b.harmonic, a.harmonic), 1e-9);
}

TEST(Helmholtz, MicrohardCube) {
  const BoxGrid g = BoxGrid::unit(8, Mode::microhard);
  const auto v = random_edge(g, 4);
  const auto p = decompose(v);
  const double nv = norm_l2(v);
  EXPECT_LE(norm_l2(p.reconstruct() - v), 1e-10 * nv);
  // The cube is simply connected: nothing harmonic is left beyond solver error.
  EXPECT_LE(norm_l2(p.harmonic), 1e-9 * nv);
  EXPECT_LE(div_faces(p.stream).max_abs(), 1e-9 * nv);
  EXPECT_LE(std::abs(inner(p.gradient_part(), p.curl_part())), 1e-10 * nv * nv);
  // Different starting guesses give the same derived parts.
  HelmholtzOptions o;
  Rng rng(5);
  NodalScalar zg(g);
  zg.fill_random(rng);
  FaceVectorField wg(g);
  wg.fill_random(rng);
  o.z_guess = detail::FreeDofs<Placement::node, 1>(zg).gather(zg);
  o.w_guess = detail::FreeDofs<Placement::face, 3>(wg).gather(wg);
  const auto q = decompose(v, o);
  EXPECT_LE(norm_l2(q.gradient_part() - p.gradient_part()), 1e-9 * nv);
  EXPECT_LE(norm_l2(q.curl_part() - p.curl_part()), 1e-9 * nv);
  // Unmasked input is rejected.
  EdgeVectorField bad(g);
  bad(1, 0, 0, 3) = 1.0;
  EXPECT_THROW(decompose(bad), PreconditionError);
}

TEST(Helmholtz, NormReport) {
  const BoxGrid g = BoxGrid::unit(8, Mode::torus);
  const EdgeVectorField zero(g);
  const auto r0 = decomposition_norm_report(decompose(zero), zero);
  EXPECT_EQ(r0.stream_ratio, 0.0);
  EXPECT_EQ(r0.total_ratio, 0.0);
  // Smooth single mode: ratios stable under refinement.
  std::vector<double> ratios;
  for (int N : {8, 16, 32}) {
    const BoxGrid gg = BoxGrid::unit(N, Mode::torus);
    EdgeVectorField v(gg);
    v.for_each([&](int c, int i, int j, int k, std::size_t id) {
      const double x = (i + (c == 0 ? 0.5 : 0.0)) / N, y = (j + (c == 1 ? 0.5 : 0.0)) / N,
                   zc = (k + (c == 2 ? 0.5 : 0.0)) / N;
      v.data()[id] = c == 0 ? std::sin(2 * M_PI * y) + std::cos(2 * M_PI * x) : (c == 1 ? std::sin(2 * M_PI * zc) : 0.3);
    });
    const auto rep = decomposition_norm_report(decompose(v), v);
    EXPECT_LE(rep.reconstruction_error, 1e-10);
    ratios.push_back(rep.stream_ratio);
  }
  EXPECT_NEAR(ratios[1], ratios[2], 0.1 * ratios[2]);
  EXPECT_NEAR(ratios[0], ratios[1], 0.1 * ratios[1]);
}
