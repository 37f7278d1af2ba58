#pragma once

// Discrete Helmholtz-Weyl decomposition of edge vector fields,
//   v = h + grad z + curl* w,
// with z nodal, w a divergence-free face field and curl* = curl_adjoint. On the
// torus h is the mean of v. With a micro-hard boundary, z vanishes on boundary
// nodes, w on boundary faces, and h is whatever the two solves leave over.

#include <array>
#include <cmath>
#include <complex>
#include <mutex>
#include <vector>

#include <fftw3.h>

#include "cvh/cg.hpp"
#include "cvh/grid.hpp"

namespace cvh {

struct HelmholtzParts {
  EdgeVectorField harmonic;  // h
  FaceVectorField stream;    // w
  NodalScalar potential;     // z
  EdgeVectorField gradient_part() const { return grad(potential); }
  EdgeVectorField curl_part() const { return curl_adjoint(stream); }
  EdgeVectorField reconstruct() const { return harmonic + gradient_part() + curl_part(); }
};

enum class HelmholtzMethod { automatic, fft, cg };

struct HelmholtzOptions {
  HelmholtzMethod method = HelmholtzMethod::automatic;
  double cg_tol = 1e-13;
  // Optional starting guesses for the CG path (empty = zero).
  std::vector<double> z_guess, w_guess;
};

namespace detail {

inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

/// In-place 3-D DFT of one lattice (x fastest), sign -1 forward, unnormalized.
inline void dft3(std::vector<std::complex<double>>& a, const std::array<int, 3>& n, int sign) {
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    plan = fftw_plan_dft_3d(n[2], n[1], n[0], reinterpret_cast<fftw_complex*>(a.data()),
                            reinterpret_cast<fftw_complex*>(a.data()), sign, FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  std::lock_guard<std::mutex> lock(fftw_planner_mutex());
  fftw_destroy_plan(plan);
}

inline HelmholtzParts decompose_fft(const EdgeVectorField& v) {
  const BoxGrid& g = v.grid();
  const auto n = g.n;
  const std::size_t M = g.num_cells();
  std::array<std::vector<std::complex<double>>, 3> vh;
  for (int a = 0; a < 3; ++a) {
    vh[a].resize(M);
    for (std::size_t i = 0; i < M; ++i) vh[a][i] = v.data()[a * M + i];
    dft3(vh[a], n, FFTW_FORWARD);
  }
  std::vector<std::complex<double>> zh(M);
  std::array<std::vector<std::complex<double>>, 3> wh;
  for (auto& w : wh) w.assign(M, 0.0);
  std::array<double, 3> mean{};
  for (int k = 0; k < n[2]; ++k)
    for (int j = 0; j < n[1]; ++j)
      for (int i = 0; i < n[0]; ++i) {
        const std::size_t id = (static_cast<std::size_t>(k) * n[1] + j) * n[0] + i;
        const std::array<int, 3> kk{i, j, k};
        if (i == 0 && j == 0 && k == 0) {
          for (int a = 0; a < 3; ++a) mean[a] = vh[a][id].real() / static_cast<double>(M);
          continue;
        }
        std::array<std::complex<double>, 3> D, x, r;
        double d2 = 0.0;
        for (int a = 0; a < 3; ++a) {
          const double th = 2.0 * M_PI * kk[a] / n[a];
          D[a] = (std::complex<double>(std::cos(th), std::sin(th)) - 1.0) / g.h[a];
          d2 += std::norm(D[a]);
          x[a] = vh[a][id];
        }
        std::complex<double> z = 0.0;
        for (int a = 0; a < 3; ++a) z += std::conj(D[a]) * x[a];
        z /= d2;
        for (int a = 0; a < 3; ++a) r[a] = x[a] - D[a] * z;
        zh[id] = z;
        for (int a = 0; a < 3; ++a) {
          const int b = (a + 1) % 3, c = (a + 2) % 3;
          wh[a][id] = (D[b] * r[c] - D[c] * r[b]) / d2;
        }
      }
  HelmholtzParts parts{EdgeVectorField(g), FaceVectorField(g), NodalScalar(g)};
  dft3(zh, n, FFTW_BACKWARD);
  for (std::size_t i = 0; i < M; ++i) parts.potential.data()[i] = zh[i].real() / static_cast<double>(M);
  for (int a = 0; a < 3; ++a) {
    dft3(wh[a], n, FFTW_BACKWARD);
    for (std::size_t i = 0; i < M; ++i) {
      parts.stream.data()[a * M + i] = wh[a][i].real() / static_cast<double>(M);
      parts.harmonic.data()[a * M + i] = mean[a];
    }
  }
  return parts;
}

/// Flat vector of the free entries of a field, and back.
template <Placement P, int NC>
struct FreeDofs {
  std::vector<std::size_t> entry;
  explicit FreeDofs(const Field<P, NC>& f) {
    f.for_each([&](int c, int i, int j, int k, std::size_t id) {
      if (f.is_free(c, i, j, k)) entry.push_back(id);
    });
  }
  Vec gather(const Field<P, NC>& f) const {
    Vec x(entry.size());
    for (std::size_t d = 0; d < entry.size(); ++d) x[d] = f.data()[entry[d]];
    return x;
  }
  void scatter(const Vec& x, Field<P, NC>& f) const {
    f.set_zero();
    for (std::size_t d = 0; d < entry.size(); ++d) f.data()[entry[d]] = x[d];
  }
};

/// Removes the per-component mean over the stored lattice (torus kernels).
template <Placement P, int NC>
std::function<void(Vec&)> torus_mean_projector(const BoxGrid& g) {
  if (!g.torus()) return {};
  return [](Vec& x) {
    const std::size_t per = x.size() / NC;
    for (int c = 0; c < NC; ++c) {
      double s = 0.0;
      for (std::size_t i = 0; i < per; ++i) s += x[c * per + i];
      s /= static_cast<double>(per);
      for (std::size_t i = 0; i < per; ++i) x[c * per + i] -= s;
    }
  };
}

inline HelmholtzParts decompose_cg(const EdgeVectorField& v, const HelmholtzOptions& opt) {
  const BoxGrid& g = v.grid();
  HelmholtzParts parts{EdgeVectorField(g), FaceVectorField(g), NodalScalar(g)};
  CgOptions co;
  co.rtol = opt.cg_tol;

  // Potential: (-div grad) z = -div v on free nodes.
  const FreeDofs<Placement::node, 1> nd(parts.potential);
  NodalScalar tmp(g);
  auto apply_lap = [&](const Vec& x, Vec& y) {
    nd.scatter(x, tmp);
    auto lz = div(grad(tmp));
    lz *= -1.0;
    y = nd.gather(lz);
  };
  auto rhs_z_f = div(v);
  rhs_z_f *= -1.0;
  const Vec rhs_z = nd.gather(rhs_z_f);
  double dz = 0.0;
  for (double hh : g.h) dz += 2.0 / (hh * hh);
  Vec z = opt.z_guess.size() == rhs_z.size() ? opt.z_guess : Vec(rhs_z.size(), 0.0);
  cg_solve(apply_lap, rhs_z, z, Vec(rhs_z.size(), dz), co, "helmholtz potential",
           torus_mean_projector<Placement::node, 1>(g));
  nd.scatter(z, parts.potential);

  // Stream: (curl curl* + div_f^T div_f) w = curl (v - grad z) on free faces.
  EdgeVectorField r = v - grad(parts.potential);
  r.apply_mask();
  const FreeDofs<Placement::face, 3> fd(parts.stream);
  FaceVectorField wt(g);
  auto apply_face = [&](const Vec& x, Vec& y) {
    fd.scatter(x, wt);
    auto out = curl(curl_adjoint(wt));
    out += div_faces_transpose(div_faces(wt));
    y = fd.gather(out);
  };
  const Vec rhs_w = fd.gather(curl(r));
  Vec w = opt.w_guess.size() == rhs_w.size() ? opt.w_guess : Vec(rhs_w.size(), 0.0);
  cg_solve(apply_face, rhs_w, w, Vec(rhs_w.size(), 2.0 * dz), co, "helmholtz stream",
           torus_mean_projector<Placement::face, 3>(g));
  fd.scatter(w, parts.stream);
  parts.harmonic = v - parts.gradient_part() - parts.curl_part();
  return parts;
}

}  // namespace detail

inline bool uniform_spacing(const BoxGrid& g) { return g.h[0] == g.h[1] && g.h[1] == g.h[2]; }

/// Micro-hard inputs must satisfy the tangential mask.
inline HelmholtzParts decompose(const EdgeVectorField& v, const HelmholtzOptions& opt = {}) {
  v.check_mask("decompose");
  HelmholtzMethod m = opt.method;
  if (m == HelmholtzMethod::automatic) m = v.grid().torus() ? HelmholtzMethod::fft : HelmholtzMethod::cg;
  if (m == HelmholtzMethod::fft) {
    if (!v.grid().torus()) throw PreconditionError("decompose: the Fourier path needs a torus grid");
    return detail::decompose_fft(v);
  }
  return detail::decompose_cg(v, opt);
}

/// Row r of an edge tensor field as an edge vector field.
inline EdgeVectorField tensor_row(const EdgeTensorField& p, int r) {
  EdgeVectorField v(p.grid());
  std::copy(p.data().begin() + 3 * r * p.per_comp(), p.data().begin() + 3 * (r + 1) * p.per_comp(), v.data().begin());
  return v;
}

inline std::array<HelmholtzParts, 3> decompose_rows(const EdgeTensorField& p, const HelmholtzOptions& opt = {}) {
  return {decompose(tensor_row(p, 0), opt), decompose(tensor_row(p, 1), opt), decompose(tensor_row(p, 2), opt)};
}

struct HelmholtzNormReport {
  double stream_ratio = 0;  // |w| / (|curl v| + |v|)
  double total_ratio = 0;   // (|h| + |w| + |z|) / |v|
  double harmonic_norm = 0;
  double reconstruction_error = 0;  // |h + grad z + curl* w - v| / |v|
};

inline HelmholtzNormReport decomposition_norm_report(const HelmholtzParts& parts, const EdgeVectorField& v) {
  HelmholtzNormReport rep;
  const double nv = norm_l2(v);
  rep.harmonic_norm = norm_l2(parts.harmonic);
  if (nv == 0.0) return rep;
  const double nw = norm_l2(parts.stream);
  rep.stream_ratio = nw / (norm_l2(curl(v)) + nv);
  rep.total_ratio = (rep.harmonic_norm + nw + norm_l2(parts.potential)) / nv;
  rep.reconstruction_error = norm_l2(parts.reconstruct() - v) / nv;
  return rep;
}

}  // namespace cvh
