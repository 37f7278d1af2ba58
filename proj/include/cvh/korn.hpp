#pragma once

// Discrete Korn constant for incompatible tensor fields with a micro-hard boundary:
// the smallest C with ||p|| <= C (||sym p||^2 + ||curl p||^2)^(1/2) over masked
// edge tensor fields. Pointwise sym is evaluated at the cell-corner quadrature
// points, where ||p||^2 coincides with the edge inner product.

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "cvh/error.hpp"
#include "cvh/grid.hpp"

namespace cvh {

using SpMat = Eigen::SparseMatrix<double>;

/// Numbering of the free entries of an edge tensor field.
struct EdgeDofMap {
  std::vector<int> dof_of;          // per stored entry, -1 if not free
  std::vector<std::size_t> entry;   // per dof, stored entry index
  explicit EdgeDofMap(const EdgeTensorField& f) : dof_of(f.size(), -1) {
    f.for_each([&](int c, int i, int j, int k, std::size_t id) {
      if (f.is_free(c, i, j, k)) {
        dof_of[id] = static_cast<int>(entry.size());
        entry.push_back(id);
      }
    });
  }
  int size() const { return static_cast<int>(entry.size()); }
  Eigen::VectorXd gather(const EdgeTensorField& f) const {
    Eigen::VectorXd x(size());
    for (int d = 0; d < size(); ++d) x[d] = f.data()[entry[static_cast<std::size_t>(d)]];
    return x;
  }
  void scatter(const Eigen::VectorXd& x, EdgeTensorField& f) const {
    f.set_zero();
    for (int d = 0; d < size(); ++d) f.data()[entry[static_cast<std::size_t>(d)]] = x[d];
  }
};

/// Squared norms entering the Korn quotient for one field.
struct KornParts {
  double p2 = 0, sym2 = 0, curl2 = 0;
  double rayleigh() const { return (sym2 + curl2) / p2; }
  /// ||p|| / (||sym p|| + ||curl p||), a lower bound for the constant.
  double ratio() const { return std::sqrt(p2) / (std::sqrt(sym2) + std::sqrt(curl2)); }
};

inline KornParts korn_parts(const EdgeTensorField& p) {
  KornParts kp;
  kp.p2 = inner(p, p);
  const auto rp = corner_restrict(p);
  auto srp = rp;
  for (std::size_t cell = 0; cell < rp.per_comp(); ++cell)
    for (int d = 0; d < 8; ++d)
      for (int r = 0; r < 3; ++r)
        for (int a = 0; a < 3; ++a)
          srp.data()[static_cast<std::size_t>(9 * d + 3 * r + a) * rp.per_comp() + cell] =
              0.5 * (rp.data()[static_cast<std::size_t>(9 * d + 3 * r + a) * rp.per_comp() + cell] +
                     rp.data()[static_cast<std::size_t>(9 * d + 3 * a + r) * rp.per_comp() + cell]);
  kp.sym2 = inner(srp, srp) / 8.0;
  const auto q = curl(p);
  kp.curl2 = inner(q, q);
  return kp;
}

/// Sparse matrix of B = (1/8) R^T sym R + curl_adjoint curl on free dofs; the
/// generalized problem A x = lambda M x with M = cell volume * I reduces to B.
inline SpMat korn_matrix(const BoxGrid& g, const EdgeDofMap& dofs) {
  EdgeTensorField proto(g);
  std::vector<Eigen::Triplet<double>> trip;
  const auto& n = g.n;
  const double V = g.cell_volume();
  auto dof = [&](int c, int i, int j, int k) {
    if (i < 0 || j < 0 || k < 0 || i > n[0] || j > n[1] || k > n[2]) return -1;
    return dofs.dof_of[proto.index(c, i, j, k)];
  };
  // Symmetric part at corners: each corner contributes (1/8)|sym X|^2 with X_ra
  // the incident edge values, i.e. (1/8)(X_ra^2 + X_ra X_ar)/2 summed over (r, a).
  for (int k = 0; k < n[2]; ++k)
    for (int j = 0; j < n[1]; ++j)
      for (int i = 0; i < n[0]; ++i)
        for (int d = 0; d < 8; ++d) {
          std::array<int, 9> id{};
          for (int c = 0; c < 9; ++c) {
            const int a = c % 3;
            std::array<int, 3> x{i + (d & 1), j + ((d >> 1) & 1), k + ((d >> 2) & 1)};
            x[a] = std::array<int, 3>{i, j, k}[a];
            id[c] = dof(c, x[0], x[1], x[2]);
          }
          for (int r = 0; r < 3; ++r)
            for (int a = 0; a < 3; ++a) {
              const int u = id[3 * r + a], v = id[3 * a + r];
              if (u < 0) continue;
              trip.emplace_back(u, u, 0.5 / 8.0);
              if (v >= 0) trip.emplace_back(u, v, 0.5 / 8.0);
            }
        }
  // Curl part: sum over valid faces of (w_f / V) (curl p)_f^2.
  FaceTensorField face(g);
  const auto& h = g.h;
  face.for_each([&](int comp, int i, int j, int k, std::size_t) {
    if (!face.valid(comp, i, j, k)) return;
    const double w = face.weight(comp, i, j, k) / V;
    const int r = comp / 3, a = comp % 3, b = (a + 1) % 3, c = (a + 2) % 3;
    const auto xb = detail::shift(i, j, k, b, 1);
    const auto xc = detail::shift(i, j, k, c, 1);
    std::array<std::pair<int, double>, 4> row{{{dof(3 * r + c, xb[0], xb[1], xb[2]), 1.0 / h[b]},
                                               {dof(3 * r + c, i, j, k), -1.0 / h[b]},
                                               {dof(3 * r + b, xc[0], xc[1], xc[2]), -1.0 / h[c]},
                                               {dof(3 * r + b, i, j, k), 1.0 / h[c]}}};
    for (const auto& [u, cu] : row) {
      if (u < 0) continue;
      for (const auto& [v, cv] : row)
        if (v >= 0) trip.emplace_back(u, v, w * cu * cv);
    }
  });
  SpMat B(dofs.size(), dofs.size());
  B.setFromTriplets(trip.begin(), trip.end());
  B.makeCompressed();
  return B;
}

/// Nested-dissection ordering of the free edge dofs. Dofs couple only when they
/// share a cell, so the dofs on a node plane separate the two sides.
inline std::vector<int> nested_dissection(const EdgeTensorField& proto, const EdgeDofMap& dofs) {
  const auto& L = proto.dims();
  std::vector<std::array<int, 3>> X(static_cast<std::size_t>(dofs.size()));
  for (int d = 0; d < dofs.size(); ++d) {
    const std::size_t id = dofs.entry[static_cast<std::size_t>(d)];
    const int i = static_cast<int>(id % L[0]), j = static_cast<int>((id / L[0]) % L[1]);
    const int k = static_cast<int>((id / L[0] / L[1]) % L[2]), c = static_cast<int>(id / proto.per_comp());
    auto& x = X[static_cast<std::size_t>(d)];
    x = {2 * i, 2 * j, 2 * k};
    x[c % 3] += 1;  // half-cell units: edge midpoints are odd along the edge
  }
  std::vector<int> order;
  order.reserve(X.size());
  auto rec = [&](auto&& self, std::vector<int>& ids) -> void {
    if (ids.size() <= 96) {
      order.insert(order.end(), ids.begin(), ids.end());
      return;
    }
    std::array<int, 3> lo{1 << 30, 1 << 30, 1 << 30}, hi{-1, -1, -1};
    for (int d : ids)
      for (int a = 0; a < 3; ++a) {
        lo[a] = std::min(lo[a], X[static_cast<std::size_t>(d)][a]);
        hi[a] = std::max(hi[a], X[static_cast<std::size_t>(d)][a]);
      }
    int ax = 0;
    for (int a = 1; a < 3; ++a)
      if (hi[a] - lo[a] > hi[ax] - lo[ax]) ax = a;
    int mid = (lo[ax] + hi[ax]) / 2;
    if (mid % 2) ++mid;
    std::vector<int> left, right, sep;
    for (int d : ids) {
      const int x = X[static_cast<std::size_t>(d)][ax];
      (x < mid ? left : (x > mid ? right : sep)).push_back(d);
    }
    if (left.empty() || right.empty()) {
      order.insert(order.end(), ids.begin(), ids.end());
      return;
    }
    self(self, left);
    self(self, right);
    order.insert(order.end(), sep.begin(), sep.end());
  };
  std::vector<int> all(X.size());
  for (std::size_t d = 0; d < all.size(); ++d) all[d] = static_cast<int>(d);
  rec(rec, all);
  return order;
}

struct KornOptions {
  int block = 4;
  int max_iter = 400;    // total block iterations over all shifts
  int max_shifts = 40;   // factorizations
  double tol = 1e-8;     // eigen-residual |Bx - lambda x| / (lambda |x|)
  std::uint64_t seed = 17;
};

struct KornReport {
  double constant = 0;
  double lambda_min = 0;      // smallest Ritz value (upper bound for the eigenvalue)
  double lambda_lower = 0;    // certified lower bound: B - lambda_lower I is positive definite
  double residual = 0;
  int iterations = 0;
  int factorizations = 0;
  std::vector<double> history;
  std::vector<double> ritz;  // block Ritz values at convergence, ascending
  EdgeTensorField eigenvector;
};

/// Smallest eigenvalue of B by shifted block inverse iteration with Rayleigh-Ritz.
/// The low end of the spectrum is a dense cluster (fields close to gradients of
/// divergence-free displacements all have quotient near 1/2), so the shift is
/// driven up towards the smallest Ritz value; every accepted shift is certified
/// to lie below the spectrum by a successful LDL^T factorization with positive
/// pivots (Sylvester inertia).
inline KornReport korn_constant(const BoxGrid& g, const KornOptions& opt = {}) {
  if (g.torus())
    throw PreconditionError(
        "korn_constant requires a micro-hard grid: on the torus a constant skew field has sym p = 0 and "
        "curl p = 0, so no Korn constant exists");
  EdgeTensorField proto(g);
  const EdgeDofMap dofs(proto);
  const int n = dofs.size(), m = std::min(opt.block, n);
  const std::vector<int> order = nested_dissection(proto, dofs);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(n);
  for (int i = 0; i < n; ++i) perm.indices()[order[static_cast<std::size_t>(i)]] = i;
  SpMat B;
  B = korn_matrix(g, dofs).twistedBy(perm);
  SpMat I(n, n);
  I.setIdentity();

  KornReport rep;
  Eigen::SimplicialLDLT<SpMat, Eigen::Lower, Eigen::NaturalOrdering<int>> ldlt;
  bool analyzed = false;
  // Returns true when B - sigma I factors with strictly positive pivots.
  auto factor = [&](double sigma) {
    const SpMat S = B - sigma * I;
    if (!analyzed) {
      ldlt.analyzePattern(S);
      analyzed = true;
    }
    ldlt.factorize(S);
    ++rep.factorizations;
    return ldlt.info() == Eigen::Success && ldlt.vectorD().minCoeff() > 0.0;
  };

  Rng rng(opt.seed);
  Eigen::MatrixXd X(n, m);
  for (int c = 0; c < m; ++c)
    for (int i = 0; i < n; ++i) X(i, c) = rng.uniform(-1, 1);

  double sigma = 0.0;
  if (!factor(sigma)) throw ConvergenceError("korn_constant: operator is not positive definite", {});
  double theta = 0.0;
  const int iters_per_shift = 6;
  for (int shift = 0; shift < opt.max_shifts; ++shift) {
    for (int inner = 0; inner < iters_per_shift; ++inner) {
      if (rep.iterations >= opt.max_iter) break;
      Eigen::MatrixXd Y = ldlt.solve(X);
      const Eigen::MatrixXd Q =
          Eigen::HouseholderQR<Eigen::MatrixXd>(Y).householderQ() * Eigen::MatrixXd::Identity(n, m);
      const Eigen::MatrixXd BQ = B * Q;
      Eigen::MatrixXd H = Q.transpose() * BQ;
      H = 0.5 * (H + H.transpose());
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
      X = Q * es.eigenvectors();
      theta = es.eigenvalues()[0];
      const Eigen::VectorXd r = BQ * es.eigenvectors().col(0) - theta * X.col(0);
      const double res = r.norm() / (theta * X.col(0).norm());
      rep.history.push_back(res);
      ++rep.iterations;
      if (res <= opt.tol) {
        rep.lambda_min = theta;
        rep.lambda_lower = sigma;
        rep.residual = res;
        rep.constant = 1.0 / std::sqrt(theta);
        rep.ritz.assign(es.eigenvalues().data(), es.eigenvalues().data() + m);
        rep.eigenvector = EdgeTensorField(g);
        dofs.scatter(perm.inverse() * Eigen::VectorXd(X.col(0)), rep.eigenvector);
        if (!(theta > 0.0)) throw ConvergenceError("korn_constant: smallest eigenvalue is not positive", rep.history);
        return rep;
      }
    }
    if (rep.iterations >= opt.max_iter) break;
    // Move the shift most of the way to the smallest Ritz value; back off until
    // the shifted operator is positive definite again.
    double trial = sigma + 0.9 * (theta - sigma);
    while (!factor(trial)) {
      trial = sigma + 0.5 * (trial - sigma);
      if (rep.factorizations > opt.max_shifts) break;
    }
    if (rep.factorizations > opt.max_shifts) break;
    sigma = trial;
  }
  throw ConvergenceError("korn_constant: shifted inverse iteration did not converge", rep.history);
}

}  // namespace cvh
