#pragma once

// Jacobi-preconditioned conjugate gradients on flat coefficient vectors.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "cvh/error.hpp"
#include "cvh/parallel.hpp"

namespace cvh {

using Vec = std::vector<double>;

inline double dot(const Vec& a, const Vec& b) {
  return ordered_sum(a.size(), [&](std::size_t i) { return a[i] * b[i]; });
}
inline double norm2(const Vec& a) { return std::sqrt(dot(a, a)); }

struct CgOptions {
  double rtol = 1e-10;
  int max_iter = 20000;
};

struct CgResult {
  int iterations = 0;
  double residual = 0.0;  // final ||b - Ax|| / ||b||
  std::vector<double> history;
};

/// Solves A x = b for symmetric positive (semi)definite A, starting from x.
/// `diag` (may be empty) is the Jacobi preconditioner. `project` (may be empty)
/// removes a known kernel from b and from every residual, so semidefinite
/// operators are solved on the orthogonal complement of the kernel.
inline CgResult cg_solve(const std::function<void(const Vec&, Vec&)>& apply, const Vec& b_in, Vec& x,
                         const Vec& diag, const CgOptions& opt, const std::string& what,
                         const std::function<void(Vec&)>& project = {}) {
  const std::size_t n = b_in.size();
  if (x.size() != n) x.assign(n, 0.0);
  Vec b = b_in;
  if (project) project(b);
  CgResult res;
  const double bnorm = norm2(b);
  if (bnorm == 0.0) {
    std::fill(x.begin(), x.end(), 0.0);
    return res;
  }
  Vec r(n), z(n), p(n), Ap(n);
  apply(x, Ap);
  for (std::size_t i = 0; i < n; ++i) r[i] = b[i] - Ap[i];
  if (project) project(r);
  auto precond = [&](const Vec& in, Vec& out) {
    for (std::size_t i = 0; i < n; ++i) out[i] = diag.empty() ? in[i] : (diag[i] > 0.0 ? in[i] / diag[i] : 0.0);
    if (project) project(out);
  };
  double rel = norm2(r) / bnorm;
  res.history.push_back(rel);
  if (rel <= opt.rtol) {
    res.residual = rel;
    return res;
  }
  precond(r, z);
  p = z;
  double rz = dot(r, z);
  for (int it = 1; it <= opt.max_iter; ++it) {
    apply(p, Ap);
    const double pAp = dot(p, Ap);
    if (!(pAp > 0.0)) throw ConvergenceError(what + ": CG breakdown (operator not positive definite)", res.history);
    const double alpha = rz / pAp;
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += alpha * p[i];
      r[i] -= alpha * Ap[i];
    }
    if (project) project(r);
    rel = norm2(r) / bnorm;
    res.history.push_back(rel);
    res.iterations = it;
    if (rel <= opt.rtol) {
      // Guard against drift of the recursive residual.
      apply(x, Ap);
      for (std::size_t i = 0; i < n; ++i) r[i] = b[i] - Ap[i];
      if (project) project(r);
      rel = norm2(r) / bnorm;
      if (rel <= opt.rtol * 10.0) {
        res.residual = rel;
        return res;
      }
    }
    precond(r, z);
    const double rz_new = dot(r, z);
    const double beta = rz_new / rz;
    rz = rz_new;
    for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
  }
  throw ConvergenceError(what + ": CG did not reach relative residual " + std::to_string(opt.rtol), res.history);
}

}  // namespace cvh
