#pragma once

// Monotone flow rules g, resolvents j_lambda = (I + lambda g)^-1, Yosida
// approximations and class-M certificates.
//
// Every rule has the form g(S) = P^T G(P S) with P an orthogonal projection
// (identity, deviatoric part, or deviatoric part of the symmetric part) and G
// radial, G(X) = phi(|X|) X / |X|. Resolvents therefore reduce to a scalar
// root find on the modulus of the projected argument.

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "cvh/error.hpp"
#include "cvh/pattern.hpp"
#include "cvh/random.hpp"
#include "cvh/tensor.hpp"

namespace cvh {

enum class FlowKind { norton_hoff, linear, power_law };
enum class Projection { none, deviatoric, irrotational };

inline Tensor3 project(Projection p, const Tensor3& t) {
  switch (p) {
    case Projection::none: return t;
    case Projection::deviatoric: return dev(t);
    case Projection::irrotational: return dev(sym(t));
  }
  return t;
}

/// Increasing scalar function root on [lo, hi] with f(lo) <= 0 <= f(hi), by
/// Illinois regula falsi with bisection fallback.
template <class F>
double increasing_root(F&& f, double lo, double hi, const char* what) {
  double flo = f(lo), fhi = f(hi);
  if (flo == 0.0) return lo;
  if (fhi == 0.0) return hi;
  if (flo > 0.0 || fhi < 0.0) {
    std::ostringstream os;
    os << what << ": root not bracketed, f(" << lo << ") = " << flo << ", f(" << hi << ") = " << fhi;
    throw ConvergenceError(os.str(), {});
  }
  int side = 0;
  std::vector<double> widths;
  for (int it = 0; it < 400; ++it) {
    double x = (lo * fhi - hi * flo) / (fhi - flo);
    if (!(x > lo && x < hi) || it % 4 == 3) x = 0.5 * (lo + hi);
    const double fx = f(x);
    if (fx == 0.0) return x;
    if (fx < 0.0) {
      lo = x;
      flo = fx;
      if (side == -1) fhi *= 0.5;
      side = -1;
    } else {
      hi = x;
      fhi = fx;
      if (side == 1) flo *= 0.5;
      side = 1;
    }
    widths.push_back(hi - lo);
    if (hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(std::abs(lo), std::abs(hi))) break;
  }
  if (hi - lo > 1e-10 * std::max(1.0, std::abs(hi))) {
    std::ostringstream os;
    os << what << ": root find stalled in bracket [" << lo << ", " << hi << "]";
    throw ConvergenceError(os.str(), widths);
  }
  // Return whichever end has the smaller |f|.
  return std::abs(flo) <= std::abs(fhi) ? lo : hi;
}

struct FlowRule {
  FlowKind kind = FlowKind::linear;
  double sigma_y = 0.0;  // norton_hoff
  double r = 1.0;        // norton_hoff exponent
  double a = 1.0;        // linear fluidity
  double p = 2.0;        // power_law exponent
  Projection projection = Projection::none;
  // Declared class-M data; NaN means "fit numerically" for alpha and m.
  double q = 2.0;
  double q_star = 2.0;
  double alpha = std::numeric_limits<double>::quiet_NaN();
  double m_bound = std::numeric_limits<double>::quiet_NaN();

  static FlowRule norton_hoff(double sigma_y, double r, Projection proj = Projection::none) {
    FlowRule g;
    g.kind = FlowKind::norton_hoff;
    g.sigma_y = sigma_y;
    g.r = r;
    g.projection = proj;
    g.q = r + 1.0;
    g.q_star = (r + 1.0) / r;
    g.validate();
    return g;
  }
  static FlowRule linear(double a, Projection proj = Projection::none) {
    FlowRule g;
    g.kind = FlowKind::linear;
    g.a = a;
    g.projection = proj;
    g.q = g.q_star = 2.0;
    g.alpha = 2.0 * a / (1.0 + a * a);
    g.m_bound = 0.0;
    g.validate();
    return g;
  }
  /// |v|^(p-2) v, the filler used on the boundary layer of the unfolded domain.
  static FlowRule power_law(double p) {
    FlowRule g;
    g.kind = FlowKind::power_law;
    g.p = p;
    g.q = p;
    g.q_star = p / (p - 1.0);
    g.alpha = 1.0;
    g.m_bound = 0.0;
    g.validate();
    return g;
  }

  void validate() const {
    if (kind == FlowKind::norton_hoff && (!(sigma_y >= 0.0) || !(r > 0.0)))
      throw ConfigError("norton_hoff: need sigma_y >= 0 and r > 0");
    if (kind == FlowKind::linear && !(a > 0.0)) throw ConfigError("linear: fluidity a must be positive");
    if (kind == FlowKind::power_law && !(p > 1.0)) throw ConfigError("power_law: exponent p must exceed 1");
    if (!(q > 1.0) || !(q_star > 1.0) || std::isinf(q) || std::isinf(q_star))
      throw ConfigError("flow rule exponents must satisfy 1 < q, q* < infinity");
    if (std::abs(1.0 / q + 1.0 / q_star - 1.0) > 1e-12)
      throw ConfigError("flow rule exponents are not conjugate: 1/q + 1/q* = " + std::to_string(1.0 / q + 1.0 / q_star));
  }

  /// Radial profile phi(s) >= 0, nondecreasing, phi(0) = 0.
  double phi(double s) const {
    switch (kind) {
      case FlowKind::norton_hoff: return s > sigma_y ? std::pow(s - sigma_y, r) : 0.0;
      case FlowKind::linear: return a * s;
      case FlowKind::power_law: return s > 0.0 ? std::pow(s, p - 1.0) : 0.0;
    }
    return 0.0;
  }

  /// Largest modulus at which phi vanishes identically (the yield radius).
  double yield_radius() const { return kind == FlowKind::norton_hoff ? sigma_y : 0.0; }

  Tensor3 evaluate(const Tensor3& S) const {
    const Tensor3 X = project(projection, S);
    const double s = frob_norm(X);
    if (s <= yield_radius() || s == 0.0) return Tensor3::zero();
    return (phi(s) / s) * X;
  }

  /// Modulus s solving s + lambda phi(s) = t.
  double radial_resolvent(double lambda, double t) const {
    if (t <= yield_radius() || t == 0.0) return t;
    if (kind == FlowKind::linear) return t / (1.0 + lambda * a);
    return increasing_root([&](double s) { return s + lambda * phi(s) - t; }, yield_radius(), t, "resolvent");
  }

  Tensor3 resolvent(double lambda, const Tensor3& w) const {
    if (!(lambda > 0.0)) throw PreconditionError("resolvent: lambda must be positive");
    const Tensor3 X = project(projection, w);
    const double t = frob_norm(X);
    const double s = radial_resolvent(lambda, t);
    if (t == 0.0) return w;
    return w - X + (s / t) * X;
  }

  Tensor3 yosida(double lambda, const Tensor3& v) const { return (v - resolvent(lambda, v)) / lambda; }

  /// Solves S + (ls P_symdev + lk P_skew) G(P S) = W for S, where P is the rule's
  /// projection composed with dev. Requires ls, lk > 0.
  Tensor3 weighted_resolvent(double ls, double lk, const Tensor3& W) const {
    const bool irrot = projection == Projection::irrotational;
    const Tensor3 Wd = dev(W);
    const Tensor3 Wsd = sym(Wd);
    const Tensor3 Wsk = irrot ? Tensor3::zero() : skew(Wd);
    const double a2 = frob_inner(Wsd, Wsd), b2 = frob_inner(Wsk, Wsk);
    const double t = std::sqrt(a2 + b2);
    if (t <= yield_radius() || t == 0.0) return W;
    double fs, fk;
    if (kind == FlowKind::linear) {
      fs = 1.0 / (1.0 + ls * a);
      fk = 1.0 / (1.0 + lk * a);
    } else {
      // G(s) = 1 - psi(s)/s is increasing with psi(s) the modulus implied by f = phi(s)/s.
      auto G = [&](double s) {
        const double us = s + ls * phi(s), uk = s + lk * phi(s);
        return 1.0 - std::sqrt(a2 / (us * us) + b2 / (uk * uk));
      };
      double lo = yield_radius();
      if (lo == 0.0) {
        lo = t;
        while (G(lo) > 0.0 && lo > 1e-300) lo *= 0.5;
      }
      const double s = increasing_root(G, lo, t, "weighted resolvent");
      const double f = phi(s) / s;
      fs = 1.0 / (1.0 + ls * f);
      fk = 1.0 / (1.0 + lk * f);
    }
    return W - Wsd - Wsk + fs * Wsd + fk * Wsk;
  }

  std::string describe() const {
    std::ostringstream os;
    switch (kind) {
      case FlowKind::norton_hoff: os << "norton_hoff(sigma_y=" << sigma_y << ", r=" << r << ")"; break;
      case FlowKind::linear: os << "linear(a=" << a << ")"; break;
      case FlowKind::power_law: os << "power_law(p=" << p << ")"; break;
    }
    return os.str();
  }
};

/// Rule composed with the deviatoric projection so flow values are trace-free.
inline FlowRule trace_free(FlowRule g) {
  if (g.projection == Projection::none) g.projection = Projection::deviatoric;
  return g;
}

// ---------------------------------------------------------------------------
// Certificates

struct ClassMReport {
  bool passed = false;
  double q = 0, q_star = 0, alpha = 0, m = 0;
  bool fitted = false;
  double worst_margin = 0;         // min over samples of (v, v*) + m - alpha (...)
  double min_monotonicity = 0;     // min over pairs of (g(v1) - g(v2), v1 - v2)
  int samples = 0;
};

namespace detail {

/// alpha(s^q/q + phi^q*/q*) - s phi(s) for the radial profile.
inline double class_m_defect(const FlowRule& g, double alpha, double s) {
  const double ph = g.phi(s);
  return alpha * (std::pow(s, g.q) / g.q + std::pow(ph, g.q_star) / g.q_star) - s * ph;
}

}  // namespace detail

/// Fits m for the given alpha: sup over s of the radial defect (dense scan on
/// [0, s_max] refined by golden section around the best scan point).
inline double fit_class_m_offset(const FlowRule& g, double alpha, double s_max) {
  const int n = 4000;
  int best = 0;
  double bestv = -std::numeric_limits<double>::infinity();
  for (int i = 0; i <= n; ++i) {
    const double v = detail::class_m_defect(g, alpha, s_max * i / n);
    if (v > bestv) {
      bestv = v;
      best = i;
    }
  }
  double lo = s_max * std::max(0, best - 1) / n, hi = s_max * std::min(n, best + 1) / n;
  const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
  double x1 = hi - gr * (hi - lo), x2 = lo + gr * (hi - lo);
  double f1 = detail::class_m_defect(g, alpha, x1), f2 = detail::class_m_defect(g, alpha, x2);
  for (int it = 0; it < 200 && hi - lo > 1e-15 * (1 + hi); ++it) {
    if (f1 > f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - gr * (hi - lo);
      f1 = detail::class_m_defect(g, alpha, x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + gr * (hi - lo);
      f2 = detail::class_m_defect(g, alpha, x2);
    }
  }
  return std::max({0.0, bestv, f1, f2});
}

/// Checks alpha(|v|^q/q + |v*|^q*/q*) <= (v, v*) + m on random arguments in the
/// range of the rule's projection with |v| <= sigma_max, plus monotonicity on
/// random pairs. Missing alpha/m are fitted (alpha = 1/2 for Norton-Hoff).
inline ClassMReport class_m_certificate(const FlowRule& g, int samples, double sigma_max, std::uint64_t seed,
                                        int monotone_pairs = 10000) {
  if (samples < 1) throw PreconditionError("class_m_certificate: need at least one sample");
  g.validate();
  ClassMReport rep;
  rep.q = g.q;
  rep.q_star = g.q_star;
  rep.samples = samples;
  rep.alpha = std::isnan(g.alpha) ? 0.5 : g.alpha;
  if (std::isnan(g.m_bound)) {
    rep.m = fit_class_m_offset(g, rep.alpha, 4.0 * std::max(sigma_max, 1.0 + g.yield_radius()));
    // Safety margin against rounding in the pointwise check.
    rep.m *= 1.0 + 1e-12;
    rep.fitted = true;
  } else {
    rep.m = g.m_bound;
  }
  Rng rng(seed);
  rep.worst_margin = std::numeric_limits<double>::infinity();
  for (int s = 0; s < samples; ++s) {
    Tensor3 v = project(g.projection, rng.tensor());
    const double nv = frob_norm(v);
    if (nv > 0) v *= sigma_max * rng.uniform() / nv;
    const Tensor3 vs = g.evaluate(v);
    const double lhs = rep.alpha * (std::pow(frob_norm(v), g.q) / g.q + std::pow(frob_norm(vs), g.q_star) / g.q_star);
    const double margin = frob_inner(v, vs) + rep.m - lhs;
    rep.worst_margin = std::min(rep.worst_margin, margin);
  }
  rep.min_monotonicity = std::numeric_limits<double>::infinity();
  for (int s = 0; s < monotone_pairs; ++s) {
    const Tensor3 v1 = rng.tensor(sigma_max), v2 = rng.tensor(sigma_max);
    rep.min_monotonicity = std::min(rep.min_monotonicity, frob_inner(g.evaluate(v1) - g.evaluate(v2), v1 - v2));
  }
  const double tol = 1e-12 * (1.0 + std::pow(sigma_max, g.q));
  rep.passed = rep.worst_margin >= -tol && rep.min_monotonicity >= -1e-12;
  return rep;
}

/// max over samples of |j^A_lambda(v) - j^B_lambda(v)|.
inline double graph_distance(const FlowRule& A, const FlowRule& B, double lambda, const std::vector<Tensor3>& samples) {
  if (!(lambda > 0.0)) throw PreconditionError("graph_distance: lambda must be positive");
  double d = 0.0;
  for (const auto& v : samples) d = std::max(d, frob_norm(A.resolvent(lambda, v) - B.resolvent(lambda, v)));
  return d;
}

/// Y-periodic assignment of rules: one rule per phase of a pattern.
struct PeriodicFlowField {
  Pattern pattern;
  std::vector<FlowRule> phases{FlowRule::linear(1.0)};

  const FlowRule& rule_at(const std::array<double, 3>& y) const {
    const int ph = pattern.phase(y);
    return phases.at(static_cast<std::size_t>(std::min<int>(ph, static_cast<int>(phases.size()) - 1)));
  }
  void validate() const {
    for (const auto& g : phases) g.validate();
  }
};

}  // namespace cvh
