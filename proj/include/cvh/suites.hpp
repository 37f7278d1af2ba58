#pragma once

// Check suites shared by the command-line harness and the acceptance binary.
// Each suite returns named checks (value, threshold, relation) plus report
// tables; nothing here touches the filesystem.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "cvh/helmholtz.hpp"
#include "cvh/homogenization.hpp"
#include "cvh/korn.hpp"

namespace cvh {

enum class Relation { le, lt, ge, gt, holds };

struct Check {
  std::string name;
  double value = 0;
  double threshold = 0;
  Relation relation = Relation::le;
  bool passed = false;

  static Check le(std::string n, double v, double t) { return {std::move(n), v, t, Relation::le, v <= t}; }
  static Check lt(std::string n, double v, double t) { return {std::move(n), v, t, Relation::lt, v < t}; }
  static Check ge(std::string n, double v, double t) { return {std::move(n), v, t, Relation::ge, v >= t}; }
  static Check gt(std::string n, double v, double t) { return {std::move(n), v, t, Relation::gt, v > t}; }
  static Check holds(std::string n, bool ok) { return {std::move(n), ok ? 1.0 : 0.0, 1.0, Relation::holds, ok}; }
};

inline const char* relation_symbol(Relation r) {
  switch (r) {
    case Relation::le: return "<=";
    case Relation::lt: return "<";
    case Relation::ge: return ">=";
    case Relation::gt: return ">";
    case Relation::holds: return "==";
  }
  return "?";
}

using Cell = std::variant<std::monostate, double, long long, std::string>;

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<Cell>> rows;
};

struct SuiteResult {
  std::vector<Check> checks;
  std::deque<std::pair<std::string, Table>> tables;         // file stem, table; references stay valid
  std::vector<std::pair<std::string, std::string>> snapshots;  // file stem, bytes

  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
  }
  void merge(SuiteResult o) {
    for (auto& c : o.checks) checks.push_back(std::move(c));
    for (auto& t : o.tables) tables.push_back(std::move(t));
    for (auto& s : o.snapshots) snapshots.push_back(std::move(s));
  }
  Table& table(const std::string& stem, std::vector<std::string> header) {
    for (auto& t : tables)
      if (t.first == stem) return t.second;
    tables.push_back({stem, Table{std::move(header), {}}});
    return tables.back().second;
  }
};

/// Rows (eta, residual, value, rate) for one residual sequence over eta = 1/K;
/// rate = log(e_{i-1}/e_i) / log(K_i/K_{i-1}), empty on the first row.
inline void add_eta_rows(Table& t, const std::string& name, const std::vector<int>& Ks, const std::vector<double>& v) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    Cell rate;
    if (i > 0 && v[i] > 0.0 && v[i - 1] > 0.0)
      rate = std::log(v[i - 1] / v[i]) / std::log(static_cast<double>(Ks[i]) / Ks[i - 1]);
    t.rows.push_back({1.0 / Ks[i], name, v[i], rate});
  }
}

inline Table eta_table() { return Table{{"eta", "residual", "value", "rate"}, {}}; }

inline Table stiffness_table(const Stiffness& C) {
  Table t{{"row", "c1", "c2", "c3", "c4", "c5", "c6"}, {}};
  for (int i = 0; i < 6; ++i) {
    std::vector<Cell> r{static_cast<long long>(i + 1)};
    for (int j = 0; j < 6; ++j) r.push_back(C(i, j));
    t.rows.push_back(std::move(r));
  }
  return t;
}

namespace detail {

inline bool strictly_decreasing_seq(const std::vector<double>& v) {
  for (std::size_t i = 0; i + 1 < v.size(); ++i)
    if (!(v[i + 1] < v[i])) return false;
  return true;
}

/// max v[i+1]/v[i]; below 1 iff strictly decreasing positive data.
inline double max_successive_ratio(const std::vector<double>& v) {
  double r = 0.0;
  for (std::size_t i = 0; i + 1 < v.size(); ++i)
    r = std::max(r, v[i] > 0.0 ? v[i + 1] / v[i] : std::numeric_limits<double>::infinity());
  return r;
}

inline double spread(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return *hi > 0.0 ? (*hi - *lo) / *hi : 0.0;
}

inline const char* mode_name(Mode m) { return m == Mode::torus ? "torus" : "microhard"; }

template <Placement P, int NC>
void fill_integers(Field<P, NC>& f, Rng& rng) {
  f.for_each([&](int c, int i, int j, int k, std::size_t id) {
    f.data()[id] = f.is_free(c, i, j, k) ? std::floor(rng.uniform(-50, 50)) : 0.0;
  });
}

template <class F>
double rel_diff(const F& a, const F& b) {
  const double n = norm_l2(b);
  return n > 0.0 ? norm_l2(a - b) / n : norm_l2(a - b);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Discrete structure

struct StructureOptions {
  int n = 16;
  int pairs = 100;
  std::uint64_t seed = 1;
};

inline SuiteResult structure_suite(const StructureOptions& o) {
  SuiteResult res;
  Table& t = res.table("structure", {"mode", "quantity", "value"});
  for (Mode mode : {Mode::torus, Mode::microhard}) {
    const std::string mn = detail::mode_name(mode);
    const BoxGrid g = BoxGrid::unit(o.n, mode);
    Rng rng(o.seed);
    NodalVectorField u(g);
    detail::fill_integers(u, rng);
    EdgeTensorField p(g);
    detail::fill_integers(p, rng);
    const double cg = curl(grad(u)).max_abs(), dc = div_faces(curl(p)).max_abs();
    res.checks.push_back(Check::le("curl_grad_" + mn, cg, 0.0));
    res.checks.push_back(Check::le("div_curl_" + mn, dc, 0.0));
    double worst = 0.0;
    for (int s = 0; s < o.pairs; ++s) {
      EdgeTensorField a(g);
      FaceTensorField b(g);
      a.fill_random(rng);
      b.fill_random(rng);
      const double lhs = inner(curl(a), b), rhs = inner(a, curl_adjoint(b));
      worst = std::max(worst, std::abs(lhs - rhs) / (norm_l2(a) * norm_l2(b)));
    }
    res.checks.push_back(Check::le("curl_adjoint_" + mn, worst, 1e-12));
    t.rows.push_back({mn, std::string("max|curl grad u|"), cg});
    t.rows.push_back({mn, std::string("max|div curl p|"), dc});
    t.rows.push_back({mn, std::string("adjoint defect"), worst});
  }
  return res;
}

// ---------------------------------------------------------------------------
// Monotone flow rules

struct MonoOptions {
  std::vector<FlowRule> rules;
  int pairs = 10000;
  int resolvent_samples = 2000;
  double lambda = 0.3;
  double scale = 3.0;
  int class_m_samples = 10000;
  double sigma_max = 6.0;
  std::uint64_t seed = 4;
};

inline SuiteResult mono_suite(const MonoOptions& o) {
  if (o.rules.empty()) throw ConfigError("mono-check: no flow rules");
  SuiteResult res;
  Table& t = res.table("flow_rules", {"rule", "description", "quantity", "value"});
  Rng rng(o.seed);
  for (std::size_t ri = 0; ri < o.rules.size(); ++ri) {
    const FlowRule& g = o.rules[ri];
    g.validate();
    const std::string tag = "rule" + std::to_string(ri);
    auto row = [&](const std::string& q, double v) { t.rows.push_back({tag, g.describe(), q, v}); };

    double resid = 0.0;
    for (int i = 0; i < o.resolvent_samples; ++i) {
      const double lambda = std::pow(10.0, rng.uniform(-3, 1));
      const Tensor3 w = rng.tensor(std::pow(10.0, rng.uniform(-2, 1.5)));
      const Tensor3 v = g.resolvent(lambda, w);
      resid = std::max(resid, frob_norm(v + lambda * g.evaluate(v) - w) / (1 + frob_norm(w)));
    }
    double ne = -std::numeric_limits<double>::infinity(), mono = std::numeric_limits<double>::infinity();
    for (int i = 0; i < o.pairs; ++i) {
      const Tensor3 w1 = rng.tensor(o.scale), w2 = rng.tensor(o.scale);
      ne = std::max(ne, frob_norm(g.resolvent(o.lambda, w1) - g.resolvent(o.lambda, w2)) - frob_norm(w1 - w2));
      mono = std::min(mono, frob_inner(g.yosida(o.lambda, w1) - g.yosida(o.lambda, w2), w1 - w2));
    }
    res.checks.push_back(Check::le(tag + "_resolvent_residual", resid, 1e-12));
    res.checks.push_back(Check::le(tag + "_nonexpansive", ne, 1e-10));
    res.checks.push_back(Check::ge(tag + "_yosida_monotone", mono, -1e-10));
    row("resolvent residual", resid);
    row("max |J w1 - J w2| - |w1 - w2|", ne);
    row("min (A w1 - A w2, w1 - w2)", mono);

    if (g.kind == FlowKind::linear) {
      // J w = w - (lambda a / (1 + lambda a)) P w, yosida = a P w / (1 + lambda a).
      double err = 0.0;
      for (int i = 0; i < 200; ++i) {
        const Tensor3 w = rng.tensor(o.scale);
        const Tensor3 Pw = project(g.projection, w);
        const double f = g.a / (1.0 + o.lambda * g.a);
        err = std::max(err, frob_norm(g.yosida(o.lambda, w) - f * Pw) / frob_norm(w));
        err = std::max(err, frob_norm(g.resolvent(o.lambda, w) - (w - o.lambda * f * Pw)) / frob_norm(w));
      }
      res.checks.push_back(Check::le(tag + "_linear_closed_form", err, 1e-14));
      row("closed-form defect", err);
    }
    if (g.kind == FlowKind::norton_hoff) {
      const ClassMReport cm = class_m_certificate(g, o.class_m_samples, o.sigma_max, o.seed + ri);
      res.checks.push_back(Check::holds(tag + "_class_m", cm.passed && cm.q == g.r + 1.0 && cm.fitted));
      row("class M q", cm.q);
      row("class M alpha", cm.alpha);
      row("class M m", cm.m);
      row("class M worst margin", cm.worst_margin);
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Unfolding identities

struct UnfoldOptions {
  int n = 16;
  int K = 4;
  std::uint64_t seed = 2;
  PeriodicFlowField flow{Pattern::checkerboard(), {FlowRule::norton_hoff(0.5, 2.0), FlowRule::linear(3.0)}};
  double lambda = 0.7;
  int samples = 2000;
};

inline SuiteResult unfold_suite(const UnfoldOptions& o) {
  SuiteResult res;
  Table& t = res.table("unfolding", {"geometry", "quantity", "value"});
  auto integral = [](const CellScalar& v, const std::function<bool(int, int, int)>& keep, double q) {
    double s = 0.0;
    v.for_each([&](int, int i, int j, int k, std::size_t id) {
      if (keep(i, j, k)) s += v.grid().cell_volume() * (q == 0.0 ? v.data()[id] : std::pow(std::abs(v.data()[id]), q));
    });
    return s;
  };
  const auto all = [](int, int, int) { return true; };

  const BoxGrid g = BoxGrid::unit(o.n, Mode::microhard);
  const UnfoldGeometry geom = UnfoldGeometry::aligned(g, o.K);
  Rng rng(o.seed);
  CellScalar v(g);
  v.fill_random(rng);
  const auto tv = unfold_field(v, geom);
  const double iv = integral(v, all, 0.0);
  const double e_int = std::abs(tv.integral(0) - iv) / std::abs(iv);
  double e_lq = 0.0;
  for (double q : {1.5, 2.0, 3.0}) {
    const double nq = std::pow(integral(v, all, q), 1.0 / q);
    e_lq = std::max(e_lq, std::abs(tv.norm_lq(q) - nq) / nq);
  }
  res.checks.push_back(Check::le("integral_identity", e_int, 1e-12));
  res.checks.push_back(Check::le("norm_identity", e_lq, 1e-12));
  t.rows.push_back({std::string("aligned"), std::string("integral rel defect"), e_int});
  t.rows.push_back({std::string("aligned"), std::string("Lq rel defect"), e_lq});

  // Offset box: half an eta-cell sticks out on every axis and forms Lambda_eta.
  const int c = o.n / o.K;
  if (c >= 2) {
    const int no = o.n + c / 2;
    const BoxGrid go({no, no, no}, {1.0 / o.n, 1.0 / o.n, 1.0 / o.n}, Mode::microhard);
    const UnfoldGeometry gout = UnfoldGeometry::offset(go, o.K);
    CellScalar w(go);
    w.fill_random(rng);
    w *= 3.0;
    for (double& x : w.data()) x += 0.5;
    const auto tw = unfold_field(w, gout);
    const auto hat = [&](int i, int j, int k) { return gout.in_omega_hat(i, j, k); };
    const auto lam = [&](int i, int j, int k) { return !gout.in_omega_hat(i, j, k); };
    const double mismatch = std::abs(tw.integral(0) - integral(w, all, 0.0));
    const double bound = integral(w, lam, 1.0);
    const double ihat = integral(w, hat, 0.0);
    const double e_hat = std::abs(tw.integral(0) - ihat) / std::abs(ihat);
    res.checks.push_back(Check::le("boundary_layer_bound", mismatch / bound, 1.0 + 1e-12));
    res.checks.push_back(Check::le("omega_hat_integral", e_hat, 1e-12));
    t.rows.push_back({std::string("offset"), std::string("|int T(v) - int v|"), mismatch});
    t.rows.push_back({std::string("offset"), std::string("int_Lambda |v|"), bound});
    t.rows.push_back({std::string("offset"), std::string("Omega-hat integral rel defect"), e_hat});
  }

  const double d = resolvent_unfolding_discrepancy(o.flow, unfold_flow(o.flow, geom), o.lambda, o.samples, 2.0, o.seed);
  res.checks.push_back(Check::le("resolvent_unfolding", d, 1e-12));
  t.rows.push_back({std::string("aligned"), std::string("resolvent discrepancy"), d});
  return res;
}

// ---------------------------------------------------------------------------
// Helmholtz decomposition

struct HelmholtzSuiteOptions {
  int n = 32;
  std::uint64_t seed = 2;
};

inline SuiteResult helmholtz_suite(const HelmholtzSuiteOptions& o) {
  SuiteResult res;
  Table& t = res.table("helmholtz", {"input", "quantity", "value"});
  const BoxGrid g = BoxGrid::unit(o.n, Mode::torus);
  Rng rng(o.seed);

  EdgeVectorField v(g);
  v.fill_random(rng);
  const auto p = decompose(v);
  const double nv = norm_l2(v);
  const double rec = norm_l2(p.reconstruct() - v) / nv;
  const auto gz = p.gradient_part(), cw = p.curl_part();
  const auto again = decompose(p.harmonic + gz + cw);
  const double idem = std::max({detail::rel_diff(again.gradient_part(), gz), detail::rel_diff(again.curl_part(), cw),
                                detail::rel_diff(again.harmonic, p.harmonic)});

  NodalScalar z(g);
  z.fill_random(rng);
  const auto vg = grad(z);
  const auto pg = decompose(vg);
  const double leak_g = (norm_l2(pg.curl_part()) + norm_l2(pg.harmonic)) / norm_l2(vg);

  EdgeVectorField a(g);
  a.fill_random(rng);
  const FaceVectorField w0 = curl(a);
  const auto vc = curl_adjoint(w0);
  const auto pc = decompose(vc);
  const double leak_c = (norm_l2(pc.gradient_part()) + norm_l2(pc.harmonic)) / norm_l2(vc);

  res.checks.push_back(Check::le("reconstruction", rec, 1e-10));
  res.checks.push_back(Check::le("gradient_leakage", leak_g, 1e-10));
  res.checks.push_back(Check::le("curl_leakage", leak_c, 1e-10));
  res.checks.push_back(Check::le("idempotence", idem, 1e-9));
  t.rows.push_back({std::string("random"), std::string("reconstruction"), rec});
  t.rows.push_back({std::string("random"), std::string("idempotence"), idem});
  t.rows.push_back({std::string("gradient"), std::string("leakage"), leak_g});
  t.rows.push_back({std::string("curl"), std::string("leakage"), leak_c});
  return res;
}

// ---------------------------------------------------------------------------
// Elasticity

struct ElasticitySuiteOptions {
  int n = 16;
  int coarse = 8;
  IsotropicElasticity c0{1.0, 1.0}, c1{2.0, 3.0};
};

namespace detail {

// u_r = k_r sin(pi x) sin(pi y) sin(pi z) and its body force for isotropic C.
constexpr std::array<double, 3> kManufactured{1.0, -0.5, 0.75};

inline Point3 manufactured_u(const Point3& x) {
  const double S = std::sin(M_PI * x[0]) * std::sin(M_PI * x[1]) * std::sin(M_PI * x[2]);
  return {kManufactured[0] * S, kManufactured[1] * S, kManufactured[2] * S};
}

inline Point3 manufactured_b(const Point3& x, const IsotropicElasticity& C) {
  std::array<double, 3> s, c;
  for (int a = 0; a < 3; ++a) {
    s[a] = std::sin(M_PI * x[a]);
    c[a] = std::cos(M_PI * x[a]);
  }
  auto d2 = [&](int r, int a) {
    if (r == a) return -M_PI * M_PI * s[0] * s[1] * s[2];
    double v = M_PI * M_PI;
    for (int e = 0; e < 3; ++e) v *= (e == r || e == a) ? c[e] : s[e];
    return v;
  };
  Point3 b{};
  for (int r = 0; r < 3; ++r) {
    double graddiv = 0.0;
    for (int a = 0; a < 3; ++a) graddiv += kManufactured[a] * d2(r, a);
    b[r] = -(C.mu * kManufactured[r] * 3.0 * d2(0, 0) + (C.lambda + C.mu) * graddiv);
  }
  return b;
}

}  // namespace detail

inline SuiteResult elasticity_suite(const ElasticitySuiteOptions& o) {
  SuiteResult res;
  Table& t = res.table("elasticity", {"n", "quantity", "value"});
  {
    const BoxGrid g = BoxGrid::unit(o.n, Mode::microhard);
    const auto coef = CoefficientField::sample(g, Pattern::checkerboard(), o.c0, o.c1, std::max(1, o.n / 4));
    const ElasticityOperator op(coef, 1e-12);
    const auto u_star = sample_nodal(g, detail::manufactured_u);
    const auto b = op.operator_as_body_force(u_star);
    const auto sol = op.solve(nullptr, &b);
    const double e = norm_l2(sol.u - u_star) / norm_l2(u_star);
    res.checks.push_back(Check::le("manufactured_recovery", e, 1e-9));
    t.rows.push_back({static_cast<long long>(o.n), std::string("recovery rel error"), e});
  }
  std::vector<double> err;
  for (int N : {o.coarse, o.n}) {
    const BoxGrid g = BoxGrid::unit(N, Mode::microhard);
    const auto b = sample_nodal(g, [&](const Point3& x) { return detail::manufactured_b(x, o.c1); });
    const auto sol = solve_elasticity(CoefficientField::homogeneous(g, o.c1), nullptr, &b);
    err.push_back(norm_l2(sol.u - sample_nodal(g, detail::manufactured_u)));
    t.rows.push_back({static_cast<long long>(N), std::string("analytic error"), err.back()});
  }
  res.checks.push_back(Check::ge("refinement_ratio", err[0] / err[1], 3.0));
  return res;
}

// ---------------------------------------------------------------------------
// Cell problem and elastic homogenization

struct CellSuiteOptions {
  int n = 16;
  Pattern pattern = Pattern::laminate(0.5, 0);
  IsotropicElasticity c0{1.0, 1.0}, c1{2.0, 3.0};
  bool oracle = true;        // laminate closed form (axis 0 only)
  bool bounds = true;        // Voigt/Reuss
  bool basis = false;        // rotated unit-strain basis
  double oracle_tol = 0.01;
  std::uint64_t seed = 11;
  bool snapshots = false;
};

inline double min_sym_eigenvalue(const Stiffness& A) {
  return Eigen::SelfAdjointEigenSolver<Stiffness>(0.5 * (A + A.transpose())).eigenvalues()[0];
}

inline SuiteResult cell_suite(const CellSuiteOptions& o) {
  SuiteResult res;
  const CellProblem cp = CellProblem::sampled(o.n, o.pattern, o.c0, o.c1);
  const CellSolution cs = elastic_cell_solve(cp);
  res.tables.push_back({"effective_tensor", stiffness_table(cs.C_eff)});
  Table& t = res.table("cell", {"quantity", "value"});
  res.checks.push_back(Check::le("symmetry", cs.symmetry_defect, 1e-9));
  const double emin = min_sym_eigenvalue(cs.C_eff);
  res.checks.push_back(Check::gt("positive_definite", emin, 0.0));
  t.rows.push_back({std::string("symmetry defect"), cs.symmetry_defect});
  t.rows.push_back({std::string("min eigenvalue"), emin});
  if (o.oracle) {
    if (o.pattern.kind != PatternKind::laminate || o.pattern.axis != 0)
      throw ConfigError("cell-elasticity: the laminate oracle needs pattern = laminate with axis = 0");
    const Stiffness L = laminate_effective_tensor(o.c0, o.c1, o.pattern.fraction);
    const double e = (cs.C_eff - L).cwiseAbs().maxCoeff() / L.cwiseAbs().maxCoeff();
    res.checks.push_back(Check::le("laminate_oracle", e, o.oracle_tol));
    t.rows.push_back({std::string("laminate oracle rel defect"), e});
    res.tables.push_back({"laminate_oracle", stiffness_table(L)});
  }
  if (o.bounds) {
    const auto vr = voigt_reuss_bounds(cp.C);
    const double sc = cs.C_eff.norm();
    const double lo = min_sym_eigenvalue(cs.C_eff - vr.reuss) / sc, hi = min_sym_eigenvalue(vr.voigt - cs.C_eff) / sc;
    res.checks.push_back(Check::ge("reuss_bound", lo, -1e-9));
    res.checks.push_back(Check::ge("voigt_bound", hi, -1e-9));
    t.rows.push_back({std::string("min eig(C_eff - Reuss)/|C|"), lo});
    t.rows.push_back({std::string("min eig(Voigt - C_eff)/|C|"), hi});
  }
  if (o.basis) {
    Stiffness R;
    Rng rng(o.seed);
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j) R(i, j) = rng.uniform(-1, 1);
    const Stiffness Q = Eigen::HouseholderQR<Stiffness>(R).householderQ();
    const double d = (elastic_cell_solve(cp, Q).C_eff - cs.C_eff).cwiseAbs().maxCoeff();
    res.checks.push_back(Check::le("basis_independence", d, 1e-8));
    t.rows.push_back({std::string("rotated basis defect"), d});
  }
  if (o.snapshots)
    for (int i = 0; i < 6; ++i) res.snapshots.push_back({"corrector_" + std::to_string(i), encode_snapshot(cs.correctors[i])});
  return res;
}

struct ElasticSweepOptions {
  ElasticConvergenceCase cs;
  std::vector<int> Ks{4, 8, 16};
  double energy_tol = 0.02;
};

inline SuiteResult elastic_sweep_suite(const ElasticSweepOptions& o) {
  SuiteResult res;
  const auto rep = elastic_homogenization_convergence(o.cs, o.Ks);
  std::vector<double> se, sr, ue, er;
  for (const auto& r : rep.rows) {
    se.push_back(r.sigma_error);
    sr.push_back(r.sigma_rel);
    ue.push_back(r.u_error);
    er.push_back(r.energy_rel);
  }
  Table t = eta_table();
  add_eta_rows(t, "sigma_error", o.Ks, se);
  add_eta_rows(t, "sigma_rel", o.Ks, sr);
  add_eta_rows(t, "u_error", o.Ks, ue);
  add_eta_rows(t, "energy_rel", o.Ks, er);
  res.tables.push_back({"report", std::move(t)});
  res.tables.push_back({"effective_tensor", stiffness_table(rep.C_eff)});
  if (o.Ks.size() >= 2) res.checks.push_back(Check::lt("sigma_decreasing", detail::max_successive_ratio(se), 1.0));
  res.checks.push_back(Check::le("energy_gap_finest", er.back(), o.energy_tol));
  return res;
}

// ---------------------------------------------------------------------------
// Loads given as time polynomials of a fixed spatial shape

struct LoadSpec {
  std::function<Point3(const Point3&)> shape = [](const Point3&) { return Point3{0, 0, 0}; };
  std::vector<Point3> coef;  // b(x, t) = sum_k t^k coef_k * shape(x), componentwise

  LoadHistory on(const BoxGrid& g) const {
    LoadHistory l;
    for (const auto& c : coef)
      l.poly.push_back(sample_nodal(g, [&](const Point3& x) {
        const Point3 f = shape(x);
        return Point3{c[0] * f[0], c[1] * f[1], c[2] * f[2]};
      }));
    return l;
  }
  bool time_constant() const { return coef.size() <= 1; }
};

// ---------------------------------------------------------------------------
// Micro solver

/// Scalar ODE problem on a homogeneous 4^3 torus with an imposed mean strain.
inline MicroProblem scalar_oracle_problem(double a, double c1, bool reg) {
  const IsotropicElasticity iso{1.0, 1.0};
  MicroProblem pb = MicroProblem::sampled(BoxGrid::unit(4, Mode::torus), 1, Pattern::homogeneous(), iso, iso, c1, c1,
                                          0.0, PeriodicFlowField{Pattern::homogeneous(), {FlowRule::linear(a)}});
  Tensor3 E = Tensor3::zero();
  E(0, 0) = 0.02;
  E(1, 1) = -0.01;
  E(0, 1) = E(1, 0) = 0.015;
  pb.mean_strain = E;
  pb.regularize = reg;
  pb.T_end = 1.0;
  return pb;
}

struct OracleSuiteOptions {
  double a = 1.0, c1 = 0.5;
  int m = 3;
  std::vector<int> rothe_levels{2, 3, 4, 5};
};

inline SuiteResult oracle_suite(const OracleSuiteOptions& o) {
  SuiteResult res;
  const double mu = 1.0;
  {
    const MicroProblem pb = scalar_oracle_problem(o.a, o.c1, true);
    const MicroSolver solver(pb, o.m);
    const auto tr = solver.run();
    const double h = solver.step_size(), reg = solver.regularization();
    const Tensor3 dE = dev(pb.mean_strain);
    Tensor3 p = Tensor3::zero();
    double worst = 0.0;
    const IsotropicElasticity iso{1.0, mu};
    for (std::size_t n = 1; n < tr.states.size(); ++n) {
      p = (p + h * o.a * 2.0 * mu * dE) / (1.0 + h * o.a * (2.0 * mu + o.c1 + reg));
      for (int k = 0; k < 4; ++k)
        for (int j = 0; j < 4; ++j)
          for (int i = 0; i < 4; ++i)
            worst = std::max(worst, frob_norm(cell_tensor(tr.states[n].p, i, j, k) - p) / frob_norm(p));
      const Tensor3 ee = pb.mean_strain - p;
      const double el = 0.5 * frob_inner(iso.apply(ee), ee);
      const auto& e = tr.records[n].energy;
      worst = std::max(worst, std::abs(e.elastic - el) / el);
      worst = std::max(worst, std::abs(e.hardening - 0.5 * o.c1 * frob_inner(p, p)) / (0.5 * o.c1 * frob_inner(p, p)));
    }
    res.checks.push_back(Check::le("scalar_ode_oracle", worst, 1e-8));
    res.table("oracle", {"quantity", "value"}).rows.push_back({std::string("max rel defect"), worst});
  }
  if (o.rothe_levels.size() >= 2) {
    const MicroProblem pb = scalar_oracle_problem(o.a, o.c1, false);
    const double lam = o.a * (2.0 * mu + o.c1);
    const Tensor3 exact = (1.0 - std::exp(-lam * pb.T_end)) * ((2.0 * mu / (2.0 * mu + o.c1)) * dev(pb.mean_strain));
    std::vector<double> err;
    Table& t = res.table("rothe", {"m", "steps", "error", "ratio"});
    for (int m : o.rothe_levels) {
      const auto tr = run_trajectory(pb, m);
      err.push_back(frob_norm(cell_tensor(tr.states.back().p, 1, 2, 3) - exact));
      Cell ratio;
      if (err.size() > 1) ratio = err[err.size() - 2] / err.back();
      t.rows.push_back({static_cast<long long>(m), static_cast<long long>(1) << m, err.back(), ratio});
    }
    double rmin = std::numeric_limits<double>::infinity(), rmax = 0.0;
    for (std::size_t i = 0; i + 1 < err.size(); ++i) {
      rmin = std::min(rmin, err[i] / err[i + 1]);
      rmax = std::max(rmax, err[i] / err[i + 1]);
    }
    res.checks.push_back(Check::ge("rothe_ratio_min", rmin, 1.8));
    res.checks.push_back(Check::le("rothe_ratio_max", rmax, 2.2));
  }
  return res;
}

struct MicroSuiteOptions {
  std::function<MicroProblem(int K)> make;  // problem at eta = 1/K
  std::vector<int> Ks;
  int m = 3;
  bool trajectory = false;   // solver converged on every step + per-step report
  bool invariants = false;   // trace and masks
  bool dissipation = false;  // frozen-data free energy (freeze at T/2 unless already frozen)
  bool uniform = false;      // a priori quantities with spread across eta
  bool skew = false;         // irrotational rule, C2 = 0: p stays symmetric
  double spread_tol = 0.2;
  bool snapshots = false;
};

inline SuiteResult micro_suite(const MicroSuiteOptions& o) {
  SuiteResult res;
  if (o.Ks.empty()) throw ConfigError("micro-run: empty eta list");
  const bool any = o.trajectory || o.invariants || o.dissipation || o.uniform || o.skew;
  if (!any) return res;
  if (o.uniform && o.Ks.size() < 2) throw ConfigError("micro-run: the uniform-estimate check needs at least 2 eta values");
  std::vector<AprioriReport> aps;
  double trace_max = 0.0, skew_max = 0.0, ratio_max = 0.0;
  bool masks = true, converged = true;
  Table& steps = res.table("trajectory", {"eta", "step", "t", "iterations", "fp_residual", "flow_residual",
                                          "equilibrium_residual", "trace_max", "skew_max", "elastic", "hardening",
                                          "curl", "reg", "dissipation", "external_work"});
  for (int K : o.Ks) {
    MicroProblem pb = o.make(K);
    if (o.skew) {
      if (pb.C2 != 0.0) throw ConfigError("micro-run: the skew check needs [material] C2 = 0");
      for (const auto& g : pb.flow.phases)
        if (g.projection != Projection::irrotational)
          throw ConfigError("micro-run: the skew check needs [flow] projection = irrotational");
    }
    const Trajectory tr = run_trajectory(pb, o.m);
    converged = converged && tr.warnings.empty();
    for (std::size_t n = 0; n < tr.records.size(); ++n) {
      const auto& r = tr.records[n];
      trace_max = std::max(trace_max, r.trace_max);
      skew_max = std::max(skew_max, r.skew_max);
      masks = masks && r.masks_ok;
      if (o.trajectory)
        steps.rows.push_back({1.0 / K, static_cast<long long>(n), r.t, static_cast<long long>(r.iterations),
                              r.fp_residual, r.flow_residual, r.equilibrium_residual, r.trace_max, r.skew_max,
                              r.energy.elastic, r.energy.hardening, r.energy.curl, r.energy.reg, r.dissipation,
                              r.external_work});
    }
    const AprioriReport ap = apriori_monitor(tr);
    ratio_max = std::max(ratio_max, ap.max_ratio);
    aps.push_back(ap);
    if (o.dissipation) {
      MicroProblem pf = pb;
      if (!pf.load.time_constant() && !std::isfinite(pf.freeze_time)) pf.freeze_time = 0.5 * pf.T_end;
      const auto dr = dissipation_check(pf.freeze_time == pb.freeze_time ? tr : run_trajectory(pf, o.m));
      res.checks.push_back(Check::holds("dissipation_K" + std::to_string(K), dr.passed));
      Table& dt = res.table("dissipation", {"eta", "index", "free_energy", "max_increase"});
      for (std::size_t i = 0; i < dr.free_energy.size(); ++i)
        dt.rows.push_back({1.0 / K, static_cast<long long>(i), dr.free_energy[i], dr.max_increase});
    }
    if (o.snapshots) {
      res.snapshots.push_back({"p_K" + std::to_string(K), encode_snapshot(tr.states.back().p)});
      res.snapshots.push_back({"sigma_K" + std::to_string(K), encode_snapshot(tr.states.back().sigma)});
      res.snapshots.push_back({"u_K" + std::to_string(K), encode_snapshot(tr.states.back().u)});
    }
  }
  if (o.trajectory) res.checks.push_back(Check::holds("solver_converged", converged));
  if (o.invariants) {
    res.checks.push_back(Check::le("trace_max", trace_max, 1e-10));
    res.checks.push_back(Check::holds("masks_exact", masks));
  }
  if (o.skew) res.checks.push_back(Check::le("skew_max", skew_max, 1e-10));
  if (o.uniform) {
    Table t = eta_table();
    const std::vector<std::pair<std::string, std::function<double(const AprioriReport&)>>> q{
        {"max_stored", [](const AprioriReport& a) { return a.max_stored; }},
        {"max_elastic", [](const AprioriReport& a) { return a.max_elastic; }},
        {"max_hardening", [](const AprioriReport& a) { return a.max_hardening; }},
        {"max_curl", [](const AprioriReport& a) { return a.max_curl; }},
        {"dissipation", [](const AprioriReport& a) { return a.dissipation; }},
        {"dissipation_q", [](const AprioriReport& a) { return a.dissipation_q; }},
        {"dissipation_qstar", [](const AprioriReport& a) { return a.dissipation_qstar; }}};
    for (const auto& [name, f] : q) {
      std::vector<double> v;
      for (const auto& a : aps) v.push_back(f(a));
      add_eta_rows(t, name, o.Ks, v);
      if (*std::max_element(v.begin(), v.end()) > 0.0)
        res.checks.push_back(Check::lt("spread_" + name, detail::spread(v), o.spread_tol));
    }
    res.tables.push_back({"report", std::move(t)});
    res.checks.push_back(Check::le("energy_inequality", ratio_max, 1.0 + 1e-6));
  }
  return res;
}

// ---------------------------------------------------------------------------
// Two-scale viscoplastic homogenization

struct TwoScaleSuiteOptions {
  TwoScaleProblem problem;    // load is built from `load` on the macro grid
  LoadSpec load;
  int m = 2;
  std::vector<int> micro_Ks;  // for the sweep; each must divide problem.M
  bool degeneracy = false;
  bool sweep = false;
  bool dissipation = false;
  double degeneracy_tol = 1e-7;
  bool snapshots = false;
};

inline MicroProblem micro_twin(const TwoScaleProblem& pb, const LoadSpec& load, int K, double C2 = 0.0) {
  const BoxGrid g = BoxGrid::unit(pb.n * K, Mode::microhard);
  MicroProblem mp = MicroProblem::sampled(g, K, pb.pattern, pb.c0, pb.c1, pb.h0, pb.h1, C2, pb.flow);
  mp.load = load.on(g);
  mp.T_end = pb.T_end;
  mp.regularize = pb.regularize;
  mp.damping = pb.damping;
  mp.tol = pb.tol;
  mp.max_iter = pb.max_iter;
  mp.elastic_rtol = pb.elastic_rtol;
  mp.anderson_depth = pb.anderson_depth;
  mp.freeze_time = pb.freeze_time;
  return mp;
}

inline SuiteResult two_scale_suite(const TwoScaleSuiteOptions& o) {
  SuiteResult res;
  if (!(o.degeneracy || o.sweep || o.dissipation)) return res;
  TwoScaleProblem pb = o.problem;
  pb.load = o.load.on(pb.macro_grid());
  pb.validate();

  if (o.degeneracy) {
    TwoScaleProblem hp = pb;
    hp.pattern = Pattern::homogeneous();
    hp.c1 = hp.c0;
    hp.h1 = hp.h0;
    hp.flow = PeriodicFlowField{Pattern::homogeneous(), {pb.flow.phases.front()}};
    const auto ts = two_scale_viscoplastic_run(hp, o.m);
    MicroProblem mp = MicroProblem::sampled(hp.macro_grid(), 1, Pattern::homogeneous(), hp.c0, hp.c0, hp.h0, hp.h0, 0.0,
                                            hp.flow);
    mp.load = hp.load;
    mp.T_end = hp.T_end;
    mp.regularize = hp.regularize;
    mp.damping = hp.damping;
    mp.tol = hp.tol;
    mp.max_iter = hp.max_iter;
    mp.elastic_rtol = hp.elastic_rtol;
    mp.anderson_depth = hp.anderson_depth;
    const auto mt = run_trajectory(mp, o.m);
    double worst = 0.0, pmax = 0.0;
    for (std::size_t n = 0; n < ts.states.size(); ++n) {
      const auto& a = ts.states[n];
      const auto& b = mt.states[n];
      auto rel = [](double d, double s) { return s > 1e-30 ? d / s : d; };
      worst = std::max(worst, rel(norm_l2(a.sigma - b.sigma), norm_l2(b.sigma)));
      worst = std::max(worst, rel(norm_l2(a.p - b.p), norm_l2(b.p)));
      worst = std::max(worst, rel(norm_l2(a.u0 - b.u), norm_l2(b.u)));
      pmax = std::max(pmax, b.p.max_abs());
    }
    res.checks.push_back(Check::le("degeneracy", worst, o.degeneracy_tol));
    Table& t = res.table("degeneracy", {"quantity", "value"});
    t.rows.push_back({std::string("max rel two-scale vs single-scale"), worst});
    t.rows.push_back({std::string("max |p| single-scale"), pmax});
  }

  if (o.sweep || o.dissipation) {
    const auto ts = two_scale_viscoplastic_run(pb, o.m);
    Table& st = res.table("two_scale_steps", {"step", "t", "iterations", "fp_residual", "flow_residual",
                                              "equilibrium_residual", "cell_residual", "mean_p_defect",
                                              "mean_sigma_defect", "trace_max", "stored_energy", "dissipation"});
    for (std::size_t n = 0; n < ts.records.size(); ++n) {
      const auto& r = ts.records[n];
      st.rows.push_back({static_cast<long long>(n), r.t, static_cast<long long>(r.iterations), r.fp_residual,
                         r.flow_residual, r.equilibrium_residual, r.cell_residual, r.mean_p_defect,
                         r.mean_sigma_defect, r.trace_max, r.energy.stored(), r.dissipation});
    }
    res.tables.push_back({"effective_tensor", stiffness_table(TwoScaleSolver(pb, o.m).effective_tensor())});
    if (o.snapshots) {
      res.snapshots.push_back({"p0", ts.states.back().p0.snapshot()});
      res.snapshots.push_back({"sigma0", ts.states.back().sigma0.snapshot()});
      res.snapshots.push_back({"u0", encode_snapshot(ts.states.back().u0)});
    }
    if (o.sweep) {
      if (o.micro_Ks.size() < 3) throw ConfigError("homog-run: the sweep needs at least 3 eta values");
      std::vector<double> d, drel;
      const double ref = ts.states.back().sigma0.norm_l2();
      for (int K : o.micro_Ks) {
        if (pb.M % K != 0)
          throw ConfigError("homog-run: eta = 1/" + std::to_string(K) + " requires " + std::to_string(K) +
                            " to divide the macro resolution " + std::to_string(pb.M));
        const auto mt = run_trajectory(micro_twin(pb, o.load, K), o.m);
        d.push_back(two_scale_distance(mt.states.back().sigma, K, ts.states.back().sigma0));
        drel.push_back(ref > 0.0 ? d.back() / ref : d.back());
      }
      Table t = eta_table();
      add_eta_rows(t, "sigma_distance", o.micro_Ks, d);
      add_eta_rows(t, "sigma_distance_rel", o.micro_Ks, drel);
      res.tables.push_back({"report", std::move(t)});
      res.checks.push_back(Check::lt("sweep_decreasing", detail::max_successive_ratio(d), 1.0));
    }
    if (o.dissipation) {
      TwoScaleProblem fp = pb;
      if (!fp.load.time_constant() && !std::isfinite(fp.freeze_time)) fp.freeze_time = 0.5 * fp.T_end;
      const auto dr = two_scale_dissipation_check(fp.freeze_time == pb.freeze_time ? ts : two_scale_viscoplastic_run(fp, o.m));
      res.checks.push_back(Check::holds("two_scale_dissipation", dr.passed));
      Table& dt = res.table("dissipation", {"index", "free_energy", "max_increase"});
      for (std::size_t i = 0; i < dr.free_energy.size(); ++i)
        dt.rows.push_back({static_cast<long long>(i), dr.free_energy[i], dr.max_increase});
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Limit-identity verifier

struct LimitSuiteOptions {
  std::function<MicroProblem(int K)> make;
  std::vector<int> Ks;
  int m = 2;
  VerifierOptions verifier;
};

inline SuiteResult limit_suite(const LimitSuiteOptions& o) {
  SuiteResult res;
  std::vector<MicroRun> runs;
  for (int K : o.Ks) {
    MicroRun r{o.make(K), {}};
    r.trajectory = run_trajectory(r.problem, o.m);
    runs.push_back(std::move(r));
  }
  const auto rep = limit_identity_verifier(runs, o.verifier);
  std::vector<double> eq, co, mp, ms, gap, graw;
  for (const auto& r : rep.rows) {
    eq.push_back(r.equilibrium);
    co.push_back(r.constitutive);
    mp.push_back(r.mean_p);
    ms.push_back(r.mean_sigma);
    gap.push_back(r.gap_min);
    graw.push_back(r.gap_min_raw);
  }
  Table t = eta_table();
  add_eta_rows(t, "cell_equilibrium", o.Ks, eq);
  add_eta_rows(t, "constitutive", o.Ks, co);
  add_eta_rows(t, "mean_p", o.Ks, mp);
  add_eta_rows(t, "mean_sigma", o.Ks, ms);
  for (std::size_t i = 0; i < gap.size(); ++i) {
    t.rows.push_back({1.0 / o.Ks[i], std::string("monotonicity_gap"), gap[i], Cell{}});
    t.rows.push_back({1.0 / o.Ks[i], std::string("monotonicity_gap_raw"), graw[i], Cell{}});
  }
  res.tables.push_back({"report", std::move(t)});
  res.checks.push_back(Check::lt("equilibrium_decreasing", detail::max_successive_ratio(eq), 1.0));
  res.checks.push_back(Check::lt("constitutive_decreasing", detail::max_successive_ratio(co), 1.0));
  res.checks.push_back(Check::holds("mean_p_decreasing", rep.mean_decreasing));
  res.checks.push_back(Check::ge("monotonicity_gap_finest", gap.back(), -o.verifier.gap_tol));
  return res;
}

// ---------------------------------------------------------------------------
// Korn constant

struct KornSuiteOptions {
  std::vector<int> sizes{8, 16};
  KornOptions korn;
  double residual_tol = 1e-8;
  double spread_tol = 0.1;
  bool torus_rejection = true;
  bool snapshots = false;
};

inline SuiteResult korn_suite(const KornSuiteOptions& o) {
  SuiteResult res;
  Table& t = res.table("korn", {"n", "constant", "lambda_min", "lambda_lower", "residual", "iterations"});
  std::vector<double> cs;
  for (int N : o.sizes) {
    const KornReport rep = korn_constant(BoxGrid::unit(N, Mode::microhard), o.korn);
    cs.push_back(rep.constant);
    t.rows.push_back({static_cast<long long>(N), rep.constant, rep.lambda_min, rep.lambda_lower, rep.residual,
                      static_cast<long long>(rep.iterations)});
    res.checks.push_back(Check::le("residual_N" + std::to_string(N), rep.residual, o.residual_tol));
    if (o.snapshots) res.snapshots.push_back({"eigenvector_N" + std::to_string(N), encode_snapshot(rep.eigenvector)});
  }
  if (cs.size() >= 2) res.checks.push_back(Check::lt("refinement_spread", detail::spread(cs), o.spread_tol));
  if (o.torus_rejection) {
    bool rejected = false;
    try {
      korn_constant(BoxGrid::unit(6, Mode::torus), o.korn);
    } catch (const PreconditionError&) {
      rejected = true;
    }
    // The kernel itself: a constant skew field has zero sym and zero curl on the torus.
    EdgeTensorField w(BoxGrid::unit(6, Mode::torus));
    w.for_each([&](int c, int, int, int, std::size_t id) { w.data()[id] = c == 1 ? 1.0 : (c == 3 ? -1.0 : 0.0); });
    const auto kp = korn_parts(w);
    res.checks.push_back(Check::holds("torus_rejected", rejected && kp.p2 > 0.0 && kp.sym2 + kp.curl2 <= 1e-30));
  }
  return res;
}

}  // namespace cvh
