#pragma once

// Rothe scheme for the eta-scale gradient viscoplasticity problem
//
//   -div sigma = b,   sigma = C(x/eta)(sym grad u - sym p),
//   (p^n - p^{n-1}) / h = g(x/eta, Sigma^n),
//   Sigma = sigma - C1 dev sym p - reg p - C2 Pi^T curl* curl Pi p,
//
// with u nodal (zero on the boundary), p one trace-free 3x3 tensor per cell and
// Pi p its masked Yee edge representation (4-cell average). The nonlinear step is
// a damped fixed point: an elasticity solve for the current p, then a per-cell
// update that absorbs the local linear terms exactly (weighted resolvent), with
// curl-curl lagged one sweep and a diagonal shift kappa on both sides.

#include <algorithm>
#include <cmath>
#include <exception>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "cvh/elasticity.hpp"
#include "cvh/error.hpp"
#include "cvh/flow.hpp"
#include "cvh/grid.hpp"
#include "cvh/parallel.hpp"
#include "cvh/pattern.hpp"

namespace cvh {

/// b(t) = sum_k poly[k] t^k (+ general(t) if set).
struct LoadHistory {
  std::vector<NodalVectorField> poly;
  std::function<NodalVectorField(double)> general;

  bool time_constant() const { return poly.size() <= 1 && !general; }

  NodalVectorField at(const BoxGrid& g, double t) const {
    NodalVectorField b(g);
    double tk = 1.0;
    for (const auto& c : poly) {
      b.axpy(tk, c);
      tk *= t;
    }
    if (general) b += general(t);
    return b;
  }

  /// (1/h) int_{t0}^{t1} b dt: exact for the polynomial part, midpoint for the rest.
  NodalVectorField average(const BoxGrid& g, double t0, double t1) const {
    NodalVectorField b(g);
    for (std::size_t k = 0; k < poly.size(); ++k) {
      const double e = static_cast<double>(k + 1);
      const double w = (std::pow(t1, e) - std::pow(t0, e)) / (e * (t1 - t0));
      b.axpy(w, poly[k]);
    }
    if (general) b += general(0.5 * (t0 + t1));
    return b;
  }
};

/// Samples a two-valued cell scalar from a pattern at x/eta.
inline CellScalar sample_cell_scalar(const BoxGrid& g, const Pattern& pat, int cells_per_eta, double v0, double v1) {
  CellScalar s(g);
  s.for_each([&](int, int i, int j, int k, std::size_t id) {
    s.data()[id] =
        pat.phase({cell_y(i, cells_per_eta), cell_y(j, cells_per_eta), cell_y(k, cells_per_eta)}) == 0 ? v0 : v1;
  });
  return s;
}

struct MicroProblem {
  BoxGrid grid = BoxGrid::unit(8, Mode::microhard);
  int K = 1;  // eta = 1/K
  CoefficientField C;
  CellScalar C1;
  double C2 = 0.0;
  PeriodicFlowField flow;
  LoadHistory load;
  CellTensorField p0;
  double T_end = 1.0;
  Tensor3 mean_strain = Tensor3::zero();  // torus only
  bool regularize = true;                 // keep the -(1/m) p term
  double damping = 0.5;
  double tol = 1e-8;
  int max_iter = 200;
  double elastic_rtol = 1e-10;
  int anderson_depth = 6;  // 0 = plain damped iteration
  double freeze_time = std::numeric_limits<double>::infinity();  // u and b held from here on
  bool check_compatibility = true;

  int cells_per_eta() const { return grid.n[0] / K; }

  /// Two-phase material sampled at x/eta: phase 0/1 elasticities and hardening moduli.
  static MicroProblem sampled(const BoxGrid& g, int K, const Pattern& pattern, const IsotropicElasticity& c0,
                              const IsotropicElasticity& c1, double h0, double h1, double C2,
                              const PeriodicFlowField& flow) {
    MicroProblem pb;
    pb.grid = g;
    pb.K = K;
    pb.check_alignment();
    pb.C = CoefficientField::sample(g, pattern, c0, c1, pb.cells_per_eta());
    pb.C1 = sample_cell_scalar(g, pattern, pb.cells_per_eta(), h0, h1);
    pb.C2 = C2;
    pb.flow = flow;
    pb.p0 = CellTensorField(g);
    return pb;
  }

  void check_alignment() const {
    for (int a = 0; a < 3; ++a)
      if (K < 1 || grid.n[a] % K != 0)
        throw PreconditionError("micro problem: eta = 1/" + std::to_string(K) + " requires " + std::to_string(K) +
                                " to divide the grid resolution " + std::to_string(grid.n[a]) + " on every axis");
  }

  void validate() const {
    check_alignment();
    if (!(C.grid == grid) || !(C1.grid() == grid) || !(p0.grid() == grid))
      throw PreconditionError("micro problem: coefficient and initial fields must live on the problem grid");
    C.validate();
    double c1min = std::numeric_limits<double>::infinity();
    for (double v : C1.data()) c1min = std::min(c1min, v);
    if (!(c1min > 0.0)) throw PreconditionError("micro problem: C1 must be bounded below by a positive constant");
    if (!(C2 >= 0.0)) throw PreconditionError("micro problem: C2 must be non-negative");
    if (!(T_end > 0.0)) throw PreconditionError("micro problem: final time must be positive");
    if (!(damping > 0.0 && damping <= 1.0)) throw ConfigError("micro problem: damping must lie in (0, 1]");
    if (!(tol > 0.0) || !(elastic_rtol > 0.0)) throw ConfigError("micro problem: tolerances must be positive");
    flow.validate();
    for (int k = 0; k < grid.n[2]; ++k)
      for (int j = 0; j < grid.n[1]; ++j)
        for (int i = 0; i < grid.n[0]; ++i)
          if (std::abs(trace(cell_tensor(p0, i, j, k))) > 1e-10)
            throw PreconditionError("micro problem: initial plastic distortion must be trace-free");
    if (!grid.torus() && frob_norm(mean_strain) != 0.0)
      throw PreconditionError("micro problem: an imposed mean strain needs a torus grid");
  }
};

struct MicroState {
  double t = 0.0;
  NodalVectorField u;
  CellTensorField sigma;  // cell mean of the corner stresses
  CellTensorField p;
  CellTensorField Sigma;  // Eshelby stress
};

struct Energies {
  double elastic = 0;    // (1/2) <sigma, C^{-1} sigma>
  double hardening = 0;  // (1/2) <C1 dev sym p, dev sym p>
  double curl = 0;       // (C2/2) |curl Pi p|^2
  double reg = 0;        // (reg/2) |p|^2
  double stored() const { return elastic + hardening + curl + reg; }
};

struct StepRecord {
  double t = 0;
  int iterations = 0;
  double fp_residual = 0;          // fixed-point residual at acceptance
  double flow_residual = 0;        // |(p^n - p^{n-1})/h - g(Sigma^n)| / scale
  double equilibrium_residual = 0; // elasticity CG relative residual
  double trace_max = 0;
  double skew_max = 0;
  bool masks_ok = true;
  Energies energy;
  double load_potential = 0;  // <b^n, u^n>
  double dissipation = 0;     // h <Sigma^n, pdot^n>
  double dissipation_q = 0;   // h int |pdot|^q
  double dissipation_qstar = 0;  // h int |P Sigma|^{q*}
  double external_work = 0;   // <b^n, u^n - u^{n-1}>
  std::vector<double> history;
};

struct Trajectory {
  int m = 0;
  double h = 0;
  std::vector<MicroState> states;   // states[0] is the initial state
  std::vector<StepRecord> records;  // records[0] describes the initial state
  std::vector<std::string> warnings;
  double freeze_time = std::numeric_limits<double>::infinity();
  bool load_constant = true;

  /// Piecewise-affine interpolant of p at time t.
  CellTensorField affine_p(double t) const {
    const int n = std::clamp(static_cast<int>(std::ceil(t / h - 1e-12)), 1, static_cast<int>(states.size()) - 1);
    const double s = std::clamp((t - states[n - 1].t) / h, 0.0, 1.0);
    return (1.0 - s) * states[n - 1].p + s * states[n].p;
  }
  /// Piecewise-constant (right-continuous on steps) interpolant of p at time t.
  const CellTensorField& constant_p(double t) const {
    if (t <= 0.0) return states[0].p;
    const int n = std::clamp(static_cast<int>(std::ceil(t / h - 1e-12)), 1, static_cast<int>(states.size()) - 1);
    return states[n].p;
  }
};

namespace detail {

/// Largest eigenvalue of a Mandel stiffness on deviatoric strains.
inline double deviatoric_bound(const Stiffness& D) {
  Mandel6 v = Mandel6::Zero();
  v.head<3>().setConstant(1.0 / std::sqrt(3.0));
  const Stiffness P = Stiffness::Identity() - v * v.transpose();
  return Eigen::SelfAdjointEigenSolver<Stiffness>(P * D * P).eigenvalues().maxCoeff();
}

inline Tensor3 symdev(const Tensor3& t) { return dev(sym(t)); }

/// C2-weighted curl-curl backstress Pi^T curl* curl Pi p (cell tensors).
inline CellTensorField curl_backstress(const CellTensorField& p, double C2) {
  if (C2 == 0.0) return CellTensorField(p.grid());
  auto q = edges_to_cell(curl_curl(cell_to_edges(p)));
  q *= C2;
  return q;
}

inline double cell_sum(const BoxGrid& g, const std::function<double(int, int, int)>& f) {
  const int nx = g.n[0], ny = g.n[1];
  return ordered_sum(g.num_cells(), [&](std::size_t c) {
    const int i = static_cast<int>(c % nx), j = static_cast<int>((c / nx) % ny), k = static_cast<int>(c / nx / ny);
    return f(i, j, k);
  });
}

/// Anderson mixing (type II) for a fixed-point map x -> G(x): keeps the last
/// `depth` differences and returns the least-squares combination. The history is
/// dropped when the residual grows far beyond the best one seen.
class AndersonMixer {
 public:
  explicit AndersonMixer(int depth) : depth_(depth) {}

  std::vector<double> next(const std::vector<double>& x, const std::vector<double>& gx) {
    const std::size_t n = x.size();
    Eigen::VectorXd f(n), g(n);
    for (std::size_t i = 0; i < n; ++i) {
      g[i] = gx[i];
      f[i] = gx[i] - x[i];
    }
    const double fn = f.norm();
    if (depth_ <= 0) return gx;
    if (has_prev_ && fn > 1e2 * best_) {
      dF_.clear();
      dG_.clear();
    } else if (has_prev_) {
      dF_.push_back(f - f_prev_);
      dG_.push_back(g - g_prev_);
      if (static_cast<int>(dF_.size()) > depth_) {
        dF_.erase(dF_.begin());
        dG_.erase(dG_.begin());
      }
    }
    best_ = has_prev_ ? std::min(best_, fn) : fn;
    f_prev_ = f;
    g_prev_ = g;
    has_prev_ = true;
    if (dF_.empty()) return gx;
    Eigen::MatrixXd F(n, dF_.size()), G(n, dG_.size());
    for (std::size_t j = 0; j < dF_.size(); ++j) {
      F.col(static_cast<Eigen::Index>(j)) = dF_[j];
      G.col(static_cast<Eigen::Index>(j)) = dG_[j];
    }
    const Eigen::VectorXd gamma = F.colPivHouseholderQr().solve(f);
    const Eigen::VectorXd xn = g - G * gamma;
    return std::vector<double>(xn.data(), xn.data() + n);
  }

 private:
  int depth_;
  bool has_prev_ = false;
  double best_ = 0.0;
  Eigen::VectorXd f_prev_, g_prev_;
  std::vector<Eigen::VectorXd> dF_, dG_;
};

}  // namespace detail

/// Per-cell update p = p_prev + h g(Sigma) where
/// Sigma + h (a_sd P_symdev + a_sk P_skew) g(P Sigma) = W.
struct LocalUpdate {
  Tensor3 p;
  Tensor3 Sigma;
};
inline LocalUpdate local_flow_update(const FlowRule& g, double h, double a_sd, double a_sk, const Tensor3& W,
                                     const Tensor3& p_prev) {
  LocalUpdate out;
  out.Sigma = g.weighted_resolvent(h * a_sd, h * a_sk, W);
  out.p = p_prev + h * g.evaluate(out.Sigma);
  return out;
}

inline double nodal_inner(const NodalVectorField& a, const NodalVectorField& b) {
  return inner(a, b);
}

class MicroSolver {
 public:
  MicroSolver(const MicroProblem& pb, int m) : pb_(pb), m_(m), elastic_(pb.C, pb.elastic_rtol) {
    pb_.validate();
    if (m < 0) throw PreconditionError("rothe: level m must be non-negative");
    if (pb_.regularize && m == 0) throw PreconditionError("rothe: the -(1/m) p regularisation needs m >= 1");
    h_ = pb_.T_end / std::pow(2.0, m);
    reg_ = pb_.regularize ? 1.0 / m : 0.0;
    const BoxGrid& g = pb_.grid;
    double inv_h2 = 0.0;
    for (double hh : g.h) inv_h2 += 1.0 / (hh * hh);
    kappa_ = pb_.C2 * 2.0 * inv_h2;
    std::vector<double> dev_phase;
    for (const auto& D : pb_.C.phases) dev_phase.push_back(detail::deviatoric_bound(D));
    const int cpe = pb_.cells_per_eta();
    const std::size_t nc = g.num_cells();
    a_sd_.resize(nc);
    a_sk_.resize(nc);
    rule_.resize(nc);
    for (int k = 0; k < g.n[2]; ++k)
      for (int j = 0; j < g.n[1]; ++j)
        for (int i = 0; i < g.n[0]; ++i) {
          const std::size_t c = pb_.C.cell(i, j, k);
          a_sd_[c] = dev_phase[pb_.C.phase_of_cell[c]] + pb_.C1(0, i, j, k) + reg_ + kappa_;
          a_sk_[c] = reg_ + kappa_;
          rule_[c] = trace_free(pb_.flow.rule_at({cell_y(i, cpe), cell_y(j, cpe), cell_y(k, cpe)}));
        }
  }

  double step_size() const { return h_; }
  double regularization() const { return reg_; }
  int steps() const { return 1 << m_; }
  const MicroProblem& problem() const { return pb_; }
  const ElasticityOperator& elasticity() const { return elastic_; }

  /// Sigma = sigma - C1 dev sym p - reg p - C2 Pi^T curl curl Pi p.
  CellTensorField eshelby(const CellTensorField& sigma, const CellTensorField& p) const {
    CellTensorField S = sigma;
    const auto Q = detail::curl_backstress(p, pb_.C2);
    const BoxGrid& g = pb_.grid;
    for (int k = 0; k < g.n[2]; ++k)
      for (int j = 0; j < g.n[1]; ++j)
        for (int i = 0; i < g.n[0]; ++i) {
          const Tensor3 pc = cell_tensor(p, i, j, k);
          set_cell_tensor(S, i, j, k,
                          cell_tensor(sigma, i, j, k) - pb_.C1(0, i, j, k) * detail::symdev(pc) - reg_ * pc -
                              cell_tensor(Q, i, j, k));
        }
    return S;
  }

  Energies energies(const ElasticSolution& sol, const CellTensorField& p) const {
    const BoxGrid& g = pb_.grid;
    const double V = g.cell_volume();
    Energies e;
    const CellTensorField eps = sym_field(p);
    e.elastic = elastic_energy(sol, &eps);
    e.hardening = detail::cell_sum(g, [&](int i, int j, int k) {
      const Tensor3 d = detail::symdev(cell_tensor(p, i, j, k));
      return 0.5 * V * pb_.C1(0, i, j, k) * frob_inner(d, d);
    });
    e.reg = 0.5 * reg_ * inner(p, p);
    if (pb_.C2 > 0.0) {
      const auto cp = curl(cell_to_edges(p));
      e.curl = 0.5 * pb_.C2 * inner(cp, cp);
    }
    return e;
  }

  MicroState initial_state(StepRecord& rec, std::vector<std::string>& warnings) const {
    MicroState s;
    s.t = 0.0;
    s.p = pb_.p0;
    const NodalVectorField b = pb_.load.at(pb_.grid, 0.0);
    const CellTensorField eps = sym_field(s.p);
    const ElasticSolution sol = elastic_.solve(&eps, &b, pb_.mean_strain);
    s.u = sol.u;
    s.sigma = sol.stress_cell;
    s.Sigma = eshelby(s.sigma, s.p);
    rec = StepRecord{};
    rec.energy = energies(sol, s.p);
    rec.load_potential = nodal_inner(b, s.u);
    rec.equilibrium_residual = sol.cg.residual;
    fill_invariants(s, rec);
    if (pb_.check_compatibility) {
      int bad = 0;
      double worst = 0.0;
      for (int k = 0; k < pb_.grid.n[2]; ++k)
        for (int j = 0; j < pb_.grid.n[1]; ++j)
          for (int i = 0; i < pb_.grid.n[0]; ++i) {
            const Tensor3 S = cell_tensor(s.Sigma, i, j, k);
            const double gv = frob_norm(rule_[pb_.C.cell(i, j, k)].evaluate(S));
            if (gv > pb_.tol * (1.0 + frob_norm(S))) ++bad;
            worst = std::max(worst, gv);
          }
      if (bad > 0) {
        std::ostringstream os;
        os << "initial data not compatible: g(Sigma0) != 0 in " << bad << " cells (max |g| = " << worst << ")";
        warnings.push_back(os.str());
      }
    }
    return s;
  }

  MicroState step(const MicroState& prev, int n, StepRecord& rec) const {
    const BoxGrid& g = pb_.grid;
    const double t0 = (n - 1) * h_, t1 = n * h_;
    const bool frozen = t0 >= pb_.freeze_time;
    const NodalVectorField b = frozen ? pb_.load.at(g, pb_.freeze_time) : pb_.load.average(g, t0, t1);
    const std::size_t nc = g.num_cells();
    const double V = g.cell_volume();

    CellTensorField pk = prev.p, ploc(g);
    detail::AndersonMixer mixer(pb_.anderson_depth);
    NodalVectorField u_guess = prev.u;
    rec = StepRecord{};
    rec.t = t1;
    bool done = false;
    ElasticSolution sol;
    for (int it = 1; it <= pb_.max_iter; ++it) {
      const CellTensorField eps = sym_field(pk);
      sol = solve_or_hold(frozen, prev.u, eps, b, u_guess);
      u_guess = sol.u;
      const auto Q = detail::curl_backstress(pk, pb_.C2);
      std::vector<double> dnum(nc), dden(nc);
      std::exception_ptr failure;
#pragma omp parallel for schedule(static)
      for (int k = 0; k < g.n[2]; ++k)
        for (int j = 0; j < g.n[1]; ++j)
          for (int i = 0; i < g.n[0]; ++i) {
            const std::size_t c = pb_.C.cell(i, j, k);
            const Tensor3 p_k = cell_tensor(pk, i, j, k), p_prev = cell_tensor(prev.p, i, j, k);
            const Tensor3 Ce = cell_tensor(sol.stress_cell, i, j, k) +
                               from_mandel(pb_.C.at(c) * to_mandel(sym(p_k)));
            const Tensor3 R = Ce - cell_tensor(Q, i, j, k) + kappa_ * p_k;
            const Tensor3 W = R - a_sd_[c] * detail::symdev(p_prev) - a_sk_[c] * skew(p_prev);
            try {
              const LocalUpdate lu = local_flow_update(rule_[c], h_, a_sd_[c], a_sk_[c], W, p_prev);
              set_cell_tensor(ploc, i, j, k, lu.p);
              dnum[c] = anorm2(c, lu.p - p_k);
              dden[c] = anorm2(c, lu.p - p_prev);
            } catch (...) {
#pragma omp critical(cvh_micro_failure)
              if (!failure) failure = std::current_exception();
            }
          }
      if (failure) std::rethrow_exception(failure);
      const double num = std::sqrt(V * ordered_sum(nc, [&](std::size_t c) { return dnum[c]; }));
      const double den = std::sqrt(V * ordered_sum(nc, [&](std::size_t c) { return dden[c]; }));
      const double res = num == 0.0 ? 0.0 : num / std::max(den, 1e-300);
      rec.history.push_back(res);
      rec.iterations = it;
      if (res <= pb_.tol) {
        done = true;
        rec.fp_residual = res;
        break;
      }
      // Damped map G(p) = p + omega (L(p) - p), accelerated.
      CellTensorField gk = pk;
      gk.axpy(pb_.damping, ploc - pk);
      pk.data() = mixer.next(pk.data(), gk.data());
    }
    if (!done) {
      std::ostringstream os;
      os << "rothe step " << n << ": fixed point did not converge in " << pb_.max_iter
         << " sweeps (damping " << pb_.damping << ", last residual " << rec.history.back() << ")";
      throw ConvergenceError(os.str(), rec.history);
    }

    MicroState s;
    s.t = t1;
    s.p = ploc;
    const CellTensorField eps = sym_field(s.p);
    sol = solve_or_hold(frozen, prev.u, eps, b, u_guess);
    s.u = sol.u;
    s.sigma = sol.stress_cell;
    s.Sigma = eshelby(s.sigma, s.p);

    rec.energy = energies(sol, s.p);
    rec.load_potential = nodal_inner(b, s.u);
    rec.external_work = nodal_inner(b, s.u - prev.u);
    rec.equilibrium_residual = frozen ? 0.0 : sol.cg.residual;
    // Flow inclusion and dissipation terms with the final Sigma.
    std::vector<double> fr(nc), fs(nc), dis(nc), dq(nc), dqs(nc);
    for (int k = 0; k < g.n[2]; ++k)
      for (int j = 0; j < g.n[1]; ++j)
        for (int i = 0; i < g.n[0]; ++i) {
          const std::size_t c = pb_.C.cell(i, j, k);
          const FlowRule& rule = rule_[c];
          const Tensor3 S = cell_tensor(s.Sigma, i, j, k);
          const Tensor3 pdot = (cell_tensor(s.p, i, j, k) - cell_tensor(prev.p, i, j, k)) / h_;
          const Tensor3 gv = rule.evaluate(S);
          fr[c] = std::pow(frob_norm(pdot - gv), 2);
          fs[c] = std::pow(frob_norm(pdot), 2) + std::pow(frob_norm(gv), 2);
          dis[c] = h_ * V * frob_inner(S, pdot);
          dq[c] = h_ * V * std::pow(frob_norm(pdot), rule.q);
          dqs[c] = h_ * V * std::pow(frob_norm(project(rule.projection, S)), rule.q_star);
        }
    const double frn = std::sqrt(ordered_sum(nc, [&](std::size_t c) { return fr[c]; }));
    const double fsn = std::sqrt(ordered_sum(nc, [&](std::size_t c) { return fs[c]; }));
    rec.flow_residual = frn == 0.0 ? 0.0 : frn / std::max(fsn, 1e-300);
    rec.dissipation = ordered_sum(nc, [&](std::size_t c) { return dis[c]; });
    rec.dissipation_q = ordered_sum(nc, [&](std::size_t c) { return dq[c]; });
    rec.dissipation_qstar = ordered_sum(nc, [&](std::size_t c) { return dqs[c]; });
    fill_invariants(s, rec);
    return s;
  }

  Trajectory run(const std::function<void(const MicroState&, const StepRecord&)>& on_step = {}) const {
    Trajectory tr;
    tr.m = m_;
    tr.h = h_;
    tr.freeze_time = pb_.freeze_time;
    tr.load_constant = pb_.load.time_constant();
    StepRecord r0;
    tr.states.push_back(initial_state(r0, tr.warnings));
    tr.records.push_back(r0);
    if (on_step) on_step(tr.states.back(), r0);
    for (int n = 1; n <= steps(); ++n) {
      StepRecord rec;
      tr.states.push_back(step(tr.states.back(), n, rec));
      tr.records.push_back(rec);
      if (on_step) on_step(tr.states.back(), rec);
    }
    return tr;
  }

  static CellTensorField sym_field(const CellTensorField& p) {
    CellTensorField e(p.grid());
    const auto& L = p.dims();
    for (int k = 0; k < L[2]; ++k)
      for (int j = 0; j < L[1]; ++j)
        for (int i = 0; i < L[0]; ++i) set_cell_tensor(e, i, j, k, sym(cell_tensor(p, i, j, k)));
    return e;
  }

 private:
  ElasticSolution solve_or_hold(bool frozen, const NodalVectorField& u_hold, const CellTensorField& eps,
                                const NodalVectorField& b, const NodalVectorField& guess) const {
    if (!frozen) return elastic_.solve(&eps, &b, pb_.mean_strain, &guess);
    ElasticSolution sol;
    sol.u = u_hold;
    elastic_.fill_stress(sol, &eps, pb_.mean_strain);
    return sol;
  }

  double anorm2(std::size_t c, const Tensor3& q) const {
    const Tensor3 sd = detail::symdev(q), sk = skew(q);
    return a_sd_[c] * frob_inner(sd, sd) + (a_sk_[c] > 0.0 ? a_sk_[c] : a_sd_[c]) * frob_inner(sk, sk);
  }

  void fill_invariants(const MicroState& s, StepRecord& rec) const {
    const BoxGrid& g = pb_.grid;
    for (int k = 0; k < g.n[2]; ++k)
      for (int j = 0; j < g.n[1]; ++j)
        for (int i = 0; i < g.n[0]; ++i) {
          const Tensor3 pc = cell_tensor(s.p, i, j, k);
          rec.trace_max = std::max(rec.trace_max, std::abs(trace(pc)));
          rec.skew_max = std::max(rec.skew_max, frob_norm(skew(pc)));
        }
    try {
      cell_to_edges(s.p).check_mask("micro state");
      s.u.check_mask("micro state");
      rec.masks_ok = true;
    } catch (const PreconditionError&) {
      rec.masks_ok = false;
    }
  }

  MicroProblem pb_;
  int m_;
  double h_ = 0, reg_ = 0, kappa_ = 0;
  ElasticityOperator elastic_;
  std::vector<double> a_sd_, a_sk_;
  std::vector<FlowRule> rule_;
};

inline Trajectory run_trajectory(const MicroProblem& pb, int m) { return MicroSolver(pb, m).run(); }

// ---------------------------------------------------------------------------
// Monitors

struct AprioriReport {
  std::vector<double> left, right;  // per step, including step 0
  double max_ratio = 0;             // max left/right
  double max_stored = 0;            // max stored energy over steps
  double max_elastic = 0, max_hardening = 0, max_curl = 0;
  double dissipation = 0, dissipation_q = 0, dissipation_qstar = 0;
};

/// Discrete energy balance: stored(l) + sum_{n<=l} h <Sigma^n, pdot^n>
///   <= stored(0) + sum_{n<=l} <b^n, u^n - u^{n-1}>.
inline AprioriReport apriori_monitor(const Trajectory& tr) {
  AprioriReport rep;
  double dis = 0, work = 0;
  const double e0 = tr.records.front().energy.stored();
  for (const auto& r : tr.records) {
    dis += r.dissipation;
    work += r.external_work;
    rep.dissipation_q += r.dissipation_q;
    rep.dissipation_qstar += r.dissipation_qstar;
    const double left = r.energy.stored() + dis, right = e0 + work;
    rep.left.push_back(left);
    rep.right.push_back(right);
    if (right > 0.0) rep.max_ratio = std::max(rep.max_ratio, left / right);
    else if (left > 0.0) rep.max_ratio = std::numeric_limits<double>::infinity();
    rep.max_stored = std::max(rep.max_stored, r.energy.stored());
    rep.max_elastic = std::max(rep.max_elastic, r.energy.elastic);
    rep.max_hardening = std::max(rep.max_hardening, r.energy.hardening);
    rep.max_curl = std::max(rep.max_curl, r.energy.curl);
  }
  rep.dissipation = dis;
  return rep;
}

struct DissipationReport {
  std::vector<double> free_energy;  // stored - <b, u> on the checked steps
  bool passed = true;
  int offending_step = -1;
  double max_increase = 0;
};

/// Free energy must not increase on steps with frozen data (after the freeze time,
/// or all steps when the load is constant in time).
inline DissipationReport dissipation_check(const Trajectory& tr, double tol = 1e-8) {
  const bool all = tr.load_constant;
  if (!all && !std::isfinite(tr.freeze_time))
    throw PreconditionError("dissipation_check: needs frozen data (freeze time or a time-constant load)");
  DissipationReport rep;
  double scale = 0.0;
  for (const auto& r : tr.records) scale = std::max(scale, std::abs(r.energy.stored()) + std::abs(r.load_potential));
  for (std::size_t n = 0; n < tr.records.size(); ++n) {
    const double t_start = n == 0 ? 0.0 : tr.states[n - 1].t;
    if (!all && (n == 0 || t_start < tr.freeze_time)) continue;
    const auto& r = tr.records[n];
    const double F = r.energy.stored() - r.load_potential;
    if (!rep.free_energy.empty()) {
      const double inc = F - rep.free_energy.back();
      rep.max_increase = std::max(rep.max_increase, inc);
      if (inc > tol * (scale + 1e-300) && rep.passed) {
        rep.passed = false;
        rep.offending_step = static_cast<int>(n);
      }
    }
    rep.free_energy.push_back(F);
  }
  return rep;
}

/// Space-time L^q norms of p: affine interpolant over [0, T] against the
/// piecewise-constant one extended by one step (p^0 on [-h, 0]).
struct InterpolantNormReport {
  double affine = 0, constant_extended = 0;
};
inline InterpolantNormReport interpolant_norms(const Trajectory& tr, double q) {
  static const double xg[5] = {-0.9061798459386640, -0.5384693101056831, 0.0, 0.5384693101056831, 0.9061798459386640};
  static const double wg[5] = {0.2369268850561891, 0.4786286704993665, 0.5688888888888889, 0.4786286704993665,
                               0.2369268850561891};
  const BoxGrid& g = tr.states[0].p.grid();
  const double V = g.cell_volume();
  auto lq = [&](const CellTensorField& p) {
    return detail::cell_sum(g, [&](int i, int j, int k) { return V * std::pow(frob_norm(cell_tensor(p, i, j, k)), q); });
  };
  InterpolantNormReport rep;
  double aff = 0.0, con = tr.h * lq(tr.states[0].p);
  for (std::size_t n = 1; n < tr.states.size(); ++n) {
    con += tr.h * lq(tr.states[n].p);
    for (int gq = 0; gq < 5; ++gq) {
      const double s = 0.5 * (xg[gq] + 1.0);
      aff += 0.5 * tr.h * wg[gq] * lq((1.0 - s) * tr.states[n - 1].p + s * tr.states[n].p);
    }
  }
  rep.affine = std::pow(aff, 1.0 / q);
  rep.constant_extended = std::pow(con, 1.0 / q);
  return rep;
}

}  // namespace cvh
