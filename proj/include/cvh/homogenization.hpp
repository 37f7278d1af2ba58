#pragma once

// Periodic cell problems and the two-scale limit.
//
// Cell problem on the Y torus: for a macro strain E and a cell eigenstrain e,
//   -div_y C(y)(E + sym grad_y u1 - e) = 0,  u1 periodic with zero mean,
// discretised exactly like the micro elasticity (corner quadrature). The
// effective tensor collects the Y-mean stresses of the 6 unit Mandel strains.
//
// Two-scale solver (C2 = 0): one cell problem per macro cell. By linearity
//   sigma0(X, y) = sum_i Ebar_i(X) S_i(y) + R[p0(X, .)](y),
// where S_i are the unit-strain responses, R the response to sym p0 at E = 0 and
// Ebar(X) the mean macro corner strain of X. The macro problem is then ordinary
// elasticity with C_eff and a per-cell eigenstrain -C_eff^{-1} <R>_Y.

#include <algorithm>
#include <array>
#include <cmath>
#include <exception>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/SparseCholesky>

#include "cvh/elasticity.hpp"
#include "cvh/error.hpp"
#include "cvh/flow.hpp"
#include "cvh/micro.hpp"
#include "cvh/random.hpp"
#include "cvh/unfolding.hpp"

namespace cvh {

struct CellProblem {
  CoefficientField C;  // on a unit torus

  static CellProblem sampled(int n, const Pattern& pattern, const IsotropicElasticity& c0,
                             const IsotropicElasticity& c1) {
    if (n < 2) throw ConfigError("cell problem: Y resolution must be at least 2");
    return {CoefficientField::sample(BoxGrid::unit(n, Mode::torus), pattern, c0, c1, n)};
  }

  const BoxGrid& grid() const { return C.grid; }

  void validate() const {
    if (!C.grid.torus()) throw PreconditionError("cell problem: the Y grid must be periodic");
    C.validate();
  }
};

namespace detail {

inline Tensor3 cell_mean(const CellTensorField& f) {
  const std::size_t n = f.per_comp();
  Tensor3 t;
  for (std::size_t c = 0; c < 9; ++c)
    t[c] = ordered_sum(n, [&](std::size_t i) { return f.data()[c * n + i]; }) / static_cast<double>(n);
  return t;
}

inline Tensor3 corner_mean(const QuadTensorField& q, int i, int j, int k) {
  Tensor3 t = Tensor3::zero();
  for (int d = 0; d < 8; ++d) t += 0.125 * corner_tensor(q, d, i, j, k);
  return t;
}

inline Tensor3 unit_strain(int i) {
  Mandel6 e = Mandel6::Zero();
  e[i] = 1.0;
  return from_mandel(e);
}

inline double sym_defect(const Stiffness& C) {
  double s = 0.0;
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) s = std::max(s, std::abs(C(i, j) - C(j, i)));
  return s;
}

}  // namespace detail

struct CellSolution {
  Stiffness C_eff = Stiffness::Zero();
  Stiffness basis = Stiffness::Identity();          // columns: Mandel strains solved for
  std::array<NodalVectorField, 6> correctors;       // per basis strain
  std::array<CellTensorField, 6> stress;            // cell stresses per basis strain
  std::vector<CgResult> cg;
  double symmetry_defect = 0;
};

/// Six periodic cell problems by CG; C_eff = S B^{-1} with S the Y-mean stresses
/// (Mandel columns) of the basis strains B.
inline CellSolution elastic_cell_solve(const CellProblem& cp, const Stiffness& basis = Stiffness::Identity(),
                                       double rtol = 1e-11) {
  cp.validate();
  Eigen::FullPivLU<Stiffness> lu(basis);
  if (!lu.isInvertible()) throw PreconditionError("cell problem: the strain basis must be invertible");
  const ElasticityOperator op(cp.C, rtol);
  CellSolution out;
  out.basis = basis;
  Stiffness S;
  for (int j = 0; j < 6; ++j) {
    const Mandel6 col = basis.col(j);
    auto sol = op.solve(nullptr, nullptr, from_mandel(col));
    S.col(j) = to_mandel(detail::cell_mean(sol.stress_cell));
    out.correctors[static_cast<std::size_t>(j)] = std::move(sol.u);
    out.stress[static_cast<std::size_t>(j)] = std::move(sol.stress_cell);
    out.cg.push_back(sol.cg);
  }
  out.C_eff = S * lu.inverse();
  out.symmetry_defect = detail::sym_defect(out.C_eff);
  return out;
}

struct VoigtReuss {
  Stiffness voigt, reuss;  // <C> and <C^{-1}>^{-1}
};
inline VoigtReuss voigt_reuss_bounds(const CoefficientField& C) {
  C.validate();
  VoigtReuss vr{Stiffness::Zero(), Stiffness::Zero()};
  Stiffness comp = Stiffness::Zero();
  const double w = 1.0 / static_cast<double>(C.phase_of_cell.size());
  for (std::size_t c = 0; c < C.phase_of_cell.size(); ++c) {
    vr.voigt += w * C.at(c);
    comp += w * C.at(c).inverse();
  }
  vr.reuss = comp.inverse();
  return vr;
}

/// Direct periodic cell solver (sparse Cholesky, one node pinned, zero-mean
/// corrector afterwards). Used for the many cell solves of the two-scale paths.
class CellResponse {
 public:
  explicit CellResponse(const CellProblem& cp) : op_(cp.C) {
    cp.validate();
    NodalVectorField mark(cp.grid());
    for (int r = 0; r < 3; ++r) mark(r, 0, 0, 0) = 1.0;
    const Vec m = op_.gather(mark);
    std::vector<char> pinned(m.size(), 0);
    for (std::size_t d = 0; d < m.size(); ++d)
      if (m[d] != 0.0) {
        pinned[d] = 1;
        pinned_.push_back(static_cast<int>(d));
      }
    Eigen::SparseMatrix<double> A = op_.assemble();
    A.prune([&](Eigen::Index r, Eigen::Index c, double) {
      return !pinned[static_cast<std::size_t>(r)] && !pinned[static_cast<std::size_t>(c)];
    });
    for (int d : pinned_) A.coeffRef(d, d) = 1.0;
    llt_.compute(A);
    if (llt_.info() != Eigen::Success) throw ConvergenceError("cell response: factorisation failed", {});
    for (int i = 0; i < 6; ++i) {
      unit_[static_cast<std::size_t>(i)] = solve(detail::unit_strain(i), nullptr);
      C_eff_.col(i) = to_mandel(detail::cell_mean(unit_[static_cast<std::size_t>(i)].stress_cell));
    }
  }

  const BoxGrid& grid() const { return op_.grid(); }
  const CoefficientField& coefficients() const { return op_.coefficients(); }
  const Stiffness& effective() const { return C_eff_; }
  /// Response to the i-th unit Mandel strain.
  const ElasticSolution& unit(int i) const { return unit_[static_cast<std::size_t>(i)]; }

  ElasticSolution solve(const Tensor3& E, const CellTensorField* eig) const {
    double gross = 0.0;
    Vec f = op_.load(eig, nullptr, E, &gross);
    const Vec f_full = f;
    for (int d : pinned_) f[static_cast<std::size_t>(d)] = 0.0;
    const Eigen::VectorXd x = llt_.solve(Eigen::Map<const Eigen::VectorXd>(f.data(), static_cast<Eigen::Index>(f.size())));
    Vec xv(x.data(), x.data() + x.size());
    const std::size_t per = xv.size() / 3;
    for (int c = 0; c < 3; ++c) {
      double s = 0.0;
      for (std::size_t i = 0; i < per; ++i) s += xv[c * per + i];
      s /= static_cast<double>(per);
      for (std::size_t i = 0; i < per; ++i) xv[c * per + i] -= s;
    }
    ElasticSolution sol;
    sol.u = op_.scatter(xv);
    op_.fill_stress(sol, eig, E);
    Vec r;
    op_.apply(xv, r);
    double num = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) num += (r[i] - f_full[i]) * (r[i] - f_full[i]);
    // Relative to the element loads, since f itself may cancel to round-off.
    sol.cg.residual = gross > 0.0 ? std::sqrt(num) / gross : std::sqrt(num);
    return sol;
  }

 private:
  ElasticityOperator op_;
  std::vector<int> pinned_;
  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> llt_;
  std::array<ElasticSolution, 6> unit_;
  Stiffness C_eff_ = Stiffness::Zero();
};

/// Nodal field sampled from a function of position (boundary entries left zero).
inline NodalVectorField sample_nodal(const BoxGrid& g, const std::function<Point3(const Point3&)>& f) {
  NodalVectorField u(g);
  u.for_each([&](int c, int i, int j, int k, std::size_t id) {
    if (u.is_free(c, i, j, k)) u.data()[id] = f({i * g.h[0], j * g.h[1], k * g.h[2]})[static_cast<std::size_t>(c)];
  });
  return u;
}

// ---------------------------------------------------------------------------
// Elastic homogenization sweep

struct ElasticConvergenceCase {
  Pattern pattern = Pattern::laminate(0.5, 0);
  IsotropicElasticity c0{1.0, 1.0}, c1{2.0, 3.0};
  int cells_per_eta = 4;
  std::function<Point3(const Point3&)> body_force = [](const Point3& x) {
    return Point3{std::sin(M_PI * x[1]), 0.5 * x[0], -1.0};
  };
  double rtol = 1e-10;
};

struct ElasticConvergenceRow {
  int K = 0;
  double eta = 0;
  double sigma_error = 0, sigma_rel = 0;  // ||T_eta(sigma_eta) - sigma0||
  double u_error = 0, u_rel = 0;          // ||u_eta - u0||
  double energy_micro = 0, energy_two_scale = 0, energy_rel = 0;
  int cg_iterations = 0;
};

struct ElasticConvergenceReport {
  Stiffness C_eff = Stiffness::Zero();
  std::vector<ElasticConvergenceRow> rows;

  /// log2 ratios of successive sigma errors (halving eta per row).
  std::vector<double> sigma_rates() const {
    std::vector<double> r;
    for (std::size_t i = 0; i + 1 < rows.size(); ++i)
      r.push_back(std::log(rows[i].sigma_error / rows[i + 1].sigma_error) /
                  std::log(static_cast<double>(rows[i + 1].K) / rows[i].K));
    return r;
  }
  bool sigma_decreasing() const {
    for (std::size_t i = 0; i + 1 < rows.size(); ++i)
      if (!(rows[i + 1].sigma_error < rows[i].sigma_error)) return false;
    return true;
  }
};

/// Micro problems -div C(x/eta) sym grad u = b (u = 0 on the boundary) at each
/// eta = 1/K on grids with `cells_per_eta` cells per period, against the limit:
/// u0 from C_eff on the same grid and sigma0(x, y) = C(y)(E + sym grad_y chi_E) with
/// E the mean macro strain of the fine cell at x = eta([x/eta] + y).
inline ElasticConvergenceReport elastic_homogenization_convergence(const ElasticConvergenceCase& cs,
                                                                   const std::vector<int>& Ks) {
  if (Ks.empty()) throw ConfigError("elastic homogenization: empty eta list");
  const int c = cs.cells_per_eta;
  if (c < 2) throw ConfigError("elastic homogenization: cells_per_eta must be at least 2");
  const CellProblem cp = CellProblem::sampled(c, cs.pattern, cs.c0, cs.c1);
  const CellSolution cell = elastic_cell_solve(cp);
  ElasticConvergenceReport rep;
  rep.C_eff = cell.C_eff;
  const Stiffness Cs = 0.5 * (cell.C_eff + cell.C_eff.transpose());
  for (int K : Ks) {
    if (K < 1) throw ConfigError("elastic homogenization: eta = 1/K needs K >= 1");
    const BoxGrid g = BoxGrid::unit(c * K, Mode::microhard);
    const UnfoldGeometry geom = UnfoldGeometry::aligned(g, K);
    const NodalVectorField b = sample_nodal(g, cs.body_force);
    const auto micro = ElasticityOperator(CoefficientField::sample(g, cs.pattern, cs.c0, cs.c1, c), cs.rtol)
                           .solve(nullptr, &b);
    const auto macro = ElasticityOperator(CoefficientField(g, Cs), cs.rtol).solve(nullptr, &b);

    const auto Ts = unfold_field(micro.stress_cell, geom);
    TwoScaleField<9> s0(geom);
    for (int Z = 0; Z < geom.whole[2]; ++Z)
      for (int Y = 0; Y < geom.whole[1]; ++Y)
        for (int X = 0; X < geom.whole[0]; ++X) {
          const std::size_t m = geom.macro_index(X, Y, Z);
          for (int z = 0; z < c; ++z)
            for (int y = 0; y < c; ++y)
              for (int x = 0; x < c; ++x) {
                const Mandel6 mE = to_mandel(detail::corner_mean(macro.strain, X * c + x, Y * c + y, Z * c + z));
                Tensor3 s = Tensor3::zero();
                for (int i = 0; i < 6; ++i) s += mE[i] * cell_tensor(cell.stress[static_cast<std::size_t>(i)], x, y, z);
                s0.set_tensor(m, geom.y_index(x, y, z), s);
              }
        }
    ElasticConvergenceRow row;
    row.K = K;
    row.eta = geom.eta;
    row.sigma_error = (Ts - s0).norm_l2();
    row.sigma_rel = row.sigma_error / std::max(s0.norm_l2(), 1e-300);
    row.u_error = norm_l2(micro.u - macro.u);
    row.u_rel = row.u_error / std::max(norm_l2(macro.u), 1e-300);
    row.energy_micro = 0.5 * inner(b, micro.u);
    row.energy_two_scale = 0.5 * inner(b, macro.u);
    row.energy_rel = std::abs(row.energy_micro - row.energy_two_scale) / std::max(std::abs(row.energy_two_scale), 1e-300);
    row.cg_iterations = micro.cg.iterations;
    rep.rows.push_back(row);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Two-scale viscoplastic solver, C2 = 0

struct TwoScaleProblem {
  int M = 8;  // macro cells per axis (micro-hard unit cube)
  int n = 4;  // Y resolution per axis
  Pattern pattern = Pattern::homogeneous();
  IsotropicElasticity c0{1.0, 1.0}, c1{1.0, 1.0};
  double h0 = 1.0, h1 = 1.0;  // C1 per phase
  double C2 = 0.0;
  PeriodicFlowField flow;
  LoadHistory load;  // on macro_grid()
  double T_end = 1.0;
  bool regularize = true;
  double damping = 0.5;
  double tol = 1e-8;
  int max_iter = 200;
  double elastic_rtol = 1e-10;
  int anderson_depth = 6;
  double freeze_time = std::numeric_limits<double>::infinity();

  BoxGrid macro_grid() const { return BoxGrid::unit(M, Mode::microhard); }
  UnfoldGeometry geometry() const { return UnfoldGeometry::aligned(BoxGrid::unit(M * n, Mode::microhard), M); }

  void validate() const {
    if (C2 != 0.0)
      throw PreconditionError("two-scale solver: only C2 = 0 is a closed system; use the limit verifier for C2 > 0");
    if (M < 2 || n < 2) throw ConfigError("two-scale solver: macro and Y resolutions must be at least 2");
    if (!(h0 > 0.0 && h1 > 0.0)) throw PreconditionError("two-scale solver: C1 must be positive");
    if (!(T_end > 0.0)) throw PreconditionError("two-scale solver: final time must be positive");
    if (!(damping > 0.0 && damping <= 1.0)) throw ConfigError("two-scale solver: damping must lie in (0, 1]");
    if (!(tol > 0.0) || !(elastic_rtol > 0.0)) throw ConfigError("two-scale solver: tolerances must be positive");
    flow.validate();
    for (const auto& f : load.poly)
      if (!(f.grid() == macro_grid())) throw PreconditionError("two-scale solver: load must live on the macro grid");
  }
};

struct TwoScaleState {
  double t = 0;
  NodalVectorField u0;                // macro displacement
  TwoScaleField<9> p0, sigma0, Sigma0, e1;  // e1: Y-cell mean of sym grad_y u1
  CellTensorField p, sigma;           // average_y of p0 and sigma0 on the macro grid
};

struct TwoScaleRecord {
  double t = 0;
  int iterations = 0;
  double fp_residual = 0, flow_residual = 0;
  double equilibrium_residual = 0;  // macro CG
  double cell_residual = 0;         // max relative residual of the cell solves
  double mean_p_defect = 0, mean_sigma_defect = 0;
  double trace_max = 0;
  Energies energy;
  double load_potential = 0, dissipation = 0, external_work = 0;
  std::vector<double> history;
};

struct TwoScaleTrajectory {
  int m = 0;
  double h = 0;
  std::vector<TwoScaleState> states;
  std::vector<TwoScaleRecord> records;
  bool load_constant = true;
  double freeze_time = std::numeric_limits<double>::infinity();
};

class TwoScaleSolver {
 public:
  TwoScaleSolver(const TwoScaleProblem& pb, int m)
      : pb_((pb.validate(), pb)),
        m_(m),
        geom_(pb.geometry()),
        cell_(CellProblem::sampled(pb.n, pb.pattern, pb.c0, pb.c1)),
        Ceff_(0.5 * (cell_.effective() + cell_.effective().transpose())),
        macro_(CoefficientField(pb.macro_grid(), Ceff_), pb.elastic_rtol) {
    if (m < 0) throw PreconditionError("rothe: level m must be non-negative");
    if (pb_.regularize && m == 0) throw PreconditionError("rothe: the -(1/m) p regularisation needs m >= 1");
    h_ = pb_.T_end / std::pow(2.0, m);
    reg_ = pb_.regularize ? 1.0 / m : 0.0;
    Ceff_inv_ = Ceff_.inverse();
    const std::size_t ny = geom_.num_y();
    a_sd_.resize(ny);
    C1_.resize(ny);
    rule_.resize(ny);
    const auto& coef = cell_.coefficients();
    const int c = pb_.n;
    for (int z = 0; z < c; ++z)
      for (int y = 0; y < c; ++y)
        for (int x = 0; x < c; ++x) {
          const std::size_t iy = geom_.y_index(x, y, z);
          const std::size_t cell = coef.cell(x, y, z);
          C1_[iy] = coef.phase_of_cell[cell] == 0 ? pb_.h0 : pb_.h1;
          a_sd_[iy] = detail::deviatoric_bound(coef.at(cell)) + C1_[iy] + reg_;
          rule_[iy] = trace_free(pb_.flow.rule_at(geom_.y_point(x, y, z)));
        }
  }

  double step_size() const { return h_; }
  double regularization() const { return reg_; }
  int steps() const { return 1 << m_; }
  const Stiffness& effective_tensor() const { return Ceff_; }
  const UnfoldGeometry& geometry() const { return geom_; }

  TwoScaleTrajectory run(const std::function<void(const TwoScaleState&, const TwoScaleRecord&)>& on_step = {}) const {
    TwoScaleTrajectory tr;
    tr.m = m_;
    tr.h = h_;
    tr.load_constant = pb_.load.time_constant();
    tr.freeze_time = pb_.freeze_time;
    {
      TwoScaleState s;
      s.p0 = TwoScaleField<9>(geom_);
      const NodalVectorField b = pb_.load.at(pb_.macro_grid(), 0.0);
      const Response r = respond(s.p0, false, NodalVectorField(pb_.macro_grid()), b, nullptr);
      TwoScaleRecord rec;
      finish(s, r, b, nullptr, rec);
      tr.states.push_back(std::move(s));
      tr.records.push_back(rec);
      if (on_step) on_step(tr.states.back(), tr.records.back());
    }
    for (int k = 1; k <= steps(); ++k) {
      TwoScaleRecord rec;
      tr.states.push_back(step(tr.states.back(), k, rec));
      tr.records.push_back(rec);
      if (on_step) on_step(tr.states.back(), tr.records.back());
    }
    return tr;
  }

  TwoScaleState step(const TwoScaleState& prev, int n, TwoScaleRecord& rec) const {
    const BoxGrid mg = pb_.macro_grid();
    const double t0 = (n - 1) * h_, t1 = n * h_;
    const bool frozen = t0 >= pb_.freeze_time;
    const NodalVectorField b = frozen ? pb_.load.at(mg, pb_.freeze_time) : pb_.load.average(mg, t0, t1);
    const std::size_t nm = geom_.num_macro(), ny = geom_.num_y();
    TwoScaleField<9> pk = prev.p0, ploc(geom_);
    detail::AndersonMixer mixer(pb_.anderson_depth);
    NodalVectorField guess = prev.u0;
    rec = TwoScaleRecord{};
    rec.t = t1;
    bool done = false;
    for (int it = 1; it <= pb_.max_iter; ++it) {
      const Response r = respond(pk, frozen, prev.u0, b, &guess);
      guess = r.macro.u;
      std::vector<double> dnum(nm), dden(nm);
      std::exception_ptr failure;
#pragma omp parallel for schedule(static)
      for (std::ptrdiff_t mi = 0; mi < static_cast<std::ptrdiff_t>(nm); ++mi) {
        const std::size_t m = static_cast<std::size_t>(mi);
        double sn = 0.0, sd = 0.0;
        try {
          for (std::size_t y = 0; y < ny; ++y) {
            const Tensor3 p_k = pk.tensor(m, y), p_prev = prev.p0.tensor(m, y);
            const Tensor3 Ce = r.sigma0.tensor(m, y) + from_mandel(D(y) * to_mandel(sym(p_k)));
            const Tensor3 W = Ce - a_sd_[y] * detail::symdev(p_prev) - reg_ * skew(p_prev);
            const LocalUpdate lu = local_flow_update(rule_[y], h_, a_sd_[y], reg_, W, p_prev);
            ploc.set_tensor(m, y, lu.p);
            sn += anorm2(y, lu.p - p_k);
            sd += anorm2(y, lu.p - p_prev);
          }
        } catch (...) {
#pragma omp critical(cvh_two_scale_failure)
          if (!failure) failure = std::current_exception();
        }
        dnum[m] = sn;
        dden[m] = sd;
      }
      if (failure) std::rethrow_exception(failure);
      const double w = geom_.macro_volume() * geom_.y_volume();
      const double num = std::sqrt(w * ordered_sum(nm, [&](std::size_t m) { return dnum[m]; }));
      const double den = std::sqrt(w * ordered_sum(nm, [&](std::size_t m) { return dden[m]; }));
      const double res = num == 0.0 ? 0.0 : num / std::max(den, 1e-300);
      rec.history.push_back(res);
      rec.iterations = it;
      if (res <= pb_.tol) {
        done = true;
        rec.fp_residual = res;
        break;
      }
      TwoScaleField<9> gk = pk;
      for (std::size_t i = 0; i < gk.data().size(); ++i) gk.data()[i] += pb_.damping * (ploc.data()[i] - pk.data()[i]);
      pk.data() = mixer.next(pk.data(), gk.data());
    }
    if (!done) {
      std::ostringstream os;
      os << "two-scale step " << n << ": fixed point did not converge in " << pb_.max_iter << " sweeps (damping "
         << pb_.damping << ", last residual " << rec.history.back() << ")";
      throw ConvergenceError(os.str(), rec.history);
    }
    TwoScaleState s;
    s.t = t1;
    s.p0 = ploc;
    const Response r = respond(s.p0, frozen, prev.u0, b, &guess);
    finish(s, r, b, &prev, rec);
    return s;
  }

 private:
  struct Response {
    ElasticSolution macro;
    TwoScaleField<9> sigma0;
    std::vector<Tensor3> Ebar;
  };

  const Stiffness& D(std::size_t y) const {
    const int c = pb_.n;
    const int x = static_cast<int>(y % c), yy = static_cast<int>((y / c) % c), z = static_cast<int>(y / c / c);
    return cell_.coefficients().at(cell_.coefficients().cell(x, yy, z));
  }

  double anorm2(std::size_t y, const Tensor3& q) const {
    const Tensor3 sd = detail::symdev(q), sk = skew(q);
    return a_sd_[y] * frob_inner(sd, sd) + (reg_ > 0.0 ? reg_ : a_sd_[y]) * frob_inner(sk, sk);
  }

  CellTensorField sym_cell(const TwoScaleField<9>& p0, std::size_t m) const {
    CellTensorField e(cell_.grid());
    const int c = pb_.n;
    for (int z = 0; z < c; ++z)
      for (int y = 0; y < c; ++y)
        for (int x = 0; x < c; ++x) set_cell_tensor(e, x, y, z, sym(p0.tensor(m, geom_.y_index(x, y, z))));
    return e;
  }

  int macro_ijk(std::size_t m, int a) const {
    const int M = pb_.M;
    if (a == 0) return static_cast<int>(m % M);
    if (a == 1) return static_cast<int>((m / M) % M);
    return static_cast<int>(m / M / M);
  }

  /// Macro and cell equilibrium for a given p0.
  Response respond(const TwoScaleField<9>& p0, bool frozen, const NodalVectorField& u_hold, const NodalVectorField& b,
                   const NodalVectorField* guess) const {
    const std::size_t nm = geom_.num_macro(), ny = geom_.num_y();
    const int c = pb_.n;
    Response r;
    r.sigma0 = TwoScaleField<9>(geom_);
    CellTensorField eig(pb_.macro_grid());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t mi = 0; mi < static_cast<std::ptrdiff_t>(nm); ++mi) {
      const std::size_t m = static_cast<std::size_t>(mi);
      bool any = false;
      for (std::size_t y = 0; y < ny && !any; ++y) any = frob_norm(p0.tensor(m, y)) != 0.0;
      if (!any) continue;
      const CellTensorField e = sym_cell(p0, m);
      const ElasticSolution res = cell_.solve(Tensor3::zero(), &e);
      for (int z = 0; z < c; ++z)
        for (int y = 0; y < c; ++y)
          for (int x = 0; x < c; ++x) r.sigma0.set_tensor(m, geom_.y_index(x, y, z), cell_tensor(res.stress_cell, x, y, z));
      const Tensor3 tau = detail::cell_mean(res.stress_cell);
      set_cell_tensor(eig, macro_ijk(m, 0), macro_ijk(m, 1), macro_ijk(m, 2),
                      -1.0 * from_mandel(Ceff_inv_ * to_mandel(tau)));
    }
    if (frozen) {
      r.macro.u = u_hold;
      macro_.fill_stress(r.macro, &eig, Tensor3::zero());
    } else {
      r.macro = macro_.solve(&eig, &b, Tensor3::zero(), guess);
    }
    r.Ebar.resize(nm);
    for (std::size_t m = 0; m < nm; ++m) {
      const Tensor3 E = detail::corner_mean(r.macro.strain, macro_ijk(m, 0), macro_ijk(m, 1), macro_ijk(m, 2));
      r.Ebar[m] = E;
      const Mandel6 mE = to_mandel(E);
      for (int z = 0; z < c; ++z)
        for (int y = 0; y < c; ++y)
          for (int x = 0; x < c; ++x) {
            const std::size_t iy = geom_.y_index(x, y, z);
            Tensor3 s = r.sigma0.tensor(m, iy);
            for (int i = 0; i < 6; ++i) s += mE[i] * cell_tensor(cell_.unit(i).stress_cell, x, y, z);
            r.sigma0.set_tensor(m, iy, s);
          }
    }
    return r;
  }

  /// Final fields, energies and diagnostics of an accepted state.
  void finish(TwoScaleState& s, const Response& r, const NodalVectorField& b, const TwoScaleState* prev,
              TwoScaleRecord& rec) const {
    const std::size_t nm = geom_.num_macro(), ny = geom_.num_y();
    const BoxGrid mg = pb_.macro_grid();
    const int c = pb_.n;
    s.u0 = r.macro.u;
    s.sigma0 = r.sigma0;
    s.Sigma0 = TwoScaleField<9>(geom_);
    s.e1 = TwoScaleField<9>(geom_);
    s.p = CellTensorField(mg);
    s.sigma = CellTensorField(mg);
    // Cell energies and corrector strains from one full cell solve per macro cell.
    std::vector<double> cell_energy(nm), cell_res(nm);
    const double Vm = mg.cell_volume(), w = Vm / 8.0;
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t mi = 0; mi < static_cast<std::ptrdiff_t>(nm); ++mi) {
      const std::size_t m = static_cast<std::size_t>(mi);
      const CellTensorField e = sym_cell(s.p0, m);
      const ElasticSolution cs = cell_.solve(r.Ebar[m], &e);
      cell_energy[m] = Vm * elastic_energy(cs, &e);
      cell_res[m] = cs.cg.residual;
      for (int z = 0; z < c; ++z)
        for (int y = 0; y < c; ++y)
          for (int x = 0; x < c; ++x) {
            const std::size_t iy = geom_.y_index(x, y, z);
            s.e1.set_tensor(m, iy, detail::corner_mean(cs.strain, x, y, z) - r.Ebar[m]);
            const Tensor3 pc = s.p0.tensor(m, iy);
            s.Sigma0.set_tensor(m, iy, s.sigma0.tensor(m, iy) - C1_[iy] * detail::symdev(pc) - reg_ * pc);
          }
    }
    const auto pm = average_y_macro(s.p0), sm = average_y_macro(s.sigma0);
    for (std::size_t m = 0; m < nm; ++m) {
      Tensor3 pt, st;
      for (std::size_t k = 0; k < 9; ++k) {
        pt[k] = pm[k * nm + m];
        st[k] = sm[k * nm + m];
      }
      const int i = macro_ijk(m, 0), j = macro_ijk(m, 1), k = macro_ijk(m, 2);
      set_cell_tensor(s.p, i, j, k, pt);
      set_cell_tensor(s.sigma, i, j, k, st);
      rec.mean_sigma_defect =
          std::max(rec.mean_sigma_defect, frob_norm(st - cell_tensor(r.macro.stress_cell, i, j, k)));
    }
    // Macro fluctuation energy: corner strains about the cell mean.
    const double fluct = ordered_sum(nm, [&](std::size_t m) {
      const int i = macro_ijk(m, 0), j = macro_ijk(m, 1), k = macro_ijk(m, 2);
      double e = 0.0;
      for (int d = 0; d < 8; ++d) {
        const Mandel6 de = to_mandel(corner_tensor(r.macro.strain, d, i, j, k) - r.Ebar[m]);
        e += 0.5 * w * de.dot(Ceff_ * de);
      }
      return e;
    });
    const double wy = geom_.macro_volume() * geom_.y_volume();
    rec.energy.elastic = fluct + ordered_sum(nm, [&](std::size_t m) { return cell_energy[m]; });
    rec.energy.hardening = ordered_sum(nm, [&](std::size_t m) {
      double e = 0.0;
      for (std::size_t y = 0; y < ny; ++y) {
        const Tensor3 d = detail::symdev(s.p0.tensor(m, y));
        e += 0.5 * wy * C1_[y] * frob_inner(d, d);
      }
      return e;
    });
    rec.energy.reg = 0.5 * reg_ * std::pow(s.p0.norm_l2(), 2);
    rec.cell_residual = ordered_max(nm, [&](std::size_t m) { return cell_res[m]; });
    rec.equilibrium_residual = r.macro.cg.residual;
    rec.load_potential = inner(b, s.u0);
    for (std::size_t m = 0; m < nm; ++m)
      for (std::size_t y = 0; y < ny; ++y) rec.trace_max = std::max(rec.trace_max, std::abs(trace(s.p0.tensor(m, y))));
    if (!prev) return;
    rec.external_work = inner(b, s.u0 - prev->u0);
    std::vector<double> fr(nm), fs(nm), dis(nm);
    for (std::size_t m = 0; m < nm; ++m) {
      double a = 0.0, bb = 0.0, d = 0.0;
      for (std::size_t y = 0; y < ny; ++y) {
        const Tensor3 S = s.Sigma0.tensor(m, y);
        const Tensor3 pdot = (s.p0.tensor(m, y) - prev->p0.tensor(m, y)) / h_;
        const Tensor3 gv = rule_[y].evaluate(S);
        a += std::pow(frob_norm(pdot - gv), 2);
        bb += std::pow(frob_norm(pdot), 2) + std::pow(frob_norm(gv), 2);
        d += h_ * wy * frob_inner(S, pdot);
      }
      fr[m] = a;
      fs[m] = bb;
      dis[m] = d;
    }
    const double frn = std::sqrt(ordered_sum(nm, [&](std::size_t m) { return fr[m]; }));
    const double fsn = std::sqrt(ordered_sum(nm, [&](std::size_t m) { return fs[m]; }));
    rec.flow_residual = frn == 0.0 ? 0.0 : frn / std::max(fsn, 1e-300);
    rec.dissipation = ordered_sum(nm, [&](std::size_t m) { return dis[m]; });
  }

  TwoScaleProblem pb_;
  int m_;
  UnfoldGeometry geom_;
  CellResponse cell_;
  Stiffness Ceff_, Ceff_inv_;
  ElasticityOperator macro_;
  double h_ = 0, reg_ = 0;
  std::vector<double> a_sd_, C1_;
  std::vector<FlowRule> rule_;
};

inline TwoScaleTrajectory two_scale_viscoplastic_run(const TwoScaleProblem& pb, int m) {
  return TwoScaleSolver(pb, m).run();
}

/// Free energy stored - <b, u0> must not increase on steps with frozen data.
inline DissipationReport two_scale_dissipation_check(const TwoScaleTrajectory& tr, double tol = 1e-8) {
  Trajectory proxy;
  proxy.m = tr.m;
  proxy.h = tr.h;
  proxy.load_constant = tr.load_constant;
  proxy.freeze_time = tr.freeze_time;
  for (std::size_t n = 0; n < tr.records.size(); ++n) {
    MicroState s;
    s.t = tr.states[n].t;
    proxy.states.push_back(std::move(s));
    StepRecord r;
    r.energy = tr.records[n].energy;
    r.load_potential = tr.records[n].load_potential;
    proxy.records.push_back(r);
  }
  return dissipation_check(proxy, tol);
}

/// ||T_eta(sigma_eta) - sigma0|| for a micro cell field at eta = 1/K against a
/// two-scale field on a finer-or-equal macro lattice (K divides M, same Y grid).
/// Each two-scale macro cell is compared with the eta-cell containing it.
inline double two_scale_distance(const CellTensorField& micro, int K, const TwoScaleField<9>& ref) {
  const UnfoldGeometry& rg = ref.geometry();
  const UnfoldGeometry geom = UnfoldGeometry::aligned(micro.grid(), K);
  if (geom.c != rg.c) throw ConfigError("two-scale distance: the Y resolutions differ");
  if (rg.K % K != 0) throw ConfigError("two-scale distance: eta = 1/K must be a multiple of the reference eta");
  const auto Ts = unfold_field(micro, geom);
  const int r = rg.K / K;
  const double w = rg.macro_volume() * rg.y_volume();
  const std::size_t nm = rg.num_macro(), ny = rg.num_y();
  return std::sqrt(ordered_sum(nm, [&](std::size_t m) {
    const int X = static_cast<int>(m % rg.K), Y = static_cast<int>((m / rg.K) % rg.K), Z = static_cast<int>(m / rg.K / rg.K);
    const std::size_t mm = geom.macro_index(X / r, Y / r, Z / r);
    double s = 0.0;
    for (std::size_t y = 0; y < ny; ++y) s += w * std::pow(frob_norm(Ts.tensor(mm, y) - ref.tensor(m, y)), 2);
    return s;
  }));
}

// ---------------------------------------------------------------------------
// Limit-identity verifier on micro data

struct MicroRun {
  MicroProblem problem;
  Trajectory trajectory;
};

struct VerifierOptions {
  int step = -1;           // state index checked; -1 = final
  int samples = 1000;      // graph pairs for the monotonicity gap
  std::uint64_t seed = 7;
  double gap_tol = 1e-6;
};

struct VerifierRow {
  int K = 0;
  double eta = 0;
  double equilibrium = 0;   // (i) max over psi of |<T sigma, phi sym grad_y psi>| / norms
  double constitutive = 0;  // (ii) ||T sigma - sigma0(E, T p)|| / ||T sigma||
  double mean_p = 0;        // (iii) ||<T p>_Y - finest||
  double mean_sigma = 0;
  double gap_min = 0;       // (iv) min normalized monotonicity gap
  double gap_min_raw = 0;
};

struct VerifierReport {
  std::vector<VerifierRow> rows;  // coarse to fine
  bool equilibrium_decreasing = false, constitutive_decreasing = false, mean_decreasing = false;
  bool gap_ok = false;            // finest run
};

namespace detail {

inline bool strictly_decreasing(const std::vector<double>& v) {
  for (std::size_t i = 0; i + 1 < v.size(); ++i)
    if (!(v[i + 1] < v[i])) return false;
  return true;
}

/// Y-cell coefficients of a micro problem (first eta-cell).
inline CellProblem cell_of(const MicroProblem& pb) {
  const int c = pb.cells_per_eta();
  CellProblem cp;
  cp.C.grid = BoxGrid::unit(c, Mode::torus);
  cp.C.phases = pb.C.phases;
  cp.C.phase_of_cell.resize(cp.C.grid.num_cells());
  for (int z = 0; z < c; ++z)
    for (int y = 0; y < c; ++y)
      for (int x = 0; x < c; ++x) cp.C.phase_of_cell[cp.C.cell(x, y, z)] = pb.C.phase_of_cell[pb.C.cell(x, y, z)];
  return cp;
}

}  // namespace detail

/// Checks the two-scale limit relations on a family of micro runs with eta = 1/K.
inline VerifierReport limit_identity_verifier(const std::vector<MicroRun>& runs, const VerifierOptions& opt = {}) {
  if (runs.size() < 3) throw ConfigError("limit verifier: needs at least 3 eta values");
  const MicroProblem& p0 = runs.front().problem;
  const int c = p0.cells_per_eta();
  for (std::size_t r = 0; r < runs.size(); ++r) {
    const auto& pb = runs[r].problem;
    const auto& tr = runs[r].trajectory;
    if (pb.cells_per_eta() != c || pb.grid.mode != p0.grid.mode || pb.T_end != p0.T_end || pb.C2 != p0.C2 ||
        tr.m != runs.front().trajectory.m || tr.states.size() != runs.front().trajectory.states.size() ||
        pb.C.phases.size() != p0.C.phases.size())
      throw ConfigError("limit verifier: runs are misaligned (Y resolution, grid mode, T, C2 and level must agree)");
    if (r > 0 && !(pb.K > runs[r - 1].problem.K))
      throw ConfigError("limit verifier: runs must be ordered by increasing K (decreasing eta)");
    if (tr.states.size() < 2) throw ConfigError("limit verifier: runs need at least one time step");
  }
  const CellProblem cp = detail::cell_of(p0);
  const CellResponse cell(cp);
  const BoxGrid yg = cp.grid();
  const int finest_K = runs.back().problem.K;
  VerifierReport rep;

  // Mean fields of every run on the finest eta lattice.
  auto macro_means = [&](const MicroRun& run, int n, const CellTensorField& f) {
    const UnfoldGeometry geom = UnfoldGeometry::aligned(run.problem.grid, run.problem.K);
    const auto avg = average_y_macro(unfold_field(f, geom));
    std::vector<Tensor3> out(static_cast<std::size_t>(finest_K) * finest_K * finest_K);
    const int r = finest_K / run.problem.K;
    for (std::size_t m = 0; m < out.size(); ++m) {
      const int X = static_cast<int>(m % finest_K), Y = static_cast<int>((m / finest_K) % finest_K),
                Z = static_cast<int>(m / finest_K / finest_K);
      const std::size_t mm = geom.macro_index(X / r, Y / r, Z / r);
      for (std::size_t k = 0; k < 9; ++k) out[m][k] = avg[k * geom.num_macro() + mm];
    }
    (void)n;
    return out;
  };
  auto pick = [&](const Trajectory& tr) {
    return opt.step < 0 ? static_cast<int>(tr.states.size()) - 1 : std::min<int>(opt.step, static_cast<int>(tr.states.size()) - 1);
  };
  for (const auto& run : runs)
    if (finest_K % run.problem.K != 0)
      throw ConfigError("limit verifier: every K must divide the finest K");
  const MicroRun& fin = runs.back();
  const int nf = pick(fin.trajectory);
  const auto fin_p = macro_means(fin, nf, fin.trajectory.states[static_cast<std::size_t>(nf)].p);
  const auto fin_s = macro_means(fin, nf, fin.trajectory.states[static_cast<std::size_t>(nf)].sigma);
  auto mean_dist = [&](const std::vector<Tensor3>& a, const std::vector<Tensor3>& b) {
    double num = 0.0, den = 0.0;
    for (std::size_t m = 0; m < a.size(); ++m) {
      num += std::pow(frob_norm(a[m] - b[m]), 2);
      den += std::pow(frob_norm(b[m]), 2);
    }
    return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
  };

  // Oscillatory test functions psi(y) = e_r sin/cos(2 pi y_a), nodal on the Y torus.
  std::vector<NodalVectorField> psis;
  for (int a = 0; a < 3; ++a)
    for (int r = 0; r < 3; ++r)
      for (int ph = 0; ph < 2; ++ph) {
        NodalVectorField psi(yg);
        psi.for_each([&](int comp, int i, int j, int k, std::size_t id) {
          if (comp != r) return;
          const double y = (a == 0 ? i : (a == 1 ? j : k)) * yg.h[static_cast<std::size_t>(a)];
          psi.data()[id] = ph == 0 ? std::sin(2 * M_PI * y) : std::cos(2 * M_PI * y);
        });
        psis.push_back(std::move(psi));
      }
  // Corner strains of the test functions on the Y grid.
  std::vector<QuadTensorField> psi_strain;
  {
    const ElasticityOperator yop(cp.C);
    for (const auto& psi : psis) {
      ElasticSolution s;
      s.u = psi;
      yop.fill_stress(s, nullptr, Tensor3::zero());
      psi_strain.push_back(s.strain);
    }
  }

  for (const auto& run : runs) {
    const MicroProblem& pb = run.problem;
    const Trajectory& tr = run.trajectory;
    const int n = pick(tr);
    const MicroState& st = tr.states[static_cast<std::size_t>(n)];
    const MicroState& sp = tr.states[static_cast<std::size_t>(std::max(n - 1, 0))];
    const UnfoldGeometry geom = UnfoldGeometry::aligned(pb.grid, pb.K);
    const BoxGrid& g = pb.grid;
    VerifierRow row;
    row.K = pb.K;
    row.eta = geom.eta;

    const ElasticityOperator op(pb.C, pb.elastic_rtol);
    ElasticSolution sol;
    sol.u = st.u;
    const CellTensorField eps = MicroSolver::sym_field(st.p);
    op.fill_stress(sol, &eps, pb.mean_strain);

    // (i) sum over fine cells and corners of w phi(X) sigma : sym grad_y psi.
    const double Vf = g.cell_volume();
    double snorm2 = 0.0;
    for (int k = 0; k < g.n[2]; ++k)
      for (int j = 0; j < g.n[1]; ++j)
        for (int i = 0; i < g.n[0]; ++i)
          for (int d = 0; d < 8; ++d) snorm2 += Vf / 8.0 * std::pow(frob_norm(corner_tensor(sol.stress, d, i, j, k)), 2);
    double worst = 0.0;
    for (const auto& ps : psi_strain) {
      double acc = 0.0, tn2 = 0.0;
      for (int k = 0; k < g.n[2]; ++k)
        for (int j = 0; j < g.n[1]; ++j)
          for (int i = 0; i < g.n[0]; ++i) {
            const Point3 X = geom.macro_point(i / c, j / c, k / c);
            const double phi = std::sin(M_PI * X[0]) * std::sin(M_PI * X[1]) * std::sin(M_PI * X[2]);
            for (int d = 0; d < 8; ++d) {
              const Tensor3 G = corner_tensor(ps, d, i % c, j % c, k % c);
              acc += Vf / 8.0 * phi * frob_inner(corner_tensor(sol.stress, d, i, j, k), G);
              tn2 += Vf / 8.0 * phi * phi * frob_inner(G, G);
            }
          }
      if (tn2 > 0.0 && snorm2 > 0.0) worst = std::max(worst, std::abs(acc) / std::sqrt(tn2 * snorm2));
    }
    row.equilibrium = worst;

    // (ii) re-solved cell problems with the eta-cell mean strain and the unfolded p.
    const auto Tsig = unfold_field(st.sigma, geom);
    const auto Tp = unfold_field(st.p, geom);
    TwoScaleField<9> rec(geom);
    const std::size_t nm = geom.num_macro();
    std::exception_ptr failure;
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t mi = 0; mi < static_cast<std::ptrdiff_t>(nm); ++mi) {
      const std::size_t m = static_cast<std::size_t>(mi);
      const int X = static_cast<int>(m % geom.macro[0]), Y = static_cast<int>((m / geom.macro[0]) % geom.macro[1]),
                Z = static_cast<int>(m / geom.macro[0] / geom.macro[1]);
      try {
        Tensor3 E = Tensor3::zero();
        CellTensorField e(yg);
        for (int z = 0; z < c; ++z)
          for (int y = 0; y < c; ++y)
            for (int x = 0; x < c; ++x) {
              E += detail::corner_mean(sol.strain, X * c + x, Y * c + y, Z * c + z);
              set_cell_tensor(e, x, y, z, sym(Tp.tensor(m, geom.y_index(x, y, z))));
            }
        E = (1.0 / geom.num_y()) * E;
        const ElasticSolution cs = cell.solve(E, &e);
        for (int z = 0; z < c; ++z)
          for (int y = 0; y < c; ++y)
            for (int x = 0; x < c; ++x) rec.set_tensor(m, geom.y_index(x, y, z), cell_tensor(cs.stress_cell, x, y, z));
      } catch (...) {
#pragma omp critical(cvh_verifier_failure)
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);
    const double tsn = Tsig.norm_l2();
    row.constitutive = tsn > 0.0 ? (Tsig - rec).norm_l2() / tsn : (Tsig - rec).norm_l2();

    // (iii) mean relations against the finest run.
    row.mean_p = mean_dist(macro_means(run, n, st.p), fin_p);
    row.mean_sigma = mean_dist(macro_means(run, n, st.sigma), fin_s);

    // (iv) monotonicity gap against sampled graph pairs (v, g(y, v)).
    if (n > 0) {
      const double hstep = tr.h;
      double sig_rms = 0.0;
      for (int k = 0; k < g.n[2]; ++k)
        for (int j = 0; j < g.n[1]; ++j)
          for (int i = 0; i < g.n[0]; ++i) sig_rms += std::pow(frob_norm(cell_tensor(st.Sigma, i, j, k)), 2);
      sig_rms = std::sqrt(sig_rms / static_cast<double>(g.num_cells()));
      Rng rng(opt.seed);
      double gmin = std::numeric_limits<double>::infinity(), graw = gmin;
      for (int s = 0; s < opt.samples; ++s) {
        const int i = static_cast<int>(rng.raw() % static_cast<std::uint64_t>(g.n[0]));
        const int j = static_cast<int>(rng.raw() % static_cast<std::uint64_t>(g.n[1]));
        const int k = static_cast<int>(rng.raw() % static_cast<std::uint64_t>(g.n[2]));
        const FlowRule rule = trace_free(pb.flow.rule_at({cell_y(i, c), cell_y(j, c), cell_y(k, c)}));
        const Tensor3 S = cell_tensor(st.Sigma, i, j, k);
        const Tensor3 pdot = (cell_tensor(st.p, i, j, k) - cell_tensor(sp.p, i, j, k)) / hstep;
        const double scale = std::max(sig_rms, 1e-12);
        const Tensor3 v = (s % 2 == 0) ? rng.tensor(2.0 * scale) : S + rng.tensor(0.1 * scale);
        const Tensor3 vs = rule.evaluate(v);
        const Tensor3 a = pdot - vs, b = S - v;
        const double raw = frob_inner(a, b);
        const double den = frob_norm(a) * frob_norm(b);
        graw = std::min(graw, raw);
        gmin = std::min(gmin, den > 0.0 ? raw / den : 0.0);
      }
      row.gap_min = gmin;
      row.gap_min_raw = graw;
    }
    rep.rows.push_back(row);
  }
  std::vector<double> e1, e2, e3;
  for (const auto& r : rep.rows) {
    e1.push_back(r.equilibrium);
    e2.push_back(r.constitutive);
    e3.push_back(r.mean_p);
  }
  rep.equilibrium_decreasing = detail::strictly_decreasing(e1);
  rep.constitutive_decreasing = detail::strictly_decreasing(e2);
  rep.mean_decreasing = detail::strictly_decreasing(e3);
  rep.gap_ok = rep.rows.back().gap_min >= -opt.gap_tol;
  return rep;
}

}  // namespace cvh
