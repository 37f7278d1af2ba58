#pragma once

// Linear elasticity with cell-wise coefficients on a box grid.
//
// Displacements are nodal. Strains are evaluated at the 8 corners of every cell,
// where the gradient component (r, a) is the difference of u_r along the cell's
// a-edge incident to that corner (the staggered grad restricted to the corner);
// each corner carries weight V/8. Local node ln = dx + 2 dy + 4 dz of a cell,
// element dof 3 ln + r.
//
// Dirichlet mode (micro-hard grid): u = 0 on boundary nodes.
// Torus mode: periodic u with zero mean, plus an optional imposed mean strain E.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "cvh/cg.hpp"
#include "cvh/grid.hpp"
#include "cvh/pattern.hpp"
#include "cvh/tensor.hpp"

namespace cvh {

using Mat24 = Eigen::Matrix<double, 24, 24>;
using Vec24 = Eigen::Matrix<double, 24, 1>;
using Mat6x24 = Eigen::Matrix<double, 6, 24>;
using Mat24x6 = Eigen::Matrix<double, 24, 6>;

/// Per-cell stiffness: a phase table of Mandel 6x6 matrices and a phase id per cell.
struct CoefficientField {
  BoxGrid grid;
  std::vector<Stiffness> phases;
  std::vector<std::uint16_t> phase_of_cell;  // x-fastest cell order

  CoefficientField() = default;
  CoefficientField(const BoxGrid& g, const Stiffness& d) : grid(g), phases{d}, phase_of_cell(g.num_cells(), 0) {}

  static CoefficientField homogeneous(const BoxGrid& g, const IsotropicElasticity& c) {
    c.validate();
    return CoefficientField(g, c.mandel());
  }

  /// Samples a Y-periodic two-phase pattern at x/eta with c fine cells per eta
  /// (cell centres, floor to cell).
  static CoefficientField sample(const BoxGrid& g, const Pattern& pat, const IsotropicElasticity& c0,
                                 const IsotropicElasticity& c1, int cells_per_eta) {
    c0.validate();
    c1.validate();
    CoefficientField f;
    f.grid = g;
    f.phases = {c0.mandel(), c1.mandel()};
    f.phase_of_cell.resize(g.num_cells());
    for (int k = 0; k < g.n[2]; ++k)
      for (int j = 0; j < g.n[1]; ++j)
        for (int i = 0; i < g.n[0]; ++i)
          f.phase_of_cell[f.cell(i, j, k)] = static_cast<std::uint16_t>(
              pat.phase({cell_y(i, cells_per_eta), cell_y(j, cells_per_eta), cell_y(k, cells_per_eta)}));
    return f;
  }

  std::size_t cell(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * grid.n[1] + j) * grid.n[0] + i;
  }
  const Stiffness& at(std::size_t cell) const { return phases[phase_of_cell[cell]]; }

  /// min over phases of the smallest eigenvalue (uniform positive definiteness).
  double min_eigenvalue() const {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& d : phases) m = std::min(m, Eigen::SelfAdjointEigenSolver<Stiffness>(d).eigenvalues()[0]);
    return m;
  }
  void validate() const {
    if (phase_of_cell.size() != grid.num_cells()) throw PreconditionError("coefficient field: wrong cell count");
    for (auto p : phase_of_cell)
      if (p >= phases.size()) throw PreconditionError("coefficient field: phase id out of range");
    if (!(min_eigenvalue() > 0.0)) throw PreconditionError("coefficient field is not positive definite");
  }
};

/// Corner strain operator of a cell with spacings h: Mandel strain at corner d.
inline Mat6x24 corner_strain_matrix(const std::array<double, 3>& h, int d) {
  // G(r, a) coefficients on local dofs.
  std::array<std::array<Vec24, 3>, 3> G{};
  for (int r = 0; r < 3; ++r)
    for (int a = 0; a < 3; ++a) {
      G[r][a].setZero();
      const int d0 = d & ~(1 << a), d1 = d | (1 << a);
      G[r][a][3 * d1 + r] += 1.0 / h[a];
      G[r][a][3 * d0 + r] -= 1.0 / h[a];
    }
  Mat6x24 B;
  B.row(0) = G[0][0].transpose();
  B.row(1) = G[1][1].transpose();
  B.row(2) = G[2][2].transpose();
  B.row(3) = (kSqrt2 * 0.5) * (G[1][2] + G[2][1]).transpose();
  B.row(4) = (kSqrt2 * 0.5) * (G[0][2] + G[2][0]).transpose();
  B.row(5) = (kSqrt2 * 0.5) * (G[0][1] + G[1][0]).transpose();
  return B;
}

/// Full corner gradient (row-major 3x3) of a cell at corner d.
inline Tensor3 corner_gradient(const std::array<double, 3>& h, int d, const Vec24& ue) {
  Tensor3 g;
  for (int r = 0; r < 3; ++r)
    for (int a = 0; a < 3; ++a) {
      const int d0 = d & ~(1 << a), d1 = d | (1 << a);
      g(r, a) = (ue[3 * d1 + r] - ue[3 * d0 + r]) / h[a];
    }
  return g;
}

struct ElasticSolution {
  NodalVectorField u;
  QuadTensorField strain;  // total strain E + sym grad u at corners
  QuadTensorField stress;  // corner stresses
  CellTensorField stress_cell;  // mean of the corner stresses
  CgResult cg;
};

class ElasticityOperator {
 public:
  ElasticityOperator(const CoefficientField& coef, double rtol = 1e-10) : coef_(coef), rtol_(rtol) {
    coef_.validate();
    const BoxGrid& g = coef_.grid;
    const double w = g.cell_volume() / 8.0;
    for (int d = 0; d < 8; ++d) B_[d] = corner_strain_matrix(g.h, d);
    Mat24x6 Bsum = Mat24x6::Zero();
    for (int d = 0; d < 8; ++d) Bsum += w * B_[d].transpose();
    for (const auto& D : coef_.phases) {
      Mat24 K = Mat24::Zero();
      for (int d = 0; d < 8; ++d) K += w * B_[d].transpose() * D * B_[d];
      Ke_.push_back(K);
      Fe_.push_back(Bsum * D);
    }
    // Dof numbering: free nodal entries, component-major.
    NodalVectorField proto(g);
    node_dof_.assign(proto.size(), -1);
    proto.for_each([&](int c, int i, int j, int k, std::size_t id) {
      if (proto.is_free(c, i, j, k)) {
        node_dof_[id] = static_cast<int>(dof_entry_.size());
        dof_entry_.push_back(id);
      }
    });
    const auto& n = g.n;
    cell_dofs_.resize(g.num_cells());
    for (int k = 0; k < n[2]; ++k)
      for (int j = 0; j < n[1]; ++j)
        for (int i = 0; i < n[0]; ++i) {
          auto& cd = cell_dofs_[coef_.cell(i, j, k)];
          for (int ln = 0; ln < 8; ++ln) {
            int x = i + (ln & 1), y = j + ((ln >> 1) & 1), z = k + ((ln >> 2) & 1);
            if (g.torus()) {
              x %= n[0];
              y %= n[1];
              z %= n[2];
            }
            for (int r = 0; r < 3; ++r) cd[3 * ln + r] = node_dof_[proto.index(r, x, y, z)];
          }
        }
    diag_.assign(dof_entry_.size(), 0.0);
    for (std::size_t c = 0; c < cell_dofs_.size(); ++c) {
      const Mat24& K = Ke_[coef_.phase_of_cell[c]];
      for (int a = 0; a < 24; ++a)
        if (cell_dofs_[c][a] >= 0) diag_[static_cast<std::size_t>(cell_dofs_[c][a])] += K(a, a);
    }
  }

  const BoxGrid& grid() const { return coef_.grid; }
  const CoefficientField& coefficients() const { return coef_; }
  std::size_t num_dofs() const { return dof_entry_.size(); }
  const Mat6x24& corner_matrix(int d) const { return B_[d]; }

  /// y = K x on free dofs.
  void apply(const Vec& x, Vec& y) const {
    y.assign(x.size(), 0.0);
    for_cells_colored([&](std::size_t c) {
      const auto& cd = cell_dofs_[c];
      Vec24 ue;
      for (int a = 0; a < 24; ++a) ue[a] = cd[a] >= 0 ? x[static_cast<std::size_t>(cd[a])] : 0.0;
      const Vec24 ye = Ke_[coef_.phase_of_cell[c]] * ue;
      for (int a = 0; a < 24; ++a)
        if (cd[a] >= 0) y[static_cast<std::size_t>(cd[a])] += ye[a];
    });
  }

  /// Load vector for eigenstrain e (cell-wise symmetric tensors, may be null),
  /// body force b (nodal, lumped with nodal quadrature weights, may be null) and
  /// imposed mean strain E: f = sum_c w B_c^T D (e - E) + W b.
  /// `gross` (may be null) receives the norm of the unassembled element loads.
  Vec load(const CellTensorField* eig, const NodalVectorField* b, const Tensor3& E = Tensor3::zero(),
           double* gross = nullptr) const {
    Vec f(num_dofs(), 0.0);
    double g2 = 0.0;
    const BoxGrid& g = grid();
    const Mandel6 mE = to_mandel(E);
    for (int k = 0; k < g.n[2]; ++k)
      for (int j = 0; j < g.n[1]; ++j)
        for (int i = 0; i < g.n[0]; ++i) {
          const std::size_t c = coef_.cell(i, j, k);
          Mandel6 e = -mE;
          if (eig) e += to_mandel(cell_tensor(*eig, i, j, k));
          if (e.isZero(0.0)) continue;
          const Vec24 fe = Fe_[coef_.phase_of_cell[c]] * e;
          g2 += fe.squaredNorm();
          for (int a = 0; a < 24; ++a)
            if (cell_dofs_[c][a] >= 0) f[static_cast<std::size_t>(cell_dofs_[c][a])] += fe[a];
        }
    if (b) {
      b->for_each([&](int cc, int i, int j, int k, std::size_t id) {
        const int dof = node_dof_[id];
        if (dof >= 0) {
          const double v = b->weight(cc, i, j, k) * b->data()[id];
          f[static_cast<std::size_t>(dof)] += v;
          g2 += v * v;
        }
      });
    }
    if (gross) *gross = std::sqrt(g2);
    return f;
  }

  /// Solves K u = load(...); `guess` (may be null) warm-starts CG.
  ElasticSolution solve(const CellTensorField* eig, const NodalVectorField* b, const Tensor3& E = Tensor3::zero(),
                        const NodalVectorField* guess = nullptr) const {
    const Vec f = load(eig, b, E);
    Vec x(num_dofs(), 0.0);
    if (guess) x = gather(*guess);
    CgOptions opt;
    opt.rtol = rtol_;
    ElasticSolution sol;
    sol.cg = cg_solve([this](const Vec& in, Vec& out) { apply(in, out); }, f, x, diag_, opt, "elasticity",
                      grid().torus() ? mean_projector() : std::function<void(Vec&)>{});
    sol.u = scatter(x);
    fill_stress(sol, eig, E);
    return sol;
  }

  /// Corner strains / stresses of a given displacement.
  void fill_stress(ElasticSolution& sol, const CellTensorField* eig, const Tensor3& E) const {
    const BoxGrid& g = grid();
    sol.strain = QuadTensorField(g);
    sol.stress = QuadTensorField(g);
    sol.stress_cell = CellTensorField(g);
    const Vec x = gather(sol.u);
    for (int k = 0; k < g.n[2]; ++k)
      for (int j = 0; j < g.n[1]; ++j)
        for (int i = 0; i < g.n[0]; ++i) {
          const std::size_t c = coef_.cell(i, j, k);
          Vec24 ue;
          for (int a = 0; a < 24; ++a) ue[a] = cell_dofs_[c][a] >= 0 ? x[static_cast<std::size_t>(cell_dofs_[c][a])] : 0.0;
          const Stiffness& D = coef_.at(c);
          const Tensor3 e = eig ? cell_tensor(*eig, i, j, k) : Tensor3::zero();
          Tensor3 mean = Tensor3::zero();
          for (int d = 0; d < 8; ++d) {
            const Mandel6 eps = B_[d] * ue + to_mandel(E);
            const Tensor3 s = from_mandel(D * (eps - to_mandel(e)));
            set_corner_tensor(sol.strain, d, i, j, k, from_mandel(eps));
            set_corner_tensor(sol.stress, d, i, j, k, s);
            mean += 0.125 * s;
          }
          set_cell_tensor(sol.stress_cell, i, j, k, mean);
        }
  }

  Vec gather(const NodalVectorField& u) const {
    Vec x(num_dofs());
    for (std::size_t d = 0; d < x.size(); ++d) x[d] = u.data()[dof_entry_[d]];
    return x;
  }
  NodalVectorField scatter(const Vec& x) const {
    NodalVectorField u(grid());
    for (std::size_t d = 0; d < x.size(); ++d) u.data()[dof_entry_[d]] = x[d];
    return u;
  }

  /// Assembled stiffness on free dofs.
  Eigen::SparseMatrix<double> assemble() const {
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(cell_dofs_.size() * 576);
    for (std::size_t c = 0; c < cell_dofs_.size(); ++c) {
      const Mat24& K = Ke_[coef_.phase_of_cell[c]];
      for (int a = 0; a < 24; ++a) {
        if (cell_dofs_[c][a] < 0) continue;
        for (int b = 0; b < 24; ++b)
          if (cell_dofs_[c][b] >= 0) trip.emplace_back(cell_dofs_[c][a], cell_dofs_[c][b], K(a, b));
      }
    }
    Eigen::SparseMatrix<double> A(static_cast<Eigen::Index>(num_dofs()), static_cast<Eigen::Index>(num_dofs()));
    A.setFromTriplets(trip.begin(), trip.end());
    return A;
  }

  /// Discrete -div(C sym grad u) as a nodal field: K u divided by nodal weights.
  NodalVectorField operator_as_body_force(const NodalVectorField& u) const {
    Vec y;
    apply(gather(u), y);
    NodalVectorField b(grid());
    for (std::size_t d = 0; d < y.size(); ++d) {
      const std::size_t id = dof_entry_[d];
      const int c = static_cast<int>(id / b.per_comp());
      const std::size_t rem = id % b.per_comp();
      const auto& L = b.dims();
      const int i = static_cast<int>(rem % L[0]), j = static_cast<int>((rem / L[0]) % L[1]),
                k = static_cast<int>(rem / L[0] / L[1]);
      b.data()[id] = y[d] / b.weight(c, i, j, k);
    }
    return b;
  }

 private:
  std::function<void(Vec&)> mean_projector() const {
    return [](Vec& x) {
      const std::size_t per = x.size() / 3;
      for (int c = 0; c < 3; ++c) {
        double s = 0.0;
        for (std::size_t i = 0; i < per; ++i) s += x[c * per + i];
        s /= static_cast<double>(per);
        for (std::size_t i = 0; i < per; ++i) x[c * per + i] -= s;
      }
    };
  }

  /// Visits cells in 8 parity colours; cells of one colour share no node, so
  /// each colour can be scattered concurrently. Odd torus sizes fall back to serial.
  template <class F>
  void for_cells_colored(F&& f) const {
    const auto& n = grid().n;
    if (grid().torus() && (n[0] % 2 || n[1] % 2 || n[2] % 2)) {
      for (std::size_t c = 0; c < cell_dofs_.size(); ++c) f(c);
      return;
    }
    color_loop(f);
  }

  template <class F>
  void color_loop(F&& f) const {
    const auto& n = grid().n;
    for (int color = 0; color < 8; ++color) {
      const int ox = color & 1, oy = (color >> 1) & 1, oz = (color >> 2) & 1;
#pragma omp parallel for schedule(static)
      for (int k = oz; k < n[2]; k += 2)
        for (int j = oy; j < n[1]; j += 2)
          for (int i = ox; i < n[0]; i += 2) f(coef_.cell(i, j, k));
    }
  }

  CoefficientField coef_;
  double rtol_;
  std::array<Mat6x24, 8> B_;
  std::vector<Mat24, Eigen::aligned_allocator<Mat24>> Ke_;
  std::vector<Mat24x6, Eigen::aligned_allocator<Mat24x6>> Fe_;
  std::vector<int> node_dof_;
  std::vector<std::size_t> dof_entry_;
  std::vector<std::array<int, 24>> cell_dofs_;
  Vec diag_;
};

/// One-shot solve: -div(C(sym grad u - eps_p)) = b.
inline ElasticSolution solve_elasticity(const CoefficientField& C, const CellTensorField* eps_p,
                                        const NodalVectorField* b, double rtol = 1e-10) {
  if (eps_p)
    for (int k = 0; k < C.grid.n[2]; ++k)
      for (int j = 0; j < C.grid.n[1]; ++j)
        for (int i = 0; i < C.grid.n[0]; ++i)
          if (asymmetry(cell_tensor(*eps_p, i, j, k)) > 1e-12)
            throw PreconditionError("solve_elasticity: eigenstrain must be symmetric");
  return ElasticityOperator(C, rtol).solve(eps_p, b);
}

/// (1/2) sum_corners w sigma : (eps - eps_p).
inline double elastic_energy(const ElasticSolution& s, const CellTensorField* eps_p) {
  const BoxGrid& g = s.stress.grid();
  const double w = g.cell_volume() / 8.0;
  double e = 0.0;
  for (int k = 0; k < g.n[2]; ++k)
    for (int j = 0; j < g.n[1]; ++j)
      for (int i = 0; i < g.n[0]; ++i) {
        const Tensor3 ep = eps_p ? cell_tensor(*eps_p, i, j, k) : Tensor3::zero();
        for (int d = 0; d < 8; ++d)
          e += 0.5 * w * frob_inner(corner_tensor(s.stress, d, i, j, k), corner_tensor(s.strain, d, i, j, k) - ep);
      }
  return e;
}

/// Effective stiffness of a rank-1 laminate with normal e_0 (Mandel form);
/// phase 1 occupies volume fraction `fraction`.
inline Stiffness laminate_effective_tensor(const IsotropicElasticity& p1, const IsotropicElasticity& p2,
                                           double fraction) {
  p1.validate();
  p2.validate();
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw PreconditionError("laminate fraction must lie in [0, 1]");
  const double f1 = fraction, f2 = 1.0 - fraction;
  auto avg = [&](auto fn) { return f1 * fn(p1) + f2 * fn(p2); };
  const double inv_m = avg([](const IsotropicElasticity& c) { return 1.0 / (c.lambda + 2 * c.mu); });
  const double l_m = avg([](const IsotropicElasticity& c) { return c.lambda / (c.lambda + 2 * c.mu); });
  const double corr = l_m * l_m / inv_m;
  Stiffness C = Stiffness::Zero();
  C(0, 0) = 1.0 / inv_m;
  C(0, 1) = C(1, 0) = C(0, 2) = C(2, 0) = l_m / inv_m;
  C(1, 1) = C(2, 2) =
      avg([](const IsotropicElasticity& c) { return c.lambda + 2 * c.mu - c.lambda * c.lambda / (c.lambda + 2 * c.mu); }) +
      corr;
  C(1, 2) = C(2, 1) =
      avg([](const IsotropicElasticity& c) { return c.lambda - c.lambda * c.lambda / (c.lambda + 2 * c.mu); }) + corr;
  const double mu_h = 1.0 / avg([](const IsotropicElasticity& c) { return 1.0 / c.mu; });
  const double mu_a = avg([](const IsotropicElasticity& c) { return c.mu; });
  C(3, 3) = 2.0 * mu_a;  // 23 shear, in the laminate plane
  C(4, 4) = 2.0 * mu_h;  // 13 shear, across layers
  C(5, 5) = 2.0 * mu_h;  // 12 shear, across layers
  return C;
}

}  // namespace cvh
