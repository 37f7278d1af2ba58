#pragma once

// Periodic unfolding T_eta(v)(x, y) = v(eta [x/eta] + eta y) on grid-aligned cells.
//
// With c = eta / h fine cells per eta-cell and per axis, the Y-grid has c^3 cell
// centres and T_eta is a pure re-indexing of cell-centred samples. T_eta(v) is
// constant in x over each eta-cell, so a TwoScaleField stores one row per eta-cell
// (the macro lattice) instead of one per fine cell; the x-measure of a row is eta^3.
// Rows of eta-cells that stick out of the domain (Lambda_eta) are zero.

#include <array>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "cvh/error.hpp"
#include "cvh/flow.hpp"
#include "cvh/grid.hpp"
#include "cvh/random.hpp"
#include "cvh/snapshot.hpp"

namespace cvh {

using Point3 = std::array<double, 3>;

struct UnfoldGeometry {
  BoxGrid grid;                  // fine grid on Omega
  int K = 1;                     // eta = 1/K
  double eta = 1.0;
  int c = 1;                     // fine cells per eta-cell per axis (Y resolution)
  std::array<int, 3> macro{};    // eta-cells touching Omega, per axis
  std::array<int, 3> whole{};    // eta-cells contained in Omega, per axis

  /// Unit cube, K must divide the resolution on every axis (Lambda_eta empty).
  static UnfoldGeometry aligned(const BoxGrid& g, int K) {
    if (K < 1) throw PreconditionError("unfold: eta = 1/K needs an integer K >= 1");
    for (int a = 0; a < 3; ++a) {
      if (std::abs(g.n[a] * g.h[a] - 1.0) > 1e-12)
        throw PreconditionError("unfold: aligned mode needs the unit cube; use offset mode for other boxes");
      if (g.n[a] % K != 0)
        throw PreconditionError("unfold: eta = 1/" + std::to_string(K) + " requires " + std::to_string(K) +
                                " to divide the grid resolution " + std::to_string(g.n[a]) + " on every axis");
    }
    return make(g, K);
  }

  /// Any box whose spacing divides eta; eta-cells are anchored at the origin and
  /// the ones crossing the far faces form Lambda_eta.
  static UnfoldGeometry offset(const BoxGrid& g, int K) {
    if (K < 1) throw PreconditionError("unfold: eta = 1/K needs an integer K >= 1");
    return make(g, K);
  }

  std::size_t num_macro() const { return static_cast<std::size_t>(macro[0]) * macro[1] * macro[2]; }
  std::size_t num_y() const { return static_cast<std::size_t>(c) * c * c; }
  double macro_volume() const { return eta * eta * eta; }
  double y_volume() const { return 1.0 / static_cast<double>(num_y()); }

  std::size_t macro_index(int X, int Y, int Z) const {
    return (static_cast<std::size_t>(Z) * macro[1] + Y) * macro[0] + X;
  }
  std::size_t y_index(int x, int y, int z) const { return (static_cast<std::size_t>(z) * c + y) * c + x; }
  bool macro_interior(int X, int Y, int Z) const { return X < whole[0] && Y < whole[1] && Z < whole[2]; }
  /// Whether fine cell (i, j, k) lies in Omega-hat.
  bool in_omega_hat(int i, int j, int k) const { return macro_interior(i / c, j / c, k / c); }
  /// Centre of the Y-cell y_index.
  Point3 y_point(int x, int y, int z) const { return {(x + 0.5) / c, (y + 0.5) / c, (z + 0.5) / c}; }
  /// Centre of the macro cell.
  Point3 macro_point(int X, int Y, int Z) const { return {(X + 0.5) * eta, (Y + 0.5) * eta, (Z + 0.5) * eta}; }

 private:
  static UnfoldGeometry make(const BoxGrid& g, int K) {
    UnfoldGeometry u;
    u.grid = g;
    u.K = K;
    u.eta = 1.0 / K;
    const double ch = u.eta / g.h[0];
    u.c = static_cast<int>(std::lround(ch));
    for (int a = 0; a < 3; ++a)
      if (u.c < 1 || std::abs(u.eta / g.h[a] - u.c) > 1e-9 * u.c)
        throw PreconditionError("unfold: eta = 1/" + std::to_string(K) +
                                " must be a whole number of grid cells on every axis");
    for (int a = 0; a < 3; ++a) {
      u.whole[a] = g.n[a] / u.c;
      u.macro[a] = (g.n[a] + u.c - 1) / u.c;
    }
    return u;
  }
};

/// Values indexed by (component, macro cell, Y-cell).
template <int NC>
class TwoScaleField {
 public:
  TwoScaleField() = default;
  explicit TwoScaleField(const UnfoldGeometry& g) : geom_(g), data_(NC * g.num_macro() * g.num_y(), 0.0) {}

  const UnfoldGeometry& geometry() const { return geom_; }
  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }
  std::size_t index(int comp, std::size_t m, std::size_t y) const {
    return (static_cast<std::size_t>(comp) * geom_.num_macro() + m) * geom_.num_y() + y;
  }
  double& operator()(int comp, std::size_t m, std::size_t y) { return data_[index(comp, m, y)]; }
  double operator()(int comp, std::size_t m, std::size_t y) const { return data_[index(comp, m, y)]; }

  Tensor3 tensor(std::size_t m, std::size_t y) const {
    static_assert(NC == 9);
    Tensor3 t;
    for (int c = 0; c < 9; ++c) t[static_cast<std::size_t>(c)] = (*this)(c, m, y);
    return t;
  }
  void set_tensor(std::size_t m, std::size_t y, const Tensor3& t) {
    static_assert(NC == 9);
    for (int c = 0; c < 9; ++c) (*this)(c, m, y) = t[static_cast<std::size_t>(c)];
  }

  TwoScaleField& operator+=(const TwoScaleField& o) {
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  TwoScaleField& operator-=(const TwoScaleField& o) {
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  TwoScaleField& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }
  friend TwoScaleField operator+(TwoScaleField a, const TwoScaleField& b) { return a += b; }
  friend TwoScaleField operator-(TwoScaleField a, const TwoScaleField& b) { return a -= b; }
  friend TwoScaleField operator*(double s, TwoScaleField a) { return a *= s; }

  /// (sum over components of int_Omega int_Y |v|^q)^(1/q), |Y| = 1.
  double norm_lq(double q = 2.0) const {
    const double w = geom_.macro_volume() * geom_.y_volume();
    const double s = ordered_sum(data_.size(), [&](std::size_t i) { return w * std::pow(std::abs(data_[i]), q); });
    return std::pow(s, 1.0 / q);
  }
  double norm_l2() const {
    const double w = geom_.macro_volume() * geom_.y_volume();
    return std::sqrt(ordered_sum(data_.size(), [&](std::size_t i) { return w * data_[i] * data_[i]; }));
  }
  /// int_Omega int_Y v_comp dx dy.
  double integral(int comp) const {
    const double w = geom_.macro_volume() * geom_.y_volume();
    const std::size_t n = geom_.num_macro() * geom_.num_y();
    return ordered_sum(n, [&](std::size_t i) { return w * data_[comp * n + i]; });
  }

  std::string snapshot() const {
    SnapshotHeader h;
    for (int a = 0; a < 3; ++a) {
      h.dims[a] = static_cast<std::uint32_t>(geom_.macro[a]);
      h.ydims[a] = static_cast<std::uint32_t>(geom_.c);
    }
    h.placement = Placement::two_scale;
    h.ncomp = NC;
    return encode_snapshot(h, data_);
  }

 private:
  UnfoldGeometry geom_;
  std::vector<double> data_;
};

/// T_eta of a cell-centred field.
template <int NC>
TwoScaleField<NC> unfold_field(const Field<Placement::cell, NC>& v, const UnfoldGeometry& geom) {
  if (!(v.grid() == geom.grid)) throw PreconditionError("unfold: field and geometry use different grids");
  TwoScaleField<NC> ts(geom);
  const int c = geom.c;
#pragma omp parallel for schedule(static)
  for (int Z = 0; Z < geom.whole[2]; ++Z)
    for (int Y = 0; Y < geom.whole[1]; ++Y)
      for (int X = 0; X < geom.whole[0]; ++X) {
        const std::size_t m = geom.macro_index(X, Y, Z);
        for (int comp = 0; comp < NC; ++comp)
          for (int z = 0; z < c; ++z)
            for (int y = 0; y < c; ++y)
              for (int x = 0; x < c; ++x)
                ts(comp, m, geom.y_index(x, y, z)) = v(comp, X * c + x, Y * c + y, Z * c + z);
      }
  return ts;
}

/// Inverse re-indexing: the fine field whose unfolding is ts (zero on Lambda_eta).
template <int NC>
Field<Placement::cell, NC> fold_field(const TwoScaleField<NC>& ts) {
  const UnfoldGeometry& geom = ts.geometry();
  Field<Placement::cell, NC> v(geom.grid);
  const int c = geom.c;
  for (int Z = 0; Z < geom.whole[2]; ++Z)
    for (int Y = 0; Y < geom.whole[1]; ++Y)
      for (int X = 0; X < geom.whole[0]; ++X)
        for (int comp = 0; comp < NC; ++comp)
          for (int z = 0; z < c; ++z)
            for (int y = 0; y < c; ++y)
              for (int x = 0; x < c; ++x)
                v(comp, X * c + x, Y * c + y, Z * c + z) = ts(comp, geom.macro_index(X, Y, Z), geom.y_index(x, y, z));
  return v;
}

/// Mean over Y per macro cell: entry (comp * num_macro + m).
template <int NC>
std::vector<double> average_y_macro(const TwoScaleField<NC>& ts) {
  const UnfoldGeometry& geom = ts.geometry();
  std::vector<double> out(NC * geom.num_macro(), 0.0);
  const double w = geom.y_volume();
  for (int comp = 0; comp < NC; ++comp)
    for (std::size_t m = 0; m < geom.num_macro(); ++m) {
      double s = 0.0;
      for (std::size_t y = 0; y < geom.num_y(); ++y) s += w * ts(comp, m, y);
      out[comp * geom.num_macro() + m] = s;
    }
  return out;
}

/// Mean over Y as a cell field on Omega, piecewise constant on eta-cells.
template <int NC>
Field<Placement::cell, NC> average_y(const TwoScaleField<NC>& ts) {
  const UnfoldGeometry& geom = ts.geometry();
  const auto mean = average_y_macro(ts);
  Field<Placement::cell, NC> v(geom.grid);
  v.for_each([&](int comp, int i, int j, int k, std::size_t id) {
    v.data()[id] = mean[comp * geom.num_macro() + geom.macro_index(i / geom.c, j / geom.c, k / geom.c)];
  });
  return v;
}

/// Per-(macro cell, Y-cell) flow rules. Outside Omega-hat the power-law filler
/// |v|^(q-2) v with the local rule's exponent is used.
struct UnfoldedFlow {
  UnfoldGeometry geom;
  std::vector<FlowRule> table;
  std::vector<std::uint16_t> index;  // m * num_y + y

  const FlowRule& rule(std::size_t m, std::size_t y) const { return table[index[m * geom.num_y() + y]]; }
};

inline UnfoldedFlow unfold_flow(const PeriodicFlowField& rules, const UnfoldGeometry& geom) {
  rules.validate();
  UnfoldedFlow uf;
  uf.geom = geom;
  uf.table = rules.phases;
  const std::size_t nph = rules.phases.size();
  for (const auto& g : rules.phases) uf.table.push_back(FlowRule::power_law(g.q));
  uf.index.resize(geom.num_macro() * geom.num_y());
  for (int Z = 0; Z < geom.macro[2]; ++Z)
    for (int Y = 0; Y < geom.macro[1]; ++Y)
      for (int X = 0; X < geom.macro[0]; ++X) {
        const std::size_t m = geom.macro_index(X, Y, Z);
        for (int z = 0; z < geom.c; ++z)
          for (int y = 0; y < geom.c; ++y)
            for (int x = 0; x < geom.c; ++x) {
              const int ph =
                  std::min<int>(rules.pattern.phase(geom.y_point(x, y, z)), static_cast<int>(nph) - 1);
              uf.index[m * geom.num_y() + geom.y_index(x, y, z)] =
                  static_cast<std::uint16_t>(geom.macro_interior(X, Y, Z) ? ph : static_cast<int>(nph) + ph);
            }
      }
  return uf;
}

/// max |j_lambda^{T(g)}(x, y, z) - j_lambda^{g}(y, z)| over random interior (x, y)
/// and random arguments z of scale `scale`.
inline double resolvent_unfolding_discrepancy(const PeriodicFlowField& rules, const UnfoldedFlow& uf, double lambda,
                                              int samples, double scale = 2.0, std::uint64_t seed = 20240611) {
  Rng rng(seed);
  const UnfoldGeometry& g = uf.geom;
  if (g.whole[0] * g.whole[1] * g.whole[2] == 0) return 0.0;
  double d = 0.0;
  for (int s = 0; s < samples; ++s) {
    const int X = static_cast<int>(rng.raw() % g.whole[0]), Y = static_cast<int>(rng.raw() % g.whole[1]),
              Z = static_cast<int>(rng.raw() % g.whole[2]);
    const int x = static_cast<int>(rng.raw() % g.c), y = static_cast<int>(rng.raw() % g.c),
              z = static_cast<int>(rng.raw() % g.c);
    const Tensor3 w = rng.tensor(scale);
    const Tensor3 a = uf.rule(g.macro_index(X, Y, Z), g.y_index(x, y, z)).resolvent(lambda, w);
    const Tensor3 b = rules.rule_at(g.y_point(x, y, z)).resolvent(lambda, w);
    d = std::max(d, frob_norm(a - b));
  }
  return d;
}

// ---------------------------------------------------------------------------
// Two-scale splitting of gradients and curl-curls on manufactured sequences.
// Limits are compared with the same discrete stencils applied on the Y-grid, so
// the reported errors measure the eta-dependence only.

struct SplitReport {
  std::vector<double> eta;
  std::vector<double> error;       // ||T(D u_eta) - limit||
  std::vector<double> mean_error;  // ||average_y T(D u_eta) - macro limit|| (or mean recovery)
  std::vector<double> aux_error;   // curl transport (curl-curl test only)
  std::vector<double> field_norm;  // ||T(D u_eta)||
  /// error[i] / error[i+1]
  std::vector<double> ratios() const {
    std::vector<double> r;
    for (std::size_t i = 0; i + 1 < error.size(); ++i) r.push_back(error[i] / error[i + 1]);
    return r;
  }
};

namespace detail {

inline void require_three(const std::vector<int>& Ks) {
  if (Ks.size() < 3) throw ConfigError("split test: need at least 3 eta values, got " + std::to_string(Ks.size()));
}

/// Cell gradient of a nodal vector field: mean of the 8 corner gradients.
inline CellTensorField cell_gradient(const NodalVectorField& u) {
  const BoxGrid& g = u.grid();
  CellTensorField out(g);
  for (int k = 0; k < g.n[2]; ++k)
    for (int j = 0; j < g.n[1]; ++j)
      for (int i = 0; i < g.n[0]; ++i)
        for (int r = 0; r < 3; ++r)
          for (int a = 0; a < 3; ++a) {
            double s = 0.0;
            for (int d = 0; d < 8; ++d) {
              std::array<int, 3> lo{i + (d & 1), j + ((d >> 1) & 1), k + ((d >> 2) & 1)};
              std::array<int, 3> hi = lo;
              lo[a] = std::array<int, 3>{i, j, k}[a];
              hi[a] = lo[a] + 1;
              s += u.get(r, hi[0], hi[1], hi[2]) - u.get(r, lo[0], lo[1], lo[2]);
            }
            out(3 * r + a, i, j, k) = s / (8.0 * g.h[a]);
          }
  return out;
}

/// Face tensor field averaged to cells (two faces per cell and orientation).
inline CellTensorField faces_to_cell(const FaceTensorField& f) {
  const BoxGrid& g = f.grid();
  CellTensorField out(g);
  out.for_each([&](int comp, int i, int j, int k, std::size_t id) {
    std::array<int, 3> x{i, j, k};
    const int a = comp % 3;
    x[a] += 1;
    out.data()[id] = 0.5 * (f.get(comp, i, j, k) + f.get(comp, x[0], x[1], x[2]));
  });
  return out;
}

template <Placement P>
Point3 entry_point(const BoxGrid& g, int comp, int i, int j, int k) {
  Point3 x{i * g.h[0], j * g.h[1], k * g.h[2]};
  const int a = comp % 3;
  for (int b = 0; b < 3; ++b) {
    const bool shift = (P == Placement::edge && b == a) || (P == Placement::face && b != a) || P == Placement::cell;
    if (shift) x[b] += 0.5 * g.h[b];
  }
  return x;
}

}  // namespace detail

struct GradientSplitCase {
  std::function<Point3(const Point3&)> u;                     // periodic macro displacement
  std::function<Tensor3(const Point3&)> grad_u;              // its gradient
  std::function<Point3(const Point3&, const Point3&)> w;      // w(x, y), periodic in both
  int cells_per_eta = 4;
};

/// u_eta(x) = u(x) + eta w(x, x/eta) on the unit torus with N = c K.
inline SplitReport gradient_split_test(const GradientSplitCase& cs, const std::vector<int>& Ks) {
  detail::require_three(Ks);
  SplitReport rep;
  const int c = cs.cells_per_eta;
  const BoxGrid yg = BoxGrid::unit(c, Mode::torus);
  for (int K : Ks) {
    const double eta = 1.0 / K;
    const BoxGrid g = BoxGrid::unit(c * K, Mode::torus);
    const UnfoldGeometry geom = UnfoldGeometry::aligned(g, K);
    NodalVectorField ue(g);
    ue.for_each([&](int r, int i, int j, int k, std::size_t id) {
      const Point3 x{i * g.h[0], j * g.h[1], k * g.h[2]};
      const Point3 y{x[0] / eta, x[1] / eta, x[2] / eta};
      ue.data()[id] = cs.u(x)[static_cast<std::size_t>(r)] + eta * cs.w(x, y)[static_cast<std::size_t>(r)];
    });
    const auto T = unfold_field(detail::cell_gradient(ue), geom);
    TwoScaleField<9> lim(geom);
    TwoScaleField<9> macro_only(geom);
    for (int Z = 0; Z < geom.macro[2]; ++Z)
      for (int Y = 0; Y < geom.macro[1]; ++Y)
        for (int X = 0; X < geom.macro[0]; ++X) {
          const Point3 xc = geom.macro_point(X, Y, Z);
          NodalVectorField wy(yg);
          wy.for_each([&](int r, int i, int j, int k, std::size_t id) {
            wy.data()[id] = cs.w(xc, {i * yg.h[0], j * yg.h[1], k * yg.h[2]})[static_cast<std::size_t>(r)];
          });
          const auto gy = detail::cell_gradient(wy);
          const Tensor3 gu = cs.grad_u(xc);
          const std::size_t m = geom.macro_index(X, Y, Z);
          for (int z = 0; z < c; ++z)
            for (int y = 0; y < c; ++y)
              for (int x = 0; x < c; ++x) {
                const std::size_t yi = geom.y_index(x, y, z);
                macro_only.set_tensor(m, yi, gu);
                lim.set_tensor(m, yi, gu + cell_tensor(gy, x, y, z));
              }
        }
    rep.eta.push_back(eta);
    rep.error.push_back((T - lim).norm_l2());
    rep.field_norm.push_back(T.norm_l2());
    const auto mean = average_y_macro(T);
    const auto mref = average_y_macro(macro_only);
    double s = 0.0;
    for (std::size_t i = 0; i < mean.size(); ++i) s += geom.macro_volume() * (mean[i] - mref[i]) * (mean[i] - mref[i]);
    rep.mean_error.push_back(std::sqrt(s));
  }
  return rep;
}

struct CurlSplitCase {
  std::function<Tensor3(const Point3&)> p;           // periodic macro field
  std::function<Tensor3(const Point3&)> curl_p;      // its (row-wise) curl
  std::function<Tensor3(const Point3&)> curlcurl_p;  // curl of curl_p
  std::function<double(const Point3&)> phi;          // periodic envelope
  std::function<Tensor3(const Point3&)> v1;          // Y-periodic, row-wise divergence free
  int cells_per_eta = 4;
};

/// p_eta(x) = p(x) + eta^2 v1(x/eta) phi(x) on Yee edges of the unit torus.
inline SplitReport curlcurl_split_test(const CurlSplitCase& cs, const std::vector<int>& Ks) {
  detail::require_three(Ks);
  SplitReport rep;
  const int c = cs.cells_per_eta;
  const BoxGrid yg = BoxGrid::unit(c, Mode::torus);
  EdgeTensorField vy(yg);
  vy.for_each([&](int comp, int i, int j, int k, std::size_t id) {
    vy.data()[id] = cs.v1(detail::entry_point<Placement::edge>(yg, comp, i, j, k))[static_cast<std::size_t>(comp)];
  });
  const CellTensorField ccy = edges_to_cell(curl_curl(vy));
  for (int K : Ks) {
    const double eta = 1.0 / K;
    const BoxGrid g = BoxGrid::unit(c * K, Mode::torus);
    const UnfoldGeometry geom = UnfoldGeometry::aligned(g, K);
    EdgeTensorField pe(g);
    pe.for_each([&](int comp, int i, int j, int k, std::size_t id) {
      const Point3 x = detail::entry_point<Placement::edge>(g, comp, i, j, k);
      const Point3 y{x[0] / eta, x[1] / eta, x[2] / eta};
      pe.data()[id] = cs.p(x)[static_cast<std::size_t>(comp)] +
                      eta * eta * cs.phi(x) * cs.v1(y)[static_cast<std::size_t>(comp)];
    });
    const auto Tcc = unfold_field(edges_to_cell(curl_curl(pe)), geom);
    const auto Tc = unfold_field(detail::faces_to_cell(curl(pe)), geom);
    const auto Tp = unfold_field(edges_to_cell(pe), geom);
    TwoScaleField<9> lim_cc(geom), lim_c(geom), lim_p(geom);
    for (int Z = 0; Z < geom.macro[2]; ++Z)
      for (int Y = 0; Y < geom.macro[1]; ++Y)
        for (int X = 0; X < geom.macro[0]; ++X) {
          const Point3 xc = geom.macro_point(X, Y, Z);
          const std::size_t m = geom.macro_index(X, Y, Z);
          const Tensor3 cc = cs.curlcurl_p(xc), cp = cs.curl_p(xc), pp = cs.p(xc);
          const double ph = cs.phi(xc);
          for (int z = 0; z < c; ++z)
            for (int y = 0; y < c; ++y)
              for (int x = 0; x < c; ++x) {
                const std::size_t yi = geom.y_index(x, y, z);
                lim_cc.set_tensor(m, yi, cc + ph * cell_tensor(ccy, x, y, z));
                lim_c.set_tensor(m, yi, cp);
                lim_p.set_tensor(m, yi, pp);
              }
        }
    rep.eta.push_back(eta);
    rep.error.push_back((Tcc - lim_cc).norm_l2());
    rep.field_norm.push_back(Tcc.norm_l2());
    rep.aux_error.push_back((Tc - lim_c).norm_l2());
    const auto mean = average_y_macro(Tp);
    const auto mref = average_y_macro(lim_p);
    double s = 0.0;
    for (std::size_t i = 0; i < mean.size(); ++i) s += geom.macro_volume() * (mean[i] - mref[i]) * (mean[i] - mref[i]);
    rep.mean_error.push_back(std::sqrt(s));
  }
  return rep;
}

}  // namespace cvh
