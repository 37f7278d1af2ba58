#pragma once

// Box grids, staggered fields and the discrete grad / curl / div complex.
//
// Placement conventions (Yee staggering, forward differences):
//   node   lattice point i
//   edge   a-edge at i joins node i and node i + e_a
//   face   a-face at i has normal e_a and spans i, i + e_b, i + e_c
//   cell   cell i spans nodes i .. i + (1,1,1)
// For edge and face fields component c lives on (c % 3)-edges / faces, so a
// tensor field with comp = 3*row + axis stores each row as a Yee vector field.
//
// Storage per component is a lattice of L0*L1*L2 entries, x fastest. On the
// torus L = N (indices wrap). With a micro-hard boundary L = N + 1 for node,
// edge and face fields; entries outside the valid range of a component (an
// a-edge with i_a = N, say) are kept at zero. Cell fields always use L = N.

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cvh/error.hpp"
#include "cvh/parallel.hpp"
#include "cvh/random.hpp"

namespace cvh {

enum class Mode { torus, microhard };

enum class Placement : std::uint32_t { node = 0, edge = 1, face = 2, cell = 3, two_scale = 4 };

inline const char* placement_name(Placement p) {
  switch (p) {
    case Placement::node: return "node";
    case Placement::edge: return "edge";
    case Placement::face: return "face";
    case Placement::cell: return "cell";
    case Placement::two_scale: return "two_scale";
  }
  return "?";
}

struct BoxGrid {
  std::array<int, 3> n{4, 4, 4};
  std::array<double, 3> h{0.25, 0.25, 0.25};
  Mode mode = Mode::torus;

  BoxGrid() = default;
  BoxGrid(std::array<int, 3> n_, std::array<double, 3> h_, Mode m) : n(n_), h(h_), mode(m) { validate(); }

  /// N^3 cells on the unit cube (or unit torus).
  static BoxGrid unit(int N, Mode m) { return BoxGrid({N, N, N}, {1.0 / N, 1.0 / N, 1.0 / N}, m); }

  void validate() const {
    for (int a = 0; a < 3; ++a) {
      if (n[a] < 4) throw PreconditionError("BoxGrid: need at least 4 cells per axis, got " + std::to_string(n[a]));
      if (!(h[a] > 0.0)) throw PreconditionError("BoxGrid: spacings must be positive");
    }
  }

  bool torus() const { return mode == Mode::torus; }
  double cell_volume() const { return h[0] * h[1] * h[2]; }
  double volume() const { return cell_volume() * n[0] * n[1] * n[2]; }
  std::size_t num_cells() const { return static_cast<std::size_t>(n[0]) * n[1] * n[2]; }

  /// Storage extent along an axis for a placement.
  int extent(Placement p, int a) const { return (p == Placement::cell || torus()) ? n[a] : n[a] + 1; }

  friend bool operator==(const BoxGrid&, const BoxGrid&) = default;
};

namespace detail {
inline int wrap(int i, int n) { return ((i % n) + n) % n; }
}  // namespace detail

template <Placement P, int NC>
class Field {
  static_assert(P != Placement::two_scale, "two-scale data lives in TwoScaleField");
  static_assert(NC >= 1);

 public:
  static constexpr Placement placement = P;
  static constexpr int ncomp = NC;

  Field() = default;
  explicit Field(const BoxGrid& g) : grid_(g) {
    for (int a = 0; a < 3; ++a) L_[a] = g.extent(P, a);
    per_comp_ = static_cast<std::size_t>(L_[0]) * L_[1] * L_[2];
    data_.assign(per_comp_ * NC, 0.0);
  }

  const BoxGrid& grid() const { return grid_; }
  const std::array<int, 3>& dims() const { return L_; }
  std::size_t per_comp() const { return per_comp_; }
  std::size_t size() const { return data_.size(); }
  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  std::size_t index(int c, int i, int j, int k) const {
    return ((static_cast<std::size_t>(c) * L_[2] + k) * L_[1] + j) * L_[0] + i;
  }
  double& operator()(int c, int i, int j, int k) { return data_[index(c, i, j, k)]; }
  double operator()(int c, int i, int j, int k) const { return data_[index(c, i, j, k)]; }

  /// Value with torus wrap, or zero outside the stored lattice on a bounded grid.
  double get(int c, int i, int j, int k) const {
    if (grid_.torus()) {
      return data_[index(c, detail::wrap(i, L_[0]), detail::wrap(j, L_[1]), detail::wrap(k, L_[2]))];
    }
    if (i < 0 || j < 0 || k < 0 || i >= L_[0] || j >= L_[1] || k >= L_[2]) return 0.0;
    return data_[index(c, i, j, k)];
  }

  /// Whether (c, i, j, k) is a degree of freedom of the placement at all.
  bool valid(int c, int i, int j, int k) const {
    if (grid_.torus() || P == Placement::cell || P == Placement::node) return true;
    const std::array<int, 3> x{i, j, k};
    const int a = c % 3;
    for (int b = 0; b < 3; ++b) {
      const bool along = (b == a);
      if (P == Placement::edge && along && x[b] == grid_.n[b]) return false;
      if (P == Placement::face && !along && x[b] == grid_.n[b]) return false;
    }
    return true;
  }

  /// Boundary axis/side on which a valid entry is constrained by the micro-hard
  /// mask, or -1 for a free entry. Encoded as 2*axis + (upper side).
  int constrained_side(int c, int i, int j, int k) const {
    if (grid_.torus() || P == Placement::cell) return -1;
    const std::array<int, 3> x{i, j, k};
    const int a = c % 3;
    for (int b = 0; b < 3; ++b) {
      const bool counts = (P == Placement::node) || (P == Placement::edge && b != a) || (P == Placement::face && b == a);
      if (!counts) continue;
      if (x[b] == 0) return 2 * b;
      if (x[b] == grid_.n[b]) return 2 * b + 1;
    }
    return -1;
  }
  bool is_free(int c, int i, int j, int k) const { return valid(c, i, j, k) && constrained_side(c, i, j, k) < 0; }

  /// Quadrature weight: cell volume, halved once per boundary coordinate (trapezoid).
  double weight(int c, int i, int j, int k) const {
    double w = grid_.cell_volume();
    if (grid_.torus() || P == Placement::cell) return w;
    if (!valid(c, i, j, k)) return 0.0;
    const std::array<int, 3> x{i, j, k};
    const int a = c % 3;
    for (int b = 0; b < 3; ++b) {
      const bool counts = (P == Placement::node) || (P == Placement::edge && b != a) || (P == Placement::face && b == a);
      if (counts && (x[b] == 0 || x[b] == grid_.n[b])) w *= 0.5;
    }
    return w;
  }

  template <class F>
  void for_each(F&& f) const {
    for (int c = 0; c < NC; ++c)
      for (int k = 0; k < L_[2]; ++k)
        for (int j = 0; j < L_[1]; ++j)
          for (int i = 0; i < L_[0]; ++i) f(c, i, j, k, index(c, i, j, k));
  }

  void set_zero() { std::fill(data_.begin(), data_.end(), 0.0); }

  /// Zero every constrained or invalid entry (idempotent).
  void apply_mask() {
    if (grid_.torus() || P == Placement::cell) return;
    for_each([&](int c, int i, int j, int k, std::size_t id) {
      if (!is_free(c, i, j, k)) data_[id] = 0.0;
    });
  }

  /// Throws naming the boundary face that carries a nonzero constrained entry.
  void check_mask(const std::string& op) const {
    if (grid_.torus() || P == Placement::cell) return;
    static const char* names[6] = {"x=0", "x=1", "y=0", "y=1", "z=0", "z=1"};
    for_each([&](int c, int i, int j, int k, std::size_t id) {
      if (data_[id] == 0.0) return;
      if (!valid(c, i, j, k))
        throw PreconditionError(op + ": nonzero value in an unused " + placement_name(P) + " slot");
      const int side = constrained_side(c, i, j, k);
      if (side >= 0)
        throw PreconditionError(op + ": micro-hard mask violated on boundary face " + names[side] + " (" +
                                placement_name(P) + " component " + std::to_string(c) + ")");
    });
  }

  /// Uniform random values in [-scale, scale] on free entries.
  void fill_random(Rng& rng, double scale = 1.0) {
    for_each([&](int c, int i, int j, int k, std::size_t id) {
      data_[id] = is_free(c, i, j, k) ? scale * rng.uniform(-1.0, 1.0) : 0.0;
    });
  }

  Field& operator+=(const Field& o) {
    require_same(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Field& operator-=(const Field& o) {
    require_same(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Field& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }
  /// this += s * o.
  void axpy(double s, const Field& o) {
    require_same(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += s * o.data_[i];
  }
  friend Field operator+(Field a, const Field& b) { return a += b; }
  friend Field operator-(Field a, const Field& b) { return a -= b; }
  friend Field operator*(double s, Field a) { return a *= s; }

  void require_same(const Field& o) const {
    if (!(grid_ == o.grid_)) throw PreconditionError("field operation on different grids");
  }

  double max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
  }

 private:
  BoxGrid grid_;
  std::array<int, 3> L_{0, 0, 0};
  std::size_t per_comp_ = 0;
  std::vector<double> data_;
};

using NodalScalar = Field<Placement::node, 1>;
using NodalVectorField = Field<Placement::node, 3>;
using EdgeVectorField = Field<Placement::edge, 3>;
using EdgeTensorField = Field<Placement::edge, 9>;
using FaceVectorField = Field<Placement::face, 3>;
using FaceTensorField = Field<Placement::face, 9>;
using CellScalar = Field<Placement::cell, 1>;
using CellVector = Field<Placement::cell, 3>;
using CellTensorField = Field<Placement::cell, 9>;
/// Eight corner tensors per cell, comp = 9*corner + 3*row + col, corner = dx + 2 dy + 4 dz.
using QuadTensorField = Field<Placement::cell, 72>;

inline Tensor3 cell_tensor(const CellTensorField& f, int i, int j, int k) {
  Tensor3 t;
  for (int c = 0; c < 9; ++c) t[static_cast<std::size_t>(c)] = f(c, i, j, k);
  return t;
}
inline void set_cell_tensor(CellTensorField& f, int i, int j, int k, const Tensor3& t) {
  for (int c = 0; c < 9; ++c) f(c, i, j, k) = t[static_cast<std::size_t>(c)];
}
inline Tensor3 corner_tensor(const QuadTensorField& f, int d, int i, int j, int k) {
  Tensor3 t;
  for (int c = 0; c < 9; ++c) t[static_cast<std::size_t>(c)] = f(9 * d + c, i, j, k);
  return t;
}
inline void set_corner_tensor(QuadTensorField& f, int d, int i, int j, int k, const Tensor3& t) {
  for (int c = 0; c < 9; ++c) f(9 * d + c, i, j, k) = t[static_cast<std::size_t>(c)];
}

// ---------------------------------------------------------------------------
// Inner products and norms

template <Placement P, int NC>
double inner(const Field<P, NC>& a, const Field<P, NC>& b) {
  a.require_same(b);
  const auto& L = a.dims();
  const std::size_t rows = static_cast<std::size_t>(NC) * L[2] * L[1];
  return ordered_sum(rows, [&](std::size_t r) {
    const int c = static_cast<int>(r / (static_cast<std::size_t>(L[2]) * L[1]));
    const int k = static_cast<int>((r / L[1]) % L[2]);
    const int j = static_cast<int>(r % L[1]);
    double s = 0.0;
    for (int i = 0; i < L[0]; ++i) {
      const std::size_t id = a.index(c, i, j, k);
      if (a.data()[id] != 0.0) s += a.weight(c, i, j, k) * a.data()[id] * b.data()[id];
    }
    return s;
  });
}

template <Placement P, int NC>
double norm_l2(const Field<P, NC>& a) {
  return std::sqrt(inner(a, a));
}

/// (sum of weight * |entry|^q)^(1/q) over all stored components.
template <Placement P, int NC>
double norm_lq(const Field<P, NC>& a, double q) {
  if (!(q >= 1.0)) throw PreconditionError("norm_lq: need q >= 1");
  const auto& L = a.dims();
  const std::size_t rows = static_cast<std::size_t>(NC) * L[2] * L[1];
  const double s = ordered_sum(rows, [&](std::size_t r) {
    const int c = static_cast<int>(r / (static_cast<std::size_t>(L[2]) * L[1]));
    const int k = static_cast<int>((r / L[1]) % L[2]);
    const int j = static_cast<int>(r % L[1]);
    double t = 0.0;
    for (int i = 0; i < L[0]; ++i) {
      const double v = a(c, i, j, k);
      if (v != 0.0) t += a.weight(c, i, j, k) * std::pow(std::abs(v), q);
    }
    return t;
  });
  return std::pow(s, 1.0 / q);
}

// ---------------------------------------------------------------------------
// Difference operators

namespace detail {

inline std::array<int, 3> shift(int i, int j, int k, int a, int d) {
  std::array<int, 3> x{i, j, k};
  x[a] += d;
  return x;
}

template <Placement P, int NC, class F>
void assign_valid(Field<P, NC>& out, F&& value) {
  const auto& L = out.dims();
#pragma omp parallel for schedule(static)
  for (int k = 0; k < L[2]; ++k)
    for (int c = 0; c < NC; ++c)
      for (int j = 0; j < L[1]; ++j)
        for (int i = 0; i < L[0]; ++i)
          out(c, i, j, k) = out.valid(c, i, j, k) ? value(c, i, j, k) : 0.0;
}

}  // namespace detail

/// Forward difference of each nodal component along every axis: comp 3r+a on a-edges.
template <int R>
Field<Placement::edge, 3 * R> grad(const Field<Placement::node, R>& u) {
  Field<Placement::edge, 3 * R> g(u.grid());
  const auto& h = u.grid().h;
  detail::assign_valid(g, [&](int c, int i, int j, int k) {
    const int r = c / 3, a = c % 3;
    const auto x = detail::shift(i, j, k, a, 1);
    return (u.get(r, x[0], x[1], x[2]) - u.get(r, i, j, k)) / h[a];
  });
  return g;
}

/// div = -grad^T: nodal output, zero on boundary nodes of a micro-hard grid.
template <int NC>
Field<Placement::node, NC / 3> div(const Field<Placement::edge, NC>& s) {
  static_assert(NC % 3 == 0);
  Field<Placement::node, NC / 3> out(s.grid());
  const auto& h = s.grid().h;
  detail::assign_valid(out, [&](int r, int i, int j, int k) {
    double v = 0.0;
    for (int a = 0; a < 3; ++a) {
      const auto x = detail::shift(i, j, k, a, -1);
      v += (s.get(3 * r + a, i, j, k) - s.get(3 * r + a, x[0], x[1], x[2])) / h[a];
    }
    return v;
  });
  out.apply_mask();
  return out;
}

/// Row-wise curl, (curl p)_{r,a} = D_b p_{r,c} - D_c p_{r,b} for cyclic (a, b, c).
template <int NC>
Field<Placement::face, NC> curl(const Field<Placement::edge, NC>& p) {
  static_assert(NC % 3 == 0);
  p.check_mask("curl");
  Field<Placement::face, NC> q(p.grid());
  const auto& h = p.grid().h;
  detail::assign_valid(q, [&](int comp, int i, int j, int k) {
    const int r = comp / 3, a = comp % 3, b = (a + 1) % 3, c = (a + 2) % 3;
    const auto xb = detail::shift(i, j, k, b, 1);
    const auto xc = detail::shift(i, j, k, c, 1);
    const double dbpc = (p.get(3 * r + c, xb[0], xb[1], xb[2]) - p.get(3 * r + c, i, j, k)) / h[b];
    const double dcpb = (p.get(3 * r + b, xc[0], xc[1], xc[2]) - p.get(3 * r + b, i, j, k)) / h[c];
    return dbpc - dcpb;
  });
  return q;
}

/// Transpose of curl under the grid inner products; output masked.
template <int NC>
Field<Placement::edge, NC> curl_adjoint(const Field<Placement::face, NC>& q) {
  static_assert(NC % 3 == 0);
  Field<Placement::edge, NC> p(q.grid());
  const auto& h = q.grid().h;
  // Edge component (r, e) receives +D_b^T q_{r,a} when e = c and -D_c^T q_{r,a} when e = b.
  detail::assign_valid(p, [&](int comp, int i, int j, int k) {
    const int r = comp / 3, e = comp % 3;
    const int a_plus = (e + 1) % 3;   // (a, b, c) = (e+1, e+2, e): contributes +D_{e+2}^T q_a
    const int b_plus = (e + 2) % 3;
    const int a_minus = (e + 2) % 3;  // (a, b, c) = (e+2, e, e+1): contributes -D_{e+1}^T q_a
    const int c_minus = (e + 1) % 3;
    const auto xm = detail::shift(i, j, k, b_plus, -1);
    const auto ym = detail::shift(i, j, k, c_minus, -1);
    const double dp = (q.get(3 * r + a_plus, xm[0], xm[1], xm[2]) - q.get(3 * r + a_plus, i, j, k)) / h[b_plus];
    const double dm = (q.get(3 * r + a_minus, ym[0], ym[1], ym[2]) - q.get(3 * r + a_minus, i, j, k)) / h[c_minus];
    return dp - dm;
  });
  p.apply_mask();
  return p;
}

template <int NC>
Field<Placement::edge, NC> curl_curl(const Field<Placement::edge, NC>& p) {
  return curl_adjoint(curl(p));
}

/// Cell-centred divergence of each face row: sum_a D_a q_{r,a}.
template <int NC>
Field<Placement::cell, NC / 3> div_faces(const Field<Placement::face, NC>& q) {
  static_assert(NC % 3 == 0);
  Field<Placement::cell, NC / 3> out(q.grid());
  const auto& h = q.grid().h;
  detail::assign_valid(out, [&](int r, int i, int j, int k) {
    double v = 0.0;
    for (int a = 0; a < 3; ++a) {
      const auto x = detail::shift(i, j, k, a, 1);
      v += (q.get(3 * r + a, x[0], x[1], x[2]) - q.get(3 * r + a, i, j, k)) / h[a];
    }
    return v;
  });
  return out;
}

/// Plain transpose of div_faces (no weights; cells and interior faces share the cell volume).
template <int R>
Field<Placement::face, 3 * R> div_faces_transpose(const Field<Placement::cell, R>& s) {
  Field<Placement::face, 3 * R> q(s.grid());
  const auto& h = s.grid().h;
  const bool torus = s.grid().torus();
  detail::assign_valid(q, [&](int comp, int i, int j, int k) {
    const int r = comp / 3, a = comp % 3;
    const auto x = detail::shift(i, j, k, a, -1);
    const auto n = s.grid().n;
    auto cellv = [&](const std::array<int, 3>& y) {
      if (!torus && (y[0] < 0 || y[1] < 0 || y[2] < 0 || y[0] >= n[0] || y[1] >= n[1] || y[2] >= n[2])) return 0.0;
      return s.get(r, y[0], y[1], y[2]);
    };
    return (cellv(x) - cellv({i, j, k})) / h[a];
  });
  return q;
}

// ---------------------------------------------------------------------------
// Corner restriction and the cell <-> edge average

/// Corner quadrature restriction: at corner d of cell (i,j,k), component (r, a)
/// is the a-edge of that cell incident to the corner.
template <int NC>
Field<Placement::cell, 8 * NC> corner_restrict(const Field<Placement::edge, NC>& p) {
  static_assert(NC % 3 == 0);
  Field<Placement::cell, 8 * NC> out(p.grid());
  detail::assign_valid(out, [&](int comp, int i, int j, int k) {
    const int d = comp / NC, c = comp % NC, a = c % 3;
    std::array<int, 3> x{i + (d & 1), j + ((d >> 1) & 1), k + ((d >> 2) & 1)};
    x[a] = std::array<int, 3>{i, j, k}[a];
    return p.get(c, x[0], x[1], x[2]);
  });
  return out;
}

/// Plain transpose of corner_restrict (scatter-add, no weights), output masked.
template <int NC8>
Field<Placement::edge, NC8 / 8> corner_restrict_transpose(const Field<Placement::cell, NC8>& s) {
  constexpr int NC = NC8 / 8;
  Field<Placement::edge, NC> p(s.grid());
  const auto& n = s.grid().n;
  const bool torus = s.grid().torus();
  const auto& L = p.dims();
  for (int k = 0; k < n[2]; ++k)
    for (int j = 0; j < n[1]; ++j)
      for (int i = 0; i < n[0]; ++i)
        for (int d = 0; d < 8; ++d)
          for (int c = 0; c < NC; ++c) {
            const int a = c % 3;
            std::array<int, 3> x{i + (d & 1), j + ((d >> 1) & 1), k + ((d >> 2) & 1)};
            x[a] = std::array<int, 3>{i, j, k}[a];
            if (torus)
              for (int b = 0; b < 3; ++b) x[b] = detail::wrap(x[b], L[b]);
            p(c, x[0], x[1], x[2]) += s(d * NC + c, i, j, k);
          }
  p.apply_mask();
  return p;
}

/// Pi: average of the four cells sharing an edge, masked on a micro-hard grid.
template <int NC>
Field<Placement::edge, NC> cell_to_edges(const Field<Placement::cell, NC>& p) {
  static_assert(NC % 3 == 0);
  Field<Placement::edge, NC> out(p.grid());
  const auto& n = p.grid().n;
  const bool torus = p.grid().torus();
  detail::assign_valid(out, [&](int c, int i, int j, int k) {
    const int a = c % 3, b = (a + 1) % 3, e = (a + 2) % 3;
    double s = 0.0;
    for (int db = -1; db <= 0; ++db)
      for (int de = -1; de <= 0; ++de) {
        std::array<int, 3> x{i, j, k};
        x[b] += db;
        x[e] += de;
        if (!torus && (x[b] < 0 || x[e] < 0 || x[b] >= n[b] || x[e] >= n[e])) continue;
        s += p.get(c, x[0], x[1], x[2]);
      }
    return 0.25 * s;
  });
  out.apply_mask();
  return out;
}

/// Pi^T: each cell collects a quarter of its four parallel edges per component.
template <int NC>
Field<Placement::cell, NC> edges_to_cell(const Field<Placement::edge, NC>& q) {
  static_assert(NC % 3 == 0);
  Field<Placement::cell, NC> out(q.grid());
  detail::assign_valid(out, [&](int c, int i, int j, int k) {
    const int a = c % 3, b = (a + 1) % 3, e = (a + 2) % 3;
    double s = 0.0;
    for (int db = 0; db <= 1; ++db)
      for (int de = 0; de <= 1; ++de) {
        std::array<int, 3> x{i, j, k};
        x[b] += db;
        x[e] += de;
        s += q.get(c, x[0], x[1], x[2]);
      }
    return 0.25 * s;
  });
  return out;
}

}  // namespace cvh
