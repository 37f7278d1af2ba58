#pragma once

// Pointwise 3x3 tensor algebra and isotropic elasticity.
//
// Storage is row-major: entry (r, c) lives at index 3*r + c. Symmetric tensors
// are exchanged with Eigen through the Mandel vector
//   [e00, e11, e22, sqrt2*e12, sqrt2*e02, sqrt2*e01],
// which turns the Frobenius product of symmetric tensors into the Euclidean one.

#include <algorithm>
#include <array>
#include <cmath>
#include <ostream>

#include <Eigen/Dense>

#include "cvh/error.hpp"

namespace cvh {

class Tensor3 {
 public:
  constexpr Tensor3() = default;
  constexpr explicit Tensor3(const std::array<double, 9>& entries) : e_(entries) {}

  static constexpr Tensor3 zero() { return Tensor3{}; }
  static constexpr Tensor3 identity() {
    return Tensor3{std::array<double, 9>{1, 0, 0, 0, 1, 0, 0, 0, 1}};
  }
  /// e_i ⊗ e_j.
  static constexpr Tensor3 unit(int i, int j) {
    Tensor3 t;
    t.e_[static_cast<std::size_t>(3 * i + j)] = 1.0;
    return t;
  }

  constexpr double& operator()(int r, int c) { return e_[static_cast<std::size_t>(3 * r + c)]; }
  constexpr double operator()(int r, int c) const { return e_[static_cast<std::size_t>(3 * r + c)]; }
  constexpr double& operator[](std::size_t i) { return e_[i]; }
  constexpr double operator[](std::size_t i) const { return e_[i]; }
  constexpr const std::array<double, 9>& entries() const { return e_; }

  constexpr Tensor3 transpose() const {
    Tensor3 t;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) t(r, c) = (*this)(c, r);
    return t;
  }

  constexpr Tensor3& operator+=(const Tensor3& o) {
    for (std::size_t i = 0; i < 9; ++i) e_[i] += o.e_[i];
    return *this;
  }
  constexpr Tensor3& operator-=(const Tensor3& o) {
    for (std::size_t i = 0; i < 9; ++i) e_[i] -= o.e_[i];
    return *this;
  }
  constexpr Tensor3& operator*=(double s) {
    for (double& v : e_) v *= s;
    return *this;
  }

  friend constexpr Tensor3 operator+(Tensor3 a, const Tensor3& b) { return a += b; }
  friend constexpr Tensor3 operator-(Tensor3 a, const Tensor3& b) { return a -= b; }
  friend constexpr Tensor3 operator-(Tensor3 a) { return a *= -1.0; }
  friend constexpr Tensor3 operator*(double s, Tensor3 a) { return a *= s; }
  friend constexpr Tensor3 operator*(Tensor3 a, double s) { return a *= s; }
  friend constexpr Tensor3 operator/(Tensor3 a, double s) { return a *= 1.0 / s; }
  friend constexpr bool operator==(const Tensor3&, const Tensor3&) = default;

  friend std::ostream& operator<<(std::ostream& os, const Tensor3& t) {
    os << '[';
    for (std::size_t i = 0; i < 9; ++i) os << (i ? (i % 3 ? ", " : "; ") : "") << t.e_[i];
    return os << ']';
  }

 private:
  std::array<double, 9> e_{};
};

constexpr double trace(const Tensor3& t) { return t(0, 0) + t(1, 1) + t(2, 2); }
constexpr Tensor3 sym(const Tensor3& t) { return 0.5 * (t + t.transpose()); }
constexpr Tensor3 skew(const Tensor3& t) { return t - sym(t); }
constexpr Tensor3 dev(const Tensor3& t) { return t - (trace(t) / 3.0) * Tensor3::identity(); }

constexpr double frob_inner(const Tensor3& a, const Tensor3& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < 9; ++i) s += a[i] * b[i];
  return s;
}
inline double frob_norm(const Tensor3& a) { return std::sqrt(frob_inner(a, a)); }

/// Frobenius norm of skew(t) relative to max(1, |t|).
inline double asymmetry(const Tensor3& t) { return frob_norm(skew(t)) / std::max(1.0, frob_norm(t)); }

using Mandel6 = Eigen::Matrix<double, 6, 1>;
using Stiffness = Eigen::Matrix<double, 6, 6>;

inline constexpr double kSqrt2 = 1.41421356237309504880;

/// Mandel vector of sym(t).
inline Mandel6 to_mandel(const Tensor3& t) {
  Mandel6 v;
  v << t(0, 0), t(1, 1), t(2, 2), kSqrt2 * 0.5 * (t(1, 2) + t(2, 1)), kSqrt2 * 0.5 * (t(0, 2) + t(2, 0)),
      kSqrt2 * 0.5 * (t(0, 1) + t(1, 0));
  return v;
}

inline Tensor3 from_mandel(const Mandel6& v) {
  Tensor3 t;
  t(0, 0) = v[0];
  t(1, 1) = v[1];
  t(2, 2) = v[2];
  t(1, 2) = t(2, 1) = v[3] / kSqrt2;
  t(0, 2) = t(2, 0) = v[4] / kSqrt2;
  t(0, 1) = t(1, 0) = v[5] / kSqrt2;
  return t;
}

/// Isotropic elasticity tensor C eps = lambda tr(eps) I + 2 mu eps.
struct IsotropicElasticity {
  double lambda = 0.0;
  double mu = 1.0;

  /// Smallest eigenvalue of C on symmetric tensors.
  double min_eigenvalue() const { return std::min(2.0 * mu, 3.0 * lambda + 2.0 * mu); }
  bool positive_definite() const { return mu > 0.0 && 3.0 * lambda + 2.0 * mu > 0.0; }

  void validate() const {
    if (!positive_definite())
      throw PreconditionError("isotropic elasticity must satisfy mu > 0 and 3 lambda + 2 mu > 0");
  }

  Tensor3 apply(const Tensor3& eps) const {
    if (asymmetry(eps) > 1e-12) throw PreconditionError("apply_elasticity: strain is not symmetric");
    return lambda * trace(eps) * Tensor3::identity() + 2.0 * mu * eps;
  }

  /// C^{-1} sigma = sigma/(2 mu) + lambda_inv tr(sigma) I with lambda_inv = -lambda/(2 mu (3 lambda + 2 mu)).
  Tensor3 apply_inverse(const Tensor3& sigma) const {
    if (asymmetry(sigma) > 1e-12) throw PreconditionError("apply_inverse: stress is not symmetric");
    const double lambda_inv = -lambda / (2.0 * mu * (3.0 * lambda + 2.0 * mu));
    return sigma / (2.0 * mu) + lambda_inv * trace(sigma) * Tensor3::identity();
  }

  Stiffness mandel() const {
    Stiffness d = Stiffness::Zero();
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) d(i, j) = lambda;
      d(i, i) += 2.0 * mu;
      d(3 + i, 3 + i) = 2.0 * mu;
    }
    return d;
  }
};

inline Tensor3 apply_elasticity(const IsotropicElasticity& c, const Tensor3& eps) { return c.apply(eps); }

/// C eps for a general stiffness in Mandel form.
inline Tensor3 apply_stiffness(const Stiffness& d, const Tensor3& eps) { return from_mandel(d * to_mandel(eps)); }

}  // namespace cvh
