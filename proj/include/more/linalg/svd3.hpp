#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "more/linalg/vec3.hpp"

namespace more {

struct Svd3 {
  Mat3 u;
  Vec3 s;  // descending, nonnegative
  Mat3 v;
};

namespace detail {

// Any unit vector orthogonal to unit vector `a`.
inline Vec3 any_orthogonal(const Vec3& a) {
  const Vec3 trial = std::abs(a.x) < 0.9 ? Vec3{1.0, 0.0, 0.0} : Vec3{0.0, 1.0, 0.0};
  return normalized(cross(a, trial));
}

}  // namespace detail

/// Singular value decomposition m = u * diag(s) * v^T of a 3x3 matrix.
///
/// One-sided (Hestenes) cyclic Jacobi: plane rotations are applied to the
/// columns of m until they are mutually orthogonal, which diagonalizes m^T m
/// implicitly without ever forming it. The accumulated rotations give v, the
/// column norms give s, and the normalized columns give u. Rank-deficient
/// inputs yield zero singular values; the matching columns of u are completed
/// to an orthonormal basis.
inline Svd3 svd3(const Mat3& m) {
  Mat3 a = m;
  Mat3 v = Mat3::identity();
  constexpr std::array<std::array<int, 2>, 3> pairs{{{0, 1}, {0, 2}, {1, 2}}};
  constexpr double tol = 1e-15;

  for (int sweep = 0; sweep < 60; ++sweep) {
    bool rotated = false;
    for (const auto& [p, q] : pairs) {
      const Vec3 ap = a.col(p), aq = a.col(q);
      const double alpha = dot(ap, ap);
      const double beta = dot(aq, aq);
      const double gamma = dot(ap, aq);
      if (gamma == 0.0 || std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
      rotated = true;
      const double zeta = (beta - alpha) / (2.0 * gamma);
      const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
      const double c = 1.0 / std::sqrt(1.0 + t * t);
      const double s = c * t;
      for (int i = 0; i < 3; ++i) {
        const double xp = a(i, p), xq = a(i, q);
        a(i, p) = c * xp - s * xq;
        a(i, q) = s * xp + c * xq;
        const double vp = v(i, p), vq = v(i, q);
        v(i, p) = c * vp - s * vq;
        v(i, q) = s * vp + c * vq;
      }
    }
    if (!rotated) break;
  }

  std::array<double, 3> sigma{norm(a.col(0)), norm(a.col(1)), norm(a.col(2))};
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int i, int j) { return sigma[i] > sigma[j]; });

  Svd3 out;
  std::array<Vec3, 3> cols;
  for (int k = 0; k < 3; ++k) {
    out.s[k] = sigma[order[k]];
    out.v.set_col(k, v.col(order[k]));
    cols[k] = a.col(order[k]);
  }

  const double s0 = out.s[0];
  const Vec3 u0 = s0 > 0.0 ? cols[0] / s0 : Vec3{1.0, 0.0, 0.0};
  const Vec3 r1 = cols[1] - dot(u0, cols[1]) * u0;
  const double r1n = norm(r1);
  const Vec3 u1 = (r1n > 1e-14 * s0 && r1n > 0.0) ? r1 / r1n : detail::any_orthogonal(u0);
  Vec3 u2 = cross(u0, u1);
  if (dot(u2, cols[2]) < 0.0) u2 = -u2;
  out.u = Mat3::from_columns(u0, u1, u2);
  return out;
}

}  // namespace more
