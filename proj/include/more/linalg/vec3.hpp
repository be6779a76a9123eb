#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <ostream>

namespace more {

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  constexpr double operator[](std::size_t i) const { return i == 0 ? x : (i == 1 ? y : z); }
  constexpr double& operator[](std::size_t i) { return i == 0 ? x : (i == 1 ? y : z); }

  constexpr Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  constexpr Vec3& operator-=(const Vec3& o) {
    x -= o.x;
    y -= o.y;
    z -= o.z;
    return *this;
  }
  constexpr Vec3& operator*=(double s) {
    x *= s;
    y *= s;
    z *= s;
    return *this;
  }

  friend constexpr Vec3 operator+(Vec3 a, const Vec3& b) { return a += b; }
  friend constexpr Vec3 operator-(Vec3 a, const Vec3& b) { return a -= b; }
  friend constexpr Vec3 operator-(const Vec3& a) { return {-a.x, -a.y, -a.z}; }
  friend constexpr Vec3 operator*(Vec3 a, double s) { return a *= s; }
  friend constexpr Vec3 operator*(double s, Vec3 a) { return a *= s; }
  friend constexpr Vec3 operator/(const Vec3& a, double s) { return {a.x / s, a.y / s, a.z / s}; }
  friend constexpr bool operator==(const Vec3&, const Vec3&) = default;

  friend std::ostream& operator<<(std::ostream& os, const Vec3& v) {
    return os << '(' << v.x << ", " << v.y << ", " << v.z << ')';
  }
};

constexpr double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

constexpr Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }
constexpr double squared_norm(const Vec3& v) { return dot(v, v); }

// Returns the zero vector for zero input.
inline Vec3 normalized(const Vec3& v) {
  const double n = norm(v);
  return n > 0.0 ? v / n : Vec3{};
}

inline bool is_finite(const Vec3& v) {
  return std::isfinite(v.x) && std::isfinite(v.y) && std::isfinite(v.z);
}

// Angle between two vectors in radians; 0 if either is zero.
inline double angle_between(const Vec3& a, const Vec3& b) {
  // atan2 form stays accurate near 0 and pi where acos loses precision.
  return std::atan2(norm(cross(a, b)), dot(a, b));
}

/// Row-major 3x3 matrix.
struct Mat3 {
  std::array<double, 9> m{};

  constexpr double operator()(std::size_t r, std::size_t c) const { return m[r * 3 + c]; }
  constexpr double& operator()(std::size_t r, std::size_t c) { return m[r * 3 + c]; }

  static constexpr Mat3 identity() { return diag(1.0, 1.0, 1.0); }
  static constexpr Mat3 zero() { return Mat3{}; }
  static constexpr Mat3 diag(double a, double b, double c) {
    Mat3 r;
    r(0, 0) = a;
    r(1, 1) = b;
    r(2, 2) = c;
    return r;
  }
  static constexpr Mat3 from_columns(const Vec3& c0, const Vec3& c1, const Vec3& c2) {
    Mat3 r;
    for (std::size_t i = 0; i < 3; ++i) {
      r(i, 0) = c0[i];
      r(i, 1) = c1[i];
      r(i, 2) = c2[i];
    }
    return r;
  }
  static constexpr Mat3 from_rows(const Vec3& r0, const Vec3& r1, const Vec3& r2) {
    return from_columns(r0, r1, r2).transposed();
  }
  // a * b^T
  static constexpr Mat3 outer(const Vec3& a, const Vec3& b) {
    Mat3 r;
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) r(i, j) = a[i] * b[j];
    return r;
  }

  constexpr Vec3 col(std::size_t c) const { return {(*this)(0, c), (*this)(1, c), (*this)(2, c)}; }
  constexpr Vec3 row(std::size_t r) const { return {(*this)(r, 0), (*this)(r, 1), (*this)(r, 2)}; }
  constexpr void set_col(std::size_t c, const Vec3& v) {
    for (std::size_t i = 0; i < 3; ++i) (*this)(i, c) = v[i];
  }

  constexpr Mat3 transposed() const {
    Mat3 r;
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) r(j, i) = (*this)(i, j);
    return r;
  }

  constexpr double determinant() const {
    const auto& a = *this;
    return a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) -
           a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0)) +
           a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0));
  }

  constexpr double trace() const { return m[0] + m[4] + m[8]; }

  constexpr Mat3& operator+=(const Mat3& o) {
    for (std::size_t i = 0; i < 9; ++i) m[i] += o.m[i];
    return *this;
  }
  constexpr Mat3& operator-=(const Mat3& o) {
    for (std::size_t i = 0; i < 9; ++i) m[i] -= o.m[i];
    return *this;
  }
  constexpr Mat3& operator*=(double s) {
    for (auto& v : m) v *= s;
    return *this;
  }

  friend constexpr Mat3 operator+(Mat3 a, const Mat3& b) { return a += b; }
  friend constexpr Mat3 operator-(Mat3 a, const Mat3& b) { return a -= b; }
  friend constexpr Mat3 operator*(Mat3 a, double s) { return a *= s; }
  friend constexpr Mat3 operator*(double s, Mat3 a) { return a *= s; }

  friend constexpr Mat3 operator*(const Mat3& a, const Mat3& b) {
    Mat3 r;
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < 3; ++k) s += a(i, k) * b(k, j);
        r(i, j) = s;
      }
    return r;
  }

  friend constexpr Vec3 operator*(const Mat3& a, const Vec3& v) {
    return {a(0, 0) * v.x + a(0, 1) * v.y + a(0, 2) * v.z,
            a(1, 0) * v.x + a(1, 1) * v.y + a(1, 2) * v.z,
            a(2, 0) * v.x + a(2, 1) * v.y + a(2, 2) * v.z};
  }

  friend constexpr bool operator==(const Mat3&, const Mat3&) = default;
};

// Largest absolute entry.
inline double max_abs(const Mat3& a) {
  double r = 0.0;
  for (double v : a.m) r = std::max(r, std::abs(v));
  return r;
}

inline bool is_finite(const Mat3& a) {
  for (double v : a.m)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace more
