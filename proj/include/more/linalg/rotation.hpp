#pragma once

#include <cmath>
#include <numbers>

#include "more/error.hpp"
#include "more/linalg/vec3.hpp"

namespace more {

/// Unit quaternion rotation stored with w >= 0.
///
/// Every constructor path renormalizes and canonicalizes the sign, so two
/// rotations that are equal as matrices compare equal component-wise up to
/// rounding.
class Rotation {
 public:
  Rotation() = default;

  // Normalizes the input; throws InvalidArgument on a zero or non-finite quaternion.
  Rotation(double w, double x, double y, double z) : w_(w), x_(x), y_(y), z_(z) { normalize(); }

  static Rotation identity() { return {}; }

  // Right-handed rotation by `radians` about `axis` (need not be unit length).
  static Rotation from_axis_angle(const Vec3& axis, double radians) {
    const Vec3 a = normalized(axis);
    if (squared_norm(a) == 0.0) return identity();
    const double h = 0.5 * radians;
    const double s = std::sin(h);
    return {std::cos(h), a.x * s, a.y * s, a.z * s};
  }

  // Rotation vector (axis * angle) to quaternion.
  static Rotation exp(const Vec3& omega) { return from_axis_angle(omega, norm(omega)); }

  // Expects a proper rotation matrix; uses Shepperd's branch selection for accuracy.
  static Rotation from_matrix(const Mat3& r) {
    const double tr = r.trace();
    double w, x, y, z;
    if (tr >= r(0, 0) && tr >= r(1, 1) && tr >= r(2, 2)) {
      const double s = 2.0 * std::sqrt(1.0 + tr);
      w = 0.25 * s;
      x = (r(2, 1) - r(1, 2)) / s;
      y = (r(0, 2) - r(2, 0)) / s;
      z = (r(1, 0) - r(0, 1)) / s;
    } else if (r(0, 0) >= r(1, 1) && r(0, 0) >= r(2, 2)) {
      const double s = 2.0 * std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2));
      w = (r(2, 1) - r(1, 2)) / s;
      x = 0.25 * s;
      y = (r(0, 1) + r(1, 0)) / s;
      z = (r(0, 2) + r(2, 0)) / s;
    } else if (r(1, 1) >= r(2, 2)) {
      const double s = 2.0 * std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2));
      w = (r(0, 2) - r(2, 0)) / s;
      x = (r(0, 1) + r(1, 0)) / s;
      y = 0.25 * s;
      z = (r(1, 2) + r(2, 1)) / s;
    } else {
      const double s = 2.0 * std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1));
      w = (r(1, 0) - r(0, 1)) / s;
      x = (r(0, 2) + r(2, 0)) / s;
      y = (r(1, 2) + r(2, 1)) / s;
      z = 0.25 * s;
    }
    return {w, x, y, z};
  }

  double w() const { return w_; }
  double x() const { return x_; }
  double y() const { return y_; }
  double z() const { return z_; }

  Mat3 matrix() const {
    const double ww = w_ * w_, xx = x_ * x_, yy = y_ * y_, zz = z_ * z_;
    const double xy = x_ * y_, xz = x_ * z_, yz = y_ * z_;
    const double wx = w_ * x_, wy = w_ * y_, wz = w_ * z_;
    Mat3 r;
    r(0, 0) = ww + xx - yy - zz;
    r(0, 1) = 2.0 * (xy - wz);
    r(0, 2) = 2.0 * (xz + wy);
    r(1, 0) = 2.0 * (xy + wz);
    r(1, 1) = ww - xx + yy - zz;
    r(1, 2) = 2.0 * (yz - wx);
    r(2, 0) = 2.0 * (xz - wy);
    r(2, 1) = 2.0 * (yz + wx);
    r(2, 2) = ww - xx - yy + zz;
    return r;
  }

  Vec3 rotate(const Vec3& v) const {
    // v + 2 q_v x (q_v x v + w v)
    const Vec3 q{x_, y_, z_};
    const Vec3 t = 2.0 * cross(q, v);
    return v + w_ * t + cross(q, t);
  }

  Rotation inverse() const {
    Rotation r;
    r.w_ = w_;
    r.x_ = -x_;
    r.y_ = -y_;
    r.z_ = -z_;
    return r;
  }

  // Geodesic angle in [0, pi].
  double angle() const { return 2.0 * std::atan2(std::sqrt(x_ * x_ + y_ * y_ + z_ * z_), w_); }

  // Rotation vector (axis * angle), inverse of exp.
  Vec3 log() const {
    const Vec3 v{x_, y_, z_};
    const double n = norm(v);
    if (n == 0.0) return {};
    return v * (angle() / n);
  }

  friend Rotation operator*(const Rotation& a, const Rotation& b) {
    return {a.w_ * b.w_ - a.x_ * b.x_ - a.y_ * b.y_ - a.z_ * b.z_,
            a.w_ * b.x_ + a.x_ * b.w_ + a.y_ * b.z_ - a.z_ * b.y_,
            a.w_ * b.y_ - a.x_ * b.z_ + a.y_ * b.w_ + a.z_ * b.x_,
            a.w_ * b.z_ + a.x_ * b.y_ - a.y_ * b.x_ + a.z_ * b.w_};
  }

 private:
  void normalize() {
    const double n = std::sqrt(w_ * w_ + x_ * x_ + y_ * y_ + z_ * z_);
    if (!(n > 0.0) || !std::isfinite(n)) throw InvalidArgument("rotation: zero or non-finite quaternion");
    const double s = w_ < 0.0 ? -1.0 / n : 1.0 / n;
    w_ *= s;
    x_ *= s;
    y_ *= s;
    z_ *= s;
  }

  double w_ = 1.0;
  double x_ = 0.0;
  double y_ = 0.0;
  double z_ = 0.0;
};

// Angle of a * b^-1, i.e. the geodesic distance between two rotations.
inline double rotation_distance(const Rotation& a, const Rotation& b) { return (a * b.inverse()).angle(); }

inline double deg2rad(double d) { return d * std::numbers::pi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / std::numbers::pi; }

/// Similarity transform p -> scale * R p + t.
struct Sim3 {
  double scale = 1.0;
  Rotation rotation;
  Vec3 translation;

  static Sim3 identity() { return {}; }

  Vec3 apply(const Vec3& p) const { return scale * rotation.rotate(p) + translation; }
  Vec3 operator()(const Vec3& p) const { return apply(p); }

  Sim3 inverse() const {
    const Rotation rinv = rotation.inverse();
    const double sinv = 1.0 / scale;
    return {sinv, rinv, -sinv * rinv.rotate(translation)};
  }

  // (a * b)(p) == a(b(p))
  friend Sim3 operator*(const Sim3& a, const Sim3& b) {
    return {a.scale * b.scale, a.rotation * b.rotation, a.scale * a.rotation.rotate(b.translation) + a.translation};
  }
};

/// Rigid camera-to-world pose.
struct Pose {
  Rotation rotation;
  Vec3 translation;

  Vec3 apply(const Vec3& p) const { return rotation.rotate(p) + translation; }

  Pose inverse() const {
    const Rotation rinv = rotation.inverse();
    return {rinv, -rinv.rotate(translation)};
  }

  friend Pose operator*(const Pose& a, const Pose& b) {
    return {a.rotation * b.rotation, a.rotation.rotate(b.translation) + a.translation};
  }
};

// Applies a similarity to a pose: rotation composes, the camera center moves.
inline Pose transform_pose(const Sim3& s, const Pose& p) { return {s.rotation * p.rotation, s.apply(p.translation)}; }

}  // namespace more
