#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "more/error.hpp"
#include "more/linalg/kdtree.hpp"
#include "more/linalg/rotation.hpp"
#include "more/linalg/svd3.hpp"

namespace more::eval {

/// Closed-form least-squares similarity (Umeyama 1991) mapping src onto dst.
///
/// Minimizes sum ||s R src_i + t - dst_i||^2. A reflection in the SVD of the
/// cross-covariance is corrected by flipping the sign of the smallest
/// singular direction so R is always proper. With with_scale = false, s = 1.
inline Sim3 umeyama(std::span<const Vec3> src, std::span<const Vec3> dst, bool with_scale = true) {
  if (src.size() != dst.size()) throw InvalidArgument("umeyama: point counts differ");
  if (src.size() < 3) throw InvalidArgument("umeyama: need at least 3 points");
  const double n = static_cast<double>(src.size());

  Vec3 mu_s, mu_d;
  for (std::size_t i = 0; i < src.size(); ++i) {
    mu_s += src[i];
    mu_d += dst[i];
  }
  mu_s = mu_s / n;
  mu_d = mu_d / n;

  Mat3 cov;
  double var_s = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const Vec3 a = src[i] - mu_s;
    cov += Mat3::outer(dst[i] - mu_d, a);
    var_s += squared_norm(a);
  }
  cov *= 1.0 / n;
  var_s /= n;

  const Svd3 svd = svd3(cov);
  // Rank < 2 leaves the rotation undetermined (collinear or coincident points).
  if (!(svd.s[1] > 1e-12 * svd.s[0]) || !(var_s > 0.0)) throw DegenerateError("degenerate configuration");

  double d3 = 1.0;
  if (svd.u.determinant() * svd.v.determinant() < 0.0) d3 = -1.0;
  const Mat3 r = svd.u * Mat3::diag(1.0, 1.0, d3) * svd.v.transposed();
  const double scale = with_scale ? (svd.s[0] + svd.s[1] + d3 * svd.s[2]) / var_s : 1.0;
  if (!(scale > 0.0)) throw DegenerateError("degenerate configuration");

  Sim3 out;
  out.scale = scale;
  out.rotation = Rotation::from_matrix(r);
  out.translation = mu_d - scale * (r * mu_s);
  return out;
}

// Root-mean-square of ||T(src_i) - dst_i||.
inline double alignment_rms(const Sim3& t, std::span<const Vec3> src, std::span<const Vec3> dst) {
  double s = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) s += squared_norm(t.apply(src[i]) - dst[i]);
  return std::sqrt(s / static_cast<double>(src.size()));
}

struct IcpOptions {
  int max_iters = 50;
  double tol = 1e-6;
  bool with_scale = true;
};

struct IcpResult {
  Sim3 transform;
  int iterations = 0;
  // RMS nearest-neighbour distance for the initial transform and after each accepted iteration.
  std::vector<double> rms_history;

  double final_rms() const { return rms_history.back(); }
};

namespace detail {

inline double correspond(const KdTree3& tree, const Sim3& t, std::span<const Vec3> src, std::vector<Vec3>& matched) {
  double s = 0.0;
  matched.resize(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    const Neighbor nb = tree.nearest(t.apply(src[i]));
    matched[i] = tree.point(nb.index);
    s += nb.squared_distance;
  }
  return std::sqrt(s / static_cast<double>(src.size()));
}

}  // namespace detail

/// Point-to-point ICP starting from `init`.
///
/// With `with_scale` false the scale of `init` is kept and only the rigid part
/// is refined.
/// Each iteration refits the transform to the current nearest-neighbour
/// correspondences with umeyama, then recomputes correspondences. Both steps
/// can only lower the summed squared distance, so rms_history is
/// non-increasing. Stops when the RMS improves by less than `tol`.
inline IcpResult icp(std::span<const Vec3> src, std::span<const Vec3> dst, const Sim3& init, IcpOptions opt = {}) {
  if (src.empty() || dst.empty()) throw InvalidArgument("icp: empty point set");
  const KdTree3 tree(dst);
  IcpResult res;
  res.transform = init;
  std::vector<Vec3> matched, next_matched;
  double rms = detail::correspond(tree, init, src, matched);
  res.rms_history.push_back(rms);
  // Without scale estimation the initial scale is held fixed, so every
  // candidate stays in the family the start point came from.
  std::vector<Vec3> scaled;
  if (!opt.with_scale)
    for (const auto& p : src) scaled.push_back(init.scale * p);
  for (int it = 1; it <= opt.max_iters; ++it) {
    Sim3 next;
    if (opt.with_scale) {
      next = umeyama(src, matched, true);
    } else {
      next = umeyama(scaled, matched, false);
      next.scale = init.scale;
    }
    const double next_rms = detail::correspond(tree, next, src, next_matched);
    res.iterations = it;
    res.transform = next;
    res.rms_history.push_back(next_rms);
    matched.swap(next_matched);
    if (rms - next_rms < opt.tol) break;
    rms = next_rms;
  }
  return res;
}

inline IcpResult icp(std::span<const Vec3> src, std::span<const Vec3> dst, const Sim3& init, int max_iters,
                     double tol = 1e-6) {
  return icp(src, dst, init, IcpOptions{max_iters, tol, true});
}

}  // namespace more::eval
