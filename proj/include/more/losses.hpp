#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "more/depthprior.hpp"
#include "more/error.hpp"
#include "more/maps.hpp"
#include "more/numeric.hpp"

namespace more::losses {

enum class Reduction { sum, mean };

struct LossTerm {
  double value = 0.0;
  std::size_t count = 0;     // contributing pixels (or pixel pairs)
  std::size_t warnings = 0;  // e.g. an empty supervision mask
};

// Ground-truth depths below this are excluded from the scale fit and L_pts_local.
inline constexpr double kMinDepth = 1e-6;
// arccos derivative is evaluated on [-1 + eps, 1 - eps].
inline constexpr double kAcosClamp = 1e-12;

// ---------------------------------------------------------------------------
// Optimal scale and local point loss
// ---------------------------------------------------------------------------

/// Location of the breakpoint that determines the optimal scale.
struct ScaleFit {
  double scale = 1.0;
  std::size_t pixel_count = 0;
  std::size_t frame = 0;
  std::size_t pixel = 0;
  int axis = 0;
};

namespace detail {

inline bool usable_pair(const PointMap& pred, const PointMap& gt, std::size_t f) {
  return pred.valid(f) && gt.valid(f) && gt[f].z > kMinDepth && is_finite(pred[f]) && is_finite(gt[f]);
}

inline void check_sequences(std::span<const PointMap> pred, std::span<const PointMap> gt) {
  if (pred.size() != gt.size() || pred.empty()) throw InvalidArgument("optimal scale: sequence length mismatch");
  for (std::size_t i = 0; i < pred.size(); ++i) require_same_shape(pred[i], gt[i], "optimal scale");
}

}  // namespace detail

/// Exact argmin_s sum_{i,j} (1/z_ij) || s p_hat_ij - p_ij ||_1 over a sequence.
///
/// The objective is convex piecewise-linear with one breakpoint p_c / p_hat_c
/// per nonzero predicted coordinate, weighted |p_hat_c| / z; the minimizer is
/// their lower weighted median.
inline ScaleFit fit_optimal_scale(std::span<const PointMap> pred, std::span<const PointMap> gt) {
  detail::check_sequences(pred, gt);
  struct Tag {
    std::size_t frame, pixel;
    int axis;
  };
  std::vector<WeightedSample> samples;
  std::vector<Tag> tags;
  std::size_t pixels = 0;
  for (std::size_t n = 0; n < pred.size(); ++n) {
    for (std::size_t f = 0; f < gt[n].size(); ++f) {
      if (!detail::usable_pair(pred[n], gt[n], f)) continue;
      ++pixels;
      const double inv_z = 1.0 / gt[n][f].z;
      for (int c = 0; c < 3; ++c) {
        const double ph = pred[n][f][c];
        if (ph == 0.0) continue;
        samples.push_back({gt[n][f][c] / ph, std::abs(ph) * inv_z});
        tags.push_back({n, f, c});
      }
    }
  }
  if (pixels == 0) throw InvalidArgument("optimal scale: no valid pixels");
  if (samples.empty()) throw DegenerateError("degenerate prediction");
  const auto wm = weighted_median(samples);
  return {wm.value, pixels, tags[wm.index].frame, tags[wm.index].pixel, tags[wm.index].axis};
}

inline double solve_optimal_scale(std::span<const PointMap> pred, std::span<const PointMap> gt) {
  return fit_optimal_scale(pred, gt).scale;
}

inline double solve_optimal_scale(const PointMap& pred, const PointMap& gt) {
  return solve_optimal_scale(std::span(&pred, 1), std::span(&gt, 1));
}

/// sum (1/z) || s p_hat - p ||_1 at a given scale, accumulated row-major per
/// frame with pairwise summation.
inline LossTerm scale_objective(std::span<const PointMap> pred, std::span<const PointMap> gt, double s) {
  detail::check_sequences(pred, gt);
  std::vector<double> terms;
  for (std::size_t n = 0; n < pred.size(); ++n)
    for (std::size_t f = 0; f < gt[n].size(); ++f) {
      if (!detail::usable_pair(pred[n], gt[n], f)) continue;
      const Vec3 r = s * pred[n][f] - gt[n][f];
      terms.push_back((std::abs(r.x) + std::abs(r.y) + std::abs(r.z)) / gt[n][f].z);
    }
  return {pairwise_sum(terms), terms.size(), 0};
}

inline LossTerm local_point_loss(std::span<const PointMap> pred, std::span<const PointMap> gt,
                                 Reduction reduction = Reduction::sum) {
  const double s = solve_optimal_scale(pred, gt);
  LossTerm t = scale_objective(pred, gt, s);
  if (reduction == Reduction::mean) t.value /= static_cast<double>(t.count);
  return t;
}

inline LossTerm local_point_loss(const PointMap& pred, const PointMap& gt, Reduction reduction = Reduction::sum) {
  return local_point_loss(std::span(&pred, 1), std::span(&gt, 1), reduction);
}

/// Gradient of local_point_loss with respect to every predicted point.
///
/// Locally the optimal scale equals p_m / p_hat_m for the median breakpoint m,
/// so the loss is differentiable wherever no residual is exactly zero (other
/// than m's) and the median index does not switch.
inline std::vector<std::vector<Vec3>> local_point_loss_grad(std::span<const PointMap> pred,
                                                            std::span<const PointMap> gt,
                                                            Reduction reduction = Reduction::sum) {
  const ScaleFit fit = fit_optimal_scale(pred, gt);
  const double s = fit.scale;
  const double norm = reduction == Reduction::mean ? 1.0 / static_cast<double>(fit.pixel_count) : 1.0;
  std::vector<std::vector<Vec3>> grad(pred.size());
  double dscale = 0.0;  // dL/ds at fixed points
  for (std::size_t n = 0; n < pred.size(); ++n) {
    grad[n].assign(pred[n].size(), Vec3{});
    for (std::size_t f = 0; f < gt[n].size(); ++f) {
      if (!detail::usable_pair(pred[n], gt[n], f)) continue;
      const double inv_z = norm / gt[n][f].z;
      for (int c = 0; c < 3; ++c) {
        if (n == fit.frame && f == fit.pixel && c == fit.axis) continue;
        const double r = s * pred[n][f][c] - gt[n][f][c];
        const double sg = (r > 0.0) - (r < 0.0);
        grad[n][f][c] += inv_z * sg * s;
        dscale += inv_z * sg * pred[n][f][c];
      }
    }
  }
  // s = p_m / p_hat_m  =>  ds/dp_hat_m = -s / p_hat_m
  grad[fit.frame][fit.pixel][fit.axis] += dscale * (-s / pred[fit.frame][fit.pixel][fit.axis]);
  return grad;
}

// ---------------------------------------------------------------------------
// Normals
// ---------------------------------------------------------------------------

/// Normal at each pixel from the cross product of the forward grid differences
/// (right neighbour) x (down neighbour), normalized. With `orient` set, normals
/// are flipped to face the camera (nonpositive z). The last row and column,
/// pixels with an invalid neighbour and degenerate cross products are invalid.
inline NormalMap grid_normals(const PointMap& pm, bool orient = true) {
  if (pm.height() < 2 || pm.width() < 2) throw InvalidArgument("grid_normals: need H, W >= 2");
  NormalMap out(pm.height(), pm.width());
  for (std::size_t i = 0; i + 1 < pm.height(); ++i)
    for (std::size_t j = 0; j + 1 < pm.width(); ++j) {
      if (!pm.valid(i, j) || !pm.valid(i, j + 1) || !pm.valid(i + 1, j)) continue;
      const Vec3 c = cross(pm(i, j + 1) - pm(i, j), pm(i + 1, j) - pm(i, j));
      const double len = norm(c);
      if (!(len > 0.0) || !std::isfinite(len)) continue;
      Vec3 n = c / len;
      if (orient && n.z > 0.0) n = -n;
      out.set(i, j, n);
    }
  return out;
}

namespace detail {

// d/dx acos(x), with x kept strictly inside (-1, 1).
inline double acos_grad(double x) {
  const double xc = std::clamp(x, -1.0 + kAcosClamp, 1.0 - kAcosClamp);
  return -1.0 / std::sqrt(1.0 - xc * xc);
}

}  // namespace detail

/// Sum (or mean) over jointly valid pixels of the angle between normals, radians.
/// For unit normals this is arccos(n_hat . n), evaluated in atan2 form so that
/// identical normals give exactly zero.
inline LossTerm normal_angle_loss(const NormalMap& pred, const NormalMap& gt, Reduction reduction = Reduction::sum) {
  require_same_shape(pred, gt, "point_normal_loss");
  std::vector<double> terms;
  for (std::size_t f = 0; f < gt.size(); ++f)
    if (pred.valid(f) && gt.valid(f)) terms.push_back(angle_between(pred[f], gt[f]));
  LossTerm t{pairwise_sum(terms), terms.size(), 0};
  if (reduction == Reduction::mean && t.count > 0) t.value /= static_cast<double>(t.count);
  return t;
}

/// Angular loss between grid normals of the predicted and ground-truth pointmaps.
inline LossTerm point_normal_loss(const PointMap& pred, const PointMap& gt, Reduction reduction = Reduction::sum) {
  require_same_shape(pred, gt, "point_normal_loss");
  return normal_angle_loss(grid_normals(pred), grid_normals(gt), reduction);
}

/// Gradient of point_normal_loss with respect to the predicted points (the
/// ground-truth normals are constants).
inline std::vector<Vec3> point_normal_loss_grad(const PointMap& pred, const PointMap& gt,
                                                Reduction reduction = Reduction::sum) {
  require_same_shape(pred, gt, "point_normal_loss");
  const NormalMap np = grid_normals(pred);
  const NormalMap ng = grid_normals(gt);
  std::size_t count = 0;
  for (std::size_t f = 0; f < np.size(); ++f) count += (np.valid(f) && ng.valid(f)) ? 1 : 0;
  const double scale = (reduction == Reduction::mean && count > 0) ? 1.0 / static_cast<double>(count) : 1.0;
  std::vector<Vec3> grad(pred.size());
  const std::size_t W = pred.width();
  for (std::size_t i = 0; i + 1 < pred.height(); ++i)
    for (std::size_t j = 0; j + 1 < W; ++j) {
      if (!np.valid(i, j) || !ng.valid(i, j)) continue;
      const Vec3 a = pred(i, j + 1) - pred(i, j);
      const Vec3 b = pred(i + 1, j) - pred(i, j);
      const Vec3 c = cross(a, b);
      const double len = norm(c);
      const Vec3 chat = c / len;
      const double sigma = dot(np(i, j), chat) > 0.0 ? 1.0 : -1.0;
      const Vec3& m = ng(i, j);
      const Vec3 dn = scale * detail::acos_grad(dot(np(i, j), m)) * m;
      // n = sigma * c / |c|
      const Vec3 dc = sigma * (dn - dot(dn, chat) * chat) / len;
      const Vec3 da = cross(b, dc);
      const Vec3 db = cross(dc, a);
      grad[i * W + j + 1] += da;
      grad[(i + 1) * W + j] += db;
      grad[i * W + j] -= da + db;
    }
  return grad;
}

/// Mean absolute componentwise difference between normal maps over jointly
/// valid pixels: sum |pred - gt|_1 / (3 * count).
inline LossTerm predicted_normal_loss(const NormalMap& pred, const NormalMap& gt) {
  require_same_shape(pred, gt, "predicted_normal_loss");
  std::vector<double> terms;
  for (std::size_t f = 0; f < gt.size(); ++f) {
    if (!pred.valid(f) || !gt.valid(f)) continue;
    const Vec3 d = pred[f] - gt[f];
    terms.push_back(std::abs(d.x) + std::abs(d.y) + std::abs(d.z));
  }
  if (terms.empty()) return {0.0, 0, 1};
  return {pairwise_sum(terms) / (3.0 * static_cast<double>(terms.size())), terms.size(), 0};
}

inline std::vector<Vec3> predicted_normal_loss_grad(const NormalMap& pred, const NormalMap& gt) {
  require_same_shape(pred, gt, "predicted_normal_loss");
  std::size_t count = 0;
  for (std::size_t f = 0; f < gt.size(); ++f) count += (pred.valid(f) && gt.valid(f)) ? 1 : 0;
  std::vector<Vec3> grad(pred.size());
  if (count == 0) return grad;
  const double w = 1.0 / (3.0 * static_cast<double>(count));
  auto sg = [](double v) { return static_cast<double>((v > 0.0) - (v < 0.0)); };
  for (std::size_t f = 0; f < gt.size(); ++f) {
    if (!pred.valid(f) || !gt.valid(f)) continue;
    const Vec3 d = pred[f] - gt[f];
    grad[f] = {w * sg(d.x), w * sg(d.y), w * sg(d.z)};
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Depth terms
// ---------------------------------------------------------------------------

inline constexpr std::array<std::size_t, 3> kGradientScales{1, 2, 4};

namespace detail {

// Visits every (a, b) pixel pair used by the gradient loss together with the
// per-scale weight 1 / pair_count.
template <class F>
std::size_t for_each_gradient_pair(const DepthMap& pred, const DepthMap& target, const depthprior::ConfidenceMask& mask,
                                   F&& visit) {
  require_same_shape(pred, target, "depth_gradient_loss");
  if (mask.height != pred.height() || mask.width != pred.width())
    throw InvalidArgument("depth_gradient_loss: mask dimension mismatch");
  const std::size_t H = pred.height(), W = pred.width();
  auto ok = [&](std::size_t f) { return mask.at(f) && depthprior::usable(pred, f) && depthprior::usable(target, f); };
  std::size_t total = 0;
  for (std::size_t s : kGradientScales) {
    std::vector<std::array<std::size_t, 2>> pairs;
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        const std::size_t f = i * W + j;
        if (!ok(f)) continue;
        if (j + s < W && ok(f + s)) pairs.push_back({f, f + s});
        if (i + s < H && ok(f + s * W)) pairs.push_back({f, f + s * W});
      }
    if (pairs.empty()) continue;
    const double w = 1.0 / static_cast<double>(pairs.size());
    for (const auto& [a, b] : pairs) visit(a, b, w);
    total += pairs.size();
  }
  return total;
}

}  // namespace detail

/// Multi-scale gradient matching: for scales 1, 2, 4, the mean over valid
/// horizontal and vertical pixel pairs (a, a+s) of
/// |(pred_b - pred_a) - (target_b - target_a)|, summed over scales. A pair is
/// valid when both pixels are mask-true and have usable depths.
///
/// Stand-in for the gradient loss of the upstream depth head; swap here.
inline LossTerm depth_gradient_loss(const DepthMap& pred, const DepthMap& target,
                                    const depthprior::ConfidenceMask& mask) {
  std::vector<double> terms;
  const std::size_t n = detail::for_each_gradient_pair(pred, target, mask, [&](std::size_t a, std::size_t b, double w) {
    terms.push_back(w * std::abs((pred[b] - pred[a]) - (target[b] - target[a])));
  });
  return {pairwise_sum(terms), n, n == 0 ? std::size_t{1} : std::size_t{0}};
}

inline std::vector<double> depth_gradient_loss_grad(const DepthMap& pred, const DepthMap& target,
                                                    const depthprior::ConfidenceMask& mask) {
  std::vector<double> grad(pred.size(), 0.0);
  detail::for_each_gradient_pair(pred, target, mask, [&](std::size_t a, std::size_t b, double w) {
    const double r = (pred[b] - pred[a]) - (target[b] - target[a]);
    const double g = w * static_cast<double>((r > 0.0) - (r < 0.0));
    grad[b] += g;
    grad[a] -= g;
  });
  return grad;
}

/// Gradient loss between the prediction and the aligned prior, restricted to
/// the confidence mask. An all-false mask gives 0 with one warning.
inline LossTerm prior_guided_depth_loss(const DepthMap& pred, const DepthMap& aligned_prior,
                                        const depthprior::ConfidenceMask& mask) {
  return depth_gradient_loss(pred, aligned_prior, mask);
}

/// Stand-in for the upstream depth loss: mean over usable pixels of
/// c |pred - gt| - gamma log c (c = 1 without a confidence map), plus the
/// gradient loss against gt on all usable pixels.
inline LossTerm base_depth_loss(const DepthMap& pred, const DepthMap& gt,
                                const std::optional<DepthMap>& confidence = std::nullopt, double gamma = 0.0) {
  require_same_shape(pred, gt, "base_depth_loss");
  if (confidence) require_same_shape(*confidence, gt, "base_depth_loss");
  std::vector<double> terms;
  for (std::size_t f = 0; f < gt.size(); ++f) {
    if (!depthprior::usable(pred, f) || !depthprior::usable(gt, f)) continue;
    const double c = confidence ? (*confidence)[f] : 1.0;
    if (!(c > 0.0)) throw InvalidArgument("base_depth_loss: confidence must be positive");
    terms.push_back(c * std::abs(pred[f] - gt[f]) - gamma * std::log(c));
  }
  if (terms.empty()) return {0.0, 0, 1};
  const auto all = depthprior::ConfidenceMask::all(gt.height(), gt.width(), true);
  const LossTerm grad = depth_gradient_loss(pred, gt, all);
  return {pairwise_sum(terms) / static_cast<double>(terms.size()) + grad.value, terms.size(), grad.warnings};
}

/// L_depth = base depth loss + prior-guided term under the confidence mask.
inline LossTerm depth_loss(const DepthMap& pred, const DepthMap& gt, const DepthMap& aligned_prior,
                           const depthprior::ConfidenceMask& mask) {
  const LossTerm base = base_depth_loss(pred, gt);
  const LossTerm prior = prior_guided_depth_loss(pred, aligned_prior, mask);
  return {base.value + prior.value, base.count, base.warnings + prior.warnings};
}

// ---------------------------------------------------------------------------
// Feature fusion and total objective
// ---------------------------------------------------------------------------

/// Channel concatenation, f3d channels first.
inline FeatureGrid fuse_features(const FeatureGrid& f3d, const FeatureGrid& fs) {
  if (f3d.height() != fs.height() || f3d.width() != fs.width())
    throw InvalidArgument("fuse_features: spatial dimension mismatch");
  const std::size_t c1 = f3d.channels(), c2 = fs.channels();
  FeatureGrid out(f3d.height(), f3d.width(), c1 + c2);
  for (std::size_t i = 0; i < f3d.height(); ++i)
    for (std::size_t j = 0; j < f3d.width(); ++j) {
      for (std::size_t c = 0; c < c1; ++c) out(i, j, c) = f3d(i, j, c);
      for (std::size_t c = 0; c < c2; ++c) out(i, j, c1 + c) = fs(i, j, c);
    }
  return out;
}

struct LossWeights {
  double track = 0.05;
  double moe = 0.01;
  double pts_local = 0.5;
  double pts_n = 1.0;
  double normal = 1.0;

  void validate() const {
    for (double w : {track, moe, pts_local, pts_n, normal})
      if (!(w >= 0.0) || !std::isfinite(w)) throw InvalidArgument("loss weights must be finite and nonnegative");
  }
};

// L_cam and L_track are opaque caller-supplied values.
struct LossParts {
  double points = 0.0;
  double camera = 0.0;
  double depth = 0.0;
  double track = 0.0;
  double moe = 0.0;
  double pts_local = 0.0;
  double pts_n = 0.0;
  double normal = 0.0;
};

inline double total_loss(const LossParts& p, const LossWeights& w) {
  w.validate();
  for (double v : {p.points, p.camera, p.depth, p.track, p.moe, p.pts_local, p.pts_n, p.normal})
    if (!std::isfinite(v)) throw InvalidArgument("total_loss: non-finite loss term");
  return p.points + p.camera + p.depth + w.track * p.track + w.moe * p.moe + w.pts_local * p.pts_local +
         w.pts_n * p.pts_n + w.normal * p.normal;
}

}  // namespace more::losses
