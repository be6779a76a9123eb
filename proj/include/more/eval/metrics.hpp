#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "more/depthprior.hpp"
#include "more/error.hpp"
#include "more/eval/alignment.hpp"
#include "more/linalg/kdtree.hpp"
#include "more/linalg/rotation.hpp"
#include "more/maps.hpp"
#include "more/numeric.hpp"
#include "more/report.hpp"

namespace more::eval {

// ---------------------------------------------------------------------------
// Pointmap: accuracy, completion, normal consistency
// ---------------------------------------------------------------------------

/// Acc: distance from each predicted point to its nearest ground-truth point.
/// Comp: distance from each ground-truth point to its nearest predicted point.
/// N.C.: |cos| between a point's normal and its nearest neighbour's normal,
/// evaluated in both directions; the reported mean (median) is the average of
/// the two directional means (medians).
///
/// Inputs are expected to be aligned already. Normals are optional; N.C. is
/// reported only when both are given.
inline MetricReport pointmap_metrics(std::span<const Vec3> pred, std::span<const Vec3> gt,
                                     std::span<const Vec3> pred_normals = {}, std::span<const Vec3> gt_normals = {}) {
  if (pred.empty() || gt.empty()) throw InvalidArgument("pointmap_metrics: empty point set");
  const bool with_normals = !pred_normals.empty() || !gt_normals.empty();
  if (with_normals && (pred_normals.size() != pred.size() || gt_normals.size() != gt.size()))
    throw InvalidArgument("pointmap_metrics: normal count does not match point count");

  const KdTree3 gt_tree(gt), pred_tree(pred);
  std::vector<double> acc(pred.size()), comp(gt.size()), nc_pred, nc_gt;
  if (with_normals) {
    nc_pred.resize(pred.size());
    nc_gt.resize(gt.size());
  }
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const Neighbor nb = gt_tree.nearest(pred[i]);
    acc[i] = std::sqrt(nb.squared_distance);
    if (with_normals) nc_pred[i] = std::abs(dot(pred_normals[i], gt_normals[nb.index]));
  }
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const Neighbor nb = pred_tree.nearest(gt[i]);
    comp[i] = std::sqrt(nb.squared_distance);
    if (with_normals) nc_gt[i] = std::abs(dot(gt_normals[i], pred_normals[nb.index]));
  }

  MetricReport r("pointmap");
  r.add("acc", mean(acc), median(acc), acc.size());
  r.add("comp", mean(comp), median(comp), comp.size());
  if (with_normals) {
    r.add("nc", 0.5 * (mean(nc_pred) + mean(nc_gt)), 0.5 * (median(nc_pred) + median(nc_gt)),
          nc_pred.size() + nc_gt.size());
  }
  return r;
}

// ---------------------------------------------------------------------------
// Monocular depth
// ---------------------------------------------------------------------------

enum class DepthAlignment { none, median_scale };

inline constexpr double kDeltaThreshold = 1.25;

/// AbsRel = mean |pred - gt| / gt and delta = fraction with
/// max(pred/gt, gt/pred) < 1.25, over pixels valid and positive in both maps,
/// after optionally scaling pred by median(gt) / median(pred).
inline MetricReport depth_metrics(const DepthMap& pred, const DepthMap& gt,
                                  DepthAlignment alignment = DepthAlignment::median_scale) {
  require_same_shape(pred, gt, "depth_metrics");
  std::vector<double> p, g;
  for (std::size_t f = 0; f < gt.size(); ++f) {
    if (!depthprior::usable(pred, f) || !depthprior::usable(gt, f)) continue;
    p.push_back(pred[f]);
    g.push_back(gt[f]);
  }
  if (p.empty()) throw InvalidArgument("depth_metrics: no valid pixels");
  double scale = 1.0;
  if (alignment == DepthAlignment::median_scale) scale = median(g) / median(p);

  std::vector<double> rel(p.size()), inlier(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = scale * p[i];
    rel[i] = std::abs(q - g[i]) / g[i];
    inlier[i] = std::max(q / g[i], g[i] / q) < kDeltaThreshold ? 1.0 : 0.0;
  }
  MetricReport r("depth");
  r.add("abs_rel", mean(rel), std::nullopt, rel.size());
  r.add("delta_1.25", mean(inlier), std::nullopt, inlier.size());
  r.set_counter("invalid_pixels", gt.size() - p.size());
  r.set_config(Json{{"alignment", alignment == DepthAlignment::none ? "none" : "median_scale"}, {"scale", scale}});
  return r;
}

// ---------------------------------------------------------------------------
// Camera pose
// ---------------------------------------------------------------------------

using Trajectory = std::vector<Pose>;  // camera-to-world

inline constexpr double kMinBaseline = 1e-9;

struct PairError {
  std::size_t i = 0;
  std::size_t j = 0;
  double rotation_deg = 0.0;
  double translation_deg = 0.0;
};

struct PairErrors {
  std::vector<PairError> pairs;
  std::size_t skipped = 0;  // near-zero baseline in either trajectory
};

/// Relative-pose angular errors over all unordered pairs i < j.
///
/// The relative pose of j seen from i is T_i^-1 T_j. Rotation error is the
/// geodesic angle of R_pred R_gt^T; translation error is the angle between
/// the relative translation directions.
inline PairErrors pose_pair_angles(const Trajectory& pred, const Trajectory& gt) {
  if (pred.size() != gt.size()) throw InvalidArgument("pose metrics: trajectory lengths differ");
  if (pred.size() < 2) throw InvalidArgument("pose metrics: need at least 2 poses");
  PairErrors out;
  for (std::size_t i = 0; i < pred.size(); ++i)
    for (std::size_t j = i + 1; j < pred.size(); ++j) {
      const Pose rp = pred[i].inverse() * pred[j];
      const Pose rg = gt[i].inverse() * gt[j];
      if (norm(rp.translation) < kMinBaseline || norm(rg.translation) < kMinBaseline) {
        ++out.skipped;
        continue;
      }
      out.pairs.push_back({i, j, rad2deg(rotation_distance(rp.rotation, rg.rotation)),
                           rad2deg(angle_between(rp.translation, rg.translation))});
    }
  return out;
}

struct AngularOptions {
  double threshold_deg = 30.0;
  int auc_max_deg = 30;  // AUC over integer thresholds 1..auc_max_deg
};

/// RRA/RTA: fraction of pairs with error < threshold. AUC: mean over
/// theta = 1..auc_max_deg of the fraction of pairs with
/// max(rotation, translation) error <= theta.
inline MetricReport pose_metrics_angular(const Trajectory& pred, const Trajectory& gt, AngularOptions opt = {}) {
  const PairErrors pe = pose_pair_angles(pred, gt);
  if (pe.pairs.empty()) throw DegenerateError("pose metrics: every pair has a zero baseline");
  const double n = static_cast<double>(pe.pairs.size());
  std::vector<double> worst;
  std::size_t rra = 0, rta = 0;
  for (const auto& p : pe.pairs) {
    rra += p.rotation_deg < opt.threshold_deg ? 1 : 0;
    rta += p.translation_deg < opt.threshold_deg ? 1 : 0;
    worst.push_back(std::max(p.rotation_deg, p.translation_deg));
  }
  std::sort(worst.begin(), worst.end());
  double auc = 0.0;
  for (int t = 1; t <= opt.auc_max_deg; ++t) {
    const auto within = std::upper_bound(worst.begin(), worst.end(), static_cast<double>(t)) - worst.begin();
    auc += static_cast<double>(within) / n;
  }
  auc /= opt.auc_max_deg;

  const std::string suffix = "@" + std::to_string(static_cast<int>(opt.threshold_deg));
  MetricReport r("pose_angular");
  r.add("rra" + suffix, static_cast<double>(rra) / n, std::nullopt, pe.pairs.size());
  r.add("rta" + suffix, static_cast<double>(rta) / n, std::nullopt, pe.pairs.size());
  r.add("auc@" + std::to_string(opt.auc_max_deg), auc, std::nullopt, pe.pairs.size());
  r.set_counter("skipped_pairs", pe.skipped);
  return r;
}

struct DistanceOptions {
  std::size_t rpe_stride = 1;
  bool with_scale = true;
};

/// ATE and RPE after Sim(3) alignment of the predicted camera centres onto the
/// ground truth. ATE is the RMSE of aligned position errors. RPE compares
/// relative motions between frames i and i + stride: translation is the RMSE
/// of ||t(E)||, rotation the RMSE of angle(E) in degrees, where
/// E = rel_gt^-1 rel_pred.
inline MetricReport pose_metrics_distance(const Trajectory& pred, const Trajectory& gt, DistanceOptions opt = {}) {
  if (pred.size() != gt.size()) throw InvalidArgument("pose metrics: trajectory lengths differ");
  if (pred.size() < 3) throw InvalidArgument("pose metrics: need at least 3 poses for Sim(3) alignment");
  if (opt.rpe_stride < 1 || opt.rpe_stride >= pred.size()) throw InvalidArgument("pose metrics: invalid RPE stride");
  std::vector<Vec3> ps, gs;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    ps.push_back(pred[i].translation);
    gs.push_back(gt[i].translation);
  }
  const Sim3 align = umeyama(ps, gs, opt.with_scale);
  Trajectory aligned(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) aligned[i] = transform_pose(align, pred[i]);

  std::vector<double> ate(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) ate[i] = squared_norm(aligned[i].translation - gt[i].translation);

  std::vector<double> rpe_t, rpe_r;
  for (std::size_t i = 0; i + opt.rpe_stride < pred.size(); ++i) {
    const std::size_t j = i + opt.rpe_stride;
    const Pose rp = aligned[i].inverse() * aligned[j];
    const Pose rg = gt[i].inverse() * gt[j];
    const Pose e = rg.inverse() * rp;
    rpe_t.push_back(squared_norm(e.translation));
    const double a = rad2deg(e.rotation.angle());
    rpe_r.push_back(a * a);
  }
  MetricReport r("pose_distance");
  r.add("ate", std::sqrt(mean(ate)), std::nullopt, ate.size());
  r.add("rpe_trans", std::sqrt(mean(rpe_t)), std::nullopt, rpe_t.size());
  r.add("rpe_rot", std::sqrt(mean(rpe_r)), std::nullopt, rpe_r.size());
  r.set_config(Json{{"rpe_stride", opt.rpe_stride},
                    {"alignment", Json{{"scale", align.scale},
                                       {"rotation", {align.rotation.w(), align.rotation.x(), align.rotation.y(),
                                                     align.rotation.z()}},
                                       {"translation", {align.translation.x, align.translation.y,
                                                        align.translation.z}}}}});
  return r;
}

// ---------------------------------------------------------------------------
// Normals
// ---------------------------------------------------------------------------

inline constexpr double kNormalThresholdDeg = 11.25;

/// Per-pixel angle between unit normals in degrees over jointly valid pixels:
/// mean, median and the fraction below 11.25 degrees. The angle is taken in
/// atan2 form, which matches arccos(dot) but is exact for identical normals.
inline MetricReport normal_metrics(const NormalMap& pred, const NormalMap& gt) {
  require_same_shape(pred, gt, "normal_metrics");
  std::vector<double> ang, good;
  for (std::size_t f = 0; f < gt.size(); ++f) {
    if (!pred.valid(f) || !gt.valid(f)) continue;
    const double a = rad2deg(angle_between(pred[f], gt[f]));
    ang.push_back(a);
    good.push_back(a < kNormalThresholdDeg ? 1.0 : 0.0);
  }
  if (ang.empty()) throw InvalidArgument("normal_metrics: no valid pixels");
  MetricReport r("normal");
  r.add("angle_deg", mean(ang), median(ang), ang.size());
  r.add("delta_11.25", mean(good), std::nullopt, good.size());
  r.set_counter("invalid_pixels", gt.size() - ang.size());
  return r;
}

}  // namespace more::eval
