#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "more/error.hpp"
#include "more/eval/alignment.hpp"
#include "more/eval/metrics.hpp"
#include "more/losses.hpp"
#include "more/maps.hpp"
#include "more/report.hpp"

namespace more::eval {

struct PointmapEvalOptions {
  std::size_t keyframe_stride = 1;
  bool align = true;
  IcpOptions icp;
};

struct PointmapEvalResult {
  MetricReport report;
  Sim3 transform;  // maps predictions onto ground truth
  std::vector<double> icp_rms;
  std::size_t frames = 0;
};

/// Reconstruction metrics for a predicted pointmap sequence.
///
/// Frames 0, stride, 2*stride, ... are used. Pixels valid in both maps give
/// correspondences for an initial Umeyama fit, which ICP then refines against
/// the full ground-truth cloud. The alignment is kept only if it lowers the
/// correspondence RMS below that of the identity. Normals come from the grid
/// cross product of each map and are rotated along with the predictions.
inline PointmapEvalResult evaluate_pointmaps(std::span<const PointMap> pred, std::span<const PointMap> gt,
                                             const PointmapEvalOptions& opt = {}) {
  if (pred.size() != gt.size() || pred.empty()) throw InvalidArgument("evaluate_pointmaps: frame count mismatch");
  if (opt.keyframe_stride == 0) throw InvalidArgument("evaluate_pointmaps: keyframe stride must be positive");
  std::vector<Vec3> src, dst, pn, gn, pred_cloud, gt_cloud;
  PointmapEvalResult out;
  for (std::size_t n = 0; n < pred.size(); n += opt.keyframe_stride) {
    require_same_shape(pred[n], gt[n], "evaluate_pointmaps");
    const NormalMap np = losses::grid_normals(pred[n], false);
    const NormalMap ng = losses::grid_normals(gt[n], false);
    for (std::size_t f = 0; f < gt[n].size(); ++f) {
      const bool pv = pred[n].valid(f) && is_finite(pred[n][f]);
      const bool gv = gt[n].valid(f) && is_finite(gt[n][f]);
      if (pv && gv) {
        src.push_back(pred[n][f]);
        dst.push_back(gt[n][f]);
      }
      if (pv && np.valid(f)) {
        pred_cloud.push_back(pred[n][f]);
        pn.push_back(np[f]);
      }
      if (gv && ng.valid(f)) {
        gt_cloud.push_back(gt[n][f]);
        gn.push_back(ng[f]);
      }
    }
    ++out.frames;
  }
  if (pred_cloud.empty() || gt_cloud.empty()) throw DegenerateError("evaluate_pointmaps: no valid points");

  if (opt.align) {
    if (src.size() < 3) throw DegenerateError("evaluate_pointmaps: fewer than 3 correspondences");
    const Sim3 init = umeyama(src, dst, opt.icp.with_scale);
    const IcpResult refined = icp(pred_cloud, gt_cloud, init, opt.icp);
    out.icp_rms = refined.rms_history;
    const Sim3 candidate = refined.transform;
    if (alignment_rms(candidate, src, dst) < alignment_rms(Sim3{}, src, dst)) out.transform = candidate;
  }
  for (auto& p : pred_cloud) p = out.transform.apply(p);
  for (auto& n : pn) n = out.transform.rotation.rotate(n);

  out.report = pointmap_metrics(pred_cloud, gt_cloud, pn, gn);
  out.report.set_counter("frames", out.frames);
  out.report.set_counter("correspondences", src.size());
  const auto& t = out.transform;
  out.report.set_config(Json{{"keyframe_stride", opt.keyframe_stride},
                             {"align", opt.align},
                             {"with_scale", opt.icp.with_scale},
                             {"icp_max_iters", opt.icp.max_iters},
                             {"icp_tol", opt.icp.tol},
                             {"icp_iterations", out.icp_rms.empty() ? 0 : out.icp_rms.size() - 1},
                             {"scale", t.scale},
                             {"rotation", {t.rotation.w(), t.rotation.x(), t.rotation.y(), t.rotation.z()}},
                             {"translation", {t.translation.x, t.translation.y, t.translation.z}}});
  return out;
}

}  // namespace more::eval
