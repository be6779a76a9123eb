#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "more/error.hpp"
#include "more/maps.hpp"
#include "more/numeric.hpp"

namespace more::depthprior {

enum class PriorAlignment {
  scale,        // s * prior
  scale_shift,  // s * prior + b; pixels that become nonpositive are dropped
};

struct AlignedPrior {
  DepthMap depth;
  double scale = 1.0;
  double shift = 0.0;
};

// A pixel usable as depth supervision.
inline bool usable(const DepthMap& d, std::size_t flat) {
  return d.valid(flat) && std::isfinite(d[flat]) && d[flat] > 0.0;
}

namespace detail {

struct Pair {
  double prior;
  double gt;
};

inline std::vector<Pair> joint_pixels(const DepthMap& prior, const DepthMap& gt) {
  require_same_shape(prior, gt, "align_prior_depth");
  std::vector<Pair> px;
  for (std::size_t f = 0; f < gt.size(); ++f)
    if (usable(prior, f) && usable(gt, f)) px.push_back({prior[f], gt[f]});
  if (px.empty()) throw InvalidArgument("disjoint masks");
  return px;
}

// argmin_s sum |s p - g| = weighted median of g/p with weights p.
inline double l1_scale(const std::vector<Pair>& px) {
  std::vector<WeightedSample> samples;
  samples.reserve(px.size());
  for (const auto& p : px) samples.push_back({p.gt / p.prior, p.prior});
  return weighted_median(samples).value;
}

// min_b sum |g - s p - b| for fixed s: b is the median residual.
inline double l1_shift(const std::vector<Pair>& px, double s) {
  std::vector<WeightedSample> r;
  r.reserve(px.size());
  for (const auto& p : px) r.push_back({p.gt - s * p.prior, 1.0});
  return weighted_median(r).value;
}

inline double l1_affine_cost(const std::vector<Pair>& px, double s) {
  const double b = l1_shift(px, s);
  double c = 0.0;
  for (const auto& p : px) c += std::abs(p.gt - s * p.prior - b);
  return c;
}

// The profile cost min_b sum|g - s p - b| is convex in s, so golden-section
// search over a doubling bracket finds the joint L1 optimum with s >= 0.
inline double l1_affine_scale(const std::vector<Pair>& px) {
  double hi = 0.0;
  for (const auto& p : px) hi = std::max(hi, p.gt / p.prior);
  hi = std::max(hi, 1e-12);
  while (l1_affine_cost(px, 2.0 * hi) < l1_affine_cost(px, hi)) hi *= 2.0;
  hi *= 2.0;
  double lo = 0.0;
  const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = hi - invphi * (hi - lo), b = lo + invphi * (hi - lo);
  double fa = l1_affine_cost(px, a), fb = l1_affine_cost(px, b);
  for (int it = 0; it < 200 && hi - lo > 1e-15 * std::max(1.0, hi); ++it) {
    if (fa <= fb) {
      hi = b;
      b = a;
      fb = fa;
      a = hi - invphi * (hi - lo);
      fa = l1_affine_cost(px, a);
    } else {
      lo = a;
      a = b;
      fa = fb;
      b = lo + invphi * (hi - lo);
      fb = l1_affine_cost(px, b);
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

/// Fits `prior` to `gt` under an L1 objective over jointly valid pixels.
///
/// Scale-only mode returns the exact minimizer of sum |s prior - gt| (weighted
/// median of gt/prior, weights prior). Output validity is joint validity.
inline AlignedPrior align_prior_depth_full(const DepthMap& prior, const DepthMap& gt,
                                           PriorAlignment mode = PriorAlignment::scale) {
  const auto px = detail::joint_pixels(prior, gt);
  AlignedPrior out;
  if (mode == PriorAlignment::scale) {
    out.scale = detail::l1_scale(px);
  } else {
    out.scale = detail::l1_affine_scale(px);
    out.shift = detail::l1_shift(px, out.scale);
  }
  out.depth = DepthMap(gt.height(), gt.width());
  for (std::size_t f = 0; f < gt.size(); ++f) {
    if (!(usable(prior, f) && usable(gt, f))) continue;
    const double v = out.scale * prior[f] + out.shift;
    out.depth[f] = v;
    out.depth.set_valid(f, v > 0.0);
  }
  return out;
}

inline DepthMap align_prior_depth(const DepthMap& prior, const DepthMap& gt,
                                  PriorAlignment mode = PriorAlignment::scale) {
  return align_prior_depth_full(prior, gt, mode).depth;
}

inline constexpr double kDefaultAlpha = 0.5;
inline constexpr double kDefaultTau = 0.1;

struct ConfidenceMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> mask;
  double alpha = kDefaultAlpha;
  double tau = kDefaultTau;
  std::size_t invalid_count = 0;  // pixels excluded because an input was invalid

  bool operator()(std::size_t i, std::size_t j) const { return mask[i * width + j] != 0; }
  bool at(std::size_t flat) const { return mask[flat] != 0; }
  std::size_t true_count() const {
    std::size_t n = 0;
    for (auto m : mask) n += m;
    return n;
  }

  static ConfidenceMask all(std::size_t h, std::size_t w, bool value) {
    ConfidenceMask m;
    m.height = h;
    m.width = w;
    m.mask.assign(h * w, value ? 1 : 0);
    return m;
  }
};

// The per-pixel predicate |prior - gt| / max(gt, alpha) < tau.
inline bool confident(double aligned_prior, double gt, double alpha, double tau) {
  return std::abs(aligned_prior - gt) / std::max(gt, alpha) < tau;
}

inline ConfidenceMask confidence_mask(const DepthMap& aligned_prior, const DepthMap& gt, double alpha = kDefaultAlpha,
                                      double tau = kDefaultTau) {
  require_same_shape(aligned_prior, gt, "confidence_mask");
  ConfidenceMask m = ConfidenceMask::all(gt.height(), gt.width(), false);
  m.alpha = alpha;
  m.tau = tau;
  for (std::size_t f = 0; f < gt.size(); ++f) {
    if (!usable(aligned_prior, f) || !usable(gt, f)) {
      ++m.invalid_count;
      continue;
    }
    m.mask[f] = confident(aligned_prior[f], gt[f], alpha, tau) ? 1 : 0;
  }
  return m;
}

}  // namespace more::depthprior
