#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "more/depthprior.hpp"
#include "more/losses.hpp"
#include "more/maps.hpp"
#include "more/moe.hpp"

namespace more::gradcheck {

/// Central-difference comparison over one flat parameter block.
///
/// `loss` is evaluated after every in-place perturbation of `params`.
/// `signature` (optional) returns the discrete state of the function, such as
/// the top-k selection or the sign pattern of L1 residuals; entries whose
/// +h or -h probe lands in a different state straddle a kink and are skipped.
struct BlockResult {
  std::size_t entries = 0;
  std::size_t skipped = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct Options {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor for the relative error, so that entries whose true
  // gradient is zero are judged on absolute error.
  double floor = 1e-6;
};

using Signature = std::vector<long long>;

inline BlockResult compare_block(std::span<double> params, std::span<const double> analytic,
                                 const std::function<double()>& loss, const std::function<Signature()>& signature,
                                 const Options& opt) {
  if (params.size() != analytic.size()) throw InvalidArgument("gradcheck: analytic gradient size mismatch");
  BlockResult r;
  const Signature base = signature ? signature() : Signature{};
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double x0 = params[i];
    params[i] = x0 + opt.step;
    const double fp = loss();
    const bool same_p = !signature || signature() == base;
    params[i] = x0 - opt.step;
    const double fm = loss();
    const bool same_m = !signature || signature() == base;
    params[i] = x0;
    if (!same_p || !same_m) {
      ++r.skipped;
      continue;
    }
    const double numeric = (fp - fm) / (2.0 * opt.step);
    const double abs_err = std::abs(numeric - analytic[i]);
    const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), opt.floor});
    r.max_abs_error = std::max(r.max_abs_error, abs_err);
    r.max_rel_error = std::max(r.max_rel_error, abs_err / denom);
    ++r.entries;
  }
  return r;
}

struct Comparison {
  std::string name;
  std::uint64_t seed = 0;
  std::size_t entries = 0;
  std::size_t skipped = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  bool passed = false;
};

struct SuiteResult {
  std::vector<Comparison> comparisons;

  bool passed() const {
    return !comparisons.empty() &&
           std::all_of(comparisons.begin(), comparisons.end(), [](const Comparison& c) { return c.passed; });
  }
  double max_rel_error() const {
    double m = 0.0;
    for (const auto& c : comparisons) m = std::max(m, c.max_rel_error);
    return m;
  }
};

namespace detail {

inline void merge(Comparison& c, const BlockResult& b) {
  c.entries += b.entries;
  c.skipped += b.skipped;
  c.max_rel_error = std::max(c.max_rel_error, b.max_rel_error);
  c.max_abs_error = std::max(c.max_abs_error, b.max_abs_error);
}

inline void finish(Comparison& c, const Options& opt) {
  // A comparison that skipped most of its entries proves little.
  c.passed = c.entries > 0 && c.max_rel_error < opt.tolerance && c.skipped * 4 <= c.entries + c.skipped;
}

template <class Rng>
void fill_normal(std::span<double> v, Rng& rng, double stddev = 1.0) {
  std::normal_distribution<double> n(0.0, stddev);
  for (double& x : v) x = n(rng);
}

inline long long sgn(double v) { return (v > 0.0) - (v < 0.0); }

}  // namespace detail

struct MoeInstance {
  std::size_t dim = 6, hidden = 8, experts = 3, k = 2, tokens = 5;
  double balance_weight = 0.0;
  bool renormalize = false;
};

/// Checks moe_backward for L = <U, MoE(X)> + beta * L_moe against central
/// differences in every router, expert and token entry.
inline Comparison check_moe(const MoeInstance& inst, std::uint64_t seed, const Options& opt = {}) {
  std::mt19937_64 rng(seed);
  moe::MoeLayer layer;
  layer.k = inst.k;
  layer.renormalize = inst.renormalize;
  layer.router.weight = Matrix(inst.experts, inst.dim);
  detail::fill_normal(layer.router.weight.data(), rng);
  for (std::size_t e = 0; e < inst.experts; ++e) layer.experts.push_back(moe::ExpertFfn::random(inst.dim, inst.hidden, rng, 0.5));
  Matrix tokens(inst.tokens, inst.dim), upstream(inst.tokens, inst.dim);
  detail::fill_normal(tokens.data(), rng);
  detail::fill_normal(upstream.data(), rng);

  const moe::MoeGradients g = moe::moe_backward(layer, tokens, upstream, inst.balance_weight);
  auto loss = [&] {
    const moe::MoeForward fw = moe::moe_forward(layer, tokens);
    double v = 0.0;
    for (std::size_t i = 0; i < upstream.data().size(); ++i) v += upstream.data()[i] * fw.outputs.data()[i];
    return v + inst.balance_weight * moe::load_balance_loss(fw.stats);
  };
  auto signature = [&] {
    const moe::RouterOutput r = moe::route(layer, tokens);
    return Signature(r.topk_indices.begin(), r.topk_indices.end());
  };

  Comparison c;
  char beta[32];
  std::snprintf(beta, sizeof beta, "%g", inst.balance_weight);
  c.name = "moe_backward(E=" + std::to_string(inst.experts) + ",k=" + std::to_string(inst.k) + ",beta=" + beta +
           (inst.renormalize ? ",renorm" : "") + ")";
  c.seed = seed;
  detail::merge(c, compare_block(layer.router.weight.data(), g.router.data(), loss, signature, opt));
  for (std::size_t e = 0; e < inst.experts; ++e) {
    auto& ex = layer.experts[e];
    const auto& ge = g.experts[e];
    detail::merge(c, compare_block(ex.w1.data(), ge.w1.data(), loss, signature, opt));
    detail::merge(c, compare_block(ex.b1, ge.b1, loss, signature, opt));
    detail::merge(c, compare_block(ex.w2.data(), ge.w2.data(), loss, signature, opt));
    detail::merge(c, compare_block(ex.b2, ge.b2, loss, signature, opt));
  }
  detail::merge(c, compare_block(tokens.data(), g.tokens.data(), loss, signature, opt));
  detail::finish(c, opt);
  return c;
}

namespace detail {

// Smooth, camera-facing random surface z = z0 + bumps, back-projected with
// unit focal length so every pixel has positive depth.
template <class Rng>
PointMap random_surface(std::size_t h, std::size_t w, Rng& rng) {
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  const double z0 = 2.0 + u(rng), ax = u(rng), ay = u(rng), b = u(rng);
  PointMap pm(h, w);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const double x = (static_cast<double>(j) - 0.5 * static_cast<double>(w)) * 0.2;
      const double y = (static_cast<double>(i) - 0.5 * static_cast<double>(h)) * 0.2;
      const double z = z0 + ax * x + ay * y + b * std::sin(1.7 * x + 0.9 * y) + 0.05 * u(rng);
      pm.set(i, j, {x * z, y * z, z});
    }
  return pm;
}

template <class Rng>
PointMap jitter(const PointMap& pm, Rng& rng, double scale, double amount) {
  std::normal_distribution<double> n(0.0, amount);
  PointMap out = pm;
  for (std::size_t f = 0; f < pm.size(); ++f)
    if (pm.valid(f)) out[f] = scale * pm[f] + Vec3{n(rng), n(rng), n(rng)};
  return out;
}

inline std::span<double> flat(std::vector<Vec3>& v) { return {reinterpret_cast<double*>(v.data()), 3 * v.size()}; }
inline std::span<const double> flat(const std::vector<Vec3>& v) {
  return {reinterpret_cast<const double*>(v.data()), 3 * v.size()};
}

}  // namespace detail

static_assert(sizeof(Vec3) == 3 * sizeof(double), "Vec3 must be three packed doubles");

/// local_point_loss over a two-frame sequence, gradient w.r.t. predictions.
inline Comparison check_local_point_loss(std::uint64_t seed, losses::Reduction red, const Options& opt = {}) {
  std::mt19937_64 rng(seed);
  std::vector<PointMap> gt, pred;
  for (int n = 0; n < 2; ++n) {
    gt.push_back(detail::random_surface(4, 5, rng));
    pred.push_back(detail::jitter(gt.back(), rng, 0.7, 0.05));
  }
  const auto g = losses::local_point_loss_grad(pred, gt, red);
  auto loss = [&] { return losses::local_point_loss(pred, gt, red).value; };
  auto signature = [&] {
    const losses::ScaleFit fit = losses::fit_optimal_scale(pred, gt);
    Signature s{static_cast<long long>(fit.frame), static_cast<long long>(fit.pixel), fit.axis};
    for (std::size_t n = 0; n < pred.size(); ++n)
      for (std::size_t f = 0; f < pred[n].size(); ++f)
        for (int c = 0; c < 3; ++c) s.push_back(detail::sgn(fit.scale * pred[n][f][c] - gt[n][f][c]));
    return s;
  };
  Comparison c;
  c.name = std::string("local_point_loss(") + (red == losses::Reduction::sum ? "sum" : "mean") + ")";
  c.seed = seed;
  for (std::size_t n = 0; n < pred.size(); ++n) {
    std::vector<Vec3>& vals = pred[n].values();
    detail::merge(c, compare_block(detail::flat(vals), detail::flat(g[n]), loss, signature, opt));
  }
  detail::finish(c, opt);
  return c;
}

inline Comparison check_point_normal_loss(std::uint64_t seed, losses::Reduction red, const Options& opt = {}) {
  std::mt19937_64 rng(seed);
  const PointMap gt = detail::random_surface(5, 6, rng);
  PointMap pred = detail::jitter(gt, rng, 1.0, 0.05);
  const auto g = losses::point_normal_loss_grad(pred, gt, red);
  auto loss = [&] { return losses::point_normal_loss(pred, gt, red).value; };
  auto signature = [&] {
    // orientation flips of the predicted normals
    Signature s;
    for (std::size_t i = 0; i + 1 < pred.height(); ++i)
      for (std::size_t j = 0; j + 1 < pred.width(); ++j)
        s.push_back(detail::sgn(cross(pred(i, j + 1) - pred(i, j), pred(i + 1, j) - pred(i, j)).z));
    return s;
  };
  Comparison c;
  c.name = std::string("point_normal_loss(") + (red == losses::Reduction::sum ? "sum" : "mean") + ")";
  c.seed = seed;
  detail::merge(c, compare_block(detail::flat(pred.values()), detail::flat(g), loss, signature, opt));
  detail::finish(c, opt);
  return c;
}

inline Comparison check_predicted_normal_loss(std::uint64_t seed, const Options& opt = {}) {
  std::mt19937_64 rng(seed);
  NormalMap gt(4, 5), pred(4, 5);
  std::normal_distribution<double> n(0.0, 1.0);
  for (std::size_t f = 0; f < gt.size(); ++f) {
    const Vec3 a = normalized(Vec3{n(rng), n(rng), -3.0});
    gt.set(f / gt.width(), f % gt.width(), a);
    pred.set(f / gt.width(), f % gt.width(), a + 0.1 * Vec3{n(rng), n(rng), n(rng)});
  }
  const auto g = losses::predicted_normal_loss_grad(pred, gt);
  auto loss = [&] { return losses::predicted_normal_loss(pred, gt).value; };
  auto signature = [&] {
    Signature s;
    for (std::size_t f = 0; f < gt.size(); ++f)
      for (int c = 0; c < 3; ++c) s.push_back(detail::sgn(pred[f][c] - gt[f][c]));
    return s;
  };
  Comparison c;
  c.name = "predicted_normal_loss";
  c.seed = seed;
  detail::merge(c, compare_block(detail::flat(pred.values()), detail::flat(g), loss, signature, opt));
  detail::finish(c, opt);
  return c;
}

inline Comparison check_depth_gradient_loss(std::uint64_t seed, const Options& opt = {}) {
  std::mt19937_64 rng(seed);
  const std::size_t H = 9, W = 10;
  DepthMap target(H, W), pred(H, W);
  std::uniform_real_distribution<double> u(1.0, 3.0);
  std::normal_distribution<double> n(0.0, 0.1);
  for (std::size_t f = 0; f < target.size(); ++f) {
    const double t = u(rng);
    target.set(f / W, f % W, t);
    pred.set(f / W, f % W, t + n(rng));
  }
  auto mask = depthprior::ConfidenceMask::all(H, W, true);
  std::bernoulli_distribution keep(0.8);
  for (auto& m : mask.mask) m = keep(rng) ? 1 : 0;
  const auto g = losses::depth_gradient_loss_grad(pred, target, mask);
  auto loss = [&] { return losses::depth_gradient_loss(pred, target, mask).value; };
  auto signature = [&] {
    Signature s;
    for (std::size_t sc : losses::kGradientScales)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
          const std::size_t f = i * W + j;
          if (j + sc < W) s.push_back(detail::sgn((pred[f + sc] - pred[f]) - (target[f + sc] - target[f])));
          if (i + sc < H) s.push_back(detail::sgn((pred[f + sc * W] - pred[f]) - (target[f + sc * W] - target[f])));
        }
    return s;
  };
  Comparison c;
  c.name = "depth_gradient_loss";
  c.seed = seed;
  detail::merge(c, compare_block(pred.values(), g, loss, signature, opt));
  detail::finish(c, opt);
  return c;
}

struct SuiteOptions {
  std::uint64_t seed = 7;
  std::size_t moe_instances = 20;
  std::size_t loss_instances = 4;
  Options fd;
};

/// The full finite-difference suite: MoE instances cycling through the
/// balance-weight and renormalization variants, then every differentiable
/// loss term.
inline SuiteResult run_suite(const SuiteOptions& so = {}, const std::function<void(const Comparison&)>& on_result = {}) {
  SuiteResult out;
  auto push = [&](Comparison c) {
    if (on_result) on_result(c);
    out.comparisons.push_back(std::move(c));
  };
  std::seed_seq seq{so.seed};
  std::vector<std::uint32_t> seeds(so.moe_instances + 6 * so.loss_instances);
  seq.generate(seeds.begin(), seeds.end());
  std::size_t s = 0;
  for (std::size_t i = 0; i < so.moe_instances; ++i) {
    MoeInstance inst;
    inst.balance_weight = (i % 2 == 1) ? 0.3 : 0.0;
    inst.renormalize = (i % 4) >= 2;
    push(check_moe(inst, seeds[s++], so.fd));
  }
  for (std::size_t i = 0; i < so.loss_instances; ++i) {
    const auto red = i % 2 == 0 ? losses::Reduction::sum : losses::Reduction::mean;
    push(check_local_point_loss(seeds[s++], red, so.fd));
    push(check_point_normal_loss(seeds[s++], red, so.fd));
    push(check_predicted_normal_loss(seeds[s++], so.fd));
    push(check_depth_gradient_loss(seeds[s++], so.fd));
  }
  return out;
}

}  // namespace more::gradcheck
