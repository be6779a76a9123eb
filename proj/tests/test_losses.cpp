#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "more/gradcheck.hpp"
#include "more/losses.hpp"
#include "oracles.hpp"

using namespace more;
using namespace more::losses;

namespace {

PointMap random_points(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> xy(-2.0, 2.0), z(0.5, 5.0);
  PointMap pm(h, w);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) pm.set(i, j, {xy(rng), xy(rng), z(rng)});
  return pm;
}

PointMap scaled(const PointMap& pm, double c) {
  PointMap out = pm;
  for (auto& p : out.values()) p = c * p;
  return out;
}

// The objective written out longhand, one pixel at a time.
double objective(const PointMap& pred, const PointMap& gt, double s) {
  double total = 0.0;
  for (std::size_t f = 0; f < gt.size(); ++f) {
    if (!pred.valid(f) || !gt.valid(f) || gt[f].z <= 1e-6) continue;
    total += (std::abs(s * pred[f].x - gt[f].x) + std::abs(s * pred[f].y - gt[f].y) +
              std::abs(s * pred[f].z - gt[f].z)) /
             gt[f].z;
  }
  return total;
}

// Smooth height field z = 3 + a sin(bx) cos(cy) sampled on a grid.
PointMap wavy_surface(std::size_t h, std::size_t w, double a, double b, double c) {
  PointMap pm(h, w);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const double x = -1.0 + 2.0 * j / (w - 1.0), y = -1.0 + 2.0 * i / (h - 1.0);
      pm.set(i, j, {x, y, 3.0 + a * std::sin(b * x) * std::cos(c * y)});
    }
  return pm;
}

NormalMap random_unit_normals(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  NormalMap n(h, w);
  for (std::size_t f = 0; f < n.size(); ++f) n.set(f / w, f % w, oracle::random_unit(rng));
  return n;
}

DepthMap random_depth(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.5, 4.0);
  DepthMap d(h, w);
  for (std::size_t f = 0; f < d.size(); ++f) d.set(f / w, f % w, u(rng));
  return d;
}

// Multi-scale gradient difference recomputed directly for an all-true mask.
double gradient_loss_oracle(const DepthMap& p, const DepthMap& t) {
  const std::size_t H = p.height(), W = p.width();
  double total = 0.0;
  for (std::size_t s : {1u, 2u, 4u}) {
    double sum = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        if (j + s < W) {
          sum += std::abs((p(i, j + s) - p(i, j)) - (t(i, j + s) - t(i, j)));
          ++n;
        }
        if (i + s < H) {
          sum += std::abs((p(i + s, j) - p(i, j)) - (t(i + s, j) - t(i, j)));
          ++n;
        }
      }
    if (n > 0) total += sum / n;
  }
  return total;
}

}  // namespace

TEST(OptimalScale, TrivialCases) {
  std::mt19937_64 rng(1);
  const PointMap gt = random_points(5, 6, rng);
  EXPECT_EQ(solve_optimal_scale(gt, gt), 1.0);
  PointMap third = gt;
  for (auto& p : third.values()) p = p / 3.0;
  EXPECT_NEAR(solve_optimal_scale(third, gt), 3.0, 1e-14);
}

TEST(OptimalScale, MatchesOneDimensionalSearch) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 100; ++t) {
    const PointMap pred = random_points(8, 8, rng), gt = random_points(8, 8, rng);
    const double s = solve_optimal_scale(pred, gt);
    const double got = objective(pred, gt, s);

    // coarse log grid, then golden refinement in the best bracket
    double best_s = 1e-3, best = objective(pred, gt, best_s);
    const int n = 10000;
    const double lo = std::log(1e-3), hi = std::log(1e3);
    for (int k = 1; k <= n; ++k) {
      const double c = std::exp(lo + (hi - lo) * k / n);
      const double v = objective(pred, gt, c);
      if (v < best) {
        best = v;
        best_s = c;
      }
    }
    EXPECT_LE(got, best + 1e-12) << "instance " << t;
    const double step = std::exp((hi - lo) / n);
    const double g = oracle::golden_min([&](double c) { return objective(pred, gt, c); }, best_s / step, best_s * step);
    EXPECT_LE(got, objective(pred, gt, g) + 1e-9);
    EXPECT_NEAR(got, objective(pred, gt, g), 1e-6);
    EXPECT_NEAR(local_point_loss(pred, gt).value, objective(pred, gt, s), 1e-9);
  }
}

TEST(OptimalScale, SequenceUsesOneScale) {
  std::mt19937_64 rng(3);
  std::vector<PointMap> pred{random_points(4, 5, rng), random_points(4, 5, rng)};
  std::vector<PointMap> gt{scaled(pred[0], 2.5), scaled(pred[1], 2.5)};
  EXPECT_NEAR(solve_optimal_scale(pred, gt), 2.5, 1e-14);
  EXPECT_NEAR(local_point_loss(pred, gt).value, 0.0, 1e-12);
  EXPECT_EQ(local_point_loss(pred, gt).count, 40u);
}

TEST(OptimalScale, Errors) {
  PointMap a(2, 2), b(2, 2);
  EXPECT_THROW(solve_optimal_scale(a, b), InvalidArgument);
  a.set(0, 0, {0, 0, 0});
  b.set(0, 0, {1, 1, 1});
  try {
    solve_optimal_scale(a, b);
    FAIL();
  } catch (const DegenerateError& e) {
    EXPECT_STREQ(e.what(), "degenerate prediction");
  }
  EXPECT_THROW(solve_optimal_scale(PointMap(2, 3), PointMap(3, 2)), InvalidArgument);
}

TEST(OptimalScale, ShallowDepthsAreSkipped) {
  PointMap pred(1, 2), gt(1, 2);
  pred.set(0, 0, {1, 1, 1});
  gt.set(0, 0, {2, 2, 2});
  pred.set(0, 1, {5, 5, 5});
  gt.set(0, 1, {1, 1, 1e-9});
  EXPECT_EQ(solve_optimal_scale(pred, gt), 2.0);
  EXPECT_EQ(local_point_loss(pred, gt).count, 1u);
}

TEST(LocalPointLoss, ScaleInvariance) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 20; ++t) {
    const PointMap pred = random_points(7, 6, rng), gt = random_points(7, 6, rng);
    const double base = local_point_loss(pred, gt).value;
    EXPECT_EQ(local_point_loss(gt, gt).value, 0.0);
    EXPECT_NEAR(local_point_loss(scaled(gt, 2.0), gt).value, 0.0, 1e-14);
    for (double c : {0.1, 1.0, 10.0}) EXPECT_NEAR(local_point_loss(scaled(pred, c), gt).value, base, 1e-12 * base);
  }
}

TEST(LocalPointLoss, MeanReduction) {
  std::mt19937_64 rng(5);
  PointMap pred = random_points(4, 4, rng), gt = random_points(4, 4, rng);
  pred.set_valid(3, false);
  const auto sum = local_point_loss(pred, gt);
  const auto mean = local_point_loss(pred, gt, Reduction::mean);
  EXPECT_EQ(sum.count, 15u);
  EXPECT_NEAR(mean.value, sum.value / 15.0, 1e-15);
}

TEST(LocalPointLoss, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    for (auto red : {Reduction::sum, Reduction::mean}) {
      const auto c = gradcheck::check_local_point_loss(seed, red);
      EXPECT_TRUE(c.passed) << c.name << " max rel " << c.max_rel_error;
      EXPECT_LT(c.skipped * 4, c.entries);
    }
  }
}

TEST(GridNormals, Planes) {
  PointMap flat(4, 5);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j) flat.set(i, j, {0.3 * j, 0.2 * i, 2.0});
  const NormalMap n = grid_normals(flat);
  EXPECT_EQ(n.valid_count(), 12u);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(n(i, j), (Vec3{0, 0, -1}));
  EXPECT_FALSE(n.valid(3, 0));
  EXPECT_FALSE(n.valid(0, 4));

  PointMap tilted(3, 3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) tilted.set(i, j, {double(j), double(i), 4.0 + j});
  const Vec3 expect = Vec3{1, 0, -1} / std::sqrt(2.0);
  const NormalMap nt = grid_normals(tilted);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) EXPECT_LT(norm(nt(i, j) - expect), 1e-15);
  EXPECT_THROW(grid_normals(PointMap(1, 5)), InvalidArgument);
}

TEST(GridNormals, InvalidNeighbourInvalidatesPixel) {
  PointMap pm = wavy_surface(4, 4, 0.1, 1, 1);
  pm.set_valid(1, 2, false);
  const NormalMap n = grid_normals(pm);
  EXPECT_FALSE(n.valid(1, 1));  // right neighbour
  EXPECT_FALSE(n.valid(0, 2));  // down neighbour
  EXPECT_FALSE(n.valid(1, 2));
  EXPECT_TRUE(n.valid(0, 0));
}

TEST(GridNormals, SphereAgainstAnalyticNormals) {
  const std::size_t R = 64;
  PointMap pm(R, R);
  std::vector<Vec3> truth(R * R);
  const Vec3 center{0, 0, 3};
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < R; ++j) {
      const double x = -0.5 + 1.0 * j / (R - 1.0), y = -0.5 + 1.0 * i / (R - 1.0);
      const Vec3 p{x, y, center.z - std::sqrt(1.0 - x * x - y * y)};
      pm.set(i, j, p);
      truth[i * R + j] = p - center;  // unit, facing the camera on this cap
    }
  const NormalMap n = grid_normals(pm);
  double worst = 0.0;
  for (std::size_t f = 0; f < n.size(); ++f)
    if (n.valid(f)) worst = std::max(worst, angle_between(n[f], truth[f]));
  EXPECT_EQ(n.valid_count(), (R - 1) * (R - 1));
  EXPECT_LT(worst * 180.0 / std::numbers::pi, 2.0);
}

TEST(GridNormals, RotationEquivariantWithoutOrientation) {
  std::mt19937_64 rng(6);
  const PointMap pm = wavy_surface(9, 11, 0.4, 2.0, 1.5);
  for (int t = 0; t < 10; ++t) {
    const Mat3 r = oracle::random_rotation(rng).matrix();
    PointMap rotated = pm;
    for (auto& p : rotated.values()) p = r * p;
    const NormalMap a = grid_normals(pm, false), b = grid_normals(rotated, false);
    for (std::size_t f = 0; f < a.size(); ++f) {
      ASSERT_EQ(a.valid(f), b.valid(f));
      if (a.valid(f)) {
        EXPECT_LT(norm(r * a[f] - b[f]), 1e-9);
      }
    }
  }
}

TEST(PointNormalLoss, ZeroForEqualAndPiForOpposite) {
  const PointMap pm = wavy_surface(6, 7, 0.3, 2, 2);
  EXPECT_EQ(point_normal_loss(pm, pm).value, 0.0);

  NormalMap n = grid_normals(pm), opposite = n;
  for (auto& v : opposite.values()) v = -v;
  const auto t = normal_angle_loss(n, opposite);
  EXPECT_EQ(t.count, 30u);
  EXPECT_NEAR(t.value, 30 * std::numbers::pi, 1e-12);
}

TEST(PointNormalLoss, MatchesPixelwiseOracle) {
  for (int t = 0; t < 5; ++t) {
    const PointMap a = wavy_surface(10, 12, 0.2 + 0.1 * t, 2.0, 1.0 + t);
    const PointMap b = wavy_surface(10, 12, 0.5, 1.0 + t, 2.5);
    const NormalMap na = grid_normals(a), nb = grid_normals(b);
    double expect = 0.0;
    for (std::size_t f = 0; f < na.size(); ++f) {
      if (!na.valid(f) || !nb.valid(f)) continue;
      const double d = std::max(-1.0, std::min(1.0, dot(na[f], nb[f])));
      expect += std::acos(d);
    }
    const double got = point_normal_loss(a, b).value;
    EXPECT_NEAR(got, expect, 1e-12);
    EXPECT_GT(got, 0.0);
    EXPECT_NEAR(point_normal_loss(a, b, Reduction::mean).value, expect / 99.0, 1e-14);
  }
}

TEST(PointNormalLoss, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed : {21u, 22u}) {
    const auto c = gradcheck::check_point_normal_loss(seed, Reduction::sum);
    EXPECT_TRUE(c.passed) << c.name << " max rel " << c.max_rel_error;
  }
}

TEST(PredictedNormalLoss, ExamplesAndOracle) {
  std::mt19937_64 rng(7);
  const NormalMap gt = random_unit_normals(5, 5, rng);
  EXPECT_EQ(predicted_normal_loss(gt, gt).value, 0.0);

  NormalMap neg = gt;
  for (auto& v : neg.values()) v = -v;
  double mean_abs = 0.0;
  for (const auto& v : gt.values()) mean_abs += std::abs(v.x) + std::abs(v.y) + std::abs(v.z);
  mean_abs /= 75.0;
  EXPECT_NEAR(predicted_normal_loss(neg, gt).value, 2.0 * mean_abs, 1e-12);

  for (int t = 0; t < 10; ++t) {
    NormalMap a = random_unit_normals(6, 4, rng), b = random_unit_normals(6, 4, rng);
    a.set_valid(t % 24, false);
    double sum = 0.0;
    int n = 0;
    for (std::size_t f = 0; f < a.size(); ++f) {
      if (!a.valid(f)) continue;
      sum += std::abs(a[f].x - b[f].x) + std::abs(a[f].y - b[f].y) + std::abs(a[f].z - b[f].z);
      n += 3;
    }
    EXPECT_NEAR(predicted_normal_loss(a, b).value, sum / n, 1e-12);
  }
}

TEST(PredictedNormalLoss, EmptyOverlapWarns) {
  const auto t = predicted_normal_loss(NormalMap(2, 2), NormalMap(2, 2));
  EXPECT_EQ(t.value, 0.0);
  EXPECT_EQ(t.warnings, 1u);
}

TEST(PredictedNormalLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  NormalMap pred = random_unit_normals(4, 5, rng);
  const NormalMap gt = random_unit_normals(4, 5, rng);
  const auto analytic = predicted_normal_loss_grad(pred, gt);
  std::vector<double> x;
  for (const auto& v : pred.values()) x.insert(x.end(), {v.x, v.y, v.z});
  const auto numeric = oracle::numeric_gradient(x, [&] {
    NormalMap p = pred;
    for (std::size_t f = 0; f < p.size(); ++f) p[f] = {x[3 * f], x[3 * f + 1], x[3 * f + 2]};
    return predicted_normal_loss(p, gt).value;
  });
  for (std::size_t f = 0; f < pred.size(); ++f)
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(analytic[f][c], numeric[3 * f + c], 1e-7);
}

TEST(DepthGradientLoss, ShiftInvariantAndOracle) {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 5; ++t) {
    const DepthMap a = random_depth(9, 13, rng), b = random_depth(9, 13, rng);
    const auto all = depthprior::ConfidenceMask::all(9, 13, true);
    EXPECT_EQ(depth_gradient_loss(a, a, all).value, 0.0);
    DepthMap shifted = a;
    for (auto& v : shifted.values()) v += 1.25;
    EXPECT_NEAR(depth_gradient_loss(shifted, a, all).value, 0.0, 1e-14);
    EXPECT_NEAR(depth_gradient_loss(a, b, all).value, gradient_loss_oracle(a, b), 1e-12);
  }
}

TEST(DepthGradientLoss, MaskRestrictsPairs) {
  std::mt19937_64 rng(10);
  const DepthMap a = random_depth(3, 3, rng), b = random_depth(3, 3, rng);
  auto mask = depthprior::ConfidenceMask::all(3, 3, false);
  mask.mask[0] = mask.mask[1] = 1;
  const auto t = depth_gradient_loss(a, b, mask);
  EXPECT_EQ(t.count, 1u);
  EXPECT_NEAR(t.value, std::abs((a[1] - a[0]) - (b[1] - b[0])), 1e-15);
  EXPECT_THROW(depth_gradient_loss(a, b, depthprior::ConfidenceMask::all(3, 4, true)), InvalidArgument);
}

TEST(PriorGuidedDepthLoss, ComposesGradientLoss) {
  std::mt19937_64 rng(11);
  const DepthMap pred = random_depth(8, 8, rng), prior = random_depth(8, 8, rng);
  const auto none = prior_guided_depth_loss(pred, prior, depthprior::ConfidenceMask::all(8, 8, false));
  EXPECT_EQ(none.value, 0.0);
  EXPECT_EQ(none.warnings, 1u);
  const auto mask = depthprior::confidence_mask(prior, pred, 0.5, 0.5);
  EXPECT_EQ(prior_guided_depth_loss(pred, pred, mask).value, 0.0);
  EXPECT_EQ(prior_guided_depth_loss(pred, prior, mask).value, depth_gradient_loss(pred, prior, mask).value);
}

TEST(DepthLoss, BaseTermAndComposition) {
  std::mt19937_64 rng(12);
  const DepthMap gt = random_depth(6, 6, rng);
  DepthMap pred = gt;
  for (auto& v : pred.values()) v += 0.5;
  const auto base = base_depth_loss(pred, gt);
  EXPECT_NEAR(base.value, 0.5, 1e-12);  // gradients agree, only the offset remains
  const auto all = depthprior::ConfidenceMask::all(6, 6, true);
  EXPECT_NEAR(depth_loss(pred, gt, gt, all).value, 0.5, 1e-12);
  DepthMap conf(6, 6, 2.0, true);
  EXPECT_NEAR(base_depth_loss(pred, gt, conf, 0.1).value, 1.0 - 0.1 * std::log(2.0), 1e-12);
}

TEST(FuseFeatures, ConcatenatesChannelsInOrder) {
  FeatureGrid a(2, 3, 2), b(2, 3, 3);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      for (std::size_t c = 0; c < 2; ++c) a(i, j, c) = 100.0 * i + 10.0 * j + c;
      for (std::size_t c = 0; c < 3; ++c) b(i, j, c) = -(100.0 * i + 10.0 * j + c) - 1.0;
    }
  const FeatureGrid f = fuse_features(a, b);
  ASSERT_EQ(f.channels(), 5u);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(f(i, j, c), a(i, j, c));
      for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(f(i, j, 2 + c), b(i, j, c));
    }
  EXPECT_EQ(fuse_features(a, FeatureGrid(2, 3, 0)).data(), a.data());
  EXPECT_THROW(fuse_features(a, FeatureGrid(3, 2, 1)), InvalidArgument);
}

TEST(FuseFeatures, RandomGridsAreBitExact) {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> n(0.0, 1.0);
  FeatureGrid a(5, 4, 7), b(5, 4, 3);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      for (std::size_t c = 0; c < 7; ++c) a(i, j, c) = n(rng);
      for (std::size_t c = 0; c < 3; ++c) b(i, j, c) = n(rng);
    }
  const FeatureGrid f = fuse_features(a, b);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      for (std::size_t c = 0; c < 10; ++c) EXPECT_EQ(f(i, j, c), c < 7 ? a(i, j, c) : b(i, j, c - 7));
}

TEST(TotalLoss, DefaultWeights) {
  const LossWeights w;
  EXPECT_EQ(w.moe, 0.01);
  EXPECT_EQ(w.pts_local, 0.5);
  EXPECT_EQ(w.pts_n, 1.0);
  EXPECT_EQ(w.normal, 1.0);

  EXPECT_EQ(total_loss({}, w), 0.0);
  const LossParts ones{1, 1, 1, 1, 1, 1, 1, 1};
  EXPECT_NEAR(total_loss(ones, w), 3.0 + w.track + 0.01 + 0.5 + 1.0 + 1.0, 1e-15);
}

TEST(TotalLoss, RandomPartsAndValidation) {
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  for (int t = 0; t < 50; ++t) {
    const LossParts p{u(rng), u(rng), u(rng), u(rng), u(rng), u(rng), u(rng), u(rng)};
    const LossWeights w{u(rng), u(rng), u(rng), u(rng), u(rng)};
    const double expect = p.points + p.camera + p.depth + w.track * p.track + w.moe * p.moe +
                          w.pts_local * p.pts_local + w.pts_n * p.pts_n + w.normal * p.normal;
    EXPECT_NEAR(total_loss(p, w), expect, 1e-12);
  }
  LossWeights bad;
  bad.moe = -1.0;
  EXPECT_THROW(total_loss({}, bad), InvalidArgument);
  LossParts nan;
  nan.camera = std::nan("");
  EXPECT_THROW(total_loss(nan, LossWeights{}), InvalidArgument);
}
