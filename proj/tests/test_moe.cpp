#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "more/gradcheck.hpp"
#include "more/moe.hpp"
#include "oracles.hpp"

using namespace more;
using namespace more::moe;

namespace {

MoeLayer random_layer(std::size_t d, std::size_t h, std::size_t E, std::size_t k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  MoeLayer layer;
  layer.k = k;
  layer.router.weight = Matrix(E, d);
  for (double& v : layer.router.weight.data()) v = n(rng);
  for (std::size_t e = 0; e < E; ++e) layer.experts.push_back(ExpertFfn::random(d, h, rng, 0.3));
  return layer;
}

Matrix random_tokens(std::size_t T, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(T, d);
  for (double& v : m.data()) v = n(rng);
  return m;
}

// Plain softmax without max subtraction; fine for the moderate logits used here.
std::vector<double> oracle_probs(const MoeLayer& layer, std::span<const double> x) {
  const std::size_t E = layer.num_experts();
  std::vector<double> p(E);
  double z = 0.0;
  for (std::size_t e = 0; e < E; ++e) {
    double logit = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) logit += layer.router.weight(e, i) * x[i];
    p[e] = std::exp(logit);
    z += p[e];
  }
  for (double& v : p) v /= z;
  return p;
}

// Selection by repeated argmax with the lowest index winning ties.
std::vector<std::size_t> oracle_topk(const std::vector<double>& p, std::size_t k) {
  std::vector<bool> taken(p.size(), false);
  std::vector<std::size_t> out;
  for (std::size_t s = 0; s < k; ++s) {
    std::size_t best = p.size();
    for (std::size_t e = 0; e < p.size(); ++e)
      if (!taken[e] && (best == p.size() || p[e] > p[best])) best = e;
    taken[best] = true;
    out.push_back(best);
  }
  return out;
}

std::vector<double> oracle_expert(const ExpertFfn& ex, std::span<const double> x) {
  std::vector<double> h(ex.hidden()), y(ex.dim());
  for (std::size_t j = 0; j < ex.hidden(); ++j) {
    double a = ex.b1[j];
    for (std::size_t i = 0; i < x.size(); ++i) a += ex.w1(j, i) * x[i];
    h[j] = 0.5 * a * (1.0 + std::erf(a / std::sqrt(2.0)));
  }
  for (std::size_t i = 0; i < ex.dim(); ++i) {
    double a = ex.b2[i];
    for (std::size_t j = 0; j < ex.hidden(); ++j) a += ex.w2(i, j) * h[j];
    y[i] = a;
  }
  return y;
}

// Evaluates every expert, then masks the terms outside the top-k.
Matrix dense_oracle(const MoeLayer& layer, const Matrix& tokens) {
  Matrix out(tokens.rows(), tokens.cols());
  for (std::size_t t = 0; t < tokens.rows(); ++t) {
    const auto x = tokens.row(t);
    const auto p = oracle_probs(layer, x);
    const auto sel = oracle_topk(p, layer.k);
    double norm = 0.0;
    for (auto e : sel) norm += p[e];
    for (std::size_t e = 0; e < layer.num_experts(); ++e) {
      const bool on = std::find(sel.begin(), sel.end(), e) != sel.end();
      const double w = on ? (layer.renormalize ? p[e] / norm : p[e]) : 0.0;
      const auto y = oracle_expert(layer.experts[e], x);
      for (std::size_t i = 0; i < y.size(); ++i) out(t, i) += w * y[i];
    }
  }
  return out;
}

}  // namespace

TEST(Gelu, ValuesAndDerivative) {
  EXPECT_EQ(gelu(0.0), 0.0);
  EXPECT_NEAR(gelu(1.0), 0.8413447460685429, 1e-15);
  EXPECT_NEAR(gelu(-1.0), -0.15865525393145707, 1e-15);
  for (double x : {-3.0, -0.7, 0.0, 0.4, 2.5}) {
    const double fd = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
    EXPECT_NEAR(gelu_grad(x), fd, 1e-8);
  }
}

TEST(Route, ZeroRouterIsUniformAndPicksExpertZero) {
  MoeLayer layer = random_layer(5, 4, 4, 1, 1);
  layer.router.weight.fill(0.0);
  const auto r = route(layer, random_tokens(6, 5, 2));
  for (std::size_t t = 0; t < 6; ++t) {
    for (std::size_t e = 0; e < 4; ++e) EXPECT_EQ(r.probs(t, e), 0.25);
    EXPECT_EQ(r.indices(t)[0], 0u);
  }
}

TEST(Route, TwoExpertLogits) {
  MoeLayer layer = random_layer(1, 2, 2, 1, 1);
  layer.router.weight = Matrix(2, 1, std::vector<double>{std::log(3.0), 0.0});
  const auto r = route(layer, Matrix(1, 1, std::vector<double>{1.0}));
  EXPECT_NEAR(r.probs(0, 0), 0.75, 1e-15);
  EXPECT_NEAR(r.probs(0, 1), 0.25, 1e-15);
}

TEST(Route, MatchesSoftmaxOracleAndSumsToOne) {
  const MoeLayer layer = random_layer(8, 4, 6, 3, 3);
  const Matrix x = random_tokens(64, 8, 4);
  const auto r = route(layer, x);
  for (std::size_t t = 0; t < 64; ++t) {
    const auto p = oracle_probs(layer, x.row(t));
    double s = 0.0;
    for (std::size_t e = 0; e < 6; ++e) {
      EXPECT_NEAR(r.probs(t, e), p[e], 1e-12);
      s += r.probs(t, e);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
    const auto sel = oracle_topk(p, 3);
    for (std::size_t s2 = 0; s2 < 3; ++s2) {
      EXPECT_EQ(r.indices(t)[s2], sel[s2]);
      EXPECT_EQ(r.weights(t)[s2], r.probs(t, sel[s2]));
    }
  }
}

TEST(Route, LargeLogitsStayFinite) {
  MoeLayer layer = random_layer(2, 2, 3, 1, 5);
  layer.router.weight = Matrix(3, 2, std::vector<double>{800, 0, 0, 800, -800, 0});
  const auto r = route(layer, Matrix(1, 2, std::vector<double>{1.0, 0.5}));
  EXPECT_TRUE(all_finite(r.probs.data()));
  EXPECT_EQ(r.indices(0)[0], 0u);
}

TEST(Route, DimensionMismatchThrows) {
  const MoeLayer layer = random_layer(4, 3, 2, 1, 6);
  EXPECT_THROW(route(layer, random_tokens(3, 5, 1)), InvalidArgument);
  MoeLayer bad = layer;
  bad.k = 3;
  EXPECT_THROW(moe_forward(bad, random_tokens(3, 4, 1)), InvalidArgument);
}

TEST(MoeForward, SingleExpertIsIdentityRouting) {
  const MoeLayer layer = random_layer(5, 7, 1, 1, 7);
  const Matrix x = random_tokens(9, 5, 8);
  const auto fw = moe_forward(layer, x);
  for (std::size_t t = 0; t < 9; ++t) {
    const auto y = layer.experts[0].forward(x.row(t));
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(fw.outputs(t, i), y[i]);
  }
}

TEST(MoeForward, IdenticalExpertsWithFullTopK) {
  MoeLayer layer = random_layer(4, 6, 2, 2, 9);
  layer.experts[1] = layer.experts[0];
  const Matrix x = random_tokens(5, 4, 10);
  const auto fw = moe_forward(layer, x);
  for (std::size_t t = 0; t < 5; ++t) {
    const auto y = layer.experts[0].forward(x.row(t));
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(fw.outputs(t, i), y[i], 1e-14);
  }
}

TEST(MoeForward, MatchesDenseOracle) {
  for (bool renorm : {false, true}) {
    MoeLayer layer = random_layer(6, 10, 4, 2, 11);
    layer.renormalize = renorm;
    const Matrix x = random_tokens(16, 6, 12);
    const auto fw = moe_forward(layer, x);
    const Matrix ref = dense_oracle(layer, x);
    for (std::size_t i = 0; i < ref.data().size(); ++i) EXPECT_NEAR(fw.outputs.data()[i], ref.data()[i], 1e-12);
  }
}

TEST(LoadBalance, UniformRoutingGivesOne) {
  for (std::size_t E : {2u, 4u, 8u}) {
    DispatchStats s{std::vector<double>(E, 1.0 / E), std::vector<double>(E, 1.0 / E), 10};
    EXPECT_NEAR(load_balance_loss(s), 1.0, 1e-15);
  }
}

TEST(LoadBalance, CollapseGivesE) {
  for (std::size_t E : {2u, 4u, 8u}) {
    DispatchStats s{std::vector<double>(E, 0.0), std::vector<double>(E, 0.0), 10};
    s.f[0] = s.g[0] = 1.0;
    EXPECT_EQ(load_balance_loss(s), static_cast<double>(E));
  }
}

TEST(LoadBalance, MatchesBruteForceCounts) {
  for (std::size_t k : {1u, 2u, 3u}) {
    const MoeLayer layer = random_layer(5, 3, 5, k, 13 + k);
    const Matrix x = random_tokens(37, 5, 14);
    const auto fw = moe_forward(layer, x);
    std::vector<double> counts(5, 0.0), psum(5, 0.0);
    for (std::size_t t = 0; t < 37; ++t) {
      const auto p = oracle_probs(layer, x.row(t));
      for (auto e : oracle_topk(p, k)) counts[e] += 1.0;
      for (std::size_t e = 0; e < 5; ++e) psum[e] += p[e];
    }
    double ref = 0.0, fsum = 0.0;
    for (std::size_t e = 0; e < 5; ++e) {
      const double f = counts[e] / (37.0 * static_cast<double>(k));
      const double g = psum[e] / 37.0;
      EXPECT_NEAR(fw.stats.f[e], f, 1e-15);
      EXPECT_NEAR(fw.stats.g[e], g, 1e-12);
      ref += f * g;
      fsum += fw.stats.f[e];
    }
    EXPECT_NEAR(fsum, 1.0, 1e-12);
    EXPECT_NEAR(load_balance_loss(fw.stats), 5.0 * ref, 1e-12);
  }
}

TEST(MoeBackward, ZeroUpstreamGivesZeroGradients) {
  const MoeLayer layer = random_layer(4, 5, 3, 2, 15);
  const Matrix x = random_tokens(6, 4, 16);
  const auto g = moe_backward(layer, x, Matrix(6, 4));
  for (double v : g.router.data()) EXPECT_EQ(v, 0.0);
  for (double v : g.tokens.data()) EXPECT_EQ(v, 0.0);
  for (const auto& e : g.experts) {
    for (double v : e.w1.data()) EXPECT_EQ(v, 0.0);
    for (double v : e.w2.data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(MoeBackward, SingleExpertRouterGradientIsZero) {
  const MoeLayer layer = random_layer(4, 5, 1, 1, 17);
  const Matrix x = random_tokens(6, 4, 18), u = random_tokens(6, 4, 19);
  const auto g = moe_backward(layer, x, u, 0.5);
  for (double v : g.router.data()) EXPECT_EQ(v, 0.0);
}

// Independent check with its own finite differences over the router only,
// with the balance term switched on.
TEST(MoeBackward, RouterGradientMatchesOwnFiniteDifferences) {
  MoeLayer layer = random_layer(6, 8, 3, 2, 20);
  const Matrix x = random_tokens(5, 6, 21), u = random_tokens(5, 6, 22);
  const double beta = 0.7;
  const auto g = moe_backward(layer, x, u, beta);
  std::vector<double> w(layer.router.weight.data().begin(), layer.router.weight.data().end());
  auto f = [&] {
    std::copy(w.begin(), w.end(), layer.router.weight.data().begin());
    const auto fw = moe_forward(layer, x);
    double v = 0.0;
    for (std::size_t i = 0; i < u.data().size(); ++i) v += u.data()[i] * fw.outputs.data()[i];
    return v + beta * load_balance_loss(fw.stats);
  };
  const auto num = oracle::numeric_gradient(w, f, 1e-6);
  for (std::size_t i = 0; i < num.size(); ++i) EXPECT_NEAR(g.router.data()[i], num[i], 1e-6 * std::max(1.0, std::abs(num[i])));
}

TEST(MoeBackward, FiniteDifferenceSuiteOnSmallLayers) {
  gradcheck::MoeInstance inst;
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    inst.balance_weight = seed % 2 ? 0.25 : 0.0;
    inst.renormalize = seed % 4 >= 2;
    const auto c = gradcheck::check_moe(inst, 100 + seed);
    EXPECT_TRUE(c.passed) << c.name << " max_rel=" << c.max_rel_error;
    EXPECT_GT(c.entries, 300u);
  }
}

TEST(Replicate, ExactCopiesWithoutJitter) {
  std::mt19937_64 rng(23);
  const ExpertFfn base = ExpertFfn::random(4, 6, rng);
  const MoeLayer layer = MoeLayer::replicate(base, 3, 1, 0.0);
  for (const auto& e : layer.experts) EXPECT_EQ(e.w1, base.w1);
  for (double v : layer.router.weight.data()) EXPECT_EQ(v, 0.0);
  // With a zero router and exact copies the layer is the base FFN scaled by 1/E.
  const Matrix x = random_tokens(3, 4, 24);
  const auto fw = moe_forward(layer, x);
  const auto y = base.forward(x.row(1));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(fw.outputs(1, i), y[i] / 3.0, 1e-15);
}

TEST(Replicate, JitterIsRelativeAndSeeded) {
  std::mt19937_64 rng(25);
  const ExpertFfn base = ExpertFfn::random(8, 16, rng);
  const MoeLayer a = MoeLayer::replicate(base, 4, 2, 1e-2, 9);
  const MoeLayer b = MoeLayer::replicate(base, 4, 2, 1e-2, 9);
  EXPECT_EQ(a.experts[3].w2, b.experts[3].w2);
  EXPECT_NE(a.experts[0].w1, a.experts[1].w1);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < base.w1.data().size(); ++i) {
    num += oracle::sq(a.experts[2].w1.data()[i] - base.w1.data()[i]);
    den += oracle::sq(base.w1.data()[i]);
  }
  EXPECT_NEAR(std::sqrt(num / den), 1e-2, 3e-3);
}
