#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "more/error.hpp"
#include "more/linalg/matrix.hpp"

namespace more::moe {

// Exact (erf-based) GELU.
inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

inline double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) * 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
  return cdf + x * pdf;
}

/// Two-layer feed-forward expert: y = W2 gelu(W1 x + b1) + b2.
///
/// Also used as the gradient container for its own parameters.
struct ExpertFfn {
  Matrix w1;               // hidden x d
  std::vector<double> b1;  // hidden
  Matrix w2;               // d x hidden
  std::vector<double> b2;  // d

  static ExpertFfn zeros(std::size_t dim, std::size_t hidden) {
    return {Matrix(hidden, dim), std::vector<double>(hidden, 0.0), Matrix(dim, hidden), std::vector<double>(dim, 0.0)};
  }

  // Weights ~ N(0, 1/fan_in), biases ~ N(0, bias_std^2).
  static ExpertFfn random(std::size_t dim, std::size_t hidden, std::mt19937_64& rng, double bias_std = 0.1) {
    ExpertFfn e = zeros(dim, hidden);
    std::normal_distribution<double> n1(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
    std::normal_distribution<double> n2(0.0, 1.0 / std::sqrt(static_cast<double>(hidden)));
    std::normal_distribution<double> nb(0.0, bias_std);
    for (double& v : e.w1.data()) v = n1(rng);
    for (double& v : e.b1) v = nb(rng);
    for (double& v : e.w2.data()) v = n2(rng);
    for (double& v : e.b2) v = nb(rng);
    return e;
  }

  std::size_t dim() const { return w1.cols(); }
  std::size_t hidden() const { return w1.rows(); }

  void validate() const {
    if (w1.rows() == 0 || w1.cols() == 0) throw InvalidArgument("expert: empty weights");
    if (b1.size() != hidden() || w2.rows() != dim() || w2.cols() != hidden() || b2.size() != dim())
      throw InvalidArgument("expert: inconsistent parameter shapes");
    if (!all_finite(w1.data()) || !all_finite(b1) || !all_finite(w2.data()) || !all_finite(b2))
      throw InvalidArgument("expert: non-finite parameters");
  }

  // `pre` receives W1 x + b1 (needed by the backward pass).
  void forward(std::span<const double> x, std::span<double> pre, std::span<double> out) const {
    matvec(w1, x, pre);
    std::vector<double> act(hidden());
    for (std::size_t h = 0; h < hidden(); ++h) {
      pre[h] += b1[h];
      act[h] = gelu(pre[h]);
    }
    matvec(w2, act, out);
    for (std::size_t i = 0; i < dim(); ++i) out[i] += b2[i];
  }

  std::vector<double> forward(std::span<const double> x) const {
    std::vector<double> pre(hidden()), out(dim());
    forward(x, pre, out);
    return out;
  }

  // Accumulates parameter gradients into `grad` and input gradient into `dx`,
  // given dL/dy = `dy` and the cached pre-activation.
  void backward(std::span<const double> x, std::span<const double> pre, std::span<const double> dy, double scale,
                ExpertFfn& grad, std::span<double> dx) const {
    const std::size_t nh = hidden();
    std::vector<double> act(nh), dh(nh, 0.0);
    for (std::size_t h = 0; h < nh; ++h) act[h] = gelu(pre[h]);
    std::vector<double> sdy(dy.begin(), dy.end());
    for (double& v : sdy) v *= scale;
    add_outer(grad.w2, sdy, act);
    for (std::size_t i = 0; i < dim(); ++i) grad.b2[i] += sdy[i];
    matvec_transposed_add(w2, sdy, dh);
    for (std::size_t h = 0; h < nh; ++h) dh[h] *= gelu_grad(pre[h]);
    add_outer(grad.w1, dh, x);
    for (std::size_t h = 0; h < nh; ++h) grad.b1[h] += dh[h];
    matvec_transposed_add(w1, dh, dx);
  }

  // Visits every parameter tensor in a fixed order: w1, b1, w2, b2.
  template <class F>
  void for_each_tensor(F&& f) {
    f("w1", w1.data());
    f("b1", std::span<double>(b1));
    f("w2", w2.data());
    f("b2", std::span<double>(b2));
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    f("w1", w1.data());
    f("b1", std::span<const double>(b1));
    f("w2", w2.data());
    f("b2", std::span<const double>(b2));
  }
};

/// Linear router producing expert logits W x.
struct Router {
  Matrix weight;  // E x d

  std::size_t num_experts() const { return weight.rows(); }
  std::size_t dim() const { return weight.cols(); }
};

struct MoeLayer {
  Router router;
  std::vector<ExpertFfn> experts;
  std::size_t k = 1;
  // When set, the selected top-k probabilities are rescaled to sum to one.
  bool renormalize = false;

  std::size_t num_experts() const { return experts.size(); }
  std::size_t dim() const { return router.dim(); }
  std::size_t hidden() const { return experts.empty() ? 0 : experts.front().hidden(); }

  void validate() const {
    if (experts.empty() || router.num_experts() == 0) throw InvalidArgument("moe: need at least one expert");
    if (router.num_experts() != experts.size()) throw InvalidArgument("moe: router rows must equal expert count");
    if (k < 1 || k > experts.size()) throw InvalidArgument("moe: k must be in [1, E]");
    if (!all_finite(router.weight.data())) throw InvalidArgument("moe: non-finite router weights");
    for (const auto& e : experts) {
      e.validate();
      if (e.dim() != dim() || e.hidden() != hidden()) throw InvalidArgument("moe: experts disagree on shape");
    }
  }

  /// Builds E copies of `base` with a zero router (uniform initial routing).
  /// Each copy's tensors receive N(0, (jitter * rms(tensor))^2) noise drawn
  /// from `seed`; jitter = 0 gives exact replicas.
  static MoeLayer replicate(const ExpertFfn& base, std::size_t num_experts, std::size_t k, double jitter = 1e-2,
                            std::uint64_t seed = 0) {
    base.validate();
    MoeLayer layer;
    layer.router.weight = Matrix(num_experts, base.dim());
    layer.k = k;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    for (std::size_t e = 0; e < num_experts; ++e) {
      ExpertFfn copy = base;
      if (jitter > 0.0) {
        copy.for_each_tensor([&](const char*, std::span<double> t) {
          double ss = 0.0;
          for (double v : t) ss += v * v;
          const double rms = std::sqrt(ss / static_cast<double>(t.size()));
          for (double& v : t) v += jitter * rms * unit(rng);
        });
      }
      layer.experts.push_back(std::move(copy));
    }
    layer.validate();
    return layer;
  }
};

/// Softmax routing probabilities and the top-k selection per token.
struct RouterOutput {
  Matrix probs;                            // T x E
  std::size_t k = 1;
  std::vector<std::size_t> topk_indices;  // T * k, descending probability
  std::vector<double> topk_weights;       // T * k

  std::size_t token_count() const { return probs.rows(); }
  std::span<const std::size_t> indices(std::size_t t) const { return {topk_indices.data() + t * k, k}; }
  std::span<const double> weights(std::size_t t) const { return {topk_weights.data() + t * k, k}; }
};

/// Per-expert dispatch fraction f (sums to 1) and mean routing probability g.
struct DispatchStats {
  std::vector<double> f;
  std::vector<double> g;
  std::size_t token_count = 0;

  std::size_t num_experts() const { return f.size(); }
};

namespace detail {

inline void check_tokens(const MoeLayer& layer, const Matrix& tokens) {
  if (tokens.rows() == 0) throw InvalidArgument("moe: need at least one token");
  if (tokens.cols() != layer.dim())
    throw InvalidArgument("moe: token dimension " + std::to_string(tokens.cols()) + " does not match layer dimension " +
                          std::to_string(layer.dim()));
}

inline void softmax(std::span<const double> logits, std::span<double> out) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    s += out[i];
  }
  for (double& v : out) v /= s;
}

}  // namespace detail

inline RouterOutput route(const MoeLayer& layer, const Matrix& tokens) {
  layer.validate();
  detail::check_tokens(layer, tokens);
  const std::size_t T = tokens.rows(), E = layer.num_experts(), k = layer.k;
  RouterOutput out;
  out.k = k;
  out.probs = Matrix(T, E);
  out.topk_indices.resize(T * k);
  out.topk_weights.resize(T * k);
  std::vector<double> logits(E);
  std::vector<std::size_t> order(E);
  for (std::size_t t = 0; t < T; ++t) {
    matvec(layer.router.weight, tokens.row(t), logits);
    auto p = out.probs.row(t);
    detail::softmax(logits, p);
    for (std::size_t e = 0; e < E; ++e) order[e] = e;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
    double sel = 0.0;
    for (std::size_t j = 0; j < k; ++j) sel += p[order[j]];
    for (std::size_t j = 0; j < k; ++j) {
      out.topk_indices[t * k + j] = order[j];
      out.topk_weights[t * k + j] = layer.renormalize ? p[order[j]] / sel : p[order[j]];
    }
  }
  return out;
}

/// f_i = (# (token, slot) assignments to expert i) / (T k); for k = 1 this is
/// the fraction of tokens whose top-1 expert is i. g_i = mean_t P(x_t)_i.
inline DispatchStats dispatch_stats(const RouterOutput& routing) {
  const std::size_t T = routing.token_count(), E = routing.probs.cols();
  DispatchStats s;
  s.token_count = T;
  s.f.assign(E, 0.0);
  s.g.assign(E, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t idx : routing.indices(t)) s.f[idx] += 1.0;
    const auto p = routing.probs.row(t);
    for (std::size_t e = 0; e < E; ++e) s.g[e] += p[e];
  }
  const double inv_assign = 1.0 / static_cast<double>(T * routing.k);
  const double inv_t = 1.0 / static_cast<double>(T);
  for (std::size_t e = 0; e < E; ++e) {
    s.f[e] *= inv_assign;
    s.g[e] *= inv_t;
  }
  return s;
}

// E * sum_i f_i g_i
inline double load_balance_loss(const DispatchStats& stats) {
  double s = 0.0;
  for (std::size_t i = 0; i < stats.num_experts(); ++i) s += stats.f[i] * stats.g[i];
  return static_cast<double>(stats.num_experts()) * s;
}

struct MoeForward {
  Matrix outputs;  // T x d
  DispatchStats stats;
  RouterOutput routing;
};

inline MoeForward moe_forward(const MoeLayer& layer, const Matrix& tokens) {
  MoeForward fw;
  fw.routing = route(layer, tokens);
  fw.stats = dispatch_stats(fw.routing);
  const std::size_t T = tokens.rows(), d = layer.dim();
  fw.outputs = Matrix(T, d);
  std::vector<double> pre(layer.hidden()), y(d);
  for (std::size_t t = 0; t < T; ++t) {
    auto out = fw.outputs.row(t);
    const auto idx = fw.routing.indices(t);
    const auto w = fw.routing.weights(t);
    for (std::size_t j = 0; j < layer.k; ++j) {
      layer.experts[idx[j]].forward(tokens.row(t), pre, y);
      for (std::size_t i = 0; i < d; ++i) out[i] += w[j] * y[i];
    }
  }
  return fw;
}

struct MoeGradients {
  Matrix router;                    // E x d
  std::vector<ExpertFfn> experts;   // same shapes as the layer's experts
  Matrix tokens;                    // T x d
};

/// Gradients of  L = <upstream, MoE(tokens)> + balance_weight * L_moe.
///
/// Top-k selection is piecewise constant and treated as non-differentiable, as
/// is f in the balancing term; gradient reaches the router through the
/// selected experts' probabilities and through g.
inline MoeGradients moe_backward(const MoeLayer& layer, const Matrix& tokens, const Matrix& upstream,
                                 double balance_weight = 0.0) {
  const RouterOutput routing = route(layer, tokens);
  const std::size_t T = tokens.rows(), E = layer.num_experts(), d = layer.dim(), k = layer.k;
  if (upstream.rows() != T || upstream.cols() != d) throw InvalidArgument("moe_backward: upstream shape mismatch");

  MoeGradients g;
  g.router = Matrix(E, d);
  g.tokens = Matrix(T, d);
  g.experts.reserve(E);
  for (std::size_t e = 0; e < E; ++e) g.experts.push_back(ExpertFfn::zeros(d, layer.hidden()));

  std::vector<double> balance_dp(E, 0.0);
  if (balance_weight != 0.0) {
    const DispatchStats stats = dispatch_stats(routing);
    // d/dP(x_t)_i of E * sum_i f_i * mean_t P(x_t)_i
    for (std::size_t e = 0; e < E; ++e)
      balance_dp[e] = balance_weight * static_cast<double>(E) * stats.f[e] / static_cast<double>(T);
  }

  std::vector<double> pre(layer.hidden()), y(d), dp(E), dz(E), a(k);
  for (std::size_t t = 0; t < T; ++t) {
    const auto x = tokens.row(t);
    const auto gy = upstream.row(t);
    const auto p = routing.probs.row(t);
    const auto idx = routing.indices(t);
    const auto w = routing.weights(t);
    auto dx = g.tokens.row(t);

    for (std::size_t j = 0; j < k; ++j) {
      const ExpertFfn& ex = layer.experts[idx[j]];
      ex.forward(x, pre, y);
      double ay = 0.0;
      for (std::size_t i = 0; i < d; ++i) ay += gy[i] * y[i];
      a[j] = ay;
      ex.backward(x, pre, gy, w[j], g.experts[idx[j]], dx);
    }

    std::copy(balance_dp.begin(), balance_dp.end(), dp.begin());
    if (layer.renormalize) {
      double sel = 0.0, wa = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        sel += p[idx[j]];
        wa += w[j] * a[j];
      }
      for (std::size_t j = 0; j < k; ++j) dp[idx[j]] += (a[j] - wa) / sel;
    } else {
      for (std::size_t j = 0; j < k; ++j) dp[idx[j]] += a[j];
    }

    double pdp = 0.0;
    for (std::size_t e = 0; e < E; ++e) pdp += p[e] * dp[e];
    for (std::size_t e = 0; e < E; ++e) dz[e] = p[e] * (dp[e] - pdp);
    add_outer(g.router, dz, x);
    matvec_transposed_add(layer.router.weight, dz, dx);
  }
  return g;
}

}  // namespace more::moe
