#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "more/error.hpp"
#include "more/linalg/matrix.hpp"
#include "more/losses.hpp"
#include "more/moe.hpp"
#include "more/numeric.hpp"
#include "more/stability.hpp"
#include "more/synth.hpp"

namespace more::train {

struct TaskConfig {
  std::size_t domains = 4;
  std::size_t dim = 8;
  std::size_t out_dim = 4;
  double center_scale = 2.0;
  double spread = 0.5;
  std::size_t tokens = 512;
};

struct MoeConfig {
  std::size_t experts = 4;
  std::size_t k = 1;
  std::size_t hidden = 8;
  double jitter = 1e-2;
  bool renormalize = false;
};

struct ScheduleConfig {
  std::size_t steps = 2000;
  double stage1_fraction = 0.5;
  double learning_rate = 0.03;
  std::size_t log_every = 1;
};

struct ToyConfig {
  std::uint64_t seed = 0;
  TaskConfig task;
  MoeConfig moe;
  ScheduleConfig schedule;
  double lambda_moe = losses::LossWeights{}.moe;
  bool clip = true;
  stability::ClipperConfig clipper;

  void validate() const {
    if (task.domains < 2) throw ConfigError("task.domains must be >= 2");
    if (task.dim == 0 || task.out_dim == 0 || task.tokens == 0) throw ConfigError("task dimensions must be positive");
    if (moe.experts < 1 || moe.k < 1 || moe.k > moe.experts) throw ConfigError("moe.k must be in [1, moe.experts]");
    if (moe.hidden == 0) throw ConfigError("moe.hidden must be positive");
    if (!(schedule.stage1_fraction >= 0.0 && schedule.stage1_fraction <= 1.0))
      throw ConfigError("schedule.stage1_fraction must be in [0, 1]");
    if (!(schedule.learning_rate > 0.0)) throw ConfigError("schedule.learning_rate must be positive");
    if (!(lambda_moe >= 0.0)) throw ConfigError("lambda_moe must be nonnegative");
    try {
      clipper.validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what());
    }
  }
};

/// MoE block with a residual connection followed by a linear head:
/// prediction = head_w (x + MoE(x)) + head_b.
struct ToyModel {
  moe::MoeLayer layer;
  Matrix head_w;  // out_dim x dim
  std::vector<double> head_b;
};

struct StepLog {
  std::size_t step = 0;
  int stage = 1;
  double loss = 0.0;  // raw total loss
  double mse = 0.0;
  double balance = 0.0;  // L_moe
  bool clipped = false;
  double used_loss = 0.0;  // after clipping
  std::optional<double> threshold;
  std::vector<double> f;
};

struct ToyResult {
  std::vector<StepLog> log;
  moe::DispatchStats final_stats;
  double max_share = 0.0;             // max_i f_i on the training set
  std::vector<double> domain_purity;  // fraction of a domain's tokens on its modal top-1 expert
  std::vector<std::size_t> domain_expert;  // the modal expert per domain
  double mean_purity = 0.0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double final_mse = 0.0;
  std::size_t clip_events = 0;
  ToyModel model;
};

namespace detail {

struct Evaluation {
  moe::MoeForward fw;
  Matrix hidden;  // x + MoE(x)
  Matrix pred;
  double mse = 0.0;
};

inline Evaluation evaluate(const ToyModel& m, const synth::MoeTask& task) {
  Evaluation ev;
  ev.fw = moe::moe_forward(m.layer, task.tokens);
  const std::size_t T = task.tokens.rows(), d = task.tokens.cols(), out = task.targets.cols();
  ev.hidden = Matrix(T, d);
  ev.pred = Matrix(T, out);
  std::vector<double> sq;
  sq.reserve(T * out);
  for (std::size_t t = 0; t < T; ++t) {
    auto h = ev.hidden.row(t);
    for (std::size_t i = 0; i < d; ++i) h[i] = task.tokens(t, i) + ev.fw.outputs(t, i);
    auto p = ev.pred.row(t);
    matvec(m.head_w, h, p);
    for (std::size_t o = 0; o < out; ++o) {
      p[o] += m.head_b[o];
      const double r = p[o] - task.targets(t, o);
      sq.push_back(r * r);
    }
  }
  ev.mse = mean(sq);
  return ev;
}

inline void sgd(std::span<double> param, std::span<const double> grad, double lr) {
  for (std::size_t i = 0; i < param.size(); ++i) param[i] -= lr * grad[i];
}

}  // namespace detail

/// Routing quality on a task: dispatch statistics plus per-domain purity.
inline void summarize_routing(const ToyModel& model, const synth::MoeTask& task, std::size_t domains, ToyResult& r) {
  const moe::RouterOutput routing = moe::route(model.layer, task.tokens);
  r.final_stats = moe::dispatch_stats(routing);
  r.max_share = *std::max_element(r.final_stats.f.begin(), r.final_stats.f.end());
  const std::size_t E = model.layer.num_experts();
  std::vector<std::vector<std::size_t>> hist(domains, std::vector<std::size_t>(E, 0));
  std::vector<std::size_t> totals(domains, 0);
  for (std::size_t t = 0; t < task.tokens.rows(); ++t) {
    ++hist[task.labels[t]][routing.indices(t)[0]];
    ++totals[task.labels[t]];
  }
  r.domain_purity.assign(domains, 0.0);
  r.domain_expert.assign(domains, 0);
  double acc = 0.0;
  for (std::size_t c = 0; c < domains; ++c) {
    const auto it = std::max_element(hist[c].begin(), hist[c].end());
    r.domain_expert[c] = static_cast<std::size_t>(it - hist[c].begin());
    r.domain_purity[c] = totals[c] ? static_cast<double>(*it) / static_cast<double>(totals[c]) : 0.0;
    acc += r.domain_purity[c];
  }
  r.mean_purity = acc / static_cast<double>(domains);
}

/// Two-stage training on the multi-domain token task with plain SGD.
///
/// Stage 1 trains a single dense FFN (a one-expert layer, probability 1).
/// Stage 2 replicates it into E jittered experts behind a zero router and
/// continues on task MSE + lambda_moe * L_moe. When clipping is enabled the
/// total loss passes through a k-sigma clipper; a clipped step scales every
/// gradient by threshold / loss.
inline ToyResult train_toy(const ToyConfig& cfg, const std::function<void(const StepLog&)>& on_step = {}) {
  cfg.validate();
  const auto spec = synth::DomainTaskSpec::random(cfg.task.domains, cfg.task.dim, cfg.task.out_dim,
                                                  cfg.task.center_scale, cfg.task.spread, cfg.seed);
  const synth::MoeTask task = synth::make_moe_task(spec, cfg.task.tokens, cfg.seed + 1);

  std::mt19937_64 rng(cfg.seed + 2);
  ToyModel model;
  model.layer.experts.push_back(moe::ExpertFfn::random(cfg.task.dim, cfg.moe.hidden, rng));
  model.layer.router.weight = Matrix(1, cfg.task.dim);
  model.layer.k = 1;
  model.head_w = Matrix(cfg.task.out_dim, cfg.task.dim);
  {
    std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(cfg.task.dim)));
    for (double& v : model.head_w.data()) v = n(rng);
  }
  model.head_b.assign(cfg.task.out_dim, 0.0);

  stability::LossClipper clipper(cfg.clipper);
  const std::size_t stage1_steps =
      static_cast<std::size_t>(std::llround(cfg.schedule.stage1_fraction * static_cast<double>(cfg.schedule.steps)));
  const std::size_t T = task.tokens.rows(), d = cfg.task.dim, out = cfg.task.out_dim;

  ToyResult res;
  for (std::size_t step = 0; step < cfg.schedule.steps; ++step) {
    const int stage = step < stage1_steps ? 1 : 2;
    if (stage == 2 && model.layer.num_experts() == 1 && cfg.moe.experts >= 1) {
      const moe::ExpertFfn base = model.layer.experts.front();
      model.layer = moe::MoeLayer::replicate(base, cfg.moe.experts, cfg.moe.k, cfg.moe.jitter, cfg.seed + 3);
      model.layer.renormalize = cfg.moe.renormalize;
    }
    const double lambda = stage == 2 ? cfg.lambda_moe : 0.0;

    const detail::Evaluation ev = detail::evaluate(model, task);
    const double balance = moe::load_balance_loss(ev.fw.stats);
    const double loss = ev.mse + lambda * balance;

    StepLog log{step, stage, loss, ev.mse, balance, false, loss, std::nullopt, ev.fw.stats.f};
    double grad_scale = 1.0;
    if (cfg.clip) {
      const auto c = clipper.observe_and_clip(loss);
      log.clipped = c.was_clipped;
      log.threshold = c.threshold;
      log.used_loss = c.value;
      if (c.was_clipped && loss > 0.0) grad_scale = c.value / loss;
    }
    res.clip_events += log.clipped ? 1 : 0;
    if (step == 0) res.initial_loss = loss;

    // dL/dpred for the mean squared error.
    Matrix dpred(T, out);
    const double coef = grad_scale * 2.0 / static_cast<double>(T * out);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t o = 0; o < out; ++o) dpred(t, o) = coef * (ev.pred(t, o) - task.targets(t, o));

    Matrix g_head(out, d);
    std::vector<double> g_bias(out, 0.0);
    Matrix dhidden(T, d);
    for (std::size_t t = 0; t < T; ++t) {
      add_outer(g_head, dpred.row(t), ev.hidden.row(t));
      for (std::size_t o = 0; o < out; ++o) g_bias[o] += dpred(t, o);
      matvec_transposed_add(model.head_w, dpred.row(t), dhidden.row(t));
    }
    const moe::MoeGradients g = moe::moe_backward(model.layer, task.tokens, dhidden, grad_scale * lambda);

    const double lr = cfg.schedule.learning_rate;
    detail::sgd(model.head_w.data(), g_head.data(), lr);
    detail::sgd(model.head_b, g_bias, lr);
    detail::sgd(model.layer.router.weight.data(), g.router.data(), lr);
    for (std::size_t e = 0; e < model.layer.num_experts(); ++e) {
      auto& ex = model.layer.experts[e];
      const auto& ge = g.experts[e];
      detail::sgd(ex.w1.data(), ge.w1.data(), lr);
      detail::sgd(ex.b1, ge.b1, lr);
      detail::sgd(ex.w2.data(), ge.w2.data(), lr);
      detail::sgd(ex.b2, ge.b2, lr);
    }

    if (on_step && (step % std::max<std::size_t>(cfg.schedule.log_every, 1) == 0 || step + 1 == cfg.schedule.steps))
      on_step(log);
    res.log.push_back(std::move(log));
  }

  // Final state after the last update.
  const detail::Evaluation ev = detail::evaluate(model, task);
  const bool moe_stage = model.layer.num_experts() > 1 || stage1_steps < cfg.schedule.steps;
  res.final_mse = ev.mse;
  res.final_loss = ev.mse + (moe_stage ? cfg.lambda_moe : 0.0) * moe::load_balance_loss(ev.fw.stats);
  summarize_routing(model, task, cfg.task.domains, res);
  res.model = std::move(model);
  return res;
}

}  // namespace more::train
