#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "more/train.hpp"

using namespace more;
using namespace more::train;

namespace {

ToyConfig small(std::uint64_t seed, std::size_t steps = 300) {
  ToyConfig c;
  c.seed = seed;
  c.task.tokens = 128;
  c.schedule.steps = steps;
  return c;
}

}  // namespace

TEST(TrainToy, LossDecreasesAndStagesSwitch) {
  std::size_t callbacks = 0;
  const ToyResult r = train_toy(small(1), [&](const StepLog&) { ++callbacks; });
  ASSERT_EQ(r.log.size(), 300u);
  EXPECT_EQ(callbacks, 300u);
  EXPECT_LT(r.final_loss, r.initial_loss);
  EXPECT_LT(r.final_mse, r.log.front().mse);

  EXPECT_EQ(r.log[149].stage, 1);
  EXPECT_EQ(r.log[150].stage, 2);
  // stage 1 is a dense layer: one expert receives everything
  EXPECT_EQ(r.log[0].f.size(), 1u);
  EXPECT_EQ(r.log[0].balance, 1.0);
  EXPECT_EQ(r.log[150].f.size(), 4u);
  EXPECT_EQ(r.model.layer.num_experts(), 4u);
  for (const auto& s : r.log) {
    EXPECT_NEAR(std::accumulate(s.f.begin(), s.f.end(), 0.0), 1.0, 1e-12);
    EXPECT_TRUE(std::isfinite(s.loss));
    EXPECT_LE(s.used_loss, s.loss);
  }
}

TEST(TrainToy, SameSeedIsBitIdentical) {
  const ToyResult a = train_toy(small(4, 120)), b = train_toy(small(4, 120));
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_EQ(a.log[i].loss, b.log[i].loss);
    EXPECT_EQ(a.log[i].f, b.log[i].f);
  }
  EXPECT_EQ(a.domain_purity, b.domain_purity);
  const ToyResult c = train_toy(small(5, 120));
  EXPECT_NE(a.log.back().loss, c.log.back().loss);
}

TEST(TrainToy, LogEveryThinsCallbacksButKeepsLast) {
  ToyConfig c = small(2, 25);
  c.schedule.log_every = 10;
  std::vector<std::size_t> steps;
  train_toy(c, [&](const StepLog& s) { steps.push_back(s.step); });
  EXPECT_EQ(steps, (std::vector<std::size_t>{0, 10, 20, 24}));
}

TEST(TrainToy, ClippingCanBeDisabled) {
  ToyConfig c = small(3, 100);
  c.clip = false;
  const ToyResult r = train_toy(c);
  EXPECT_EQ(r.clip_events, 0u);
  for (const auto& s : r.log) {
    EXPECT_FALSE(s.threshold.has_value());
    EXPECT_EQ(s.used_loss, s.loss);
  }
}

TEST(TrainToy, AllStageOneKeepsDenseLayer) {
  ToyConfig c = small(6, 50);
  c.schedule.stage1_fraction = 1.0;
  const ToyResult r = train_toy(c);
  EXPECT_EQ(r.model.layer.num_experts(), 1u);
  EXPECT_EQ(r.max_share, 1.0);
  EXPECT_EQ(r.mean_purity, 1.0);
}

TEST(SummarizeRouting, MatchesDirectCount) {
  const auto spec = synth::DomainTaskSpec::random(4, 8, 4, 4.0, 0.05, 11);
  const synth::MoeTask task = synth::make_moe_task(spec, 200, 12);
  std::mt19937_64 rng(13);
  ToyModel m;
  m.layer = moe::MoeLayer::replicate(moe::ExpertFfn::random(8, 4, rng), 4, 1, 0.0, 14);
  for (std::size_t e = 0; e < 4; ++e)
    for (std::size_t i = 0; i < 8; ++i) m.layer.router.weight(e, i) = spec.centers[e][i];
  ToyResult r;
  summarize_routing(m, task, 4, r);

  // top-1 by hand: argmax of the raw logits, lowest index on ties
  std::size_t hist[4][4] = {};
  std::size_t share[4] = {};
  for (std::size_t t = 0; t < task.tokens.rows(); ++t) {
    std::size_t best = 0;
    double best_v = -1e300;
    for (std::size_t e = 0; e < 4; ++e) {
      double v = 0.0;
      for (std::size_t i = 0; i < 8; ++i) v += spec.centers[e][i] * task.tokens(t, i);
      if (v > best_v) best_v = v, best = e;
    }
    ++hist[task.labels[t]][best];
    ++share[best];
  }
  double mean_purity = 0.0;
  for (std::size_t c = 0; c < 4; ++c) {
    const auto* row = hist[c];
    const std::size_t modal = static_cast<std::size_t>(std::max_element(row, row + 4) - row);
    const double purity = static_cast<double>(row[modal]) / 50.0;
    EXPECT_EQ(r.domain_expert[c], modal);
    EXPECT_DOUBLE_EQ(r.domain_purity[c], purity);
    mean_purity += purity / 4.0;
  }
  EXPECT_DOUBLE_EQ(r.mean_purity, mean_purity);
  EXPECT_DOUBLE_EQ(r.max_share, *std::max_element(share, share + 4) / 200.0);

  // a zero router sends everything to expert 0
  for (double& w : m.layer.router.weight.data()) w = 0.0;
  summarize_routing(m, task, 4, r);
  EXPECT_EQ(r.max_share, 1.0);
  EXPECT_EQ(r.mean_purity, 1.0);
  EXPECT_EQ(r.domain_expert, (std::vector<std::size_t>{0, 0, 0, 0}));
}

TEST(ToyConfig, ValidationRaisesConfigError) {
  auto bad = [](auto mutate) {
    ToyConfig c;
    mutate(c);
    EXPECT_THROW(c.validate(), ConfigError);
  };
  bad([](ToyConfig& c) { c.task.domains = 1; });
  bad([](ToyConfig& c) { c.task.tokens = 0; });
  bad([](ToyConfig& c) { c.moe.k = 5; });
  bad([](ToyConfig& c) { c.moe.k = 0; });
  bad([](ToyConfig& c) { c.moe.hidden = 0; });
  bad([](ToyConfig& c) { c.schedule.stage1_fraction = 1.5; });
  bad([](ToyConfig& c) { c.schedule.learning_rate = 0.0; });
  bad([](ToyConfig& c) { c.lambda_moe = -0.1; });
  bad([](ToyConfig& c) { c.clipper.k = 0.0; });
  EXPECT_NO_THROW(ToyConfig{}.validate());
  EXPECT_EQ(ToyConfig{}.lambda_moe, 0.01);
}
