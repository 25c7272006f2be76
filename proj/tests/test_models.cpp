#include <gtest/gtest.h>

#include "pedger/loss.hpp"
#include "pedger/model_nonrecurrent.hpp"
#include "pedger/model_recurrent.hpp"
#include "test_util.hpp"

using namespace pedger;
using pedger::testing::param_gradient_error;
using pedger::testing::random_image;

TEST(RecurrentModel, ParameterCountIndependentOfSteps) {
  RecurrentConfig cfg;
  cfg.steps = 2;
  const auto base = build_recurrent<float>(cfg, 1).count();
  for (int t : {3, 5, 8}) {
    cfg.steps = t;
    EXPECT_EQ(build_recurrent<float>(cfg, 1).count(), base) << "T=" << t;
  }
}

TEST(RecurrentModel, OutputsMatchInputSize) {
  RecurrentConfig cfg = RecurrentConfig::compact();
  auto p = build_recurrent<float>(cfg, 3);
  for (auto [h, w] : {std::pair{16, 16}, {17, 23}, {40, 33}}) {
    auto out = forward_recurrent(cfg, p, random_image(h, w, 1));
    ASSERT_EQ(out.f2c.size(), 5u);
    ASSERT_EQ(out.c2f.size(), 5u);
    EXPECT_EQ(out.fused.height(), h);
    EXPECT_EQ(out.fused.width(), w);
    for (const auto& m : out.f2c) EXPECT_TRUE(m.same_shape(out.fused));
    for (double v : out.fused.values()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(RecurrentModel, RejectsParamsForAnotherConfig) {
  auto p = build_recurrent<float>(RecurrentConfig::compact(), 1);
  EXPECT_THROW(forward_recurrent(RecurrentConfig{}, p, random_image(16, 16, 1)), StructuralMismatch);
  RecurrentConfig bad;
  bad.steps = 1;
  EXPECT_THROW(bad.validate(), InvalidArgument);
}

TEST(RecurrentModel, ForwardIsDeterministic) {
  auto cfg = RecurrentConfig::compact();
  auto p = build_recurrent<float>(cfg, 4);
  auto img = random_image(20, 24, 2);
  EXPECT_EQ(forward_recurrent(cfg, p, img).fused, forward_recurrent(cfg, p, img).fused);
  EXPECT_EQ(build_recurrent<float>(cfg, 4), p);
}

TEST(NonRecurrentModel, StageCountsNonDecreasingAndBudget) {
  auto p = build_nonrecurrent<float>(NonRecurrentConfig{}, 1);
  auto stages = stage_parameter_counts(p);
  for (int s = 1; s < kNonRecurrentStages; ++s) EXPECT_GE(stages[s], stages[s - 1]);
  const double total = static_cast<double>(p.count());
  EXPECT_GE(total, 183500 * 0.85);
  EXPECT_LE(total, 183500 * 1.15);
}

TEST(NonRecurrentModel, LargeVariantIsWider) {
  auto small = build_nonrecurrent<float>(NonRecurrentConfig{}, 1).count();
  auto large = build_nonrecurrent<float>(NonRecurrentConfig::large(), 1).count();
  EXPECT_GT(large, small);
}

TEST(NonRecurrentModel, ConfigValidation) {
  NonRecurrentConfig c;
  c.stage_channels = {32, 16, 48, 64};
  EXPECT_THROW(c.validate(), InvalidArgument);
  c.stage_channels = {16, 16, 16, 16};
  EXPECT_THROW(c.validate(), InvalidArgument);
}

TEST(NonRecurrentModel, OutputsMatchInputSize) {
  NonRecurrentConfig cfg;
  auto p = build_nonrecurrent<float>(cfg, 2);
  for (auto [h, w] : {std::pair{16, 16}, {19, 31}}) {
    auto out = forward_nonrecurrent(cfg, p, random_image(h, w, 3));
    ASSERT_EQ(out.f2c.size(), 4u);
    EXPECT_EQ(out.fused.height(), h);
    EXPECT_EQ(out.fused.width(), w);
  }
  EXPECT_THROW(forward_nonrecurrent(NonRecurrentConfig::large(), p, random_image(16, 16, 3)), StructuralMismatch);
}

namespace {

struct Targets {
  ProbMap soft;
  BinaryEdgeMap hard;
};

Targets random_targets(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Targets t{pedger::testing::random_prob(h, w, rng), pedger::testing::random_binary(h, w, 0.2, rng)};
  return t;
}

}  // namespace

TEST(GradientCheck, RecurrentEndToEnd) {
  RecurrentConfig cfg{3, 4, 6, 4};
  auto p = build_recurrent<double>(cfg, 7);
  pedger::testing::jitter_biases(p, 17);
  auto img = random_image(16, 16, 5);
  auto tg = random_targets(16, 16, 6);
  LossConfig lc;
  double err = param_gradient_error(
      p, [&](Tape<double>& t, const BoundParams<double>& b) {
        return ops::total_loss(t, forward_recurrent(t, cfg, p, b, img), tg.soft, tg.hard, lc);
      },
      6, 8);
  EXPECT_LT(err, 1e-3);
}

TEST(GradientCheck, NonRecurrentEndToEnd) {
  NonRecurrentConfig cfg{{3, 4, 5, 6}, 4};
  auto p = build_nonrecurrent<double>(cfg, 9);
  pedger::testing::jitter_biases(p, 19);
  auto img = random_image(16, 16, 10);
  auto tg = random_targets(16, 16, 11);
  LossConfig lc;
  lc.alpha_convention = AlphaConvention::hed;
  double err = param_gradient_error(
      p, [&](Tape<double>& t, const BoundParams<double>& b) {
        return ops::total_loss(t, forward_nonrecurrent(t, cfg, p, b, img), tg.soft, tg.hard, lc);
      },
      6, 12);
  EXPECT_LT(err, 1e-3);
}

TEST(GradientCheck, TapeLossEqualsMapLoss) {
  NonRecurrentConfig cfg;
  auto p = build_nonrecurrent<double>(cfg, 1);
  auto img = random_image(16, 16, 2);
  auto tg = random_targets(16, 16, 3);
  LossConfig lc;
  Tape<double> t(false);
  BoundParams<double> b(t, p);
  auto g = forward_nonrecurrent(t, cfg, p, b, img);
  const double tape_loss = t.value(ops::total_loss(t, g, tg.soft, tg.hard, lc)).data[0];
  const double map_loss = total_loss_nonrecurrent(collect_side_outputs(t, g), tg.soft, tg.hard, lc);
  EXPECT_NEAR(tape_loss, map_loss, 1e-9 * std::max(1.0, std::abs(map_loss)));
}
