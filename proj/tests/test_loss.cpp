#include <gtest/gtest.h>

#include <cmath>

#include "pedger/loss.hpp"
#include "test_util.hpp"

using namespace pedger;

namespace {

ProbMap prob(std::initializer_list<double> v) {
  return ProbMap(static_cast<int>(v.size()), 1, std::vector<double>(v));
}
BinaryEdgeMap bin(std::initializer_list<int> v) {
  BinaryEdgeMap b(static_cast<int>(v.size()), 1);
  int i = 0;
  for (int x : v) b[i++] = static_cast<std::uint8_t>(x);
  return b;
}

/// Hard-label balanced BCE written out directly.
double hard_reference(const ProbMap& e, const BinaryEdgeMap& y, double lambda) {
  double pos = 0, neg = 0;
  for (std::size_t i = 0; i < y.size(); ++i) (y[i] ? pos : neg) += 1;
  const double alpha = lambda * pos / (pos + neg), beta = neg / (pos + neg);
  double l = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double ec = std::min(std::max(e[i], 1e-6), 1 - 1e-6);
    l += y[i] ? -alpha * std::log(ec) : -beta * std::log(1 - ec);
  }
  return l;
}

}  // namespace

TEST(BalancedBce, LogTwoCase) {
  LossConfig cfg;
  cfg.lambda = 1.0;
  EXPECT_NEAR(balanced_bce(prob({0.5, 0.5}), prob({1, 0}), bin({1, 0}), cfg), std::log(2.0), 1e-9);
}

TEST(BalancedBce, LambdaOnePointOneCase) {
  LossConfig cfg;
  cfg.lambda = 1.1;
  const double expected = 0.5 * 1.1 * std::log(2.0) + 0.5 * std::log(2.0);
  EXPECT_NEAR(balanced_bce(prob({0.5, 0.5}), prob({1, 0}), bin({1, 0}), cfg), expected, 1e-9);
}

TEST(BalancedBce, PerfectPredictionNearMinimum) {
  LossConfig cfg;
  auto y = bin({1, 0, 0, 1, 0});
  auto e = prob({1, 0, 0, 1, 0});
  const double l = balanced_bce(e, to_prob(y), y, cfg);
  EXPECT_GE(l, 0.0);
  EXPECT_LT(l, 5 * 1.1 * 1e-6 * 1.01);
}

TEST(BalancedBce, DegenerateIsZero) {
  LossConfig cfg;
  // Y = 1 where Ỹ = 0 and vice versa: no positive or negative mass.
  EXPECT_EQ(balanced_bce(prob({0.3, 0.7}), prob({0, 1}), bin({1, 0}), cfg), 0.0);
}

TEST(BalancedBce, HardTargetsMatchDirectImplementation) {
  std::mt19937_64 rng(1);
  LossConfig cfg;
  for (int trial = 0; trial < 10; ++trial) {
    auto y = pedger::testing::random_binary(6, 7, 0.3, rng);
    auto e = pedger::testing::random_prob(6, 7, rng);
    EXPECT_NEAR(balanced_bce(e, to_prob(y), y, cfg), hard_reference(e, y, cfg.lambda), 1e-12);
  }
}

TEST(BalancedBce, AlphaConventions) {
  auto y = bin({1, 0, 0, 0});
  LossConfig paper, hed;
  hed.alpha_convention = AlphaConvention::hed;
  auto wp = balance_weights(to_prob(y), y, paper);
  auto wh = balance_weights(to_prob(y), y, hed);
  EXPECT_NEAR(wp.alpha, 1.1 * 0.25, 1e-15);
  EXPECT_NEAR(wp.beta, 0.75, 1e-15);
  EXPECT_NEAR(wh.alpha, 1.1 * 0.75, 1e-15);
  EXPECT_NEAR(wh.beta, 0.25, 1e-15);
  EXPECT_EQ(parse_alpha_convention("hed"), AlphaConvention::hed);
  EXPECT_THROW(parse_alpha_convention("x"), InvalidArgument);
}

TEST(BalancedBce, DecreasesTowardTarget) {
  LossConfig cfg;
  auto y = bin({1, 0, 1});
  auto ys = prob({0.9, 0.1, 0.6});
  auto e = prob({0.2, 0.8, 0.1});
  double prev = balanced_bce(e, ys, y, cfg);
  for (int k = 0; k < 20; ++k) {
    e[0] += (ys[0] - e[0]) * 0.2;
    const double l = balanced_bce(e, ys, y, cfg);
    EXPECT_LT(l, prev);
    prev = l;
  }
}

TEST(BalancedBce, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    LossConfig cfg;
    auto y = pedger::testing::random_binary(8, 8, 0.25, rng);
    auto ys = pedger::testing::random_prob(8, 8, rng);
    auto e = pedger::testing::random_prob(8, 8, rng, 0.02, 0.98);
    auto g = balanced_bce_grad(e, ys, y, cfg);
    double d2 = 0, a2 = 0, n2 = 0;
    const double h = 1e-7;
    for (std::size_t i = 0; i < e.size(); ++i) {
      auto up = e, dn = e;
      up[i] += h;
      dn[i] -= h;
      const double num = (balanced_bce(up, ys, y, cfg) - balanced_bce(dn, ys, y, cfg)) / (2 * h);
      d2 += (num - g[i]) * (num - g[i]);
      a2 += g[i] * g[i];
      n2 += num * num;
    }
    EXPECT_LT(std::sqrt(d2) / (std::sqrt(a2) + std::sqrt(n2)), 1e-4) << "trial " << trial;
  }
}

TEST(BalancedBce, ZeroGradientInsideClamp) {
  LossConfig cfg;
  auto g = balanced_bce_grad(prob({1e-9, 0.5}), prob({1, 0}), bin({1, 0}), cfg);
  EXPECT_EQ(g[0], 0.0);
  EXPECT_NE(g[1], 0.0);
}

namespace {

SideOutputs fake_outputs(int steps, std::mt19937_64& rng) {
  SideOutputs o;
  std::normal_distribution<double> n(0, 2);
  auto logits = [&] {
    Grid<double> g(5, 6);
    for (auto& v : g.values()) v = n(rng);
    return g;
  };
  for (int t = 0; t < steps; ++t) {
    o.f2c.push_back(logits());
    o.c2f.push_back(logits());
  }
  o.fused_logit = logits();
  o.fused = sigmoid_map(o.fused_logit);
  return o;
}

}  // namespace

TEST(TotalLoss, RecurrentHasElevenTermsAtFiveSteps) {
  std::mt19937_64 rng(2);
  auto o = fake_outputs(5, rng);
  auto y = pedger::testing::random_binary(5, 6, 0.3, rng);
  auto ys = pedger::testing::random_prob(5, 6, rng);
  LossConfig cfg;
  auto terms = loss_terms(o, ys, y, cfg);
  ASSERT_EQ(terms.size(), 11u);
  double sum = balanced_bce(o.fused, ys, y, cfg);
  for (int t = 0; t < 5; ++t)
    sum += balanced_bce(sigmoid_map(o.f2c[t]), ys, y, cfg) + balanced_bce(sigmoid_map(o.c2f[t]), ys, y, cfg);
  EXPECT_NEAR(total_loss_recurrent(o, ys, y, cfg), sum, 1e-9);
}

TEST(TotalLoss, NonRecurrentHasNineTerms) {
  std::mt19937_64 rng(3);
  auto o = fake_outputs(4, rng);
  auto y = pedger::testing::random_binary(5, 6, 0.3, rng);
  auto ys = to_prob(y);
  LossConfig cfg;
  EXPECT_EQ(loss_terms(o, ys, y, cfg).size(), 9u);
  double sum = 0;
  for (double t : loss_terms(o, ys, y, cfg)) sum += t;
  EXPECT_NEAR(total_loss_nonrecurrent(o, ys, y, cfg), sum, 1e-9);
  EXPECT_THROW(total_loss_nonrecurrent(fake_outputs(5, rng), ys, y, cfg), StructuralMismatch);
}

TEST(TotalLoss, SaturatedPredictionsNearMinimal) {
  SideOutputs o;
  for (int t = 0; t < 5; ++t) {
    o.f2c.emplace_back(4, 4, 50.0);
    o.c2f.emplace_back(4, 4, 50.0);
  }
  o.fused_logit = Grid<double>(4, 4, 50.0);
  o.fused = sigmoid_map(o.fused_logit);
  BinaryEdgeMap y(4, 4, 1);
  LossConfig cfg;
  EXPECT_LT(total_loss_recurrent(o, to_prob(y), y, cfg), 11 * 16 * 1.1 * 1.01e-6);
}
