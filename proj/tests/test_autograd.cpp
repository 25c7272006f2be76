#include <gtest/gtest.h>

#include "pedger/autograd.hpp"
#include "test_util.hpp"

using namespace pedger;
using pedger::testing::param_gradient_error;
using Var = Tape<double>::Var;

namespace {

std::vector<double> randn(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

/// Σ r_i · x_i with fixed random r, so every output element carries gradient.
Var probe(Tape<double>& tape, Var x, std::uint64_t seed) {
  const auto& v = tape.value(x);
  std::mt19937_64 rng(seed);
  auto r = randn(v.size(), rng);
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) s += r[i] * v.data[i];
  return tape.record(Tensor<double>(1, 1, 1, s), tape.requires_grad(x), [x, r](Tape<double>& t, const Tensor<double>& g) {
    auto& d = t.grad_buffer(x).data;
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g.data[0] * r[i];
  });
}

ModelParams<double> tensor_param(const std::string& name, std::vector<int> shape, std::mt19937_64& rng) {
  ModelParams<double> p;
  std::size_t n = 1;
  for (int d : shape) n *= d;
  p.add(name, shape, randn(n, rng));
  return p;
}

}  // namespace

TEST(Autograd, Conv2dGradients) {
  for (int k : {1, 3}) {
    for (int dil : {1, 2}) {
      if (k == 1 && dil == 2) continue;
      std::mt19937_64 rng(k * 10 + dil);
      ModelParams<double> p = tensor_param("x", {3, 7, 6}, rng);
      p.add("w", {4, 3, k, k}, randn(4 * 3 * k * k, rng));
      p.add("b", {4}, randn(4, rng));
      double err = param_gradient_error(
          p, [&](Tape<double>& t, const BoundParams<double>& b) {
            return probe(t, ops::conv2d(t, b["x"], b["w"], b["b"], k, dil), 1);
          },
          40, 2);
      EXPECT_LT(err, 1e-7) << "k=" << k << " dilation=" << dil;
    }
  }
}

TEST(Autograd, Conv2dMatchesDirectSum) {
  std::mt19937_64 rng(5);
  Tensor<double> x(2, 5, 4, randn(40, rng)), w(3, 2, 9, randn(54, rng)), b(3, 1, 1, randn(3, rng));
  Tape<double> t(false);
  auto y = t.value(ops::conv2d(t, t.input(x), t.input(w), t.input(b), 3));
  for (int o = 0; o < 3; ++o)
    for (int yy = 0; yy < 5; ++yy)
      for (int xx = 0; xx < 4; ++xx) {
        double s = b.data[o];
        for (int c = 0; c < 2; ++c)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int sy = yy + ky - 1, sx = xx + kx - 1;
              if (sy < 0 || sy >= 5 || sx < 0 || sx >= 4) continue;
              s += w.data[(o * 2 + c) * 9 + ky * 3 + kx] * x.at(c, sy, sx);
            }
        EXPECT_NEAR(y.at(o, yy, xx), s, 1e-12);
      }
}

TEST(Autograd, ElementwiseGradients) {
  std::mt19937_64 rng(3);
  ModelParams<double> p = tensor_param("a", {2, 5, 5}, rng);
  p.add("b", {2, 5, 5}, randn(50, rng));
  double err = param_gradient_error(
      p, [&](Tape<double>& t, const BoundParams<double>& b) {
        return probe(t, ops::sigmoid(t, ops::relu(t, ops::add(t, b["a"], b["b"]))), 4);
      },
      100, 5);
  EXPECT_LT(err, 1e-7);
}

TEST(Autograd, MaxPoolCeilMode) {
  Tensor<double> x(1, 3, 5);
  for (std::size_t i = 0; i < x.size(); ++i) x.data[i] = static_cast<double>(i);
  Tape<double> t(false);
  auto y = t.value(ops::maxpool2(t, t.input(x)));
  ASSERT_EQ(y.height, 2);
  ASSERT_EQ(y.width, 3);
  EXPECT_EQ(y.at(0, 0, 0), 6.0);
  EXPECT_EQ(y.at(0, 0, 2), 9.0);
  EXPECT_EQ(y.at(0, 1, 2), 14.0);

  std::mt19937_64 rng(9);
  ModelParams<double> p = tensor_param("x", {2, 7, 9}, rng);
  double err = param_gradient_error(
      p, [&](Tape<double>& tp, const BoundParams<double>& b) { return probe(tp, ops::maxpool2(tp, b["x"]), 6); }, 200, 7);
  EXPECT_LT(err, 1e-7);
}

TEST(Autograd, ResizeBilinear) {
  Tensor<double> x(1, 2, 2, std::vector<double>{0, 1, 2, 3});
  Tape<double> t(false);
  auto y = t.value(ops::resize_bilinear(t, t.input(x), 4, 4));
  // Half-pixel centres: corners replicate, interior interpolates.
  EXPECT_DOUBLE_EQ(y.at(0, 0, 0), 0.0);
  EXPECT_DOUBLE_EQ(y.at(0, 3, 3), 3.0);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 1), 0.25);
  EXPECT_DOUBLE_EQ(y.at(0, 1, 1), 0.75);

  std::mt19937_64 rng(11);
  ModelParams<double> p = tensor_param("x", {1, 3, 5}, rng);
  double err = param_gradient_error(
      p, [&](Tape<double>& tp, const BoundParams<double>& b) { return probe(tp, ops::resize_bilinear(tp, b["x"], 11, 13), 8); },
      100, 9);
  EXPECT_LT(err, 1e-7);
}

TEST(Autograd, CombineMapsTiedWeights) {
  std::mt19937_64 rng(13);
  ModelParams<double> p = tensor_param("m0", {1, 4, 4}, rng);
  p.add("m1", {1, 4, 4}, randn(16, rng));
  p.add("m2", {1, 4, 4}, randn(16, rng));
  p.add("w", {2}, randn(2, rng));
  p.add("b", {1}, randn(1, rng));
  auto fn = [&](Tape<double>& t, const BoundParams<double>& b) {
    return probe(t, ops::combine_maps(t, {b["m0"], b["m1"], b["m2"]}, b["w"], {0, 1, 1}, b["b"]), 10);
  };
  EXPECT_LT(param_gradient_error(p, fn, 100, 11), 1e-7);

  Tape<double> t(false);
  BoundParams<double> b(t, p);
  auto out = t.value(ops::combine_maps(t, {b["m0"], b["m1"], b["m2"]}, b["w"], {0, 1, 1}, b["b"]));
  const auto& w = p.at("w").values;
  for (int i = 0; i < 16; ++i)
    EXPECT_NEAR(out.data[i],
                p.at("b").values[0] + w[0] * p.at("m0").values[i] + w[1] * (p.at("m1").values[i] + p.at("m2").values[i]),
                1e-12);
}

TEST(Autograd, BackwardRequiresRecordingTape) {
  Tape<double> t(false);
  auto x = t.parameter(Tensor<double>(1, 1, 1, 1.0));
  EXPECT_THROW(t.backward(x), InvalidArgument);
}

TEST(Autograd, InputsReceiveNoGradient) {
  Tape<double> t;
  auto x = t.input(Tensor<double>(1, 2, 2, 1.0));
  auto w = t.parameter(Tensor<double>(1, 1, 1, 2.0));
  auto b = t.parameter(Tensor<double>(1, 1, 1, 0.0));
  auto y = probe(t, ops::conv2d(t, x, w, b, 1), 3);
  t.backward(y);
  EXPECT_EQ(t.grad(x), nullptr);
  EXPECT_NE(t.grad(w), nullptr);
}
