#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "rtaformer/errors.hpp"
#include "rtaformer/fusion.hpp"

using namespace rtaformer;

namespace {

std::vector<double> closed_form(const std::vector<double>& raw, double eps) {
  double total = 0.0;
  for (double r : raw) total += r > 0.0 ? r : 0.0;
  std::vector<double> w;
  for (double r : raw) w.push_back((r > 0.0 ? r : 0.0) / (total + eps));
  return w;
}

}  // namespace

TEST(FastFusion, InitialWeightsAreEqual) {
  FastFusion f(3);
  auto w = effective_weights(f);
  // float32 parameters.
  for (double v : w) EXPECT_NEAR(v, 1.0 / (3.0 + kFusionEpsilon), 1e-7);
}

TEST(FastFusion, EffectiveWeightsMatchClosedForm) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal(0.0, 1.5);
  for (int trial = 0; trial < 200; ++trial) {
    const int64_t n = 2 + trial % 4;
    FastFusion f(n);
    f->to(torch::kFloat64);
    std::vector<double> raw;
    for (int64_t i = 0; i < n; ++i) raw.push_back(normal(rng));
    {
      torch::NoGradGuard g;
      for (int64_t i = 0; i < n; ++i) f->raw[i] = raw[static_cast<size_t>(i)];
    }
    const auto expect = closed_form(raw, kFusionEpsilon);
    const auto module_w = f->weights();
    const auto free_w = effective_weights(raw);
    for (int64_t i = 0; i < n; ++i) {
      EXPECT_NEAR(module_w[i].item<double>(), expect[static_cast<size_t>(i)], 1e-12);
      EXPECT_NEAR(free_w[static_cast<size_t>(i)], expect[static_cast<size_t>(i)], 1e-12);
    }
  }
}

TEST(FastFusion, AllNegativeWeightsGiveZeroOutput) {
  FastFusion f(2);
  {
    torch::NoGradGuard g;
    f->raw.fill_(-1.0);
  }
  auto y = f->forward({torch::randn({1, 4, 3, 3}), torch::randn({1, 4, 3, 3})});
  EXPECT_EQ(y.abs().max().item<double>(), 0.0);
}

TEST(FastFusion, ForwardIsSwishOfWeightedSum) {
  torch::manual_seed(2);
  FastFusion f(2);
  {
    torch::NoGradGuard g;
    f->raw[0] = 0.3;
    f->raw[1] = 2.0;
  }
  auto a = torch::randn({2, 5, 4, 4}), b = torch::randn({2, 5, 4, 4});
  const double w0 = 0.3 / (2.3 + kFusionEpsilon), w1 = 2.0 / (2.3 + kFusionEpsilon);
  auto s = w0 * a + w1 * b;
  auto expect = s * torch::sigmoid(s);
  EXPECT_TRUE(torch::allclose(f->forward({a, b}), expect, 1e-6, 1e-6));
  EXPECT_TRUE(torch::allclose(swish(s), expect));
}

TEST(FastFusion, GradientMatchesFiniteDifferences) {
  torch::manual_seed(9);
  FastFusion f(3);
  f->to(torch::kFloat64);
  {
    torch::NoGradGuard g;
    f->raw.copy_(torch::tensor({0.7, 1.3, 0.4}, torch::kFloat64));
  }
  std::vector<torch::Tensor> xs;
  for (int i = 0; i < 3; ++i) xs.push_back(torch::randn({1, 2, 3, 3}, torch::kFloat64));
  auto probe = torch::randn({1, 2, 3, 3}, torch::kFloat64);

  // With respect to the raw weights.
  auto raw0 = f->raw.detach().clone();
  auto f_raw = [&](const torch::Tensor& r) {
    torch::NoGradGuard g;
    f->raw.copy_(r);
    return (f(xs) * probe).sum().item<double>();
  };
  auto numeric = oracle::central_difference(f_raw, raw0, 1e-6);
  {
    torch::NoGradGuard g;
    f->raw.copy_(raw0);
  }
  f->zero_grad();
  (f(xs) * probe).sum().backward();
  EXPECT_LT(oracle::relative_error(f->raw.grad(), numeric), 1e-4);

  // With respect to one input.
  auto f_x = [&](const torch::Tensor& x) {
    auto in = xs;
    in[1] = x;
    return (f(in) * probe).sum().item<double>();
  };
  auto numeric_x = oracle::central_difference(f_x, xs[1], 1e-6);
  auto x1 = xs[1].clone().requires_grad_(true);
  auto in = xs;
  in[1] = x1;
  (f(in) * probe).sum().backward();
  EXPECT_LT(oracle::relative_error(x1.grad(), numeric_x), 1e-4);
}

TEST(FastFusion, Errors) {
  FastFusion f(2);
  EXPECT_THROW(f->forward({torch::randn({1, 2, 3, 3})}), ConfigError);
  EXPECT_THROW(f->forward({torch::randn({1, 2, 3, 3}), torch::randn({1, 2, 4, 3})}), ShapeError);
  EXPECT_THROW(FastFusion(0), ConfigError);
}
