#include <gtest/gtest.h>

#include "rtaformer/decoder.hpp"
#include "rtaformer/errors.hpp"
#include "rtaformer/fusion.hpp"

using namespace rtaformer;

namespace F = torch::nn::functional;

namespace {

FeaturePyramid random_pyramid(int64_t c, int64_t s) {
  FeaturePyramid p;
  for (size_t i = 0; i < 4; ++i) {
    const int64_t side = s >> (i + 2);
    p.levels[i] = torch::randn({2, c, side, side});
  }
  return p;
}

std::array<torch::Tensor, 4> perturbed(const FeaturePyramid& p) {
  std::array<torch::Tensor, 4> r;
  for (size_t i = 0; i < 4; ++i) r[i] = p[i] + 0.5 * torch::randn_like(p[i]);
  return r;
}

}  // namespace

TEST(Decoder, OutputShape) {
  torch::manual_seed(0);
  Decoder d(8);
  for (int64_t s : {64, 128}) {
    auto p = random_pyramid(8, s);
    auto y = decode(d, p, perturbed(p), {s, s});
    EXPECT_EQ(y.sizes(), (std::vector<int64_t>{2, 1, s, s}));
  }
}

TEST(Decoder, ParameterLayout) {
  Decoder d(8);
  EXPECT_EQ(d->fusions.size(), 4u);
  for (const auto& f : d->fusions) EXPECT_EQ(f->num_inputs(), 2);
  EXPECT_EQ(d->head->weight.sizes(), (std::vector<int64_t>{1, 32, 3, 3}));
}

TEST(Decoder, ConcatenationFollowsLevelOrder) {
  torch::manual_seed(1);
  Decoder d(4);
  {
    torch::NoGradGuard g;
    for (size_t i = 0; i < 4; ++i) d->fusions[i]->raw.copy_(torch::tensor({1.0 + i, 2.0 - 0.3 * i}));
  }
  auto p = random_pyramid(4, 64);
  auto r = perturbed(p);
  auto cat = d->fused_features(p, r);
  ASSERT_EQ(cat.sizes(), (std::vector<int64_t>{2, 16, 16, 16}));
  for (size_t i = 0; i < 4; ++i) {
    auto fused = d->fusions[i]->forward({p[i], r[i]});
    auto up = F::interpolate(fused, F::InterpolateFuncOptions()
                                        .size(std::vector<int64_t>{16, 16})
                                        .mode(torch::kBilinear)
                                        .align_corners(false));
    auto slice = cat.slice(1, static_cast<int64_t>(4 * i), static_cast<int64_t>(4 * i + 4));
    EXPECT_TRUE(torch::allclose(slice, up, 1e-6, 1e-6)) << "level " << i + 1;
  }
}

TEST(Decoder, ZeroHeadGivesZeroLogits) {
  Decoder d(8);
  d->zero_init_head();
  auto p = random_pyramid(8, 64);
  EXPECT_EQ(d->forward(p, p.levels, {64, 64}).abs().max().item<double>(), 0.0);
}

TEST(Decoder, Errors) {
  Decoder d(8);
  auto p = random_pyramid(8, 64);
  auto r = perturbed(p);
  r[2] = torch::randn({2, 8, 3, 3});
  EXPECT_THROW(d->forward(p, r, {64, 64}), ShapeError);
  auto q = random_pyramid(6, 64);
  EXPECT_THROW(d->forward(q, q.levels, {64, 64}), ShapeError);
}
