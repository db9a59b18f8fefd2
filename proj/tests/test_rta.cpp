#include <gtest/gtest.h>

#include "oracles.hpp"
#include "rtaformer/errors.hpp"
#include "rtaformer/rta.hpp"

using namespace rtaformer;

namespace {

StageConfig deep_stage() { return StageConfig{32, 2, 2, 4, 2, 4}; }

void randomize(torch::nn::Module& m, double scale) {
  torch::NoGradGuard g;
  for (auto& p : m.parameters()) p.normal_(0.0, scale);
}

}  // namespace

TEST(NormGroups, Choice) {
  EXPECT_EQ(norm_groups(32), 8);
  EXPECT_EQ(norm_groups(16), 4);
  EXPECT_EQ(norm_groups(8), 2);
  EXPECT_EQ(norm_groups(4), 1);
  EXPECT_EQ(norm_groups(128), 8);
  EXPECT_EQ(norm_groups(12), 2);
}

TEST(Bottleneck, ShapesAndParameterCount) {
  Bottleneck b(64, 32, FinalActivation::Sigmoid);
  auto y = b(torch::randn({2, 64, 5, 7}));
  EXPECT_EQ(y.sizes(), (std::vector<int64_t>{2, 32, 5, 7}));
  int64_t n = 0;
  for (const auto& p : b->parameters()) n += p.numel();
  EXPECT_EQ(n, oracle::bottleneck(64, 32));
  EXPECT_THROW(b(torch::randn({2, 63, 5, 7})), ShapeError);
}

TEST(Bottleneck, ZeroInitLastIsExact) {
  Bottleneck sig(16, 16, FinalActivation::Sigmoid);
  Bottleneck id(16, 16, FinalActivation::Identity);
  sig->zero_init_last();
  id->zero_init_last();
  auto x = torch::randn({1, 16, 4, 4});
  EXPECT_TRUE(torch::equal(sig(x), torch::full({1, 16, 4, 4}, 0.5)));
  EXPECT_TRUE(torch::equal(id(x), torch::zeros({1, 16, 4, 4})));
}

TEST(Bottleneck, TracedOutputsMatchForward) {
  Bottleneck b(16, 16, FinalActivation::Sigmoid);
  auto x = torch::randn({1, 16, 4, 4});
  std::vector<torch::Tensor> outs;
  auto y = b->forward_traced(x, outs);
  ASSERT_EQ(outs.size(), 3u);
  EXPECT_EQ(outs[0].size(1), 4);
  EXPECT_EQ(outs[1].size(1), 4);
  EXPECT_TRUE(torch::equal(outs[2], y));
  EXPECT_TRUE(torch::equal(y, b(x)));
}

TEST(RtaBlock, ReverseMapInUnitIntervalOverRandomDraws) {
  RtaBlock block(16, deep_stage(), 16);
  RaBlock ra(16, deep_stage(), 16);
  for (int draw = 0; draw < 1000; ++draw) {
    torch::manual_seed(static_cast<uint64_t>(draw));
    ReverseBlockImpl& b = draw % 2 == 0 ? static_cast<ReverseBlockImpl&>(*block)
                                        : static_cast<ReverseBlockImpl&>(*ra);
    randomize(b, draw % 3 == 0 ? 3.0 : 0.5);
    const double amp = draw % 5 == 0 ? 100.0 : 1.0;
    auto deep = torch::randn({1, 16, 4, 4}) * amp;
    auto r = reverse_map(b, deep, {8, 8});
    ASSERT_GE(r.min().item<double>(), 0.0) << "draw " << draw;
    ASSERT_LE(r.max().item<double>(), 1.0) << "draw " << draw;
  }
}

TEST(RtaBlock, ComplementarityIsExact) {
  torch::manual_seed(4);
  RtaBlock block(16, deep_stage(), 16);
  auto deep = torch::randn({2, 16, 4, 4});
  auto att = block->attention_map(deep, {8, 8});
  auto rev = block->reverse_map(deep, {8, 8});
  EXPECT_TRUE(torch::equal(att + rev, torch::ones_like(att)));
  EXPECT_TRUE(torch::equal(rev, 1.0 - att));

  BlockTrace trace;
  block->forward_traced(torch::randn({2, 16, 8, 8}), deep, trace);
  EXPECT_TRUE(torch::equal(trace.reverse, 1.0 - trace.attention));
  EXPECT_EQ(trace.bottleneck1.size(), 3u);
  EXPECT_EQ(trace.bottleneck2.size(), 3u);
}

TEST(RtaBlock, ZeroInitIsResidualIdentityBitwise) {
  torch::manual_seed(6);
  RtaBlock block(16, deep_stage(), 16);
  RaBlock ra(16, deep_stage(), 16);
  auto xs = torch::randn({2, 16, 8, 8});
  auto xd = torch::randn({2, 16, 4, 4});
  EXPECT_TRUE(torch::equal(apply(*block, xs, xd), xs));
  EXPECT_TRUE(torch::equal(apply_ra_baseline(*ra, xs, xd), xs));
}

TEST(RtaBlock, AttentionSublayers) {
  RtaBlock block(16, deep_stage(), 16);
  RaBlock ra(16, deep_stage(), 16);
  EXPECT_EQ(block->attention_sublayers(), 2);
  EXPECT_EQ(ra->attention_sublayers(), 0);
  EXPECT_EQ(block->kind(), "rta");
  EXPECT_EQ(ra->kind(), "ra");
  // The conv branch downsamples like the stage it replaces.
  auto deep = torch::randn({1, 16, 4, 4});
  EXPECT_EQ(block->deep_branch(block->align(deep)).sizes(), ra->deep_branch(ra->align(deep)).sizes());
}

TEST(RtaBlock, SharedStageIsNotRegistered) {
  TransformerStage stage(deep_stage(), 16);
  RtaBlock shared(16, stage);
  RtaBlock fresh(16, deep_stage(), 16);
  EXPECT_TRUE(shared->shares_stage());
  int64_t stage_n = 0;
  for (const auto& p : stage->parameters()) stage_n += p.numel();
  int64_t shared_n = 0, fresh_n = 0;
  for (const auto& p : shared->parameters()) shared_n += p.numel();
  for (const auto& p : fresh->parameters()) fresh_n += p.numel();
  EXPECT_EQ(fresh_n - shared_n, stage_n);
}

TEST(RtaBlock, ShapeErrors) {
  RtaBlock block(16, deep_stage(), 16);
  EXPECT_THROW(block(torch::randn({1, 16, 8, 8}), torch::randn({1, 8, 4, 4})), ShapeError);
  EXPECT_THROW(block(torch::randn({1, 12, 8, 8}), torch::randn({1, 16, 4, 4})), ShapeError);
  EXPECT_THROW(block(torch::randn({2, 16, 8, 8}), torch::randn({1, 16, 4, 4})), ShapeError);
}

TEST(RtaBlock, GradientMatchesFiniteDifferences) {
  torch::manual_seed(8);
  RtaBlock block(8, StageConfig{8, 2, 1, 2, 2, 2}, 8);
  randomize(*block, 0.4);
  block->to(torch::kFloat64);
  auto xs = torch::randn({1, 8, 4, 4}, torch::kFloat64);
  auto xd = torch::randn({1, 8, 2, 2}, torch::kFloat64);
  auto probe = torch::randn({1, 8, 4, 4}, torch::kFloat64);

  auto f_deep = [&](const torch::Tensor& d) { return (block(xs, d) * probe).sum().item<double>(); };
  auto f_shallow = [&](const torch::Tensor& s) { return (block(s, xd) * probe).sum().item<double>(); };
  auto d = xd.clone().requires_grad_(true);
  auto s = xs.clone().requires_grad_(true);
  (block(s, d) * probe).sum().backward();
  EXPECT_LT(oracle::relative_error(d.grad(), oracle::central_difference(f_deep, xd)), 1e-5);
  EXPECT_LT(oracle::relative_error(s.grad(), oracle::central_difference(f_shallow, xs)), 1e-5);
}
