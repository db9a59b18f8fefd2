#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "rtaformer/backbone.hpp"
#include "rtaformer/errors.hpp"
#include "rtaformer/init.hpp"
#include "rtaformer/model.hpp"

using namespace rtaformer;

namespace {

int64_t count(const torch::nn::Module& m) { return count_parameters(m); }

oracle::Preset oracle_for(BackboneKind k) {
  switch (k) {
    case BackboneKind::B0: return oracle::b0();
    case BackboneKind::B2: return oracle::b2();
    case BackboneKind::B4: return oracle::b4();
    case BackboneKind::B5: return oracle::b5();
    case BackboneKind::Tiny: return oracle::tiny();
  }
  return oracle::tiny();
}

}  // namespace

TEST(BackbonePreset, StageTables) {
  auto b2 = BackbonePreset::make(BackboneKind::B2);
  const std::array<int64_t, 4> dims{64, 128, 320, 512}, heads{1, 2, 5, 8}, depth{3, 4, 6, 3},
      sr{8, 4, 2, 1}, stride{4, 2, 2, 2};
  for (size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(b2.stages[i].embed_dim, dims[i]);
    EXPECT_EQ(b2.stages[i].num_heads, heads[i]);
    EXPECT_EQ(b2.stages[i].depth, depth[i]);
    EXPECT_EQ(b2.stages[i].sr_ratio, sr[i]);
    EXPECT_EQ(b2.stages[i].patch_stride, stride[i]);
  }
  EXPECT_EQ(BackbonePreset::make(BackboneKind::B4).stages[2].depth, 27);
  EXPECT_EQ(BackbonePreset::make(BackboneKind::B5).stages[2].depth, 40);
  EXPECT_EQ(BackbonePreset::make(BackboneKind::B5).stages[0].mlp_ratio, 4);
  EXPECT_EQ(BackbonePreset::make(BackboneKind::B0).stages[3].embed_dim, 256);
  EXPECT_EQ(b2.stage_in_channels(0), 3);
  EXPECT_EQ(b2.stage_in_channels(2), 128);
  EXPECT_EQ(b2.default_common_channels(), 512);
  EXPECT_EQ(BackbonePreset::make(BackboneKind::Tiny).default_common_channels(), 32);
}

TEST(BackbonePreset, NamesRoundTrip) {
  for (auto k : {BackboneKind::B0, BackboneKind::B2, BackboneKind::B4, BackboneKind::B5,
                 BackboneKind::Tiny}) {
    auto p = BackbonePreset::make(k);
    EXPECT_EQ(BackbonePreset::from_name(p.name()).kind, k);
  }
  EXPECT_EQ(BackbonePreset::from_name("b2").kind, BackboneKind::B2);
  EXPECT_THROW(BackbonePreset::from_name("B3"), ConfigError);
}

TEST(StageConfig, RejectsBadHeads) {
  StageConfig c{30, 4, 1, 1, 2, 4};
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(TransformerStage(c, 8), ConfigError);
}

TEST(BackboneParameters, MatchLayerFormula) {
  for (auto k : {BackboneKind::B0, BackboneKind::B2, BackboneKind::B4, BackboneKind::B5,
                 BackboneKind::Tiny}) {
    auto preset = BackbonePreset::make(k);
    auto enc = build_backbone(preset, 32);
    int64_t stages = 0;
    for (int i = 1; i <= 4; ++i) stages += count(*enc->stage(i));
    EXPECT_EQ(stages, oracle::backbone(oracle_for(k))) << preset.name();
  }
}

TEST(BackboneParameters, ClassifierSizesMatchPublishedBackbones) {
  // Backbone + final 1000-way linear classifier.
  const std::array<std::pair<BackboneKind, double>, 4> published{
      {{BackboneKind::B0, 3.7}, {BackboneKind::B2, 25.4}, {BackboneKind::B4, 62.6},
       {BackboneKind::B5, 82.0}}};
  for (const auto& [k, millions] : published) {
    const auto o = oracle_for(k);
    const double n = static_cast<double>(oracle::backbone(o) + oracle::linear(o.stages[3].dim, 1000));
    EXPECT_NEAR(n / 1e6, millions, 0.05 * millions) << BackbonePreset::make(k).name();
  }
}

TEST(PyramidEncoder, StridesAndWidths) {
  auto enc = build_backbone(BackbonePreset::make(BackboneKind::Tiny));
  for (int64_t s : {64, 128, 96}) {
    auto x = torch::randn({2, 3, s, s});
    auto feats = enc->stage_features(x);
    auto pyr = enc(x);
    const std::array<int64_t, 4> strides{4, 8, 16, 32}, dims{16, 32, 64, 128};
    for (size_t i = 0; i < 4; ++i) {
      EXPECT_EQ(feats[i].sizes(), (std::vector<int64_t>{2, dims[i], s / strides[i], s / strides[i]}));
      EXPECT_EQ(pyr[i].sizes(), (std::vector<int64_t>{2, 32, s / strides[i], s / strides[i]}));
    }
  }
}

TEST(PyramidEncoder, RejectsIndivisibleInput) {
  auto enc = build_backbone(BackbonePreset::make(BackboneKind::Tiny));
  try {
    enc(torch::randn({1, 3, 70, 64}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("70"), std::string::npos) << e.what();
  }
  EXPECT_THROW(enc(torch::randn({1, 4, 64, 64})), ShapeError);
  EXPECT_THROW(enc(torch::randn({3, 64, 64})), ShapeError);
}

TEST(PyramidEncoder, RunStageMatchesPipeline) {
  auto enc = build_backbone(BackbonePreset::make(BackboneKind::Tiny));
  enc->eval();
  auto x = torch::randn({1, 3, 64, 64});
  auto feats = enc->stage_features(x);
  auto y = x;
  for (int i = 1; i <= 4; ++i) {
    y = run_stage(enc, i, y);
    EXPECT_TRUE(torch::equal(y, feats[static_cast<size_t>(i - 1)])) << "stage " << i;
  }
  EXPECT_THROW(enc->run_stage(5, y), ConfigError);
  EXPECT_THROW(enc->run_stage(2, x), ShapeError);
}

TEST(TransformerStage, SublayersEqualDepth) {
  StageConfig c{32, 2, 3, 4, 2, 4};
  TransformerStage s(c, 16);
  EXPECT_EQ(s->attention_sublayers(), 3);
  EXPECT_EQ(s->blocks->size(), 3u);
}

TEST(TransformerStage, GridSmallerThanReductionWindow) {
  StageConfig c{32, 2, 1, 8, 2, 4};
  TransformerStage s(c, 16);
  auto y = s(torch::randn({1, 16, 6, 4}));
  EXPECT_EQ(y.sizes(), (std::vector<int64_t>{1, 32, 3, 2}));
  EXPECT_TRUE(torch::isfinite(y).all().item<bool>());
}

TEST(SpatialReductionAttention, ConstantTokensGiveConstantOutput) {
  torch::manual_seed(3);
  SpatialReductionAttention attn(16, 2, 2);
  auto token = torch::randn({1, 1, 16});
  auto tokens = token.expand({1, 64, 16}).contiguous();
  auto y = attn(tokens, 8, 8);
  auto first = y.select(1, 0).unsqueeze(1);
  EXPECT_LT((y - first).abs().max().item<double>(), 1e-5);
}

TEST(SpatialReductionAttention, RejectsGridMismatch) {
  SpatialReductionAttention attn(16, 2, 2);
  EXPECT_THROW(attn(torch::randn({1, 60, 16}), 8, 8), ShapeError);
}

TEST(TransformerStage, GradientMatchesFiniteDifferences) {
  torch::manual_seed(11);
  StageConfig c{8, 2, 1, 2, 2, 2};
  TransformerStage s(c, 3);
  s->to(torch::kFloat64);
  auto x = torch::randn({1, 3, 8, 8}, torch::kFloat64);
  auto probe = torch::randn({1, 8, 4, 4}, torch::kFloat64);
  auto f = [&](const torch::Tensor& in) { return (s(in) * probe).sum().item<double>(); };

  auto xg = x.clone().requires_grad_(true);
  (s(xg) * probe).sum().backward();
  auto numeric = oracle::central_difference(f, x, 1e-6);
  EXPECT_LT(oracle::relative_error(xg.grad(), numeric), 1e-5);
}

TEST(Init, LinearAndConvScales) {
  torch::manual_seed(0);
  auto enc = build_backbone(BackbonePreset::make(BackboneKind::B2), 64);
  auto q = enc->stage(3)->blocks->ptr<TransformerBlockImpl>(0)->attn->q;
  EXPECT_NEAR(q->weight.std().item<double>(), 0.02, 0.002);
  EXPECT_EQ(q->bias.abs().max().item<double>(), 0.0);
  EXPECT_LE(q->weight.abs().max().item<double>(), 2.0);

  auto conv = enc->stage(1)->patch_embed->proj;
  const double fan_out = 7.0 * 7.0 * 64.0;
  EXPECT_NEAR(conv->weight.std().item<double>(), std::sqrt(2.0 / fan_out), 0.15 * std::sqrt(2.0 / fan_out));
  auto ln = enc->stage(2)->norm;
  EXPECT_TRUE(torch::equal(ln->weight, torch::ones_like(ln->weight)));
}

TEST(Init, TruncNormalRespectsBounds) {
  torch::manual_seed(1);
  auto t = torch::empty({20000}, torch::kFloat64);
  init::trunc_normal_(t, 0.5, 1.0, 0.0, 1.0);
  EXPECT_GE(t.min().item<double>(), 0.0);
  EXPECT_LE(t.max().item<double>(), 1.0);
  // Mean of N(0.5, 1) truncated symmetrically about its mean stays at 0.5.
  EXPECT_NEAR(t.mean().item<double>(), 0.5, 0.01);
}
