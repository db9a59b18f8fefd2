#include "rtaformer/backbone.hpp"

#include <algorithm>
#include <cctype>

#include "rtaformer/errors.hpp"
#include "rtaformer/init.hpp"

namespace rtaformer {

namespace F = torch::nn::functional;

void StageConfig::validate() const {
  if (embed_dim <= 0 || num_heads <= 0 || embed_dim % num_heads != 0) {
    throw ConfigError("stage embed_dim " + std::to_string(embed_dim) +
                      " must be a positive multiple of num_heads " + std::to_string(num_heads));
  }
  if (depth < 1) throw ConfigError("stage depth must be >= 1");
  if (sr_ratio < 1) throw ConfigError("stage sr_ratio must be >= 1");
  if (patch_stride != 2 && patch_stride != 4) {
    throw ConfigError("stage patch_stride must be 2 or 4, got " + std::to_string(patch_stride));
  }
  if (mlp_ratio < 1) throw ConfigError("stage mlp_ratio must be >= 1");
}

namespace {

std::array<StageConfig, 4> make_stages(std::array<int64_t, 4> dims, std::array<int64_t, 4> heads,
                                       std::array<int64_t, 4> depths,
                                       std::array<int64_t, 4> mlp) {
  constexpr std::array<int64_t, 4> kSr{8, 4, 2, 1};
  std::array<StageConfig, 4> out{};
  for (size_t i = 0; i < 4; ++i) {
    out[i] = StageConfig{dims[i], heads[i], depths[i], kSr[i], i == 0 ? 4 : 2, mlp[i]};
  }
  return out;
}

}  // namespace

BackbonePreset BackbonePreset::make(BackboneKind kind) {
  BackbonePreset p;
  p.kind = kind;
  switch (kind) {
    case BackboneKind::B0:
      p.stages = make_stages({32, 64, 160, 256}, {1, 2, 5, 8}, {2, 2, 2, 2}, {8, 8, 4, 4});
      break;
    case BackboneKind::B2:
      p.stages = make_stages({64, 128, 320, 512}, {1, 2, 5, 8}, {3, 4, 6, 3}, {8, 8, 4, 4});
      break;
    case BackboneKind::B4:
      p.stages = make_stages({64, 128, 320, 512}, {1, 2, 5, 8}, {3, 8, 27, 3}, {8, 8, 4, 4});
      break;
    case BackboneKind::B5:
      p.stages = make_stages({64, 128, 320, 512}, {1, 2, 5, 8}, {3, 6, 40, 3}, {4, 4, 4, 4});
      break;
    case BackboneKind::Tiny:
      p.stages = make_stages({16, 32, 64, 128}, {1, 2, 4, 8}, {1, 1, 1, 1}, {8, 8, 4, 4});
      break;
  }
  return p;
}

BackbonePreset BackbonePreset::from_name(std::string_view name) {
  std::string up(name);
  std::transform(up.begin(), up.end(), up.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  if (up == "B0") return make(BackboneKind::B0);
  if (up == "B2") return make(BackboneKind::B2);
  if (up == "B4") return make(BackboneKind::B4);
  if (up == "B5") return make(BackboneKind::B5);
  if (up == "TINY") return make(BackboneKind::Tiny);
  throw ConfigError("unknown backbone preset '" + std::string(name) +
                    "' (expected B0, B2, B4, B5 or TINY)");
}

std::string BackbonePreset::name() const {
  switch (kind) {
    case BackboneKind::B0: return "B0";
    case BackboneKind::B2: return "B2";
    case BackboneKind::B4: return "B4";
    case BackboneKind::B5: return "B5";
    case BackboneKind::Tiny: return "TINY";
  }
  return "?";
}

int64_t BackbonePreset::default_common_channels() const {
  return kind == BackboneKind::Tiny ? 32 : stages[3].embed_dim;
}

int64_t BackbonePreset::stage_in_channels(size_t index) const {
  return index == 0 ? 3 : stages.at(index - 1).embed_dim;
}

void BackbonePreset::validate() const {
  int64_t stride = 1;
  for (size_t i = 0; i < 4; ++i) {
    stages[i].validate();
    stride *= stages[i].patch_stride;
    if (stride != (int64_t{4} << i)) {
      throw ConfigError("stage strides must compose to 4/8/16/32; stage " + std::to_string(i + 1) +
                        " reaches " + std::to_string(stride));
    }
  }
}

// ---------------------------------------------------------------------------

OverlapPatchEmbedImpl::OverlapPatchEmbedImpl(int64_t in_channels, int64_t embed_dim,
                                             int64_t stride) {
  const int64_t kernel = stride == 4 ? 7 : 3;
  proj = register_module(
      "proj", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, embed_dim, kernel)
                                    .stride(stride)
                                    .padding(kernel / 2)));
  norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({embed_dim})));
}

std::tuple<torch::Tensor, int64_t, int64_t> OverlapPatchEmbedImpl::forward(const torch::Tensor& x) {
  auto y = proj(x);
  const int64_t h = y.size(2), w = y.size(3);
  y = y.flatten(2).transpose(1, 2);
  return {norm(y), h, w};
}

SpatialReductionAttentionImpl::SpatialReductionAttentionImpl(int64_t dim, int64_t num_heads,
                                                             int64_t sr_ratio)
    : dim_(dim),
      num_heads_(num_heads),
      sr_ratio_(sr_ratio),
      scale_(1.0 / std::sqrt(static_cast<double>(dim / num_heads))) {
  q = register_module("q", torch::nn::Linear(torch::nn::LinearOptions(dim, dim).bias(true)));
  kv = register_module("kv", torch::nn::Linear(torch::nn::LinearOptions(dim, 2 * dim).bias(true)));
  proj = register_module("proj", torch::nn::Linear(dim, dim));
  if (sr_ratio > 1) {
    sr = register_module(
        "sr", torch::nn::Conv2d(torch::nn::Conv2dOptions(dim, dim, sr_ratio).stride(sr_ratio)));
    sr_norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  }
}

torch::Tensor SpatialReductionAttentionImpl::forward(const torch::Tensor& tokens, int64_t h,
                                                     int64_t w) {
  if (tokens.dim() != 3 || tokens.size(1) != h * w) {
    throw ShapeError("attention expects (B, " + std::to_string(h * w) + ", C) tokens for a " +
                     std::to_string(h) + "x" + std::to_string(w) + " grid, got " +
                     shape_string(tokens.sizes().vec()));
  }
  const int64_t b = tokens.size(0), n = tokens.size(1), c = tokens.size(2);
  const int64_t head_dim = c / num_heads_;
  auto query = q(tokens).reshape({b, n, num_heads_, head_dim}).permute({0, 2, 1, 3});

  torch::Tensor source = tokens;
  if (sr_ratio_ > 1) {
    auto grid = tokens.transpose(1, 2).reshape({b, c, h, w});
    // Grids smaller than the reduction window are edge-padded up to one window.
    const int64_t pad_h = std::max<int64_t>(0, sr_ratio_ - h);
    const int64_t pad_w = std::max<int64_t>(0, sr_ratio_ - w);
    if (pad_h > 0 || pad_w > 0) {
      grid = F::pad(grid, F::PadFuncOptions({0, pad_w, 0, pad_h}).mode(torch::kReplicate));
    }
    source = sr_norm(sr(grid).flatten(2).transpose(1, 2));
  }
  auto kv_out = kv(source).reshape({b, -1, 2, num_heads_, head_dim}).permute({2, 0, 3, 1, 4});
  auto key = kv_out[0];
  auto value = kv_out[1];

  auto attn = torch::matmul(query, key.transpose(-2, -1)) * scale_;
  attn = attn.softmax(-1);
  auto out = torch::matmul(attn, value).transpose(1, 2).reshape({b, n, c});
  return proj(out);
}

ConvFeedForwardImpl::ConvFeedForwardImpl(int64_t dim, int64_t hidden) {
  fc1 = register_module("fc1", torch::nn::Linear(dim, hidden));
  dwconv = register_module(
      "dwconv",
      torch::nn::Conv2d(torch::nn::Conv2dOptions(hidden, hidden, 3).padding(1).groups(hidden)));
  fc2 = register_module("fc2", torch::nn::Linear(hidden, dim));
}

torch::Tensor ConvFeedForwardImpl::forward(const torch::Tensor& tokens, int64_t h, int64_t w) {
  auto x = fc1(tokens);
  const int64_t b = x.size(0), c = x.size(2);
  x = dwconv(x.transpose(1, 2).reshape({b, c, h, w})).flatten(2).transpose(1, 2);
  x = F::gelu(x);
  return fc2(x);
}

TransformerBlockImpl::TransformerBlockImpl(int64_t dim, int64_t num_heads, int64_t mlp_ratio,
                                           int64_t sr_ratio) {
  norm1 = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  attn = register_module("attn", SpatialReductionAttention(dim, num_heads, sr_ratio));
  norm2 = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  mlp = register_module("mlp", ConvFeedForward(dim, dim * mlp_ratio));
}

torch::Tensor TransformerBlockImpl::forward(const torch::Tensor& tokens, int64_t h, int64_t w) {
  auto x = tokens + attn(norm1(tokens), h, w);
  return x + mlp(norm2(x), h, w);
}

TransformerStageImpl::TransformerStageImpl(const StageConfig& config, int64_t in_channels)
    : config_(config), in_channels_(in_channels) {
  config_.validate();
  patch_embed = register_module(
      "patch_embed", OverlapPatchEmbed(in_channels, config.embed_dim, config.patch_stride));
  blocks = register_module("blocks", torch::nn::ModuleList());
  for (int64_t i = 0; i < config.depth; ++i) {
    blocks->push_back(
        TransformerBlock(config.embed_dim, config.num_heads, config.mlp_ratio, config.sr_ratio));
  }
  norm = register_module("norm",
                         torch::nn::LayerNorm(torch::nn::LayerNormOptions({config.embed_dim})));
  init::pvt_init(*this);
}

torch::Tensor TransformerStageImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != in_channels_) {
    throw ShapeError("transformer stage expects (B, " + std::to_string(in_channels_) +
                     ", H, W) input, got " + shape_string(x.sizes().vec()));
  }
  auto [tokens, h, w] = patch_embed(x);
  for (const auto& blk : *blocks) {
    tokens = blk->as<TransformerBlock>()->forward(tokens, h, w);
  }
  tokens = norm(tokens);
  return tokens.transpose(1, 2).reshape({x.size(0), config_.embed_dim, h, w});
}

// ---------------------------------------------------------------------------

PyramidEncoderImpl::PyramidEncoderImpl(BackbonePreset preset, int64_t common_channels)
    : preset_(std::move(preset)), common_channels_(common_channels) {
  preset_.validate();
  if (common_channels_ <= 0) {
    throw ConfigError("common channel width must be positive, got " +
                      std::to_string(common_channels_));
  }
  for (size_t i = 0; i < 4; ++i) {
    stages.push_back(register_module("stage" + std::to_string(i + 1),
                                     TransformerStage(preset_.stages[i], preset_.stage_in_channels(i))));
  }
  for (size_t i = 0; i < 4; ++i) {
    projections.push_back(register_module(
        "proj" + std::to_string(i + 1),
        torch::nn::Conv2d(
            torch::nn::Conv2dOptions(preset_.stages[i].embed_dim, common_channels_, 3).padding(1))));
    init::pvt_init(*projections.back());
  }
}

std::array<torch::Tensor, 4> PyramidEncoderImpl::stage_features(const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(1) != 3) {
    throw ShapeError("encoder expects (B, 3, H, W) images, got " +
                     shape_string(images.sizes().vec()));
  }
  if (images.size(2) % 32 != 0) {
    throw ShapeError("input height " + std::to_string(images.size(2)) +
                     " is not divisible by 32");
  }
  if (images.size(3) % 32 != 0) {
    throw ShapeError("input width " + std::to_string(images.size(3)) + " is not divisible by 32");
  }
  std::array<torch::Tensor, 4> feats;
  torch::Tensor x = images;
  for (size_t i = 0; i < 4; ++i) {
    x = stages[i]->forward(x);
    feats[i] = x;
  }
  return feats;
}

FeaturePyramid PyramidEncoderImpl::forward(const torch::Tensor& images) {
  auto feats = stage_features(images);
  FeaturePyramid pyramid;
  for (size_t i = 0; i < 4; ++i) pyramid[i] = projections[i]->forward(feats[i]);
  return pyramid;
}

torch::Tensor PyramidEncoderImpl::run_stage(int stage_index, const torch::Tensor& x) {
  return stage(stage_index)->forward(x);
}

TransformerStage PyramidEncoderImpl::stage(int stage_index) const {
  if (stage_index < 1 || stage_index > 4) {
    throw ConfigError("stage index must be in 1..4, got " + std::to_string(stage_index));
  }
  return stages[static_cast<size_t>(stage_index - 1)];
}

std::vector<torch::Tensor> PyramidEncoderImpl::stage_parameters() const {
  std::vector<torch::Tensor> params;
  for (const auto& s : stages) {
    auto p = s->parameters();
    params.insert(params.end(), p.begin(), p.end());
  }
  return params;
}

PyramidEncoder build_backbone(const BackbonePreset& preset, int64_t common_channels) {
  return PyramidEncoder(preset, common_channels > 0 ? common_channels
                                                   : preset.default_common_channels());
}

FeaturePyramid encode(PyramidEncoder& encoder, const torch::Tensor& images) {
  return encoder->forward(images);
}

torch::Tensor run_stage(PyramidEncoder& encoder, int stage_index, const torch::Tensor& x) {
  return encoder->run_stage(stage_index, x);
}

}  // namespace rtaformer
