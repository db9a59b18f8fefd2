#pragma once

#include <torch/torch.h>

#include <array>
#include <string>
#include <string_view>
#include <vector>

namespace rtaformer {

/// Hyper-parameters of one pyramid stage (patch embedding + transformer blocks).
struct StageConfig {
  int64_t embed_dim = 0;
  int64_t num_heads = 1;
  int64_t depth = 1;
  int64_t sr_ratio = 1;
  int64_t patch_stride = 2;
  int64_t mlp_ratio = 4;

  void validate() const;
};

enum class BackboneKind { B0, B2, B4, B5, Tiny };

struct BackbonePreset {
  BackboneKind kind = BackboneKind::Tiny;
  std::array<StageConfig, 4> stages{};

  static BackbonePreset make(BackboneKind kind);
  /// Accepts "B0", "B2", "B4", "B5", "TINY" (case-insensitive).
  static BackbonePreset from_name(std::string_view name);

  std::string name() const;
  /// Common projected channel width: the deepest stage width, except TINY (32).
  int64_t default_common_channels() const;
  /// Input channel count of stage `index` (0-based): 3 for the first stage.
  int64_t stage_in_channels(size_t index) const;
  void validate() const;
};

/// Four feature maps X1..X4 at strides 4/8/16/32, all with C_common channels.
struct FeaturePyramid {
  std::array<torch::Tensor, 4> levels;

  const torch::Tensor& operator[](size_t i) const { return levels.at(i); }
  torch::Tensor& operator[](size_t i) { return levels.at(i); }
};

/// Strided-conv patch embedding followed by LayerNorm; emits tokens (B, N, C).
class OverlapPatchEmbedImpl : public torch::nn::Module {
 public:
  OverlapPatchEmbedImpl(int64_t in_channels, int64_t embed_dim, int64_t stride);

  /// Returns tokens and the token grid (h, w).
  std::tuple<torch::Tensor, int64_t, int64_t> forward(const torch::Tensor& x);

  torch::nn::Conv2d proj{nullptr};
  torch::nn::LayerNorm norm{nullptr};
};
TORCH_MODULE(OverlapPatchEmbed);

/// Multi-head attention whose keys/values come from a spatially reduced
/// token grid (strided conv of size sr_ratio, then LayerNorm).
class SpatialReductionAttentionImpl : public torch::nn::Module {
 public:
  SpatialReductionAttentionImpl(int64_t dim, int64_t num_heads, int64_t sr_ratio);

  torch::Tensor forward(const torch::Tensor& tokens, int64_t h, int64_t w);

  int64_t dim() const { return dim_; }
  int64_t num_heads() const { return num_heads_; }

  torch::nn::Linear q{nullptr}, kv{nullptr}, proj{nullptr};
  torch::nn::Conv2d sr{nullptr};
  torch::nn::LayerNorm sr_norm{nullptr};

 private:
  int64_t dim_;
  int64_t num_heads_;
  int64_t sr_ratio_;
  double scale_;
};
TORCH_MODULE(SpatialReductionAttention);

/// fc1 -> 3x3 depthwise conv -> GELU -> fc2. The depthwise conv supplies
/// positional information, so no explicit positional embedding exists.
class ConvFeedForwardImpl : public torch::nn::Module {
 public:
  ConvFeedForwardImpl(int64_t dim, int64_t hidden);
  torch::Tensor forward(const torch::Tensor& tokens, int64_t h, int64_t w);

  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
  torch::nn::Conv2d dwconv{nullptr};
};
TORCH_MODULE(ConvFeedForward);

class TransformerBlockImpl : public torch::nn::Module {
 public:
  TransformerBlockImpl(int64_t dim, int64_t num_heads, int64_t mlp_ratio, int64_t sr_ratio);
  torch::Tensor forward(const torch::Tensor& tokens, int64_t h, int64_t w);

  torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr};
  SpatialReductionAttention attn{nullptr};
  ConvFeedForward mlp{nullptr};
};
TORCH_MODULE(TransformerBlock);

/// One pyramid stage operating on NCHW maps: patch embedding, `depth`
/// transformer blocks, final LayerNorm, reshaped back to NCHW.
class TransformerStageImpl : public torch::nn::Module {
 public:
  TransformerStageImpl(const StageConfig& config, int64_t in_channels);

  torch::Tensor forward(const torch::Tensor& x);

  const StageConfig& config() const { return config_; }
  int64_t in_channels() const { return in_channels_; }
  /// Number of attention sublayers (one per block).
  int64_t attention_sublayers() const { return config_.depth; }

  OverlapPatchEmbed patch_embed{nullptr};
  torch::nn::ModuleList blocks{nullptr};
  torch::nn::LayerNorm norm{nullptr};

 private:
  StageConfig config_;
  int64_t in_channels_;
};
TORCH_MODULE(TransformerStage);

/// Four-stage pyramid transformer encoder plus per-level 3x3 projections to a
/// common channel width.
class PyramidEncoderImpl : public torch::nn::Module {
 public:
  PyramidEncoderImpl(BackbonePreset preset, int64_t common_channels);

  /// images: (B, 3, H, W) with H, W divisible by 32.
  FeaturePyramid forward(const torch::Tensor& images);
  /// Un-projected stage outputs (embed_dim channels each).
  std::array<torch::Tensor, 4> stage_features(const torch::Tensor& images);
  /// Runs stage `stage_index` (1-based) on x.
  torch::Tensor run_stage(int stage_index, const torch::Tensor& x);

  TransformerStage stage(int stage_index) const;
  const BackbonePreset& preset() const { return preset_; }
  int64_t common_channels() const { return common_channels_; }

  /// Parameters of the four transformer stages (excludes projections).
  std::vector<torch::Tensor> stage_parameters() const;

  std::vector<TransformerStage> stages;
  std::vector<torch::nn::Conv2d> projections;

 private:
  BackbonePreset preset_;
  int64_t common_channels_;
};
TORCH_MODULE(PyramidEncoder);

/// Builds an encoder; modules initialize themselves with the PVTv2 scheme.
/// A non-positive width selects the preset default.
PyramidEncoder build_backbone(const BackbonePreset& preset, int64_t common_channels = -1);

/// Convenience wrapper over PyramidEncoder::forward.
FeaturePyramid encode(PyramidEncoder& encoder, const torch::Tensor& images);

/// Convenience wrapper over PyramidEncoder::run_stage.
torch::Tensor run_stage(PyramidEncoder& encoder, int stage_index, const torch::Tensor& x);

}  // namespace rtaformer
