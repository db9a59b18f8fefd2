#pragma once

#include <torch/torch.h>

#include <array>
#include <vector>

#include "rtaformer/backbone.hpp"
#include "rtaformer/fusion.hpp"

namespace rtaformer {

/// Per level: FF(Xi, Xi_out) with its own two raw weights, bilinear resize to
/// level-1 resolution, concatenation in level order, 3x3 conv to one channel,
/// then bilinear upsampling to the input resolution. Emits logits.
class DecoderImpl : public torch::nn::Module {
 public:
  explicit DecoderImpl(int64_t common_channels);

  /// `output_hw` is the image resolution; usually 4x the level-1 size.
  torch::Tensor forward(const FeaturePyramid& pyramid, const std::array<torch::Tensor, 4>& refined,
                        std::array<int64_t, 2> output_hw);

  /// Concatenated fused features (B, 4C, H1, W1) that feed the head conv.
  torch::Tensor fused_features(const FeaturePyramid& pyramid,
                               const std::array<torch::Tensor, 4>& refined);

  /// Zeroes the head conv so the logit map is identically zero.
  void zero_init_head();

  int64_t common_channels() const { return common_channels_; }

  std::vector<FastFusion> fusions;
  torch::nn::Conv2d head{nullptr};

 private:
  int64_t common_channels_;
};
TORCH_MODULE(Decoder);

torch::Tensor decode(Decoder& decoder, const FeaturePyramid& pyramid,
                     const std::array<torch::Tensor, 4>& refined, std::array<int64_t, 2> output_hw);

}  // namespace rtaformer
