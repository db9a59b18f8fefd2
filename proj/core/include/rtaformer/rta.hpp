#pragma once

#include <torch/torch.h>

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "rtaformer/backbone.hpp"

namespace rtaformer {

enum class FinalActivation { Sigmoid, Identity };

/// GroupNorm group count used throughout the decoder side: the largest of
/// 8/4/2/1 that divides `channels` and leaves at least 4 channels per group.
int64_t norm_groups(int64_t channels);

/// Three-conv bottleneck: 1x1 reduce -> 3x3 -> 1x1 expand, each followed by
/// GroupNorm; ReLU after the first two, `final_activation` after the last.
/// The 1x1 reduce maps in_channels to out_channels / reduction.
class BottleneckImpl : public torch::nn::Module {
 public:
  BottleneckImpl(int64_t in_channels, int64_t out_channels, FinalActivation final_activation,
                 int64_t reduction = 4);

  torch::Tensor forward(const torch::Tensor& x);
  /// Same as forward, additionally appends the output of each of the three
  /// conv units (after its norm and activation) to `layer_outputs`.
  torch::Tensor forward_traced(const torch::Tensor& x, std::vector<torch::Tensor>& layer_outputs);

  /// Zeroes the last GroupNorm's affine parameters, so the block emits
  /// exactly zero (identity activation) or exactly 0.5 (sigmoid).
  void zero_init_last();

  FinalActivation final_activation() const { return final_activation_; }
  int64_t in_channels() const { return in_channels_; }
  int64_t out_channels() const { return out_channels_; }

  std::array<torch::nn::Conv2d, 3> convs{nullptr, nullptr, nullptr};
  std::array<torch::nn::GroupNorm, 3> norms{nullptr, nullptr, nullptr};

 private:
  torch::Tensor unit(size_t i, const torch::Tensor& x);

  FinalActivation final_activation_;
  int64_t in_channels_;
  int64_t out_channels_;
};
TORCH_MODULE(Bottleneck);

/// Intermediate activations of one reverse block, captured for Grad-CAM.
struct BlockTrace {
  std::vector<torch::Tensor> bottleneck1;  // three conv-unit outputs
  std::vector<torch::Tensor> bottleneck2;
  torch::Tensor attention;                 // bottleneck1 output, in [0, 1]
  torch::Tensor reverse;                   // 1 - attention
};

/// Reverse attention block shared by the transformer (RTA) and convolutional
/// (RA) variants. For a shallow map Xi and its deeper neighbour X{i+1}:
///
///   attention = sigmoid-bottleneck1(resize(deep_branch(align(X{i+1}))))
///   reverse   = 1 - attention
///   output    = bottleneck2(Xi * reverse) + Xi
///
/// `align` maps C_common to the deep branch's input width; the resize is
/// bilinear (align_corners = false) to Xi's spatial size.
class ReverseBlockImpl : public torch::nn::Module {
 public:
  ReverseBlockImpl(int64_t common_channels, int64_t branch_in_channels,
                   int64_t branch_out_channels);

  torch::Tensor forward(const torch::Tensor& x_shallow, const torch::Tensor& x_deep);
  torch::Tensor forward_traced(const torch::Tensor& x_shallow, const torch::Tensor& x_deep,
                               BlockTrace& trace);

  /// Bottleneck-1 output at `target_hw`; every element in [0, 1].
  torch::Tensor attention_map(const torch::Tensor& x_deep, std::array<int64_t, 2> target_hw);
  /// 1 - attention_map.
  torch::Tensor reverse_map(const torch::Tensor& x_deep, std::array<int64_t, 2> target_hw);

  virtual torch::Tensor deep_branch(const torch::Tensor& aligned) = 0;
  virtual int64_t attention_sublayers() const = 0;
  virtual std::string kind() const = 0;

  int64_t common_channels() const { return common_channels_; }

  torch::nn::Conv2d align{nullptr};
  Bottleneck bottleneck1{nullptr};
  Bottleneck bottleneck2{nullptr};

 protected:
  void check_deep(const torch::Tensor& x_deep) const;
  void check_shallow(const torch::Tensor& x_shallow, const torch::Tensor& x_deep) const;
  torch::Tensor branch_at(const torch::Tensor& x_deep, std::array<int64_t, 2> target_hw);

  int64_t common_channels_;
};

/// Reverse Transformer Attention: the deep branch is a transformer stage with
/// the architecture of encoder stage i+1. The stage is either owned (fresh
/// weights) or borrowed from the encoder when weights are shared.
class RtaBlockImpl : public ReverseBlockImpl {
 public:
  /// Fresh stage built from `stage_config`.
  RtaBlockImpl(int64_t common_channels, const StageConfig& stage_config, int64_t stage_in_channels);
  /// Borrowed stage; it is not registered as a child so its parameters are
  /// owned (and counted) by the encoder only.
  RtaBlockImpl(int64_t common_channels, TransformerStage shared_stage);

  torch::Tensor deep_branch(const torch::Tensor& aligned) override;
  int64_t attention_sublayers() const override { return stage->attention_sublayers(); }
  std::string kind() const override { return "rta"; }
  bool shares_stage() const { return shared_; }

  TransformerStage stage{nullptr};

 private:
  bool shared_ = false;
};
TORCH_MODULE(RtaBlock);

/// Convolutional reverse attention baseline: the transformer stage is replaced
/// by a strided 3x3 conv (matching the stage's patch stride and widths)
/// followed by `depth` plain 3x3 convs, ReLU between them.
class RaBlockImpl : public ReverseBlockImpl {
 public:
  RaBlockImpl(int64_t common_channels, const StageConfig& stage_config, int64_t stage_in_channels);

  torch::Tensor deep_branch(const torch::Tensor& aligned) override;
  int64_t attention_sublayers() const override { return 0; }
  std::string kind() const override { return "ra"; }

  torch::nn::Sequential convs{nullptr};
};
TORCH_MODULE(RaBlock);

/// Free-function forms of the block operations.
torch::Tensor reverse_map(ReverseBlockImpl& block, const torch::Tensor& x_deep,
                          std::array<int64_t, 2> target_hw);
torch::Tensor apply(ReverseBlockImpl& block, const torch::Tensor& x_shallow,
                    const torch::Tensor& x_deep);
torch::Tensor apply_ra_baseline(RaBlockImpl& block, const torch::Tensor& x_shallow,
                                const torch::Tensor& x_deep);

}  // namespace rtaformer
