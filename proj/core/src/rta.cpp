#include "rtaformer/rta.hpp"

#include "rtaformer/errors.hpp"
#include "rtaformer/init.hpp"

namespace rtaformer {

namespace F = torch::nn::functional;

int64_t norm_groups(int64_t channels) {
  for (int64_t g : {8, 4, 2}) {
    if (channels % g == 0 && channels / g >= 4) return g;
  }
  return 1;
}

BottleneckImpl::BottleneckImpl(int64_t in_channels, int64_t out_channels,
                               FinalActivation final_activation, int64_t reduction)
    : final_activation_(final_activation), in_channels_(in_channels), out_channels_(out_channels) {
  if (in_channels <= 0 || out_channels <= 0 || reduction <= 0) {
    throw ConfigError("bottleneck widths and reduction must be positive");
  }
  const int64_t mid = std::max<int64_t>(1, out_channels / reduction);
  const std::array<int64_t, 3> ins{in_channels, mid, mid};
  const std::array<int64_t, 3> outs{mid, mid, out_channels};
  const std::array<int64_t, 3> kernels{1, 3, 1};
  for (size_t i = 0; i < 3; ++i) {
    convs[i] = register_module(
        "conv" + std::to_string(i),
        torch::nn::Conv2d(torch::nn::Conv2dOptions(ins[i], outs[i], kernels[i])
                              .padding(kernels[i] / 2)
                              .bias(false)));
    norms[i] = register_module(
        "norm" + std::to_string(i),
        torch::nn::GroupNorm(torch::nn::GroupNormOptions(norm_groups(outs[i]), outs[i])));
  }
  init::pvt_init(*this);
}

torch::Tensor BottleneckImpl::unit(size_t i, const torch::Tensor& x) {
  auto y = norms[i]->forward(convs[i]->forward(x));
  if (i < 2) return torch::relu(y);
  return final_activation_ == FinalActivation::Sigmoid ? torch::sigmoid(y) : y;
}

torch::Tensor BottleneckImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != in_channels_) {
    throw ShapeError("bottleneck expects " + std::to_string(in_channels_) +
                     " input channels, got " + shape_string(x.sizes().vec()));
  }
  auto y = x;
  for (size_t i = 0; i < 3; ++i) y = unit(i, y);
  return y;
}

torch::Tensor BottleneckImpl::forward_traced(const torch::Tensor& x,
                                             std::vector<torch::Tensor>& layer_outputs) {
  if (x.dim() != 4 || x.size(1) != in_channels_) {
    throw ShapeError("bottleneck expects " + std::to_string(in_channels_) +
                     " input channels, got " + shape_string(x.sizes().vec()));
  }
  auto y = x;
  for (size_t i = 0; i < 3; ++i) {
    y = unit(i, y);
    layer_outputs.push_back(y);
  }
  return y;
}

void BottleneckImpl::zero_init_last() {
  torch::NoGradGuard no_grad;
  norms[2]->weight.zero_();
  norms[2]->bias.zero_();
}

// ---------------------------------------------------------------------------

ReverseBlockImpl::ReverseBlockImpl(int64_t common_channels, int64_t branch_in_channels,
                                   int64_t branch_out_channels)
    : common_channels_(common_channels) {
  align = register_module(
      "align", torch::nn::Conv2d(
                   torch::nn::Conv2dOptions(common_channels, branch_in_channels, 3).padding(1)));
  bottleneck1 = register_module(
      "bottleneck1", Bottleneck(branch_out_channels, common_channels, FinalActivation::Sigmoid));
  bottleneck2 = register_module(
      "bottleneck2", Bottleneck(common_channels, common_channels, FinalActivation::Identity));
  init::pvt_init(*align);
  bottleneck2->zero_init_last();
}

void ReverseBlockImpl::check_deep(const torch::Tensor& x_deep) const {
  if (x_deep.dim() != 4 || x_deep.size(1) != common_channels_) {
    throw ShapeError("reverse block expects deep feature with " +
                     std::to_string(common_channels_) + " channels, got " +
                     shape_string(x_deep.sizes().vec()));
  }
}

void ReverseBlockImpl::check_shallow(const torch::Tensor& x_shallow,
                                     const torch::Tensor& x_deep) const {
  if (x_shallow.dim() != 4 || x_shallow.size(1) != common_channels_ ||
      x_shallow.size(0) != x_deep.size(0)) {
    throw ShapeError("reverse block expects shallow feature (" + std::to_string(x_deep.size(0)) +
                     ", " + std::to_string(common_channels_) + ", H, W), got " +
                     shape_string(x_shallow.sizes().vec()));
  }
}

torch::Tensor ReverseBlockImpl::branch_at(const torch::Tensor& x_deep,
                                          std::array<int64_t, 2> target_hw) {
  check_deep(x_deep);
  auto feat = deep_branch(align(x_deep));
  return F::interpolate(feat, F::InterpolateFuncOptions()
                                  .size(std::vector<int64_t>{target_hw[0], target_hw[1]})
                                  .mode(torch::kBilinear)
                                  .align_corners(false));
}

torch::Tensor ReverseBlockImpl::attention_map(const torch::Tensor& x_deep,
                                              std::array<int64_t, 2> target_hw) {
  return bottleneck1(branch_at(x_deep, target_hw));
}

torch::Tensor ReverseBlockImpl::reverse_map(const torch::Tensor& x_deep,
                                            std::array<int64_t, 2> target_hw) {
  return 1.0 - attention_map(x_deep, target_hw);
}

torch::Tensor ReverseBlockImpl::forward(const torch::Tensor& x_shallow,
                                        const torch::Tensor& x_deep) {
  check_deep(x_deep);
  check_shallow(x_shallow, x_deep);
  auto rev = reverse_map(x_deep, {x_shallow.size(2), x_shallow.size(3)});
  return bottleneck2(x_shallow * rev) + x_shallow;
}

torch::Tensor ReverseBlockImpl::forward_traced(const torch::Tensor& x_shallow,
                                               const torch::Tensor& x_deep, BlockTrace& trace) {
  check_deep(x_deep);
  check_shallow(x_shallow, x_deep);
  auto branch = branch_at(x_deep, {x_shallow.size(2), x_shallow.size(3)});
  trace.attention = bottleneck1->forward_traced(branch, trace.bottleneck1);
  trace.reverse = 1.0 - trace.attention;
  return bottleneck2->forward_traced(x_shallow * trace.reverse, trace.bottleneck2) + x_shallow;
}

// ---------------------------------------------------------------------------

RtaBlockImpl::RtaBlockImpl(int64_t common_channels, const StageConfig& stage_config,
                           int64_t stage_in_channels)
    : ReverseBlockImpl(common_channels, stage_in_channels, stage_config.embed_dim) {
  stage = register_module("stage", TransformerStage(stage_config, stage_in_channels));
}

RtaBlockImpl::RtaBlockImpl(int64_t common_channels, TransformerStage shared_stage)
    : ReverseBlockImpl(common_channels, shared_stage->in_channels(),
                       shared_stage->config().embed_dim),
      stage(std::move(shared_stage)),
      shared_(true) {}

torch::Tensor RtaBlockImpl::deep_branch(const torch::Tensor& aligned) { return stage(aligned); }

RaBlockImpl::RaBlockImpl(int64_t common_channels, const StageConfig& stage_config,
                         int64_t stage_in_channels)
    : ReverseBlockImpl(common_channels, stage_in_channels, stage_config.embed_dim) {
  stage_config.validate();
  const int64_t width = stage_config.embed_dim;
  convs = register_module("convs", torch::nn::Sequential());
  convs->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(stage_in_channels, width, 3)
                                         .stride(stage_config.patch_stride)
                                         .padding(1)));
  for (int64_t i = 0; i < stage_config.depth; ++i) {
    convs->push_back(torch::nn::ReLU());
    convs->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(width, width, 3).padding(1)));
  }
  init::pvt_init(*convs);
}

torch::Tensor RaBlockImpl::deep_branch(const torch::Tensor& aligned) { return convs->forward(aligned); }

torch::Tensor reverse_map(ReverseBlockImpl& block, const torch::Tensor& x_deep,
                          std::array<int64_t, 2> target_hw) {
  return block.reverse_map(x_deep, target_hw);
}

torch::Tensor apply(ReverseBlockImpl& block, const torch::Tensor& x_shallow,
                    const torch::Tensor& x_deep) {
  return block.forward(x_shallow, x_deep);
}

torch::Tensor apply_ra_baseline(RaBlockImpl& block, const torch::Tensor& x_shallow,
                                const torch::Tensor& x_deep) {
  return block.forward(x_shallow, x_deep);
}

}  // namespace rtaformer
