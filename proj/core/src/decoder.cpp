#include "rtaformer/decoder.hpp"

#include "rtaformer/errors.hpp"
#include "rtaformer/init.hpp"

namespace rtaformer {

namespace F = torch::nn::functional;

namespace {

torch::Tensor resize_bilinear(const torch::Tensor& x, int64_t h, int64_t w) {
  if (x.size(2) == h && x.size(3) == w) return x;
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<int64_t>{h, w})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

}  // namespace

DecoderImpl::DecoderImpl(int64_t common_channels) : common_channels_(common_channels) {
  for (int i = 0; i < 4; ++i) {
    fusions.push_back(register_module("fuse" + std::to_string(i + 1), FastFusion(2)));
  }
  head = register_module(
      "head",
      torch::nn::Conv2d(torch::nn::Conv2dOptions(4 * common_channels, 1, 3).padding(1)));
  init::pvt_init(*head);
}

torch::Tensor DecoderImpl::fused_features(const FeaturePyramid& pyramid,
                                          const std::array<torch::Tensor, 4>& refined) {
  for (size_t i = 0; i < 4; ++i) {
    if (pyramid[i].sizes() != refined[i].sizes()) {
      throw ShapeError("decoder level " + std::to_string(i + 1) + ": pyramid map " +
                       shape_string(pyramid[i].sizes().vec()) + " and refined map " +
                       shape_string(refined[i].sizes().vec()) + " differ in shape");
    }
    if (pyramid[i].size(1) != common_channels_) {
      throw ShapeError("decoder expects " + std::to_string(common_channels_) +
                       " channels at level " + std::to_string(i + 1));
    }
  }
  const int64_t h = pyramid[0].size(2), w = pyramid[0].size(3);
  std::vector<torch::Tensor> parts;
  parts.reserve(4);
  for (size_t i = 0; i < 4; ++i) {
    parts.push_back(resize_bilinear(fusions[i]->forward({pyramid[i], refined[i]}), h, w));
  }
  return torch::cat(parts, 1);
}

torch::Tensor DecoderImpl::forward(const FeaturePyramid& pyramid,
                                   const std::array<torch::Tensor, 4>& refined,
                                   std::array<int64_t, 2> output_hw) {
  auto logits = head(fused_features(pyramid, refined));
  return resize_bilinear(logits, output_hw[0], output_hw[1]);
}

void DecoderImpl::zero_init_head() {
  torch::NoGradGuard no_grad;
  head->weight.zero_();
  head->bias.zero_();
}

torch::Tensor decode(Decoder& decoder, const FeaturePyramid& pyramid,
                     const std::array<torch::Tensor, 4>& refined,
                     std::array<int64_t, 2> output_hw) {
  return decoder->forward(pyramid, refined, output_hw);
}

}  // namespace rtaformer
