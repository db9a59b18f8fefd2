#pragma once

#include <torch/torch.h>

namespace rtaformer::init {

/// In-place truncated normal on [lo, hi] via inverse-CDF sampling.
void trunc_normal_(torch::Tensor& t, double mean = 0.0, double std = 0.02,
                   double lo = -2.0, double hi = 2.0);

/// PVTv2 scheme: Linear -> trunc-normal(0.02) with zero bias, LayerNorm /
/// GroupNorm -> (1, 0), Conv2d -> N(0, sqrt(2 / fan_out)) with zero bias.
void pvt_init(torch::nn::Module& root);

}  // namespace rtaformer::init
