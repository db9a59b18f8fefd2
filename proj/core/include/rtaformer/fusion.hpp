#pragma once

#include <torch/torch.h>

#include <vector>

namespace rtaformer {

inline constexpr double kFusionEpsilon = 1e-4;

/// Fast normalized fusion: swish(sum_i w_i * x_i) with
/// w_i = relu(raw_i) / (sum_j relu(raw_j) + eps). Raw weights start at one.
class FastFusionImpl : public torch::nn::Module {
 public:
  explicit FastFusionImpl(int64_t num_inputs, double epsilon = kFusionEpsilon);

  torch::Tensor forward(const std::vector<torch::Tensor>& inputs);

  /// Normalized weights as a 1-D tensor (differentiable w.r.t. raw).
  torch::Tensor weights() const;

  int64_t num_inputs() const { return raw.size(0); }
  double epsilon() const { return epsilon_; }

  torch::Tensor raw;

 private:
  double epsilon_;
};
TORCH_MODULE(FastFusion);

/// Closed-form normalization, independent of any module.
std::vector<double> effective_weights(const std::vector<double>& raw,
                                      double epsilon = kFusionEpsilon);

std::vector<double> effective_weights(const FastFusion& fusion);

torch::Tensor swish(const torch::Tensor& x);

}  // namespace rtaformer
