#include "rtaformer/fusion.hpp"

#include "rtaformer/errors.hpp"

namespace rtaformer {

FastFusionImpl::FastFusionImpl(int64_t num_inputs, double epsilon) : epsilon_(epsilon) {
  if (num_inputs < 1) throw ConfigError("fusion needs at least one input");
  if (epsilon < 0.0) throw ConfigError("fusion epsilon must be nonnegative");
  raw = register_parameter("raw", torch::ones({num_inputs}));
}

torch::Tensor FastFusionImpl::weights() const {
  auto pos = torch::relu(raw);
  return pos / (pos.sum() + epsilon_);
}

torch::Tensor FastFusionImpl::forward(const std::vector<torch::Tensor>& inputs) {
  if (static_cast<int64_t>(inputs.size()) != num_inputs()) {
    throw ConfigError("fusion configured for " + std::to_string(num_inputs()) + " inputs, got " +
                      std::to_string(inputs.size()));
  }
  for (size_t i = 1; i < inputs.size(); ++i) {
    if (inputs[i].sizes() != inputs[0].sizes()) {
      throw ShapeError("fusion inputs must share a shape: input 0 is " +
                       shape_string(inputs[0].sizes().vec()) + ", input " + std::to_string(i) +
                       " is " + shape_string(inputs[i].sizes().vec()));
    }
  }
  auto w = weights();
  torch::Tensor acc = inputs[0] * w[0];
  for (size_t i = 1; i < inputs.size(); ++i) acc = acc + inputs[i] * w[static_cast<int64_t>(i)];
  return swish(acc);
}

std::vector<double> effective_weights(const std::vector<double>& raw, double epsilon) {
  double total = 0.0;
  for (double r : raw) total += std::max(r, 0.0);
  std::vector<double> out;
  out.reserve(raw.size());
  for (double r : raw) out.push_back(std::max(r, 0.0) / (total + epsilon));
  return out;
}

std::vector<double> effective_weights(const FastFusion& fusion) {
  auto w = fusion->weights().detach().to(torch::kFloat64).contiguous();
  return {w.data_ptr<double>(), w.data_ptr<double>() + w.numel()};
}

torch::Tensor swish(const torch::Tensor& x) { return x * torch::sigmoid(x); }

}  // namespace rtaformer
