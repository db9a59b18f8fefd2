#pragma once

#include <torch/torch.h>

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "rtaformer/backbone.hpp"
#include "rtaformer/rta.hpp"

namespace rtaformer {

/// Reverse mechanism inside the synthesizer (ablation states).
enum class Mechanism { None, Ra, Rta };

std::string to_string(Mechanism m);
Mechanism mechanism_from_string(const std::string& name);

struct HfsConfig {
  Mechanism mechanism = Mechanism::Rta;
  bool share_stage_weights = false;
  int64_t common_channels = 32;
};

/// Hierarchical Feature Synthesizer. Levels 1..3 go through a reverse block
/// fed by the adjacent deeper level; level 4 (and every level when the
/// mechanism is None) is refined as bottleneck2(Xi) + Xi.
class HierarchicalSynthesizerImpl : public torch::nn::Module {
 public:
  /// `encoder` supplies the stage architectures and, when sharing is
  /// enabled, the stage modules themselves.
  HierarchicalSynthesizerImpl(const HfsConfig& config, const PyramidEncoder& encoder);

  std::array<torch::Tensor, 4> forward(const FeaturePyramid& pyramid);
  /// Forward pass recording the block at `level` (1-based, 1..3).
  std::array<torch::Tensor, 4> forward_traced(const FeaturePyramid& pyramid, int level,
                                              BlockTrace& trace);

  const HfsConfig& config() const { return config_; }
  /// Reverse blocks for levels 1..3 (empty when the mechanism is None).
  const std::vector<std::shared_ptr<ReverseBlockImpl>>& reverse_blocks() const { return blocks_; }
  /// Attention sublayers across all reverse branches.
  int64_t reverse_attention_sublayers() const;

  /// Residual refiners: level 4 only, or all four levels for Mechanism::None.
  std::vector<Bottleneck> refiners;

 private:
  void check(const FeaturePyramid& pyramid) const;

  HfsConfig config_;
  std::vector<std::shared_ptr<ReverseBlockImpl>> blocks_;
};
TORCH_MODULE(HierarchicalSynthesizer);

std::array<torch::Tensor, 4> synthesize(HierarchicalSynthesizer& hfs, const FeaturePyramid& pyramid);

}  // namespace rtaformer
