#include "rtaformer/hfs.hpp"

#include "rtaformer/errors.hpp"

namespace rtaformer {

std::string to_string(Mechanism m) {
  switch (m) {
    case Mechanism::None: return "none";
    case Mechanism::Ra: return "ra";
    case Mechanism::Rta: return "rta";
  }
  return "?";
}

Mechanism mechanism_from_string(const std::string& name) {
  if (name == "none") return Mechanism::None;
  if (name == "ra") return Mechanism::Ra;
  if (name == "rta") return Mechanism::Rta;
  throw ConfigError("unknown HFS mechanism '" + name + "' (expected none, ra or rta)");
}

HierarchicalSynthesizerImpl::HierarchicalSynthesizerImpl(const HfsConfig& config,
                                                         const PyramidEncoder& encoder)
    : config_(config) {
  const int64_t c = config.common_channels;
  if (c != encoder->common_channels()) {
    throw ConfigError("HFS width " + std::to_string(c) + " does not match encoder width " +
                      std::to_string(encoder->common_channels()));
  }
  const auto& preset = encoder->preset();
  if (config.mechanism != Mechanism::None) {
    for (size_t i = 0; i < 3; ++i) {
      // Block i pairs (X_{i+1}, X_{i+2}) in 1-based terms and mirrors stage i+2.
      const size_t deep_stage = i + 1;
      std::shared_ptr<ReverseBlockImpl> block;
      if (config.mechanism == Mechanism::Rta) {
        if (config.share_stage_weights) {
          block = std::make_shared<RtaBlockImpl>(c, encoder->stages[deep_stage]);
        } else {
          block = std::make_shared<RtaBlockImpl>(c, preset.stages[deep_stage],
                                                 preset.stage_in_channels(deep_stage));
        }
      } else {
        block = std::make_shared<RaBlockImpl>(c, preset.stages[deep_stage],
                                              preset.stage_in_channels(deep_stage));
      }
      blocks_.push_back(register_module("block" + std::to_string(i + 1), block));
    }
  }
  const size_t first_refined = config.mechanism == Mechanism::None ? 0 : 3;
  for (size_t i = first_refined; i < 4; ++i) {
    auto b = Bottleneck(c, c, FinalActivation::Identity);
    b->zero_init_last();
    refiners.push_back(register_module("refine" + std::to_string(i + 1), b));
  }
}

void HierarchicalSynthesizerImpl::check(const FeaturePyramid& pyramid) const {
  for (size_t i = 0; i < 4; ++i) {
    if (!pyramid[i].defined()) {
      throw ConfigError("HFS needs a 4-level pyramid; level " + std::to_string(i + 1) +
                        " is missing");
    }
  }
}

std::array<torch::Tensor, 4> HierarchicalSynthesizerImpl::forward(const FeaturePyramid& pyramid) {
  check(pyramid);
  std::array<torch::Tensor, 4> out;
  size_t r = 0;
  for (size_t i = 0; i < 4; ++i) {
    if (i < blocks_.size()) {
      out[i] = blocks_[i]->forward(pyramid[i], pyramid[i + 1]);
    } else {
      out[i] = refiners[r++]->forward(pyramid[i]) + pyramid[i];
    }
  }
  return out;
}

std::array<torch::Tensor, 4> HierarchicalSynthesizerImpl::forward_traced(
    const FeaturePyramid& pyramid, int level, BlockTrace& trace) {
  check(pyramid);
  if (blocks_.empty() || level < 1 || level > static_cast<int>(blocks_.size())) {
    throw ConfigError("no reverse block at level " + std::to_string(level));
  }
  std::array<torch::Tensor, 4> out;
  size_t r = 0;
  for (size_t i = 0; i < 4; ++i) {
    if (i < blocks_.size()) {
      out[i] = static_cast<int>(i + 1) == level
                   ? blocks_[i]->forward_traced(pyramid[i], pyramid[i + 1], trace)
                   : blocks_[i]->forward(pyramid[i], pyramid[i + 1]);
    } else {
      out[i] = refiners[r++]->forward(pyramid[i]) + pyramid[i];
    }
  }
  return out;
}

int64_t HierarchicalSynthesizerImpl::reverse_attention_sublayers() const {
  int64_t n = 0;
  for (const auto& b : blocks_) n += b->attention_sublayers();
  return n;
}

std::array<torch::Tensor, 4> synthesize(HierarchicalSynthesizer& hfs,
                                        const FeaturePyramid& pyramid) {
  return hfs->forward(pyramid);
}

}  // namespace rtaformer
