#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rtaformer/backbone.hpp"
#include "rtaformer/decoder.hpp"
#include "rtaformer/hfs.hpp"

namespace rtaformer {

/// Model sizes and the backbone each one is built on.
enum class ModelPreset { T, S, M, L, Tiny };

/// Ablation chain: decoder on the raw pyramid, + HFS, + HFS with conv reverse
/// attention, + HFS with transformer reverse attention.
enum class Variant { Base, Hfs, HfsRa, HfsRta };

std::string to_string(ModelPreset p);
std::string to_string(Variant v);
ModelPreset preset_from_string(const std::string& name);
Variant variant_from_string(const std::string& name);
BackboneKind backbone_kind(ModelPreset p);
Mechanism mechanism_of(Variant v);
/// Published size in millions of parameters (nullopt for TINY).
std::optional<double> published_parameters_millions(ModelPreset p);

inline constexpr std::array<ModelPreset, 4> kPaperPresets{ModelPreset::T, ModelPreset::S,
                                                          ModelPreset::M, ModelPreset::L};
inline constexpr std::array<Variant, 4> kAllVariants{Variant::Base, Variant::Hfs, Variant::HfsRa,
                                                     Variant::HfsRta};

struct ModelConfig {
  ModelPreset preset = ModelPreset::Tiny;
  Variant variant = Variant::HfsRta;
  /// Non-positive selects the backbone default.
  int64_t common_channels = -1;
  int64_t image_size = 352;
  bool share_stage_weights = false;
  bool freeze_backbone = false;
  uint64_t seed = 0;

  BackbonePreset backbone() const { return BackbonePreset::make(backbone_kind(preset)); }
  int64_t resolved_common_channels() const;
  void validate() const;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

class RtaFormerImpl : public torch::nn::Module {
 public:
  explicit RtaFormerImpl(const ModelConfig& config);

  /// images (B, 3, S, S) -> logits (B, 1, S, S).
  torch::Tensor forward(const torch::Tensor& images);
  /// Forward pass that records the reverse block at `level` (1..3).
  torch::Tensor forward_traced(const torch::Tensor& images, int level, BlockTrace& trace);

  const ModelConfig& config() const { return config_; }
  bool has_hfs() const { return !hfs.is_empty(); }
  int64_t reverse_attention_sublayers() const;

  PyramidEncoder encoder{nullptr};
  HierarchicalSynthesizer hfs{nullptr};
  Decoder decoder{nullptr};

 private:
  ModelConfig config_;
};
TORCH_MODULE(RtaFormer);

/// Seeds the global generator with config.seed, then constructs the model.
RtaFormer build(const ModelConfig& config);

torch::Tensor forward(RtaFormer& model, const torch::Tensor& images);

/// Scalar count over unique parameter tensors.
int64_t count_parameters(const torch::nn::Module& module, bool trainable_only = false);

/// Checkpoint = weight archive whose manifest embeds the ModelConfig.
void save_checkpoint(const RtaFormer& model, const std::filesystem::path& path);
RtaFormer load_checkpoint(const std::filesystem::path& path);

}  // namespace rtaformer
