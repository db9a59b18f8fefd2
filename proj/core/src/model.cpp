#include "rtaformer/model.hpp"

#include <unordered_set>

#include "json.hpp"
#include "rtaformer/errors.hpp"
#include "rtaformer/weights.hpp"

namespace rtaformer {

using nlohmann::json;

std::string to_string(ModelPreset p) {
  switch (p) {
    case ModelPreset::T: return "T";
    case ModelPreset::S: return "S";
    case ModelPreset::M: return "M";
    case ModelPreset::L: return "L";
    case ModelPreset::Tiny: return "TINY";
  }
  return "?";
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Base: return "base";
    case Variant::Hfs: return "hfs";
    case Variant::HfsRa: return "hfs+ra";
    case Variant::HfsRta: return "hfs+rta";
  }
  return "?";
}

ModelPreset preset_from_string(const std::string& name) {
  if (name == "T" || name == "t") return ModelPreset::T;
  if (name == "S" || name == "s") return ModelPreset::S;
  if (name == "M" || name == "m") return ModelPreset::M;
  if (name == "L" || name == "l") return ModelPreset::L;
  if (name == "TINY" || name == "tiny") return ModelPreset::Tiny;
  throw ConfigError("unknown model preset '" + name + "' (expected T, S, M, L or TINY)");
}

Variant variant_from_string(const std::string& name) {
  if (name == "base") return Variant::Base;
  if (name == "hfs") return Variant::Hfs;
  if (name == "hfs+ra") return Variant::HfsRa;
  if (name == "hfs+rta") return Variant::HfsRta;
  throw ConfigError("unknown variant '" + name + "' (expected base, hfs, hfs+ra or hfs+rta)");
}

BackboneKind backbone_kind(ModelPreset p) {
  switch (p) {
    case ModelPreset::T: return BackboneKind::B0;
    case ModelPreset::S: return BackboneKind::B2;
    case ModelPreset::M: return BackboneKind::B4;
    case ModelPreset::L: return BackboneKind::B5;
    case ModelPreset::Tiny: return BackboneKind::Tiny;
  }
  return BackboneKind::Tiny;
}

Mechanism mechanism_of(Variant v) {
  switch (v) {
    case Variant::HfsRa: return Mechanism::Ra;
    case Variant::HfsRta: return Mechanism::Rta;
    default: return Mechanism::None;
  }
}

std::optional<double> published_parameters_millions(ModelPreset p) {
  switch (p) {
    case ModelPreset::T: return 8.4;
    case ModelPreset::S: return 56.2;
    case ModelPreset::M: return 192.6;
    case ModelPreset::L: return 250.8;
    case ModelPreset::Tiny: return std::nullopt;
  }
  return std::nullopt;
}

int64_t ModelConfig::resolved_common_channels() const {
  return common_channels > 0 ? common_channels : backbone().default_common_channels();
}

void ModelConfig::validate() const {
  if (image_size <= 0 || image_size % 32 != 0) {
    throw ConfigError("image_size must be a positive multiple of 32, got " +
                      std::to_string(image_size));
  }
  if (resolved_common_channels() < 4) throw ConfigError("common channel width must be >= 4");
  if (share_stage_weights && variant != Variant::HfsRta) {
    throw ConfigError("share_stage_weights only applies to the hfs+rta variant");
  }
  backbone().validate();
}

std::string ModelConfig::to_json() const {
  json j{{"preset", to_string(preset)},
         {"variant", to_string(variant)},
         {"c_common", resolved_common_channels()},
         {"image_size", image_size},
         {"share_stage_weights", share_stage_weights},
         {"freeze_backbone", freeze_backbone},
         {"seed", seed}};
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config is not valid JSON: ") + e.what());
  }
  ModelConfig c;
  try {
    if (j.contains("preset")) c.preset = preset_from_string(j.at("preset").get<std::string>());
    if (j.contains("variant")) c.variant = variant_from_string(j.at("variant").get<std::string>());
    if (j.contains("c_common") && !j.at("c_common").is_null()) {
      c.common_channels = j.at("c_common").get<int64_t>();
    }
    c.image_size = j.value("image_size", c.image_size);
    c.share_stage_weights = j.value("share_stage_weights", c.share_stage_weights);
    c.freeze_backbone = j.value("freeze_backbone", c.freeze_backbone);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad model config field: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

RtaFormerImpl::RtaFormerImpl(const ModelConfig& config) : config_(config) {
  config_.validate();
  const int64_t c = config_.resolved_common_channels();
  encoder = register_module("encoder", PyramidEncoder(config_.backbone(), c));
  if (config_.variant != Variant::Base) {
    HfsConfig hc;
    hc.mechanism = mechanism_of(config_.variant);
    hc.share_stage_weights = config_.share_stage_weights;
    hc.common_channels = c;
    hfs = register_module("hfs", HierarchicalSynthesizer(hc, encoder));
  }
  decoder = register_module("decoder", Decoder(c));
  if (config_.freeze_backbone) {
    for (auto& p : encoder->stage_parameters()) p.set_requires_grad(false);
  }
}

torch::Tensor RtaFormerImpl::forward(const torch::Tensor& images) {
  auto pyramid = encoder(images);
  const std::array<int64_t, 2> hw{images.size(2), images.size(3)};
  if (!has_hfs()) return decoder->forward(pyramid, pyramid.levels, hw);
  return decoder->forward(pyramid, hfs->forward(pyramid), hw);
}

torch::Tensor RtaFormerImpl::forward_traced(const torch::Tensor& images, int level,
                                            BlockTrace& trace) {
  if (!has_hfs()) throw ConfigError("variant 'base' has no reverse blocks to trace");
  auto pyramid = encoder(images);
  auto refined = hfs->forward_traced(pyramid, level, trace);
  return decoder->forward(pyramid, refined, {images.size(2), images.size(3)});
}

int64_t RtaFormerImpl::reverse_attention_sublayers() const {
  return has_hfs() ? hfs->reverse_attention_sublayers() : 0;
}

RtaFormer build(const ModelConfig& config) {
  config.validate();
  torch::manual_seed(config.seed);
  return RtaFormer(config);
}

torch::Tensor forward(RtaFormer& model, const torch::Tensor& images) { return model(images); }

int64_t count_parameters(const torch::nn::Module& module, bool trainable_only) {
  std::unordered_set<const void*> seen;
  int64_t n = 0;
  for (const auto& p : module.parameters(/*recurse=*/true)) {
    if (trainable_only && !p.requires_grad()) continue;
    if (!seen.insert(p.unsafeGetTensorImpl()).second) continue;
    n += p.numel();
  }
  return n;
}

void save_checkpoint(const RtaFormer& model, const std::filesystem::path& path) {
  const auto& cfg = model->config();
  json manifest{{"kind", "checkpoint"},
                {"preset", to_string(cfg.preset)},
                {"c_common", cfg.resolved_common_channels()},
                {"model", json::parse(cfg.to_json())}};
  write_archive(path, archive_from_module(*model, manifest.dump()));
}

RtaFormer load_checkpoint(const std::filesystem::path& path) {
  auto archive = read_archive(path);
  json manifest = json::parse(archive.manifest);
  if (!manifest.contains("model")) {
    throw ArchiveError("archive " + path.string() + " has no model config; not a checkpoint");
  }
  auto model = build(ModelConfig::from_json(manifest.at("model").dump()));
  load_into(*model, archive, LoadOptions{true, ""});
  return model;
}

}  // namespace rtaformer
