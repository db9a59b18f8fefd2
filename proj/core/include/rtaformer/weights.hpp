#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace rtaformer {

/// Archive layout (all integers little-endian):
///
///   "rtaformer-weights-v1\n"
///   u64  header length N
///   N bytes of UTF-8 JSON:
///     { "format": "rtaformer-weights-v1",
///       "manifest": { ... free-form, e.g. preset and c_common ... },
///       "tensors": [ { "name": "encoder.stage1.patch_embed.proj.weight",
///                      "dtype": "float32" | "float64",
///                      "shape": [..], "offset": byte offset into blob,
///                      "nbytes": .. }, ... ] }
///   blob: tensor payloads, row-major, in header order
inline constexpr std::string_view kWeightsFormat = "rtaformer-weights-v1";

struct WeightArchive {
  /// Serialized JSON object.
  std::string manifest = "{}";
  std::vector<std::pair<std::string, torch::Tensor>> tensors;

  const torch::Tensor* find(const std::string& name) const;
};

void write_archive(const std::filesystem::path& path, const WeightArchive& archive);
WeightArchive read_archive(const std::filesystem::path& path);

/// Named parameters and buffers of `module`, detached and on CPU.
WeightArchive archive_from_module(const torch::nn::Module& module, std::string manifest = "{}");

struct LoadOptions {
  /// Missing or unexpected names are errors when strict.
  bool strict = true;
  /// Prefix prepended to archive names before matching module names, e.g.
  /// "encoder." to load a backbone-only archive into a full model.
  std::string prefix;
};

struct LoadReport {
  std::vector<std::string> loaded;
  std::vector<std::string> missing;     // in module, not in archive
  std::vector<std::string> unexpected;  // in archive, not in module
};

LoadReport load_into(torch::nn::Module& module, const WeightArchive& archive,
                     const LoadOptions& options = {});

}  // namespace rtaformer
