#pragma once

#include <torch/torch.h>

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace rtaformer {

/// One image/ground-truth pair.
struct SegSample {
  torch::Tensor image;  // (3, H, W) float32, channel-normalized
  torch::Tensor mask;   // (1, H, W) float32 with values in {0, 1}
  std::string id;
};

/// Per-channel normalization applied to [0, 1] RGB images.
struct Normalization {
  std::array<double, 3> mean{0.485, 0.456, 0.406};
  std::array<double, 3> std{0.229, 0.224, 0.225};

  torch::Tensor apply(const torch::Tensor& rgb01) const;
  torch::Tensor invert(const torch::Tensor& normalized) const;
};

/// 8-bit mask values strictly above this become foreground.
inline constexpr int kMaskThreshold = 128;

/// The five benchmark dataset directory names.
const std::vector<std::string>& benchmark_datasets();

/// Reads `<root>/<dataset>/{images,masks}/`; entries are matched by file stem
/// and returned sorted by id.
std::vector<SegSample> load_dataset(const std::filesystem::path& root, const std::string& dataset,
                                    const Normalization& norm = {});

/// Line-delimited id list; blank lines and '#' comments are ignored.
std::vector<std::string> read_manifest(const std::filesystem::path& path);

/// Samples whose ids appear in `<root>/<dataset>/<split>.txt`; the whole
/// dataset when that manifest does not exist.
std::vector<SegSample> load_split(const std::filesystem::path& root, const std::string& dataset,
                                  const std::string& split, const Normalization& norm = {});

/// Train/test id lists per dataset.
struct SplitSpec {
  std::map<std::string, std::vector<std::string>> train;
  std::map<std::string, std::vector<std::string>> test;

  size_t train_size() const;
  /// Throws ValidationError when a dataset's train and test lists intersect.
  void validate_disjoint() const;
};

/// Reads train.txt / test.txt for every benchmark dataset present under root.
SplitSpec read_split(const std::filesystem::path& root);

/// Checks the merged training set of 550 CVC-ClinicDB + 900 Kvasir ids.
void validate_benchmark_split(const SplitSpec& split);

/// Deterministic synthetic set: a filled random ellipse on a textured
/// background with a soft boundary. Foreground fraction lies in [0.05, 0.6].
std::vector<SegSample> make_toy_set(int64_t n, int64_t size, uint64_t seed,
                                    const Normalization& norm = {});

/// Bilinear resize for the image, nearest-neighbour for the mask.
SegSample resize_pair(const SegSample& sample, int64_t target);
SegSample resize_pair(const SegSample& sample, int64_t height, int64_t width);

/// Reads an RGB image as (3, H, W) float32 in [0, 1].
torch::Tensor read_rgb(const std::filesystem::path& path);
/// Reads a grayscale 8-bit mask as binary (1, H, W) float32.
torch::Tensor read_mask(const std::filesystem::path& path);
/// Writes (3, H, W) or (1, H, W) float in [0, 1] as an 8-bit PNG.
void write_png(const std::filesystem::path& path, const torch::Tensor& chw01);

/// Throws ValidationError unless every value is exactly 0 or 1.
void require_binary(const torch::Tensor& mask, const std::string& what);

}  // namespace rtaformer
