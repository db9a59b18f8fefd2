#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rtaformer/model.hpp"

namespace rtaformer {

/// Conv units inside a reverse block that Grad-CAM can target.
const std::vector<std::string>& gradcam_layers();

/// Where a heatmap puts its mass relative to a reference mask.
struct FocusStats {
  /// Heat mass inside the eroded mask.
  double interior_fraction = 0.0;
  /// Heat mass in the band between the dilated and eroded mask.
  double boundary_fraction = 0.0;
  /// Heat-weighted mean distance from the mask centroid, over the radius of
  /// the disc with the mask's area.
  double centroid_radius = 0.0;
};

struct CamMap {
  std::string layer;
  int level = 1;
  /// (H, W) at the block's feature resolution, min-max normalized to [0, 1].
  torch::Tensor heatmap;
  FocusStats focus;
};

/// Grad-CAM for the reverse block at `level` (1..3). `image` is
/// (3, S, S) normalized. The target score is the summed logit over predicted
/// foreground, or over the whole image when nothing is predicted. Focus
/// statistics use `reference_mask` (1, S, S) when given, else the prediction.
std::vector<CamMap> grad_cam(RtaFormer& model, const torch::Tensor& image, int level,
                             const std::vector<std::string>& layers = gradcam_layers(),
                             const std::optional<torch::Tensor>& reference_mask = std::nullopt);

FocusStats focus_stats(const torch::Tensor& heatmap, const torch::Tensor& mask);

/// JET-colored heatmap, at its own resolution.
void write_heatmap(const std::filesystem::path& path, const torch::Tensor& heatmap);
/// Heatmap upsampled to the image and blended 50/50 with it; `rgb01` is
/// (3, H, W) in [0, 1].
void write_overlay(const std::filesystem::path& path, const torch::Tensor& heatmap,
                   const torch::Tensor& rgb01);

}  // namespace rtaformer
