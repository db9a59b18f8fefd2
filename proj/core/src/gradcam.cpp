#include "rtaformer/gradcam.hpp"

#include <cmath>
#include <numbers>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "rtaformer/errors.hpp"

namespace rtaformer {

namespace F = torch::nn::functional;

const std::vector<std::string>& gradcam_layers() {
  static const std::vector<std::string> names{"bottleneck1.0", "bottleneck1.1", "bottleneck1.2",
                                              "bottleneck2.0", "bottleneck2.1", "bottleneck2.2"};
  return names;
}

namespace {

std::string joined_layers() {
  std::string s;
  for (const auto& n : gradcam_layers()) s += (s.empty() ? "" : ", ") + n;
  return s;
}

size_t layer_index(const std::string& name) {
  const auto& all = gradcam_layers();
  for (size_t i = 0; i < all.size(); ++i) {
    if (all[i] == name) return i;
  }
  throw ConfigError("unknown Grad-CAM layer '" + name + "'; available layers: " + joined_layers());
}

torch::Tensor normalize01(const torch::Tensor& cam) {
  const auto lo = cam.min();
  const auto range = cam.max() - lo;
  if (range.item<double>() <= 0.0) return torch::zeros_like(cam);
  return ((cam - lo) / range).clamp(0.0, 1.0);
}

cv::Mat to_u8(const torch::Tensor& hw01) {
  auto t = hw01.detach().cpu().to(torch::kFloat32).clamp(0.0, 1.0).mul(255.0).round().to(torch::kUInt8).contiguous();
  return cv::Mat(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)), CV_8UC1, t.data_ptr<uint8_t>())
      .clone();
}

}  // namespace

FocusStats focus_stats(const torch::Tensor& heatmap, const torch::Tensor& mask) {
  const int64_t h = heatmap.size(0), w = heatmap.size(1);
  auto m = mask.detach().cpu().to(torch::kFloat32).view({1, 1, mask.size(-2), mask.size(-1)});
  if (m.size(2) != h || m.size(3) != w) {
    m = F::interpolate(m, F::InterpolateFuncOptions().size(std::vector<int64_t>{h, w}).mode(torch::kNearest));
  }
  auto heat = heatmap.detach().cpu().to(torch::kFloat64);
  const auto pool = F::MaxPool2dFuncOptions(3).stride(1).padding(1);
  auto dilated = F::max_pool2d(m, pool)[0][0].to(torch::kFloat64);
  auto eroded = (1.0 - F::max_pool2d(1.0 - m, pool))[0][0].to(torch::kFloat64);
  auto mask2 = m[0][0].to(torch::kFloat64);

  FocusStats s;
  const double total = heat.sum().item<double>();
  const double area = mask2.sum().item<double>();
  if (total <= 0.0 || area <= 0.0) return s;
  s.interior_fraction = (heat * eroded).sum().item<double>() / total;
  s.boundary_fraction = (heat * (dilated - eroded)).sum().item<double>() / total;

  auto ys = torch::arange(h, torch::kFloat64).view({h, 1}).expand({h, w});
  auto xs = torch::arange(w, torch::kFloat64).view({1, w}).expand({h, w});
  const double cy = (ys * mask2).sum().item<double>() / area;
  const double cx = (xs * mask2).sum().item<double>() / area;
  auto dist = torch::sqrt((ys - cy).pow(2) + (xs - cx).pow(2));
  const double radius = std::sqrt(area / std::numbers::pi);
  s.centroid_radius = (heat * dist).sum().item<double>() / total / radius;
  return s;
}

std::vector<CamMap> grad_cam(RtaFormer& model, const torch::Tensor& image, int level,
                             const std::vector<std::string>& layers,
                             const std::optional<torch::Tensor>& reference_mask) {
  if (image.dim() != 3 || image.size(0) != 3) {
    throw ShapeError("Grad-CAM expects a (3, H, W) image, got " + shape_string(image.sizes().vec()));
  }
  if (!model->has_hfs() || model->hfs->reverse_blocks().empty()) {
    throw ConfigError("variant '" + to_string(model->config().variant) +
                      "' has no reverse blocks for Grad-CAM");
  }
  std::vector<size_t> picks;
  for (const auto& name : layers) picks.push_back(layer_index(name));

  const bool was_training = model->is_training();
  model->eval();
  const auto device = model->parameters().front().device();
  BlockTrace trace;
  auto logits = model->forward_traced(image.unsqueeze(0).to(device), level, trace);
  auto fg = (logits.detach() > 0).to(logits.dtype());
  const bool any = fg.sum().item<double>() > 0.0;
  auto score = any ? (logits * fg).sum() : logits.sum();

  std::vector<torch::Tensor> acts;
  for (size_t k : picks) acts.push_back(k < 3 ? trace.bottleneck1[k] : trace.bottleneck2[k - 3]);
  auto grads = torch::autograd::grad({score}, acts, {}, /*retain_graph=*/false,
                                     /*create_graph=*/false, /*allow_unused=*/true);

  const auto reference =
      reference_mask ? reference_mask->detach().cpu() : fg[0].detach().cpu();
  std::vector<CamMap> out;
  for (size_t i = 0; i < picks.size(); ++i) {
    auto a = acts[i].detach()[0];
    auto g = grads[i].defined() ? grads[i][0] : torch::zeros_like(a);
    auto weights = g.mean({1, 2}, /*keepdim=*/true);
    auto cam = torch::relu((weights * a).sum(0));
    CamMap m;
    m.layer = layers[i];
    m.level = level;
    m.heatmap = normalize01(cam).cpu().to(torch::kFloat32);
    m.focus = focus_stats(m.heatmap, reference);
    out.push_back(std::move(m));
  }
  model->train(was_training);
  return out;
}

void write_heatmap(const std::filesystem::path& path, const torch::Tensor& heatmap) {
  cv::Mat colored;
  cv::applyColorMap(to_u8(heatmap), colored, cv::COLORMAP_JET);
  if (!cv::imwrite(path.string(), colored)) throw IngestionError("cannot write " + path.string());
}

void write_overlay(const std::filesystem::path& path, const torch::Tensor& heatmap,
                   const torch::Tensor& rgb01) {
  const int h = static_cast<int>(rgb01.size(1)), w = static_cast<int>(rgb01.size(2));
  cv::Mat heat;
  cv::resize(to_u8(heatmap), heat, cv::Size(w, h), 0, 0, cv::INTER_LINEAR);
  cv::Mat colored;
  cv::applyColorMap(heat, colored, cv::COLORMAP_JET);
  auto img = rgb01.detach().cpu().to(torch::kFloat32).clamp(0.0, 1.0).mul(255.0).round().to(torch::kUInt8)
                 .permute({1, 2, 0})
                 .contiguous();
  cv::Mat rgb(h, w, CV_8UC3, img.data_ptr<uint8_t>());
  cv::Mat bgr, blended;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  cv::addWeighted(bgr, 0.5, colored, 0.5, 0.0, blended);
  if (!cv::imwrite(path.string(), blended)) throw IngestionError("cannot write " + path.string());
}

}  // namespace rtaformer
