#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rtaformer/data.hpp"
#include "rtaformer/model.hpp"

namespace rtaformer {

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 1e-4;
  int64_t batch_size = 8;
  int64_t epochs = 100;
  /// One scale is drawn uniformly per batch; sides round to the nearest
  /// multiple of 32.
  std::vector<double> scales{0.75, 1.0, 1.25};
  int64_t image_size = 352;
  uint64_t seed = 0;
  bool deterministic = false;
  /// Global gradient-norm clip; off when unset.
  std::optional<double> grad_clip;
  std::string device = "cpu";
  /// Stops after this many optimizer steps when positive, even mid-epoch.
  int64_t max_steps = 0;

  void validate() const;
};

/// round(base * scale / 32) * 32, halves rounded up; at least 32.
int64_t scaled_size(int64_t base, double scale);

/// Boundary-emphasis weight map 1 + 5 |avgpool31(gt) - gt|.
torch::Tensor boundary_weight(const torch::Tensor& gt);

/// Weighted BCE plus weighted IoU over (B, 1, H, W) logits, averaged over the
/// batch.
torch::Tensor structure_loss(const torch::Tensor& logits, const torch::Tensor& gt);

/// Binary-mask overlap scores; both masks empty scores 1.
double dice(const torch::Tensor& pred, const torch::Tensor& gt);
double iou(const torch::Tensor& pred, const torch::Tensor& gt);

struct MetricReport {
  std::string dataset;
  double dice = 0.0;
  double miou = 0.0;
  int64_t n_images = 0;

  std::string to_json() const;
};

/// Per-image metrics at sigmoid(logit) > threshold, with the prediction
/// upsampled to the native mask size.
MetricReport evaluate(RtaFormer& model, const std::vector<SegSample>& dataset,
                      double threshold = 0.5, int64_t image_size = -1,
                      const std::string& name = "");

struct EpochRecord {
  int64_t epoch = 0;
  double mean_loss = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  /// Loss of every optimizer step.
  std::vector<double> step_losses;
  int64_t steps = 0;
};

TrainResult train(RtaFormer& model, const std::vector<SegSample>& train_set,
                  const TrainConfig& config);

/// One JSON object per line: {"epoch", "mean_loss", "lr"}.
void write_loss_history(const std::filesystem::path& path, const std::vector<EpochRecord>& history);
std::vector<EpochRecord> read_loss_history(const std::filesystem::path& path);

/// Deterministic algorithms and a single intra-op thread.
void set_deterministic(bool on);

}  // namespace rtaformer
