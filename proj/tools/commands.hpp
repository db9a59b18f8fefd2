#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "rtaformer/gradcam.hpp"
#include "rtaformer/model.hpp"
#include "rtaformer/training.hpp"

namespace rtaformer::cli {

/// Synthetic data in place of a dataset root.
struct ToyData {
  int64_t n = 4;
  int64_t size = 64;
  uint64_t seed = 0;
};

struct DataConfig {
  std::vector<std::string> train{"CVC-ClinicDB", "Kvasir"};
  std::vector<std::string> test{"CVC-ClinicDB", "CVC-ColonDB", "CVC-300", "ETIS-LaribPolypDB",
                                "Kvasir"};
  std::optional<ToyData> toy;
  double threshold = 0.5;
};

/// Parsed run file. JSON with sections "model", "train", "data"; every key
/// is optional and defaults to the training recipe.
///
///   { "model": { "preset": "S", "variant": "hfs+rta", "c_common": null,
///                "image_size": 352, "share_stage_weights": false,
///                "freeze_backbone": false },
///     "train": { "lr": 1e-4, "weight_decay": 1e-4, "batch_size": 8,
///                "epochs": 100, "scales": [0.75, 1.0, 1.25],
///                "max_steps": 0, "grad_clip": null,
///                "deterministic": false, "device": "cpu" },
///     "data":  { "train": ["CVC-ClinicDB", "Kvasir"],
///                "test": ["CVC-ClinicDB", ..., "Kvasir"],
///                "threshold": 0.5,
///                "toy": { "n": 4, "size": 64, "seed": 0 } },
///     "seed": 0 }
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  uint64_t seed = 0;

  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
  std::string to_json() const;
};

/// Flag overrides shared by the commands.
struct Options {
  std::filesystem::path config;
  std::filesystem::path data_root;
  std::filesystem::path out_dir = "out";
  std::optional<uint64_t> seed;
  bool deterministic = false;
  std::optional<std::string> preset;
  std::optional<std::string> variant;
  std::optional<std::string> device;
};

/// Config file plus flag overrides; seeds propagate to model and trainer.
RunConfig resolve(const Options& options);

struct TrainOutcome {
  TrainResult result;
  std::vector<MetricReport> metrics;
  std::filesystem::path checkpoint;
};

/// cmd_train body: trains, then writes checkpoint.rtaw, loss_history.jsonl,
/// metrics.json and config.json under out_dir.
TrainOutcome run_train(const RunConfig& config, const std::filesystem::path& data_root,
                       const std::filesystem::path& out_dir, std::ostream& log);

struct AblationRow {
  Variant variant;
  bool hfs = false;
  bool ra = false;
  bool rta = false;
  int64_t reverse_attention_sublayers = 0;
  std::vector<MetricReport> metrics;
};

/// The four-variant matrix under one seed. Writes ablation.json,
/// ablation.md and a subdirectory per variant.
std::vector<AblationRow> run_ablation(const RunConfig& config,
                                      const std::filesystem::path& data_root,
                                      const std::filesystem::path& out_dir, std::ostream& log);

struct ParamRow {
  ModelPreset preset;
  int64_t counted = 0;
  std::optional<double> published_millions;
  /// Percent deviation from the published size.
  std::optional<double> deviation_percent;
  bool within_tolerance = true;
};

/// Parameter counts for every preset; tolerance is +-10% of the published size.
std::vector<ParamRow> run_params(const std::vector<ModelPreset>& presets = {
                                     ModelPreset::T, ModelPreset::S, ModelPreset::M,
                                     ModelPreset::L, ModelPreset::Tiny});
void print_params(const std::vector<ParamRow>& rows, std::ostream& out);

struct GradCamOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path image;
  std::optional<std::filesystem::path> mask;
  std::filesystem::path out_dir = "gradcam";
  std::vector<int> levels{1};
  std::vector<std::string> layers;  // empty selects all six
};

struct GradCamOutput {
  int level = 1;
  std::string layer;
  std::filesystem::path heatmap;
  std::filesystem::path overlay;
  std::vector<int64_t> shape;
  double min = 0.0;
  double max = 0.0;
  FocusStats focus;
};

/// Writes <out>/level<L>/<layer>.png, <layer>_overlay.png and gradcam.json.
std::vector<GradCamOutput> run_gradcam(const GradCamOptions& options, std::ostream& log);

/// Reads a checkpoint and scores it on the configured test sets.
std::vector<MetricReport> run_evaluate(const std::filesystem::path& checkpoint,
                                       const RunConfig& config,
                                       const std::filesystem::path& data_root,
                                       const std::filesystem::path& out_dir, std::ostream& log);

/// Synthetic set as PNGs under dir/{images,masks}, loadable by load_dataset.
void write_toy_dataset(const ToyData& toy, const std::filesystem::path& dir);

/// Command-line entry point; returns the process exit code.
int main_entry(int argc, char** argv);

}  // namespace rtaformer::cli
