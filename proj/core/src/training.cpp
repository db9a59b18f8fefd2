#include "rtaformer/training.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "json.hpp"
#include "rtaformer/errors.hpp"

namespace rtaformer {

namespace F = torch::nn::functional;
using nlohmann::json;

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be nonnegative");
  if (batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (epochs <= 0 && max_steps <= 0) throw ConfigError("epochs or max_steps must be positive");
  if (scales.empty()) throw ConfigError("scales must not be empty");
  for (double s : scales) {
    if (!(s > 0.0)) throw ConfigError("scales must be positive, got " + std::to_string(s));
  }
  if (image_size <= 0 || image_size % 32 != 0) {
    throw ConfigError("image_size must be a positive multiple of 32, got " +
                      std::to_string(image_size));
  }
  if (grad_clip && !(*grad_clip > 0.0)) throw ConfigError("grad_clip must be positive");
}

int64_t scaled_size(int64_t base, double scale) {
  if (!(scale > 0.0)) throw ValidationError("scale must be positive");
  const double units = static_cast<double>(base) * scale / 32.0;
  const auto rounded = static_cast<int64_t>(std::floor(units + 0.5));
  return std::max<int64_t>(rounded, 1) * 32;
}

namespace {

void check_pair(const torch::Tensor& logits, const torch::Tensor& gt) {
  if (logits.dim() != 4 || logits.size(1) != 1) {
    throw ShapeError("expected logits of shape (B, 1, H, W), got " +
                     shape_string(logits.sizes().vec()));
  }
  if (logits.sizes() != gt.sizes()) {
    throw ShapeError("logits " + shape_string(logits.sizes().vec()) + " and mask " +
                     shape_string(gt.sizes().vec()) + " differ in shape");
  }
  require_binary(gt, "ground-truth mask");
}

void check_masks(const torch::Tensor& pred, const torch::Tensor& gt) {
  if (pred.sizes() != gt.sizes()) {
    throw ShapeError("prediction " + shape_string(pred.sizes().vec()) + " and mask " +
                     shape_string(gt.sizes().vec()) + " differ in shape");
  }
  require_binary(pred, "predicted mask");
  require_binary(gt, "ground-truth mask");
}

struct Counts {
  int64_t inter;
  int64_t pred;
  int64_t gt;
};

Counts count(const torch::Tensor& pred, const torch::Tensor& gt) {
  auto p = pred.detach().to(torch::kCPU) != 0;
  auto g = gt.detach().to(torch::kCPU) != 0;
  return {(p & g).sum().item<int64_t>(), p.sum().item<int64_t>(), g.sum().item<int64_t>()};
}

}  // namespace

torch::Tensor boundary_weight(const torch::Tensor& gt) {
  return 1.0 + 5.0 * torch::abs(F::avg_pool2d(gt, F::AvgPool2dFuncOptions(31).stride(1).padding(15)) - gt);
}

torch::Tensor structure_loss(const torch::Tensor& logits, const torch::Tensor& gt) {
  check_pair(logits, gt);
  const auto target = gt.to(logits.options());
  const auto weit = boundary_weight(target);
  auto wbce = F::binary_cross_entropy_with_logits(
      logits, target, F::BinaryCrossEntropyWithLogitsFuncOptions().reduction(torch::kNone));
  wbce = (weit * wbce).sum({2, 3}) / weit.sum({2, 3});

  const auto pred = torch::sigmoid(logits);
  const auto inter = (pred * target * weit).sum({2, 3});
  const auto uni = ((pred + target) * weit).sum({2, 3});
  const auto wiou = 1.0 - (inter + 1.0) / (uni - inter + 1.0);
  return (wbce + wiou).mean();
}

double dice(const torch::Tensor& pred, const torch::Tensor& gt) {
  check_masks(pred, gt);
  const auto c = count(pred, gt);
  if (c.pred + c.gt == 0) return 1.0;
  return 2.0 * static_cast<double>(c.inter) / static_cast<double>(c.pred + c.gt);
}

double iou(const torch::Tensor& pred, const torch::Tensor& gt) {
  check_masks(pred, gt);
  const auto c = count(pred, gt);
  const int64_t uni = c.pred + c.gt - c.inter;
  if (uni == 0) return 1.0;
  return static_cast<double>(c.inter) / static_cast<double>(uni);
}

std::string MetricReport::to_json() const {
  return json{{"dataset", dataset}, {"dice", dice}, {"miou", miou}, {"n_images", n_images}}.dump();
}

MetricReport evaluate(RtaFormer& model, const std::vector<SegSample>& dataset, double threshold,
                      int64_t image_size, const std::string& name) {
  if (dataset.empty()) throw ValidationError("cannot evaluate on an empty dataset");
  const int64_t size = image_size > 0 ? image_size : model->config().image_size;
  const bool was_training = model->is_training();
  model->eval();
  torch::NoGradGuard no_grad;
  const auto device = model->parameters().front().device();

  MetricReport report;
  report.dataset = name;
  double dice_sum = 0.0, iou_sum = 0.0;
  for (const auto& sample : dataset) {
    auto input = resize_pair(sample, size).image.unsqueeze(0).to(device);
    auto logits = model(input);
    const std::vector<int64_t> native{sample.mask.size(1), sample.mask.size(2)};
    if (logits.size(2) != native[0] || logits.size(3) != native[1]) {
      logits = F::interpolate(
          logits, F::InterpolateFuncOptions().size(native).mode(torch::kBilinear).align_corners(false));
    }
    auto pred = (torch::sigmoid(logits[0]) > threshold).to(torch::kFloat32).cpu();
    dice_sum += dice(pred, sample.mask);
    iou_sum += iou(pred, sample.mask);
    ++report.n_images;
  }
  report.dice = dice_sum / static_cast<double>(report.n_images);
  report.miou = iou_sum / static_cast<double>(report.n_images);
  model->train(was_training);
  return report;
}

namespace {

std::string first_non_finite(const torch::nn::Module& module) {
  for (const auto& item : module.named_parameters(true)) {
    const auto& p = item.value();
    if (!torch::isfinite(p).all().item<bool>()) return item.key() + " (value)";
    if (p.grad().defined() && !torch::isfinite(p.grad()).all().item<bool>()) {
      return item.key() + " (gradient)";
    }
  }
  return "none";
}

}  // namespace

TrainResult train(RtaFormer& model, const std::vector<SegSample>& train_set,
                  const TrainConfig& config) {
  config.validate();
  if (train_set.empty()) throw ValidationError("training set is empty");
  if (config.deterministic) set_deterministic(true);

  const torch::Device device(config.device);
  model->to(device);
  model->train();

  std::vector<torch::Tensor> params;
  for (auto& p : model->parameters()) {
    if (p.requires_grad()) params.push_back(p);
  }
  torch::optim::Adam optimizer(
      params, torch::optim::AdamOptions(config.lr).weight_decay(config.weight_decay));

  std::mt19937_64 rng(config.seed);
  std::vector<size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), size_t{0});

  TrainResult result;
  const auto n = static_cast<int64_t>(train_set.size());
  for (int64_t epoch = 1;; ++epoch) {
    if (config.max_steps <= 0 && epoch > config.epochs) break;
    if (config.max_steps > 0 && result.steps >= config.max_steps) break;

    for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

    double loss_sum = 0.0;
    int64_t batches = 0;
    for (int64_t start = 0; start < n; start += config.batch_size) {
      if (config.max_steps > 0 && result.steps >= config.max_steps) break;
      const double scale = config.scales[rng() % config.scales.size()];
      const int64_t side = scaled_size(config.image_size, scale);
      std::vector<torch::Tensor> images, masks;
      for (int64_t k = start; k < std::min(n, start + config.batch_size); ++k) {
        auto s = resize_pair(train_set[order[static_cast<size_t>(k)]], side);
        images.push_back(s.image);
        masks.push_back(s.mask);
      }
      auto x = torch::stack(images).to(device);
      auto y = torch::stack(masks).to(device);

      optimizer.zero_grad();
      auto loss = structure_loss(model(x), y);
      const double value = loss.item<double>();
      if (!std::isfinite(value)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batches + 1) + " (step " +
                            std::to_string(result.steps + 1) +
                            "); first non-finite parameter: " + first_non_finite(*model));
      }
      loss.backward();
      if (config.grad_clip) torch::nn::utils::clip_grad_norm_(params, *config.grad_clip);
      optimizer.step();

      result.step_losses.push_back(value);
      loss_sum += value;
      ++batches;
      ++result.steps;
    }
    if (batches == 0) break;
    result.history.push_back({epoch, loss_sum / static_cast<double>(batches), config.lr});
  }
  return result;
}

void write_loss_history(const std::filesystem::path& path, const std::vector<EpochRecord>& history) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IngestionError("cannot write loss history " + path.string());
  for (const auto& r : history) {
    out << json{{"epoch", r.epoch}, {"mean_loss", r.mean_loss}, {"lr", r.lr}}.dump() << '\n';
  }
}

std::vector<EpochRecord> read_loss_history(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot read loss history " + path.string());
  std::vector<EpochRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = json::parse(line);
    out.push_back({j.at("epoch").get<int64_t>(), j.at("mean_loss").get<double>(),
                   j.at("lr").get<double>()});
  }
  return out;
}

void set_deterministic(bool on) {
  at::globalContext().setDeterministicAlgorithms(on, /*warn_only=*/false);
  if (on) torch::set_num_threads(1);
}

}  // namespace rtaformer
