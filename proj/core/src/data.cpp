#include "rtaformer/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "rtaformer/errors.hpp"

namespace rtaformer {

namespace F = torch::nn::functional;
namespace fs = std::filesystem;

torch::Tensor Normalization::apply(const torch::Tensor& rgb01) const {
  auto m = torch::tensor({mean[0], mean[1], mean[2]}, rgb01.options()).view({3, 1, 1});
  auto s = torch::tensor({std[0], std[1], std[2]}, rgb01.options()).view({3, 1, 1});
  return (rgb01 - m) / s;
}

torch::Tensor Normalization::invert(const torch::Tensor& normalized) const {
  auto m = torch::tensor({mean[0], mean[1], mean[2]}, normalized.options()).view({3, 1, 1});
  auto s = torch::tensor({std[0], std[1], std[2]}, normalized.options()).view({3, 1, 1});
  return normalized * s + m;
}

const std::vector<std::string>& benchmark_datasets() {
  static const std::vector<std::string> names{"CVC-ClinicDB", "CVC-ColonDB", "CVC-300",
                                              "ETIS-LaribPolypDB", "Kvasir"};
  return names;
}

void require_binary(const torch::Tensor& mask, const std::string& what) {
  auto m = mask.detach();
  if (!((m == 0) | (m == 1)).all().item<bool>()) {
    throw ValidationError(what + " must be binary (values 0 or 1)");
  }
}

torch::Tensor read_rgb(const fs::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw IngestionError("cannot read image " + path.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  auto t = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8).clone();
  return t.permute({2, 0, 1}).to(torch::kFloat32).div_(255.0).contiguous();
}

torch::Tensor read_mask(const fs::path& path) {
  cv::Mat gray = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (gray.empty()) throw IngestionError("cannot read mask " + path.string());
  auto t = torch::from_blob(gray.data, {1, gray.rows, gray.cols}, torch::kUInt8).clone();
  return (t > kMaskThreshold).to(torch::kFloat32);
}

void write_png(const fs::path& path, const torch::Tensor& chw01) {
  auto t = chw01.detach().to(torch::kFloat32).clamp(0.0, 1.0).mul(255.0).round().to(torch::kUInt8);
  cv::Mat out;
  if (t.size(0) == 1) {
    auto hw = t[0].contiguous();
    out = cv::Mat(static_cast<int>(hw.size(0)), static_cast<int>(hw.size(1)), CV_8UC1,
                  hw.data_ptr<uint8_t>())
              .clone();
  } else {
    auto hwc = t.permute({1, 2, 0}).contiguous();
    cv::Mat rgb(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), CV_8UC3,
                hwc.data_ptr<uint8_t>());
    cv::cvtColor(rgb, out, cv::COLOR_RGB2BGR);
  }
  if (!cv::imwrite(path.string(), out)) throw IngestionError("cannot write " + path.string());
}

std::vector<SegSample> load_dataset(const fs::path& root, const std::string& dataset,
                                    const Normalization& norm) {
  const fs::path dir = root / dataset;
  const fs::path images = dir / "images";
  const fs::path masks = dir / "masks";
  if (!fs::is_directory(images)) throw IngestionError("missing image directory " + images.string());
  if (!fs::is_directory(masks)) throw IngestionError("missing mask directory " + masks.string());

  std::map<std::string, fs::path> mask_by_id;
  for (const auto& e : fs::directory_iterator(masks)) {
    if (e.is_regular_file()) mask_by_id.emplace(e.path().stem().string(), e.path());
  }
  std::map<std::string, fs::path> image_by_id;
  for (const auto& e : fs::directory_iterator(images)) {
    if (e.is_regular_file()) image_by_id.emplace(e.path().stem().string(), e.path());
  }
  if (image_by_id.empty()) throw IngestionError("no images found in " + images.string());

  std::vector<SegSample> out;
  out.reserve(image_by_id.size());
  for (const auto& [id, img_path] : image_by_id) {
    auto it = mask_by_id.find(id);
    if (it == mask_by_id.end()) {
      throw IngestionError("dataset " + dataset + ": no mask for image id '" + id + "'");
    }
    SegSample s;
    s.id = id;
    s.image = norm.apply(read_rgb(img_path));
    s.mask = read_mask(it->second);
    if (s.image.size(1) != s.mask.size(1) || s.image.size(2) != s.mask.size(2)) {
      throw IngestionError("dataset " + dataset + ": image and mask sizes differ for id '" + id +
                           "'");
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::string> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot read manifest " + path.string());
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    ids.push_back(line);
  }
  return ids;
}

std::vector<SegSample> load_split(const fs::path& root, const std::string& dataset,
                                  const std::string& split, const Normalization& norm) {
  auto all = load_dataset(root, dataset, norm);
  const fs::path manifest = root / dataset / (split + ".txt");
  if (!fs::exists(manifest)) return all;
  auto ids = read_manifest(manifest);
  std::set<std::string> wanted(ids.begin(), ids.end());
  std::vector<SegSample> out;
  for (auto& s : all) {
    if (wanted.erase(s.id)) out.push_back(std::move(s));
  }
  if (!wanted.empty()) {
    throw IngestionError("manifest " + manifest.string() + " lists id '" + *wanted.begin() +
                         "' which has no image/mask pair");
  }
  return out;
}

size_t SplitSpec::train_size() const {
  size_t n = 0;
  for (const auto& [_, ids] : train) n += ids.size();
  return n;
}

void SplitSpec::validate_disjoint() const {
  for (const auto& [name, ids] : train) {
    auto it = test.find(name);
    if (it == test.end()) continue;
    std::set<std::string> tr(ids.begin(), ids.end());
    for (const auto& id : it->second) {
      if (tr.count(id)) {
        throw ValidationError("dataset " + name + ": id '" + id + "' is in both train and test");
      }
    }
  }
}

SplitSpec read_split(const fs::path& root) {
  SplitSpec spec;
  for (const auto& name : benchmark_datasets()) {
    const auto tr = root / name / "train.txt";
    const auto te = root / name / "test.txt";
    if (fs::exists(tr)) spec.train[name] = read_manifest(tr);
    if (fs::exists(te)) spec.test[name] = read_manifest(te);
  }
  spec.validate_disjoint();
  return spec;
}

void validate_benchmark_split(const SplitSpec& split) {
  split.validate_disjoint();
  auto count = [&](const std::string& name) -> size_t {
    auto it = split.train.find(name);
    return it == split.train.end() ? 0 : it->second.size();
  };
  if (count("CVC-ClinicDB") != 550 || count("Kvasir") != 900 || split.train_size() != 1450) {
    throw ValidationError("benchmark training split must hold 550 CVC-ClinicDB + 900 Kvasir ids, got " +
                          std::to_string(count("CVC-ClinicDB")) + " + " +
                          std::to_string(count("Kvasir")) + " (total " +
                          std::to_string(split.train_size()) + ")");
  }
}

// ---------------------------------------------------------------------------

namespace {

/// Uniform double in [0, 1) from the top 53 bits; platform independent,
/// unlike std::uniform_real_distribution.
class ToyRng {
 public:
  explicit ToyRng(uint64_t seed) : gen_(seed) {}
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

 private:
  std::mt19937_64 gen_;
};

SegSample toy_sample(int64_t size, uint64_t seed, const Normalization& norm, int64_t index) {
  ToyRng rng(seed * 0x9E3779B97F4A7C15ULL + static_cast<uint64_t>(index) + 1);
  const double s = static_cast<double>(size);

  const double fraction = rng.uniform(0.08, 0.45);
  const double aspect = rng.uniform(0.6, 1.0);
  double a = std::sqrt(fraction * s * s / (std::numbers::pi * aspect));
  a = std::min(a, 0.45 * s);
  const double b = aspect * a;
  const double theta = rng.uniform(0.0, std::numbers::pi);
  const double margin = a + 1.0;
  const double cx = rng.uniform(margin, s - margin);
  const double cy = rng.uniform(margin, s - margin);

  std::array<double, 3> bg{rng.uniform(0.55, 0.75), rng.uniform(0.35, 0.5),
                           rng.uniform(0.3, 0.45)};
  std::array<double, 3> fg{rng.uniform(0.85, 0.98), rng.uniform(0.2, 0.35),
                           rng.uniform(0.15, 0.3)};
  std::array<double, 6> wave{};
  for (auto& w : wave) w = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double freq_x = rng.uniform(1.0, 4.0) * 2.0 * std::numbers::pi / s;
  const double freq_y = rng.uniform(1.0, 4.0) * 2.0 * std::numbers::pi / s;

  auto image = torch::empty({3, size, size}, torch::kFloat32);
  auto mask = torch::empty({1, size, size}, torch::kFloat32);
  auto img = image.accessor<float, 3>();
  auto msk = mask.accessor<float, 3>();
  const double ct = std::cos(theta), st = std::sin(theta);
  for (int64_t y = 0; y < size; ++y) {
    for (int64_t x = 0; x < size; ++x) {
      const double px = static_cast<double>(x) + 0.5 - cx;
      const double py = static_cast<double>(y) + 0.5 - cy;
      const double u = (ct * px + st * py) / a;
      const double v = (-st * px + ct * py) / b;
      const double r = std::sqrt(u * u + v * v);
      msk[0][y][x] = r <= 1.0 ? 1.0f : 0.0f;
      // Soft edge about one pixel wide.
      const double dist = (r - 1.0) * b;
      const double soft = 1.0 / (1.0 + std::exp(dist / 0.75));
      const double texture = 0.06 * std::sin(freq_x * x + wave[0]) * std::cos(freq_y * y + wave[1]);
      const double shade = 0.12 * (1.0 - std::min(r, 1.0));
      for (int c = 0; c < 3; ++c) {
        const double noise = rng.uniform(-0.03, 0.03);
        const double back = bg[static_cast<size_t>(c)] + texture;
        const double front = fg[static_cast<size_t>(c)] + shade;
        img[c][y][x] = static_cast<float>(
            std::clamp(back * (1.0 - soft) + front * soft + noise, 0.0, 1.0));
      }
    }
  }
  SegSample out;
  out.image = norm.apply(image);
  out.mask = mask;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "toy_%04lld", static_cast<long long>(index));
  out.id = buf;
  return out;
}

}  // namespace

std::vector<SegSample> make_toy_set(int64_t n, int64_t size, uint64_t seed,
                                    const Normalization& norm) {
  if (size <= 0 || size % 32 != 0) {
    throw ValidationError("toy image size must be a positive multiple of 32, got " +
                          std::to_string(size));
  }
  if (n < 0) throw ValidationError("toy sample count must be nonnegative");
  std::vector<SegSample> out;
  out.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) out.push_back(toy_sample(size, seed, norm, i));
  return out;
}

SegSample resize_pair(const SegSample& sample, int64_t height, int64_t width) {
  if (height <= 0 || width <= 0 || height % 32 != 0 || width % 32 != 0) {
    throw ValidationError("resize target must be positive multiples of 32, got " +
                          std::to_string(height) + "x" + std::to_string(width));
  }
  SegSample out;
  out.id = sample.id;
  if (sample.image.size(1) == height && sample.image.size(2) == width) {
    out.image = sample.image;
    out.mask = sample.mask;
    return out;
  }
  const std::vector<int64_t> size{height, width};
  out.image = F::interpolate(sample.image.unsqueeze(0),
                             F::InterpolateFuncOptions().size(size).mode(torch::kBilinear).align_corners(false))
                  .squeeze(0);
  out.mask = F::interpolate(sample.mask.unsqueeze(0),
                            F::InterpolateFuncOptions().size(size).mode(torch::kNearest))
                 .squeeze(0);
  return out;
}

SegSample resize_pair(const SegSample& sample, int64_t target) {
  return resize_pair(sample, target, target);
}

}  // namespace rtaformer
