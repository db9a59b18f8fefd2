#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "rtaformer/data.hpp"
#include "rtaformer/errors.hpp"

using namespace rtaformer;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("rtaformer_data_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

void write_lines(const fs::path& p, const std::vector<std::string>& lines) {
  std::ofstream out(p);
  for (const auto& l : lines) out << l << "\n";
}

/// root/<name>/{images,masks}/<id>.png from the toy generator.
void write_dataset(const fs::path& root, const std::string& name, int n, int64_t size = 64) {
  fs::create_directories(root / name / "images");
  fs::create_directories(root / name / "masks");
  Normalization norm;
  for (const auto& s : make_toy_set(n, size, 3, norm)) {
    write_png(root / name / "images" / (s.id + ".png"), norm.invert(s.image));
    write_png(root / name / "masks" / (s.id + ".png"), s.mask);
  }
}

}  // namespace

TEST(Normalization, InvertsApply) {
  Normalization n;
  auto x = torch::rand({3, 5, 5});
  EXPECT_TRUE(torch::allclose(n.invert(n.apply(x)), x, 1e-6, 1e-6));
  auto gray = torch::full({3, 1, 1}, 0.485);
  EXPECT_NEAR(n.apply(gray)[0][0][0].item<double>(), 0.0, 1e-6);
}

TEST(ToySet, DeterministicBinaryAndBounded) {
  auto a = make_toy_set(6, 64, 11);
  auto b = make_toy_set(6, 64, 11);
  auto c = make_toy_set(6, 64, 12);
  ASSERT_EQ(a.size(), 6u);
  for (size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(torch::equal(a[i].image, b[i].image));
    EXPECT_TRUE(torch::equal(a[i].mask, b[i].mask));
    EXPECT_EQ(a[i].image.sizes(), (std::vector<int64_t>{3, 64, 64}));
    EXPECT_EQ(a[i].mask.sizes(), (std::vector<int64_t>{1, 64, 64}));
    EXPECT_NO_THROW(require_binary(a[i].mask, "mask"));
    const double frac = a[i].mask.mean().item<double>();
    EXPECT_GE(frac, 0.05);
    EXPECT_LE(frac, 0.6);
    // The ellipse does not touch the image border.
    EXPECT_EQ(a[i].mask.select(1, 0).sum().item<double>(), 0.0);
    EXPECT_EQ(a[i].mask.select(2, 63).sum().item<double>(), 0.0);
  }
  EXPECT_FALSE(torch::equal(a[0].mask, c[0].mask));
  EXPECT_EQ(a[3].id, "toy_0003");
  EXPECT_THROW(make_toy_set(2, 50, 0), ValidationError);
}

TEST(ToySet, ForegroundIsBrighterInRed) {
  Normalization n;
  for (const auto& s : make_toy_set(4, 64, 5)) {
    auto red = n.invert(s.image)[0];
    auto m = s.mask[0] > 0.5;
    EXPECT_GT(red.masked_select(m).mean().item<double>(), red.masked_select(~m).mean().item<double>());
  }
}

TEST(ResizePair, ImageBilinearMaskNearest) {
  SegSample s{torch::rand({3, 48, 80}), (torch::rand({1, 48, 80}) > 0.5).to(torch::kFloat32), "x"};
  auto r = resize_pair(s, 64);
  EXPECT_EQ(r.image.sizes(), (std::vector<int64_t>{3, 64, 64}));
  EXPECT_EQ(r.mask.sizes(), (std::vector<int64_t>{1, 64, 64}));
  EXPECT_NO_THROW(require_binary(r.mask, "resized"));
  EXPECT_EQ(resize_pair(s, 96, 128).image.size(2), 128);
  EXPECT_THROW(resize_pair(s, 100), ValidationError);
  auto same = resize_pair(resize_pair(s, 64), 64);
  EXPECT_TRUE(torch::equal(same.image, r.image));
}

TEST(Dataset, PngRoundTrip) {
  auto root = fresh_dir("roundtrip");
  write_dataset(root, "Kvasir", 3);
  auto loaded = load_dataset(root, "Kvasir");
  auto toy = make_toy_set(3, 64, 3);
  ASSERT_EQ(loaded.size(), 3u);
  for (size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(loaded[i].id, toy[i].id);
    EXPECT_TRUE(torch::equal(loaded[i].mask, toy[i].mask));
    // 8-bit quantization only.
    EXPECT_LT((loaded[i].image - toy[i].image).abs().max().item<double>(), 0.6 / 255.0 / 0.224 + 1e-6);
  }
  fs::remove_all(root);
}

TEST(Dataset, MaskThreshold) {
  auto root = fresh_dir("threshold");
  auto gray = torch::zeros({1, 2, 2});
  gray[0][0][0] = 128.0 / 255.0;
  gray[0][0][1] = 129.0 / 255.0;
  gray[0][1][0] = 1.0;
  write_png(root / "m.png", gray);
  auto m = read_mask(root / "m.png");
  EXPECT_EQ(m[0][0][0].item<float>(), 0.0f);
  EXPECT_EQ(m[0][0][1].item<float>(), 1.0f);
  EXPECT_EQ(m[0][1][0].item<float>(), 1.0f);
  EXPECT_EQ(m[0][1][1].item<float>(), 0.0f);
  fs::remove_all(root);
}

TEST(Dataset, Errors) {
  auto root = fresh_dir("errors");
  EXPECT_THROW(load_dataset(root, "Kvasir"), IngestionError);
  write_dataset(root, "Kvasir", 2);
  fs::remove(root / "Kvasir" / "masks" / "toy_0001.png");
  try {
    load_dataset(root, "Kvasir");
    FAIL() << "expected IngestionError";
  } catch (const IngestionError& e) {
    EXPECT_NE(std::string(e.what()).find("toy_0001"), std::string::npos) << e.what();
  }
  fs::create_directories(root / "Empty" / "images");
  fs::create_directories(root / "Empty" / "masks");
  EXPECT_THROW(load_dataset(root, "Empty"), IngestionError);
  {
    std::ofstream junk(root / "Kvasir" / "images" / "junk.png");
    junk << "not a png";
  }
  fs::copy_file(root / "Kvasir" / "masks" / "toy_0000.png", root / "Kvasir" / "masks" / "junk.png");
  EXPECT_THROW(load_dataset(root, "Kvasir"), IngestionError);
  fs::remove_all(root);
}

TEST(Splits, ManifestSelection) {
  auto root = fresh_dir("splits");
  write_dataset(root, "Kvasir", 4);
  EXPECT_EQ(load_split(root, "Kvasir", "train").size(), 4u);
  write_lines(root / "Kvasir" / "train.txt", {"# ids", "toy_0000", "", "toy_0002"});
  write_lines(root / "Kvasir" / "test.txt", {"toy_0001", "toy_0003"});
  auto train = load_split(root, "Kvasir", "train");
  ASSERT_EQ(train.size(), 2u);
  EXPECT_EQ(train[1].id, "toy_0002");
  auto spec = read_split(root);
  EXPECT_EQ(spec.train_size(), 2u);
  write_lines(root / "Kvasir" / "test.txt", {"toy_0002"});
  EXPECT_THROW(read_split(root), ValidationError);
  write_lines(root / "Kvasir" / "train.txt", {"toy_0009"});
  EXPECT_THROW(load_split(root, "Kvasir", "train"), IngestionError);
  fs::remove_all(root);
}

TEST(Splits, BenchmarkComposition) {
  SplitSpec spec;
  for (int i = 0; i < 550; ++i) spec.train["CVC-ClinicDB"].push_back("c" + std::to_string(i));
  for (int i = 0; i < 900; ++i) spec.train["Kvasir"].push_back("k" + std::to_string(i));
  spec.test["Kvasir"] = {"k900", "k901"};
  EXPECT_NO_THROW(validate_benchmark_split(spec));
  EXPECT_EQ(spec.train_size(), 1450u);
  spec.train["Kvasir"].pop_back();
  EXPECT_THROW(validate_benchmark_split(spec), ValidationError);
  spec.train["Kvasir"].push_back("k901");
  EXPECT_THROW(validate_benchmark_split(spec), ValidationError);
  EXPECT_EQ(benchmark_datasets().size(), 5u);
}

TEST(RequireBinary, Rejects) {
  EXPECT_THROW(require_binary(torch::tensor({0.0, 0.5}), "m"), ValidationError);
  EXPECT_NO_THROW(require_binary(torch::tensor({0.0, 1.0}), "m"));
}
