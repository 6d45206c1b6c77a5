/* Copyright 2026 The invdiff Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <set>

#include "fixtures.hpp"
#include "invdiff/dataset.hpp"
#include "invdiff/image.hpp"
#include "invdiff/synthetic.hpp"

namespace invdiff {
namespace {

namespace fs = std::filesystem;
using testing_support::TempDir;
using testing_support::throws_category;

RawImage filled(int width, int height, int channels, std::uint8_t value) {
  RawImage img;
  img.width = width;
  img.height = height;
  img.channels = channels;
  img.pixels.assign(static_cast<std::size_t>(width) * height * channels, value);
  return img;
}

RawImage random_image(int width, int height, unsigned seed) {
  std::mt19937 rng(seed);
  auto img = filled(width, height, 3, 0);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng() & 0xff);
  return img;
}

void write_bytes(const fs::path& path, const std::string& bytes) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << bytes;
}

TEST(Image, PngRoundTripIsLossless) {
  TempDir dir;
  auto img = random_image(13, 7, 1);
  write_png(dir / "a.png", img);
  auto back = read_image(dir / "a.png");
  EXPECT_EQ(back.width, 13);
  EXPECT_EQ(back.height, 7);
  EXPECT_EQ(back.channels, 3);
  EXPECT_EQ(back.pixels, img.pixels);
}

TEST(Image, TensorRoundTripWithinQuantization) {
  TempDir dir;
  torch::manual_seed(2);
  auto t = torch::rand({3, 8, 8}) * 2 - 1;
  write_png(dir / "t.png", t);
  auto back = preprocess(read_image(dir / "t.png"), 8);
  EXPECT_LE((back - t).abs().max().item<double>(), 0.5 / 127.5 + 1e-6);
}

TEST(Image, ExtremesMapToUnitRange) {
  auto black = preprocess(filled(10, 10, 3, 0), 10);
  auto white = preprocess(filled(10, 10, 3, 255), 10);
  EXPECT_TRUE(torch::equal(black, torch::full({3, 10, 10}, -1.0f)));
  EXPECT_TRUE(torch::equal(white, torch::full({3, 10, 10}, 1.0f)));
  auto resized = preprocess(filled(40, 32, 3, 0), 16);
  EXPECT_EQ(resized.sizes(), (std::vector<int64_t>{3, 16, 16}));
  EXPECT_EQ(resized.scalar_type(), torch::kFloat);
  EXPECT_TRUE(torch::equal(resized, torch::full({3, 16, 16}, -1.0f)));
}

TEST(Image, CenterCropDropsSideMargins) {
  // 40x32: the central 32 columns are black, the 4-pixel margins white.
  auto img = filled(40, 32, 3, 0);
  for (int y = 0; y < 32; ++y) {
    for (int x : {0, 1, 2, 3, 36, 37, 38, 39}) {
      for (int c = 0; c < 3; ++c) img.pixels[static_cast<std::size_t>((y * 40 + x) * 3 + c)] = 255;
    }
  }
  EXPECT_TRUE(torch::equal(preprocess(img, 32), torch::full({3, 32, 32}, -1.0f)));
}

TEST(Image, GrayscaleIsReplicated) {
  auto gray = filled(6, 6, 1, 0);
  for (std::size_t i = 0; i < gray.pixels.size(); ++i) gray.pixels[i] = static_cast<std::uint8_t>(i * 7);
  auto t = preprocess(gray, 6);
  EXPECT_TRUE(torch::equal(t[0], t[1]));
  EXPECT_TRUE(torch::equal(t[0], t[2]));
  EXPECT_FLOAT_EQ(t[0][0][1].item<float>(), static_cast<float>(7 / 127.5 - 1.0));
}

TEST(Image, NetpbmIsDecoded) {
  TempDir dir;
  write_bytes(dir / "g.pgm", std::string("P5\n2 1\n255\n") + std::string("\x00\xff", 2));
  auto g = read_image(dir / "g.pgm");
  EXPECT_EQ(g.channels, 1);
  EXPECT_EQ(g.pixels, (std::vector<std::uint8_t>{0, 255}));
  write_bytes(dir / "c.ppm", std::string("P6\n1 1\n255\n") + std::string("\x01\x02\x03", 3));
  auto c = read_image(dir / "c.ppm");
  EXPECT_EQ(c.channels, 3);
  EXPECT_EQ(c.pixels, (std::vector<std::uint8_t>{1, 2, 3}));
}

TEST(Image, UndecodableInputIsAnIngestionError) {
  TempDir dir;
  write_bytes(dir / "junk.png", "definitely not a png");
  write_bytes(dir / "short.pgm", "P5\n4 4\n255\nab");
  write_bytes(dir / "notes.txt", "hello");
  for (const char* name : {"junk.png", "short.pgm", "notes.txt", "missing.png"}) {
    EXPECT_TRUE(throws_category([&] { read_image(dir / name); }, ErrorCategory::kIngestion)) << name;
  }
  auto bad = filled(4, 4, 3, 0);
  bad.pixels.pop_back();
  EXPECT_TRUE(throws_category([&] { preprocess(bad, 4); }, ErrorCategory::kIngestion));
  EXPECT_TRUE(throws_category([] { to_raw(torch::zeros({1, 4, 4})); }, ErrorCategory::kShape));
}

TEST(Digest, KnownVector) {
  TempDir dir;
  write_bytes(dir / "abc", "abc");
  EXPECT_EQ(sha256_hex(dir / "abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

class SplitTest : public ::testing::Test {
 protected:
  void SetUp() override {
    SyntheticCorpusSpec spec;
    spec.identities = 5;
    spec.images_per_identity = 6;
    spec.width = 20;
    spec.height = 16;
    write_synthetic_corpus(dir.path(), spec);
    corpus = scan_corpus(dir.path());
    config.seed = 3;
  }

  TempDir dir{"split"};
  std::vector<ImageRecord> corpus;
  ExperimentConfig config;
};

TEST_F(SplitTest, ScanIsSortedAndDigested) {
  ASSERT_EQ(corpus.size(), 30u);
  for (std::size_t i = 1; i < corpus.size(); ++i) {
    EXPECT_LE(std::tie(corpus[i - 1].source_label, corpus[i - 1].path),
              std::tie(corpus[i].source_label, corpus[i].path));
  }
  for (const auto& r : corpus) EXPECT_EQ(r.digest.size(), 64u);
  EXPECT_EQ(corpus.front().source_label, "001");
}

TEST_F(SplitTest, PartitionsTheCorpus) {
  auto split = split_dataset(corpus, {"004", "002"}, config);
  EXPECT_EQ(split.num_classes(), 2);
  ASSERT_EQ(split.private_images.size(), 12u);
  EXPECT_EQ(split.public_images.size(), 18u);
  std::set<std::string> seen;
  for (const auto& r : split.private_images) {
    EXPECT_EQ(r.label, r.source_label == "004" ? 0 : 1);
    EXPECT_NE(r.subset, Subset::kPublic);
    seen.insert(r.path.string());
  }
  for (const auto& r : split.public_images) {
    EXPECT_EQ(r.label, -1);
    EXPECT_TRUE(r.source_label != "002" && r.source_label != "004");
    seen.insert(r.path.string());
  }
  EXPECT_EQ(seen.size(), 30u);
  // round(0.1 * 6) = 1 test image per class.
  EXPECT_EQ(split.private_subset(Subset::kTest).size(), 2u);
  EXPECT_EQ(split.private_subset(Subset::kTrain).size(), 10u);
}

TEST_F(SplitTest, SameSeedSameManifest) {
  auto a = split_dataset(corpus, {"001", "003"}, config).manifest();
  auto b = split_dataset(corpus, {"001", "003"}, config).manifest();
  EXPECT_EQ(a, b);
  std::set<std::string> tests_seen;
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    config.seed = seed;
    auto split = split_dataset(corpus, {"001", "003"}, config);
    for (const auto& r : split.private_subset(Subset::kTest)) tests_seen.insert(r.path.string());
  }
  EXPECT_GT(tests_seen.size(), 2u);
}

TEST_F(SplitTest, ManifestRoundTrip) {
  auto split = split_dataset(corpus, {"005", "001"}, config);
  auto back = DatasetSplit::from_manifest(split.manifest());
  EXPECT_EQ(back.manifest(), split.manifest());
  EXPECT_EQ(back.class_names, split.class_names);
}

TEST_F(SplitTest, BadRequestsAreConfigErrors) {
  EXPECT_TRUE(throws_category([&] { split_dataset(corpus, {"001", "002", "003", "004", "005"}, config); },
                              ErrorCategory::kConfig));
  EXPECT_TRUE(throws_category([&] { split_dataset(corpus, {"001", "999"}, config); }, ErrorCategory::kConfig));
  EXPECT_TRUE(throws_category([&] { split_dataset({}, {"001"}, config); }, ErrorCategory::kConfig));
  EXPECT_TRUE(throws_category([&] { split_dataset(corpus, {}, config); }, ErrorCategory::kConfig));
}

TEST_F(SplitTest, SharedContentBreaksIntegrity) {
  fs::copy_file(dir / "001/0000.png", dir / "005/copy.png");
  auto with_copy = scan_corpus(dir.path());
  EXPECT_TRUE(throws_category([&] { split_dataset(with_copy, {"001"}, config); }, ErrorCategory::kSplitIntegrity));
  EXPECT_NO_THROW(split_dataset(with_copy, {"002"}, config));
}

TEST_F(SplitTest, DamagedManifestsAreRejected) {
  auto manifest = split_dataset(corpus, {"002"}, config).manifest();
  auto wrong_version = manifest;
  wrong_version["version"] = 2;
  EXPECT_TRUE(throws_category([&] { DatasetSplit::from_manifest(wrong_version); }, ErrorCategory::kPersistence));
  auto truncated = manifest;
  truncated.erase("public");
  EXPECT_TRUE(throws_category([&] { DatasetSplit::from_manifest(truncated); }, ErrorCategory::kPersistence));
  auto leaked = manifest;
  leaked["public"].push_back(manifest["private"][0]);
  leaked["public"].back().erase("label");
  leaked["public"].back()["subset"] = "public";
  EXPECT_TRUE(throws_category([&] { DatasetSplit::from_manifest(leaked); }, ErrorCategory::kSplitIntegrity));
}

TEST_F(SplitTest, LoadsImagesAndLabels) {
  auto split = split_dataset(corpus, {"002", "003"}, config);
  auto images = load_images(split.private_images, 8);
  EXPECT_EQ(images.sizes(), (std::vector<int64_t>{12, 3, 8, 8}));
  EXPECT_GE(images.min().item<float>(), -1.0f);
  EXPECT_LE(images.max().item<float>(), 1.0f);
  auto labels = labels_of(split.private_images);
  EXPECT_EQ(labels.sum().item<int64_t>(), 6);
  EXPECT_EQ(load_images({}, 8).size(0), 0);
}

TEST(Synthetic, RenderingIsDeterministicAndIdentitiesDiffer) {
  SyntheticCorpusSpec spec;
  auto a = render_identity_sample(spec, 0, 0);
  auto b = render_identity_sample(spec, 0, 0);
  EXPECT_EQ(a.pixels, b.pixels);
  EXPECT_EQ(a.width, spec.width);
  EXPECT_EQ(a.height, spec.height);
  EXPECT_NE(render_identity_sample(spec, 0, 1).pixels, a.pixels);
  // Mean image distance across identities exceeds the spread within one.
  auto mean_of = [&](int identity) {
    auto sum = torch::zeros({3, 16, 16});
    for (int s = 0; s < 10; ++s) sum += preprocess(render_identity_sample(spec, identity, s), 16);
    return sum / 10.0;
  };
  auto m0 = mean_of(0), m1 = mean_of(1);
  double within = 0.0;
  for (int s = 0; s < 10; ++s) {
    within += (preprocess(render_identity_sample(spec, 0, s), 16) - m0).norm().item<double>() / 10.0;
  }
  EXPECT_GT((m0 - m1).norm().item<double>(), within);
}

}  // namespace
}  // namespace invdiff
