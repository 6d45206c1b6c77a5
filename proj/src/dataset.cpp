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
#include "invdiff/dataset.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include "invdiff/errors.hpp"
#include "invdiff/image.hpp"

namespace invdiff {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bool is_image_file(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".ppm" || ext == ".pgm";
}

const char* subset_name(Subset s) {
  switch (s) {
    case Subset::kTrain: return "train";
    case Subset::kTest: return "test";
    case Subset::kPublic: return "public";
  }
  return "public";
}

Subset parse_subset(const std::string& s) {
  if (s == "train") return Subset::kTrain;
  if (s == "test") return Subset::kTest;
  if (s == "public") return Subset::kPublic;
  fail(ErrorCategory::kPersistence, "unknown subset '" + s + "' in manifest");
}

}  // namespace

std::string sha256_hex(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) fail(ErrorCategory::kIngestion, "cannot read " + file.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  char buffer[1 << 14];
  while (in) {
    in.read(buffer, sizeof(buffer));
    EVP_DigestUpdate(ctx.get(), buffer, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &length);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < length; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

std::vector<ImageRecord> scan_corpus(const fs::path& root) {
  if (!fs::is_directory(root)) fail(ErrorCategory::kIngestion, "corpus is not a directory: " + root.string());
  std::vector<ImageRecord> out;
  for (const auto& dir : fs::directory_iterator(root)) {
    if (!dir.is_directory()) continue;
    for (const auto& file : fs::directory_iterator(dir.path())) {
      if (!file.is_regular_file() || !is_image_file(file.path())) continue;
      ImageRecord r;
      r.path = file.path();
      r.source_label = dir.path().filename().string();
      out.push_back(std::move(r));
    }
  }
  std::sort(out.begin(), out.end(), [](const ImageRecord& a, const ImageRecord& b) {
    return std::tie(a.source_label, a.path) < std::tie(b.source_label, b.path);
  });
  for (auto& r : out) r.digest = sha256_hex(r.path);
  return out;
}

DatasetSplit split_dataset(const std::vector<ImageRecord>& corpus,
                           const std::vector<std::string>& private_classes,
                           const ExperimentConfig& config) {
  if (corpus.empty()) fail(ErrorCategory::kConfig, "corpus is empty");
  if (private_classes.empty()) fail(ErrorCategory::kConfig, "no private classes given");

  std::map<std::string, int> label_of;
  for (std::size_t i = 0; i < private_classes.size(); ++i) label_of[private_classes[i]] = static_cast<int>(i);

  DatasetSplit split;
  split.class_names = private_classes;
  std::vector<std::vector<ImageRecord>> per_class(private_classes.size());
  for (const auto& r : corpus) {
    auto it = label_of.find(r.source_label);
    if (it == label_of.end()) {
      ImageRecord p = r;
      p.label = -1;
      p.subset = Subset::kPublic;
      split.public_images.push_back(std::move(p));
    } else {
      ImageRecord p = r;
      p.label = it->second;
      per_class[static_cast<std::size_t>(it->second)].push_back(std::move(p));
    }
  }
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    if (per_class[c].empty()) {
      fail(ErrorCategory::kConfig, "private class '" + private_classes[c] + "' has no images in the corpus");
    }
  }
  if (split.public_images.empty()) {
    fail(ErrorCategory::kConfig, "every identity is private; the public side would be empty");
  }

  std::mt19937_64 rng(config.seed);
  for (auto& images : per_class) {
    std::vector<std::size_t> order(images.size());
    std::iota(order.begin(), order.end(), 0);
    // Fisher-Yates with an explicit draw so the result does not depend on
    // the standard library's shuffle implementation.
    for (std::size_t i = order.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(rng() % i);
      std::swap(order[i - 1], order[j]);
    }
    std::size_t n_test = static_cast<std::size_t>(std::llround(config.classifier.test_fraction * images.size()));
    if (images.size() >= 2) n_test = std::clamp<std::size_t>(n_test, 1, images.size() - 1);
    else n_test = 0;
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
      images[order[rank]].subset = rank < n_test ? Subset::kTest : Subset::kTrain;
    }
    for (auto& r : images) split.private_images.push_back(std::move(r));
  }

  verify_split(split);
  return split;
}

void verify_split(const DatasetSplit& split) {
  std::set<std::string> private_digests;
  std::vector<int> counts(static_cast<std::size_t>(split.num_classes()), 0);
  for (const auto& r : split.private_images) {
    private_digests.insert(r.digest);
    if (r.label < 0 || r.label >= split.num_classes()) {
      fail(ErrorCategory::kSplitIntegrity, "private label out of range for " + r.path.string());
    }
    ++counts[static_cast<std::size_t>(r.label)];
  }
  for (const auto& r : split.public_images) {
    if (private_digests.count(r.digest)) {
      fail(ErrorCategory::kSplitIntegrity,
           "image content appears on both sides of the split: " + r.path.string());
    }
  }
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) {
      fail(ErrorCategory::kSplitIntegrity, "private label " + std::to_string(to_external_label(static_cast<int>(c))) +
                                               " has no images");
    }
  }
}

std::vector<ImageRecord> DatasetSplit::private_subset(Subset subset) const {
  std::vector<ImageRecord> out;
  for (const auto& r : private_images) {
    if (r.subset == subset) out.push_back(r);
  }
  return out;
}

json DatasetSplit::manifest() const {
  auto record = [](const ImageRecord& r) {
    json j = {{"path", r.path.string()}, {"source", r.source_label}, {"sha256", r.digest},
              {"subset", subset_name(r.subset)}};
    if (r.label >= 0) j["label"] = to_external_label(r.label);
    return j;
  };
  json j;
  j["format"] = "invdiff-split";
  j["version"] = 1;
  j["classes"] = json::array();
  for (std::size_t i = 0; i < class_names.size(); ++i) {
    j["classes"].push_back({{"label", to_external_label(static_cast<int>(i))}, {"source", class_names[i]}});
  }
  j["private"] = json::array();
  for (const auto& r : private_images) j["private"].push_back(record(r));
  j["public"] = json::array();
  for (const auto& r : public_images) j["public"].push_back(record(r));
  return j;
}

DatasetSplit DatasetSplit::from_manifest(const json& j) {
  try {
    if (j.at("format") != "invdiff-split" || j.at("version") != 1) {
      fail(ErrorCategory::kPersistence, "not a version-1 split manifest");
    }
    DatasetSplit split;
    for (const auto& c : j.at("classes")) split.class_names.push_back(c.at("source").get<std::string>());
    auto record = [](const json& e) {
      ImageRecord r;
      r.path = e.at("path").get<std::string>();
      r.source_label = e.at("source").get<std::string>();
      r.digest = e.at("sha256").get<std::string>();
      r.subset = parse_subset(e.at("subset").get<std::string>());
      if (e.contains("label")) r.label = to_internal_label(e.at("label").get<int>());
      return r;
    };
    for (const auto& e : j.at("private")) split.private_images.push_back(record(e));
    for (const auto& e : j.at("public")) split.public_images.push_back(record(e));
    verify_split(split);
    return split;
  } catch (const json::exception& e) {
    fail(ErrorCategory::kPersistence, std::string("malformed split manifest: ") + e.what());
  }
}

torch::Tensor load_images(const std::vector<ImageRecord>& records, int image_size) {
  if (records.empty()) return torch::empty({0, 3, image_size, image_size});
  std::vector<torch::Tensor> images;
  images.reserve(records.size());
  for (const auto& r : records) images.push_back(preprocess(read_image(r.path), image_size));
  return torch::stack(images);
}

torch::Tensor labels_of(const std::vector<ImageRecord>& records) {
  std::vector<int64_t> labels;
  labels.reserve(records.size());
  for (const auto& r : records) labels.push_back(r.label);
  return torch::tensor(labels, torch::kInt64);
}

}  // namespace invdiff
