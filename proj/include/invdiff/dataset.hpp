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
#ifndef INVDIFF_DATASET_HPP
#define INVDIFF_DATASET_HPP

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "invdiff/config.hpp"

namespace invdiff {

// Labels are 1-based in every file and on the command line and 0-based in
// memory. These two functions are the only place the offset is applied.
inline int to_internal_label(int external) { return external - 1; }
inline int to_external_label(int internal) { return internal + 1; }

enum class Subset { kTrain, kTest, kPublic };

struct ImageRecord {
  std::filesystem::path path;
  std::string source_label;  // directory name in the corpus
  std::string digest;        // SHA-256 of the file bytes, hex
  int label = -1;            // 0-based private label; -1 on the public side
  Subset subset = Subset::kPublic;
};

struct DatasetSplit {
  std::vector<std::string> class_names;  // index = 0-based private label
  std::vector<ImageRecord> private_images;
  std::vector<ImageRecord> public_images;

  int num_classes() const { return static_cast<int>(class_names.size()); }
  std::vector<ImageRecord> private_subset(Subset subset) const;

  nlohmann::json manifest() const;
  static DatasetSplit from_manifest(const nlohmann::json& manifest);
};

std::string sha256_hex(const std::filesystem::path& file);

// Lists <root>/<label>/<image> in sorted order and digests every file.
std::vector<ImageRecord> scan_corpus(const std::filesystem::path& root);

// Private side: every image whose source label is listed, relabeled in the
// order of private_classes; each class is shuffled with the config seed and
// its first round(test_fraction * count) images (at least one when the class
// has two or more) are held out for classifier testing. Public side: all
// other identities. Raises a configuration error on an empty corpus, an
// unknown or empty private class, or an empty public side, and a
// split-integrity error when a digest appears on both sides.
DatasetSplit split_dataset(const std::vector<ImageRecord>& corpus,
                           const std::vector<std::string>& private_classes,
                           const ExperimentConfig& config);

// Throws a split-integrity error unless the two sides are disjoint by
// digest and every private label is populated.
void verify_split(const DatasetSplit& split);

// Decodes and preprocesses records into a [N, 3, S, S] tensor.
torch::Tensor load_images(const std::vector<ImageRecord>& records, int image_size);
torch::Tensor labels_of(const std::vector<ImageRecord>& records);

}  // namespace invdiff

#endif  // INVDIFF_DATASET_HPP
