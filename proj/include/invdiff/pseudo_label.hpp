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
#ifndef INVDIFF_PSEUDO_LABEL_HPP
#define INVDIFF_PSEUDO_LABEL_HPP

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "invdiff/classifiers.hpp"

namespace invdiff {

struct PseudoLabelEntry {
  int64_t image = 0;  // index into the public image list
  int label = 0;      // 0-based
  double score = 0.0; // raw logit of that label
};

// For each class, the n public images with the highest raw logit for it.
// The same image may be listed under several classes.
struct PseudoLabeledDataset {
  int num_classes = 0;
  int top_n = 0;
  std::vector<std::vector<PseudoLabelEntry>> by_class;
  std::vector<std::string> warnings;

  std::vector<PseudoLabelEntry> entries() const;
  // Selected image indices and labels, in class-major order.
  torch::Tensor image_indices() const;
  torch::Tensor labels() const;
};

// ceil(30 * |public| / 30000), at least 1.
int default_top_n(int64_t public_count);

// Sorts each column of logits ([N, C]) in descending order with ties kept in
// input order and keeps the first n rows. n > N keeps every row and records
// a warning.
PseudoLabeledDataset select_top_n(const torch::Tensor& logits, int n);

PseudoLabeledDataset select_top_n(const ClassifierHandle& model, const torch::Tensor& public_images, int n);

}  // namespace invdiff

#endif  // INVDIFF_PSEUDO_LABEL_HPP
