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
#ifndef INVDIFF_LOSSES_HPP
#define INVDIFF_LOSSES_HPP

#include <vector>

#include <torch/torch.h>

#include "invdiff/classifiers.hpp"
#include "invdiff/config.hpp"
#include "invdiff/pseudo_label.hpp"

namespace invdiff {

// All losses take logits [B, C] (and features [B, F] where relevant) with
// 0-based labels [B] and return one value per sample, [B]. They are plain
// autograd expressions, so gradients w.r.t. logits, features and anything
// upstream come for free.

// -l_y + max_{j != y} l_j
torch::Tensor max_margin(const torch::Tensor& logits, const torch::Tensor& labels);

// -l_y + aggregate of the k largest l_j with j != y. Ties are ordered by
// class index. k outside [1, C-1] raises a configuration error.
torch::Tensor top_k_loss(const torch::Tensor& logits, const torch::Tensor& labels, int k,
                         TopKAggregation aggregation = TopKAggregation::kMean);

torch::Tensor cross_entropy(const torch::Tensor& logits, const torch::Tensor& labels);

inline constexpr double kPoincareXi = 1e-4;
inline constexpr double kPoincareMaxNorm = 1.0 - 1e-6;

// Row-wise Poincare distance between points of the open unit ball, [B, C]
// each.
torch::Tensor poincare_distance(const torch::Tensor& u, const torch::Tensor& v);

// Poincare distance between u = logits / ||logits||_1 and
// v = max(onehot(y) - xi, 0). When ||u||_2 reaches 1 it is rescaled to
// kPoincareMaxNorm and *clamped (if given) is incremented.
torch::Tensor poincare_loss(const torch::Tensor& logits, const torch::Tensor& labels, int64_t* clamped = nullptr);

// Per-class feature centroid of the target classifier.
struct CentroidTable {
  torch::Tensor centroids;  // [C, F]
  std::vector<int64_t> counts;

  int num_classes() const { return static_cast<int>(centroids.size(0)); }
  int feature_dim() const { return static_cast<int>(centroids.size(1)); }
};

// Mean of features per label. A class without samples raises a
// configuration error.
CentroidTable estimate_centroids(const torch::Tensor& features, const torch::Tensor& labels, int num_classes);
// Centroids of the classifier's features over each class's pseudo-labeled
// public images.
CentroidTable estimate_centroids(const ClassifierHandle& model, const torch::Tensor& public_images,
                                 const PseudoLabeledDataset& selection);

// ||p_x - centroid_y||^2
torch::Tensor p_reg(const torch::Tensor& features, const torch::Tensor& labels, const CentroidTable& table);

// top-k + alpha * p-reg
torch::Tensor combined_cls(const torch::Tensor& logits, const torch::Tensor& features, const torch::Tensor& labels,
                           const CentroidTable& table, const LossConfig& config);

// Dispatch on config.family. table may be null unless family is kCombined.
torch::Tensor classification_loss(const torch::Tensor& logits, const torch::Tensor& features,
                                  const torch::Tensor& labels, const CentroidTable* table, const LossConfig& config);

// Min-max rescaling of a loss curve into [0, 1]; constant curves map to 0.
std::vector<double> min_max_rescale(const std::vector<double>& values);

}  // namespace invdiff

#endif  // INVDIFF_LOSSES_HPP
