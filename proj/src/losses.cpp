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
#include "invdiff/losses.hpp"

#include <c10/util/Logging.h>

#include <algorithm>

#include "invdiff/errors.hpp"

namespace invdiff {

namespace {

void check_logits(const torch::Tensor& logits, const torch::Tensor& labels) {
  if (logits.dim() != 2 || logits.size(1) < 2) fail(ErrorCategory::kShape, "logits must be [B, C] with C >= 2");
  if (labels.dim() != 1 || labels.size(0) != logits.size(0)) {
    fail(ErrorCategory::kShape, "labels must be [B] matching the logits batch");
  }
  if (labels.numel() > 0 && (labels.min().item<int64_t>() < 0 || labels.max().item<int64_t>() >= logits.size(1))) {
    fail(ErrorCategory::kIndex, "label outside 0..C-1");
  }
}

torch::Tensor target_logit(const torch::Tensor& logits, const torch::Tensor& labels) {
  return logits.gather(1, labels.unsqueeze(1)).squeeze(1);
}

// Non-target logits sorted descending, ties in class order.
torch::Tensor sorted_others(const torch::Tensor& logits, const torch::Tensor& labels) {
  auto target = torch::zeros_like(logits, torch::kBool).scatter_(1, labels.unsqueeze(1), true);
  auto masked = logits.masked_fill(target, -std::numeric_limits<double>::infinity());
  auto order = std::get<1>(masked.detach().sort(/*stable=*/true, /*dim=*/1, /*descending=*/true));
  return logits.gather(1, order);
}

}  // namespace

torch::Tensor max_margin(const torch::Tensor& logits, const torch::Tensor& labels) {
  check_logits(logits, labels);
  auto others = sorted_others(logits, labels);
  return -target_logit(logits, labels) + others.select(1, 0);
}

torch::Tensor top_k_loss(const torch::Tensor& logits, const torch::Tensor& labels, int k,
                         TopKAggregation aggregation) {
  check_logits(logits, labels);
  if (k < 1 || k > logits.size(1) - 1) {
    fail(ErrorCategory::kConfig, "top-k width " + std::to_string(k) + " outside [1, C-1]");
  }
  auto top = sorted_others(logits, labels).slice(1, 0, k).sum(1);
  if (aggregation == TopKAggregation::kMean) top = top / static_cast<double>(k);
  return -target_logit(logits, labels) + top;
}

torch::Tensor cross_entropy(const torch::Tensor& logits, const torch::Tensor& labels) {
  check_logits(logits, labels);
  return -torch::log_softmax(logits, 1).gather(1, labels.unsqueeze(1)).squeeze(1);
}

torch::Tensor poincare_distance(const torch::Tensor& u, const torch::Tensor& v) {
  auto diff = (u - v).pow(2).sum(1);
  auto denom = (1.0 - u.pow(2).sum(1)) * (1.0 - v.pow(2).sum(1));
  return torch::arccosh(1.0 + 2.0 * diff / denom);
}

torch::Tensor poincare_loss(const torch::Tensor& logits, const torch::Tensor& labels, int64_t* clamped) {
  check_logits(logits, labels);
  auto u = logits / logits.abs().sum(1, true);
  auto u_norm = u.norm(2, 1, true);
  auto over = u_norm.detach() >= kPoincareMaxNorm;
  if (over.any().item<bool>()) {
    const auto count = over.sum().item<int64_t>();
    if (clamped) *clamped += count;
    LOG(WARNING) << "poincare loss: clamped " << count << " logit vector(s) to norm " << kPoincareMaxNorm;
    u = torch::where(over, u * (kPoincareMaxNorm / u_norm), u);
  }
  auto onehot = torch::zeros_like(logits).scatter_(1, labels.unsqueeze(1), 1.0);
  auto v = (onehot - kPoincareXi).clamp_min(0.0);
  return poincare_distance(u, v);
}

CentroidTable estimate_centroids(const torch::Tensor& features, const torch::Tensor& labels, int num_classes) {
  if (features.dim() != 2 || labels.size(0) != features.size(0)) {
    fail(ErrorCategory::kShape, "features must be [N, F] with one label per row");
  }
  auto f = features.detach();
  CentroidTable table;
  table.centroids = torch::zeros({num_classes, f.size(1)}, f.options());
  table.counts.assign(static_cast<std::size_t>(num_classes), 0);
  for (int c = 0; c < num_classes; ++c) {
    auto rows = f.index({labels == c});
    if (rows.size(0) == 0) {
      fail(ErrorCategory::kConfig, "no pseudo-labeled images for class " + std::to_string(c + 1));
    }
    // Sum in float64 and in a fixed order so permuting rows cannot change
    // the result.
    auto sorted = std::get<0>(rows.to(torch::kDouble).sort(/*stable=*/true, /*dim=*/0, /*descending=*/false));
    table.centroids[c] = (sorted.sum(0) / static_cast<double>(rows.size(0))).to(f.scalar_type());
    table.counts[static_cast<std::size_t>(c)] = rows.size(0);
  }
  return table;
}

CentroidTable estimate_centroids(const ClassifierHandle& model, const torch::Tensor& public_images,
                                 const PseudoLabeledDataset& selection) {
  torch::NoGradGuard no_grad;
  auto images = public_images.index_select(0, selection.image_indices());
  std::vector<torch::Tensor> feats;
  for (int64_t i = 0; i < images.size(0); i += 256) {
    feats.push_back(model.features(images.slice(0, i, std::min(images.size(0), i + 256))));
  }
  if (feats.empty()) fail(ErrorCategory::kConfig, "centroid estimation needs pseudo-labeled images");
  return estimate_centroids(torch::cat(feats), selection.labels(), selection.num_classes);
}

torch::Tensor p_reg(const torch::Tensor& features, const torch::Tensor& labels, const CentroidTable& table) {
  if (features.dim() != 2 || features.size(1) != table.feature_dim()) {
    fail(ErrorCategory::kShape, "feature width does not match the centroid table");
  }
  if (labels.numel() > 0 && (labels.min().item<int64_t>() < 0 || labels.max().item<int64_t>() >= table.num_classes())) {
    fail(ErrorCategory::kIndex, "no centroid for the requested class");
  }
  auto centroids = table.centroids.to(features.scalar_type()).index_select(0, labels);
  return (features - centroids).pow(2).sum(1);
}

torch::Tensor combined_cls(const torch::Tensor& logits, const torch::Tensor& features, const torch::Tensor& labels,
                           const CentroidTable& table, const LossConfig& config) {
  auto loss = top_k_loss(logits, labels, config.k, config.aggregation);
  if (config.alpha == 0.0) return loss;
  return loss + config.alpha * p_reg(features, labels, table);
}

torch::Tensor classification_loss(const torch::Tensor& logits, const torch::Tensor& features,
                                  const torch::Tensor& labels, const CentroidTable* table, const LossConfig& config) {
  switch (config.family) {
    case LossFamily::kCrossEntropy: return cross_entropy(logits, labels);
    case LossFamily::kPoincare: return poincare_loss(logits, labels);
    case LossFamily::kMaxMargin: return max_margin(logits, labels);
    case LossFamily::kTopK: return top_k_loss(logits, labels, config.k, config.aggregation);
    case LossFamily::kCombined:
      if (!table) fail(ErrorCategory::kConfig, "combined loss needs a centroid table");
      return combined_cls(logits, features, labels, *table, config);
  }
  fail(ErrorCategory::kConfig, "unknown loss family");
}

std::vector<double> min_max_rescale(const std::vector<double>& values) {
  if (values.empty()) return {};
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  std::vector<double> out;
  out.reserve(values.size());
  for (double v : values) out.push_back(*hi > *lo ? (v - *lo) / (*hi - *lo) : 0.0);
  return out;
}

}  // namespace invdiff
