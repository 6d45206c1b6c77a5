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
#ifndef INVDIFF_METRICS_HPP
#define INVDIFF_METRICS_HPP

#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "invdiff/classifiers.hpp"

namespace invdiff {

// Maps images [N, 3, S, S] to features [N, F].
using Embedder = std::function<torch::Tensor(const torch::Tensor&)>;

// Penultimate features of a classifier, computed in chunks without autograd.
Embedder classifier_embedder(const ClassifierHandle& model);

struct AttackAccuracy {
  double acc1 = 0.0;
  double acc5 = 0.0;
  std::vector<bool> hit;  // top-1 correct, per image
};

AttackAccuracy attack_accuracy(const torch::Tensor& logits, const torch::Tensor& labels);
AttackAccuracy attack_accuracy(const ClassifierHandle& evaluator, const torch::Tensor& images,
                               const torch::Tensor& labels);

// Frechet distance between Gaussian fits of two feature sets [N, F],
// computed in float64. The matrix square root comes from eigendecompositions
// of A and of the symmetrized product A^{1/2} B A^{1/2}; eigenvalues below
// -1e-8 (relative to the largest) raise a numerical error.
double fid(const torch::Tensor& real, const torch::Tensor& fake);

// Mean over recognized reconstructions of the smallest feature distance to
// a private image of the same class. Absent when nothing was recognized.
std::optional<double> knn_dist(const torch::Tensor& recon_features, const torch::Tensor& recon_labels,
                               const std::vector<bool>& hit, const torch::Tensor& private_features,
                               const torch::Tensor& private_labels);

inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

// Both take single images [3, H, W] with the given data range (2 for
// [-1, 1]). PSNR of identical images is kPsnrIdentical. SSIM uses an 11-tap
// Gaussian window (sigma 1.5, shrunk for images smaller than 11 pixels),
// K1 = 0.01, K2 = 0.03 and valid filtering, averaged over the map and
// channels.
double psnr(const torch::Tensor& a, const torch::Tensor& b, double data_range = 2.0);
double ssim(const torch::Tensor& a, const torch::Tensor& b, double data_range = 2.0);

struct PrdcScores {
  double precision = 0.0;
  double recall = 0.0;
  double density = 0.0;
  double coverage = 0.0;
};

// Precision, recall, density and coverage from k-nearest-neighbour balls
// (self excluded) with strict distance comparisons.
PrdcScores prdc(const torch::Tensor& real, const torch::Tensor& fake, int k);

struct ClassPrdc {
  int label = 0;  // 0-based
  std::optional<PrdcScores> scores;  // absent when the class was skipped
};

struct PrdcReport {
  int k = 0;
  std::vector<ClassPrdc> classes;
  std::optional<PrdcScores> mean;  // over evaluated classes
  std::vector<std::string> warnings;
};

// k = 0 picks 5 when every side of every class has more than 5 samples and
// 3 otherwise. Classes with k or fewer samples on either side are skipped.
PrdcReport prdc_by_class(const std::vector<torch::Tensor>& real, const std::vector<torch::Tensor>& fake, int k);

struct SummaryStats {
  double mean = 0.0;
  double stddev = 0.0;
  double min = 0.0;
  double max = 0.0;
  int count = 0;
  int infinite = 0;  // PSNR sentinels, excluded from the moments
};

SummaryStats summarize(const std::vector<double>& values);

struct MetricsReport {
  int images = 0;
  int classes = 0;
  double acc1 = 0.0;
  double acc5 = 0.0;
  double fid = 0.0;
  std::optional<double> knn_dist;
  std::vector<double> psnr;
  std::vector<double> ssim;
  PrdcReport prdc;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
  std::string to_table() const;
};

}  // namespace invdiff

#endif  // INVDIFF_METRICS_HPP
