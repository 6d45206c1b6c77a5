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
#ifndef INVDIFF_FINETUNE_HPP
#define INVDIFF_FINETUNE_HPP

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "invdiff/classifiers.hpp"
#include "invdiff/config.hpp"
#include "invdiff/diffusion.hpp"
#include "invdiff/losses.hpp"

namespace invdiff {

using NamedTensors = std::vector<std::pair<std::string, torch::Tensor>>;

NamedTensors snapshot_parameters(const torch::nn::Module& module);
void restore_parameters(torch::nn::Module& module, const NamedTensors& snapshot);

struct LayerChange {
  std::string layer;
  int index = 0;  // 1-based position in the candidate list
  double rate = 0.0;
};

// Relative parameter movement per layer,
// ||theta'_l - theta_l||_F / ||theta_l||_F.
struct ChangeRateReport {
  std::vector<LayerChange> layers;    // candidate order, zero-norm layers left out
  std::vector<std::string> excluded;  // layers whose original norm was zero
  std::vector<std::size_t> ranking;   // indices into layers, largest rate first

  std::vector<std::string> ranked_layers() const;
  nlohmann::json to_json() const;
};

// A parameter belongs to layer l when its name with the last dotted
// component removed equals l. Missing layers raise an index error and
// mismatched shapes a shape error. Ties in rate keep candidate order.
ChangeRateReport change_rates(const NamedTensors& before, const NamedTensors& after,
                              const std::vector<std::string>& layers);

// The top L layers of the ranking plus always_include. L must lie in
// [1, ranked layers].
std::vector<std::string> select_layers(const ChangeRateReport& report, int L,
                                       const std::string& always_include = ConditionalDenoiserImpl::label_embedding());

// Random crop (scale 7/8 of the side, resized back) and horizontal flip,
// drawn per image. Differentiable with respect to the images.
torch::Tensor random_crop_flip(const torch::Tensor& images, at::Generator& gen);

struct GuidedSampleLoss {
  torch::Tensor loss;   // scalar
  torch::Tensor image;  // final sample
};

// Samples labels from x_T with the guided sampler and scores the x0
// estimates with the classification loss: every step in multi-timestep
// mode, the last one otherwise, each under config.augmentations random
// augmentations. The result is the mean over steps and augmentations.
// step_weights, when non-empty, scales step i (used to probe gradient flow).
GuidedSampleLoss guided_sample_loss(const NoisePredictor& model, const NoiseSchedule& schedule,
                                    const ClassifierHandle& target, const CentroidTable* centroids,
                                    const torch::Tensor& x_T, const torch::Tensor& labels,
                                    const FinetuneConfig& config, at::Generator& gen,
                                    const std::vector<double>& step_weights = {});

struct FinetuneResult {
  ChangeRateReport probe;
  std::vector<std::string> selected;
  std::vector<double> batch_losses;
  std::vector<double> batch_accuracies;
  std::vector<double> epoch_accuracies;
  int epochs_run = 0;
  bool threshold_reached = false;
  std::vector<std::string> warnings;
};

// Probe phase: trains the label embedding and the whole middle block for
// probe_epochs, ranks the middle-block layers by change rate, keeps the top
// layers_to_keep and restores the starting weights. Main phase: trains only
// the label embedding and the kept layers with AdamW. One epoch is one
// batch per target class. Stops after a fixed number of epochs, or at the
// first epoch whose generated images the target labels as intended with
// accuracy >= the threshold (max_epochs caps it, with a warning).
// targets are 0-based. A non-finite loss restores the last completed epoch
// and raises a training error.
FinetuneResult finetune(ConditionalDenoiser& model, const NoiseSchedule& schedule, const ClassifierHandle& target,
                        const CentroidTable* centroids, const std::vector<int>& targets,
                        const FinetuneConfig& config, std::uint64_t seed);

// Fine-tunes a copy of model once per loss family and writes
// family,batch,loss,rescaled_loss,accuracy rows.
void write_loss_trends(const std::filesystem::path& csv, const ConditionalDenoiser& model,
                       const NoiseSchedule& schedule, const ClassifierHandle& target, const CentroidTable& centroids,
                       const std::vector<int>& targets, const FinetuneConfig& config,
                       const std::vector<LossFamily>& families, std::uint64_t seed);

}  // namespace invdiff

#endif  // INVDIFF_FINETUNE_HPP
