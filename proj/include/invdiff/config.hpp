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
#ifndef INVDIFF_CONFIG_HPP
#define INVDIFF_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace invdiff {

enum class LossFamily { kCrossEntropy, kPoincare, kMaxMargin, kTopK, kCombined };
enum class TopKAggregation { kMean, kSum };

LossFamily parse_loss_family(const std::string& name);
std::string loss_family_name(LossFamily family);

// Classification-loss settings shared by fine-tuning and reconstruction.
struct LossConfig {
  LossFamily family = LossFamily::kCombined;
  int k = 20;
  double alpha = 1.0;
  TopKAggregation aggregation = TopKAggregation::kMean;
};

// Targeted PGD refinement: step size, l2 radius and iteration count.
struct PGDConfig {
  double step_size = 0.1;
  double epsilon = 0.5;
  int iterations = 10;
};

struct ClassifierRecipe {
  std::string architecture;
  int epochs = 30;
  int batch_size = 64;
  double lr = 1e-2;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double flip_probability = 0.5;
};

enum class InputTransform { kIdentity, kUnitRange };

struct ClassifierConfig {
  ClassifierRecipe target{.architecture = "target-cnn"};
  ClassifierRecipe evaluation{.architecture = "eval-resnet"};
  // Classifiers receive the same [-1, 1] tensors as the denoiser; kUnitRange
  // maps them to [0, 1] inside the classifier's forward pass.
  InputTransform input_transform = InputTransform::kIdentity;
  double test_fraction = 0.1;
};

struct SelectConfig {
  // Absent: ceil(30 * |public| / 30000).
  std::optional<int> top_n;
};

struct ScheduleConfig {
  int timesteps = 1000;
  std::string kind = "linear";
  double beta_start = 1e-4;
  double beta_end = 0.02;
};

struct DenoiserConfig {
  int base_channels = 32;
  std::vector<int> channel_mult{1, 2, 2};
  int res_blocks = 1;
  int groups = 8;
};

struct PretrainConfig {
  int iterations = 50000;
  int batch_size = 150;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.0;
  double ema_rate = 0.9999;
  double label_dropout = 0.1;
  double flip_probability = 0.5;
  int log_every = 100;
};

enum class StoppingScheme { kFixedEpochs, kAccuracyThreshold };
enum class TimestepMode { kMulti, kLast };

struct FinetuneConfig {
  int layers_to_keep = 5;
  int probe_epochs = 1;
  StoppingScheme scheme = StoppingScheme::kFixedEpochs;
  int epochs = 20;
  double accuracy_threshold = 0.99;
  int max_epochs = 100;
  int augmentations = 2;
  int sampler_steps = 10;
  double guidance_scale = 3.0;
  int batch_size = 4;
  double lr = 2e-4;
  double weight_decay = 0.0;
  TimestepMode timestep_mode = TimestepMode::kMulti;
  // 1-based external labels; empty means every class.
  std::vector<int> target_classes;
  LossConfig loss;
};

enum class PriorReduction { kSum, kMean };

struct AttackConfig {
  int iterations = 30;
  double guidance_scale = 3.0;
  double lr = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int t_high = 1000;
  int t_low = 200;
  int perturbation = 50;
  PriorReduction prior_reduction = PriorReduction::kSum;
  bool post_denoise = true;
  int denoise_t = 150;
  int denoise_steps = 10;
  double denoise_scale = 1.0;
  bool use_pgd = true;
  PGDConfig pgd;
  int images_per_class = 5;
  std::vector<int> target_classes;
  LossConfig loss;
};

struct EvaluateConfig {
  // 0 selects 5 when every class has more than 5 samples per side, else 3.
  int prdc_k = 0;
};

struct DataConfig {
  std::filesystem::path corpus;
  std::vector<std::string> private_classes;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  int image_size = 64;
  int num_classes = 0;
  DataConfig data;
  ClassifierConfig classifier;
  SelectConfig select;
  ScheduleConfig schedule;
  DenoiserConfig denoiser;
  PretrainConfig pretrain;
  FinetuneConfig finetune;
  AttackConfig attack;
  EvaluateConfig evaluate;
};

// Parses and validates a config document. Unknown keys, wrong types and
// violated invariants raise a configuration error. Relative corpus paths are
// resolved against base_dir.
ExperimentConfig parse_config(const nlohmann::json& document,
                              const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

nlohmann::json to_json(const ExperimentConfig& config);

// Invariant checks; called by parse_config and usable on hand-built configs.
void validate(const ExperimentConfig& config);
void validate(const LossConfig& loss, int num_classes);

}  // namespace invdiff

#endif  // INVDIFF_CONFIG_HPP
