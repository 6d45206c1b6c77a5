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
#include "invdiff/finetune.hpp"

#include <c10/util/Logging.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "invdiff/errors.hpp"
#include "invdiff/random.hpp"

namespace invdiff {

namespace F = torch::nn::functional;

NamedTensors snapshot_parameters(const torch::nn::Module& module) {
  NamedTensors out;
  for (const auto& item : module.named_parameters()) out.emplace_back(item.key(), item.value().detach().clone());
  return out;
}

void restore_parameters(torch::nn::Module& module, const NamedTensors& snapshot) {
  torch::NoGradGuard no_grad;
  auto params = module.named_parameters();
  for (const auto& [name, value] : snapshot) params[name].copy_(value);
}

std::vector<std::string> ChangeRateReport::ranked_layers() const {
  std::vector<std::string> out;
  for (auto i : ranking) out.push_back(layers[i].layer);
  return out;
}

nlohmann::json ChangeRateReport::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& l : layers) rows.push_back({{"index", l.index}, {"layer", l.layer}, {"rate", l.rate}});
  nlohmann::json ranked = nlohmann::json::array();
  for (auto i : ranking) ranked.push_back(layers[i].index);
  return {{"layers", rows}, {"ranking", ranked}, {"excluded", excluded}};
}

ChangeRateReport change_rates(const NamedTensors& before, const NamedTensors& after,
                              const std::vector<std::string>& layers) {
  auto group = [](const NamedTensors& params, const std::string& layer) {
    std::vector<const std::pair<std::string, torch::Tensor>*> out;
    for (const auto& p : params) {
      if (ConditionalDenoiserImpl::layer_of(p.first) == layer) out.push_back(&p);
    }
    return out;
  };
  ChangeRateReport report;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& layer = layers[i];
    auto b = group(before, layer);
    auto a = group(after, layer);
    if (b.empty()) fail(ErrorCategory::kIndex, "no parameters for layer " + layer);
    if (a.size() != b.size()) fail(ErrorCategory::kShape, "layer " + layer + " differs between snapshots");
    double diff = 0.0;
    double base = 0.0;
    for (std::size_t j = 0; j < b.size(); ++j) {
      if (a[j]->first != b[j]->first || a[j]->second.sizes() != b[j]->second.sizes()) {
        fail(ErrorCategory::kShape, "parameter " + b[j]->first + " differs between snapshots");
      }
      auto theta = b[j]->second.detach().to(torch::kDouble);
      diff += (a[j]->second.detach().to(torch::kDouble) - theta).pow(2).sum().item<double>();
      base += theta.pow(2).sum().item<double>();
    }
    if (base == 0.0) {
      LOG(WARNING) << "change rate: layer " << layer << " has zero norm and is excluded";
      report.excluded.push_back(layer);
      continue;
    }
    report.layers.push_back({layer, static_cast<int>(i) + 1, std::sqrt(diff) / std::sqrt(base)});
  }
  report.ranking.resize(report.layers.size());
  std::iota(report.ranking.begin(), report.ranking.end(), std::size_t{0});
  std::stable_sort(report.ranking.begin(), report.ranking.end(),
                   [&](std::size_t x, std::size_t y) { return report.layers[x].rate > report.layers[y].rate; });
  return report;
}

std::vector<std::string> select_layers(const ChangeRateReport& report, int L, const std::string& always_include) {
  if (L < 1 || L > static_cast<int>(report.ranking.size())) {
    fail(ErrorCategory::kConfig, "cannot keep " + std::to_string(L) + " of " +
                                     std::to_string(report.ranking.size()) + " ranked layers");
  }
  auto ranked = report.ranked_layers();
  std::vector<std::string> out(ranked.begin(), ranked.begin() + L);
  if (std::find(out.begin(), out.end(), always_include) == out.end()) out.push_back(always_include);
  return out;
}

torch::Tensor random_crop_flip(const torch::Tensor& images, at::Generator& gen) {
  const int64_t size = images.size(-1);
  const int64_t crop = std::max<int64_t>(1, (size * 7) / 8);
  const int64_t span = size - crop + 1;
  auto offsets = torch::randint(0, span, {images.size(0), 2}, gen, torch::kInt64);
  auto flips = torch::rand({images.size(0)}, gen) < 0.5;
  std::vector<torch::Tensor> out;
  for (int64_t i = 0; i < images.size(0); ++i) {
    const int64_t dy = offsets[i][0].item<int64_t>();
    const int64_t dx = offsets[i][1].item<int64_t>();
    auto patch = images[i].unsqueeze(0).slice(2, dy, dy + crop).slice(3, dx, dx + crop);
    patch = F::interpolate(patch, F::InterpolateFuncOptions()
                                      .size(std::vector<int64_t>{size, size})
                                      .mode(torch::kBilinear)
                                      .align_corners(false));
    if (flips[i].item<bool>()) patch = patch.flip({3});
    out.push_back(patch);
  }
  return torch::cat(out);
}

GuidedSampleLoss guided_sample_loss(const NoisePredictor& model, const NoiseSchedule& schedule,
                                    const ClassifierHandle& target, const CentroidTable* centroids,
                                    const torch::Tensor& x_T, const torch::Tensor& labels,
                                    const FinetuneConfig& config, at::Generator& gen,
                                    const std::vector<double>& step_weights) {
  auto sampled = ddim_sample(model, schedule, x_T, schedule.timesteps(), labels, config.guidance_scale,
                             config.sampler_steps);
  std::vector<std::size_t> steps;
  if (config.timestep_mode == TimestepMode::kMulti) {
    for (std::size_t i = 0; i < sampled.x0_trace.size(); ++i) steps.push_back(i);
  } else {
    steps.push_back(sampled.x0_trace.size() - 1);
  }
  if (!step_weights.empty() && step_weights.size() != sampled.x0_trace.size()) {
    fail(ErrorCategory::kShape, "one step weight per sampler step is required");
  }
  torch::Tensor total = torch::zeros({}, x_T.options());
  const int augmentations = std::max(1, config.augmentations);
  for (auto i : steps) {
    for (int a = 0; a < augmentations; ++a) {
      auto view = config.augmentations > 0 ? random_crop_flip(sampled.x0_trace[i], gen) : sampled.x0_trace[i];
      auto [features, logits] = target.forward(view);
      auto term = classification_loss(logits, features, labels, centroids, config.loss).mean();
      if (!step_weights.empty()) term = term * step_weights[i];
      total = total + term;
    }
  }
  return {total / static_cast<double>(steps.size() * static_cast<std::size_t>(augmentations)), sampled.image};
}

namespace {

void train_only(ConditionalDenoiser& model, const std::vector<std::string>& layers) {
  for (auto& item : model->named_parameters()) {
    const auto layer = ConditionalDenoiserImpl::layer_of(item.key());
    item.value().set_requires_grad(std::find(layers.begin(), layers.end(), layer) != layers.end());
  }
}

std::vector<torch::Tensor> trainable(ConditionalDenoiser& model) {
  std::vector<torch::Tensor> out;
  for (auto& p : model->parameters()) {
    if (p.requires_grad()) out.push_back(p);
  }
  return out;
}

struct EpochStats {
  std::vector<double> losses;
  std::vector<double> accuracies;
  int correct = 0;
  int total = 0;
};

EpochStats run_epoch(ConditionalDenoiser& model, torch::optim::Optimizer& optimizer, const NoiseSchedule& schedule,
                     const ClassifierHandle& target, const CentroidTable* centroids, const std::vector<int>& targets,
                     const FinetuneConfig& config, at::Generator& gen) {
  EpochStats stats;
  auto predictor = predictor_of(model);
  const int size = model->shape().image_size;
  for (int c : targets) {
    auto labels = torch::full({config.batch_size}, c, torch::kInt64);
    auto x_T = torch::randn({config.batch_size, 3, size, size}, gen);
    auto result = guided_sample_loss(predictor, schedule, target, centroids, x_T, labels, config, gen);
    const double value = result.loss.item<double>();
    if (!std::isfinite(value)) fail(ErrorCategory::kTraining, "fine-tuning loss is not finite");
    optimizer.zero_grad();
    result.loss.backward();
    optimizer.step();
    const int hits = (target.predict(result.image.detach()) == labels).sum().item<int>();
    stats.correct += hits;
    stats.total += config.batch_size;
    stats.losses.push_back(value);
    stats.accuracies.push_back(static_cast<double>(hits) / config.batch_size);
  }
  return stats;
}

torch::optim::AdamW make_optimizer(ConditionalDenoiser& model, const FinetuneConfig& config) {
  return torch::optim::AdamW(trainable(model),
                             torch::optim::AdamWOptions(config.lr).weight_decay(config.weight_decay));
}

}  // namespace

FinetuneResult finetune(ConditionalDenoiser& model, const NoiseSchedule& schedule, const ClassifierHandle& target,
                        const CentroidTable* centroids, const std::vector<int>& targets,
                        const FinetuneConfig& config, std::uint64_t seed) {
  if (targets.empty()) fail(ErrorCategory::kConfig, "fine-tuning needs at least one target class");
  const auto& middle = ConditionalDenoiserImpl::middle_block();
  if (config.layers_to_keep < 1 || config.layers_to_keep > static_cast<int>(middle.size())) {
    fail(ErrorCategory::kConfig, "layers_to_keep must lie in [1, " + std::to_string(middle.size()) + "]");
  }
  target.freeze();
  auto gen = make_generator(seed);
  FinetuneResult result;
  const auto original = snapshot_parameters(*model);

  std::vector<std::string> candidates{ConditionalDenoiserImpl::label_embedding()};
  candidates.insert(candidates.end(), middle.begin(), middle.end());
  train_only(model, candidates);
  {
    auto optimizer = make_optimizer(model, config);
    for (int e = 0; e < config.probe_epochs; ++e) {
      run_epoch(model, optimizer, schedule, target, centroids, targets, config, gen);
    }
  }
  result.probe = change_rates(original, snapshot_parameters(*model), middle);
  restore_parameters(*model, original);
  if (result.probe.ranking.empty()) {
    fail(ErrorCategory::kTraining, "probe fine-tuning left no rankable middle-block layer");
  }
  const int keep = std::min<int>(config.layers_to_keep, static_cast<int>(result.probe.ranking.size()));
  result.selected = select_layers(result.probe, keep);
  LOG(INFO) << "fine-tune: probe selected " << keep << " middle-block layers";

  train_only(model, result.selected);
  auto optimizer = make_optimizer(model, config);
  auto last_good = original;
  const bool by_accuracy = config.scheme == StoppingScheme::kAccuracyThreshold;
  const int cap = by_accuracy ? config.max_epochs : config.epochs;
  for (int e = 0; e < cap; ++e) {
    EpochStats stats;
    try {
      stats = run_epoch(model, optimizer, schedule, target, centroids, targets, config, gen);
    } catch (const Error& err) {
      restore_parameters(*model, last_good);
      for (auto& p : model->parameters()) p.set_requires_grad(true);
      fail(ErrorCategory::kTraining, std::string(err.what()) + " at epoch " + std::to_string(e + 1) +
                                         "; restored the last completed epoch");
    }
    last_good = snapshot_parameters(*model);
    const double acc = static_cast<double>(stats.correct) / stats.total;
    result.batch_losses.insert(result.batch_losses.end(), stats.losses.begin(), stats.losses.end());
    result.batch_accuracies.insert(result.batch_accuracies.end(), stats.accuracies.begin(), stats.accuracies.end());
    result.epoch_accuracies.push_back(acc);
    result.epochs_run = e + 1;
    LOG(INFO) << "fine-tune epoch " << e + 1 << " generated accuracy " << acc;
    if (by_accuracy && acc >= config.accuracy_threshold) {
      result.threshold_reached = true;
      break;
    }
  }
  if (by_accuracy && !result.threshold_reached) {
    result.warnings.push_back("fine-tuning stopped at the epoch cap of " + std::to_string(cap) +
                              " without reaching accuracy " + std::to_string(config.accuracy_threshold));
    LOG(WARNING) << result.warnings.back();
  }
  for (auto& p : model->parameters()) p.set_requires_grad(true);
  return result;
}

void write_loss_trends(const std::filesystem::path& csv, const ConditionalDenoiser& model,
                       const NoiseSchedule& schedule, const ClassifierHandle& target, const CentroidTable& centroids,
                       const std::vector<int>& targets, const FinetuneConfig& config,
                       const std::vector<LossFamily>& families, std::uint64_t seed) {
  std::ofstream out(csv);
  if (!out) fail(ErrorCategory::kPersistence, "cannot write " + csv.string());
  out << "family,batch,loss,rescaled_loss,accuracy\n";
  for (auto family : families) {
    auto copy = clone_denoiser(model);
    auto recipe = config;
    recipe.loss.family = family;
    recipe.scheme = StoppingScheme::kFixedEpochs;
    auto result = finetune(copy, schedule, target, &centroids, targets, recipe, seed);
    auto rescaled = min_max_rescale(result.batch_losses);
    for (std::size_t i = 0; i < rescaled.size(); ++i) {
      out << loss_family_name(family) << ',' << i + 1 << ',' << result.batch_losses[i] << ',' << rescaled[i] << ','
          << result.batch_accuracies[i] << '\n';
    }
  }
  if (!out) fail(ErrorCategory::kPersistence, "failed writing " + csv.string());
}

}  // namespace invdiff
