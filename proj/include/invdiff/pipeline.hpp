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
#ifndef INVDIFF_PIPELINE_HPP
#define INVDIFF_PIPELINE_HPP

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "invdiff/classifiers.hpp"
#include "invdiff/config.hpp"
#include "invdiff/dataset.hpp"
#include "invdiff/diffusion.hpp"
#include "invdiff/finetune.hpp"
#include "invdiff/losses.hpp"
#include "invdiff/metrics.hpp"
#include "invdiff/pseudo_label.hpp"
#include "invdiff/reconstruct.hpp"

namespace invdiff {

// Where every stage reads and writes, relative to the --out directory.
struct Workspace {
  std::filesystem::path root;

  std::filesystem::path manifest() const { return root / "split" / "manifest.json"; }
  std::filesystem::path classifier(const std::string& role) const { return root / "classifiers" / (role + ".ckpt"); }
  std::filesystem::path classifier_report(const std::string& role) const {
    return root / "classifiers" / (role + "_report.json");
  }
  std::filesystem::path selection() const { return root / "select" / "selection.json"; }
  std::filesystem::path pretrained() const { return root / "pretrain" / "denoiser.ckpt"; }
  std::filesystem::path finetuned() const { return root / "finetune" / "denoiser.ckpt"; }
  std::filesystem::path change_rates() const { return root / "finetune" / "change_rates.json"; }
  std::filesystem::path attack_dir(const std::string& name = "attack") const { return root / name; }
  std::filesystem::path evaluation_dir(const std::string& attack = "attack") const {
    return root / "evaluate" / attack;
  }
};

// Single-threaded, deterministic kernels: reruns with the same inputs are
// bit-identical.
void configure_determinism();

// Stage seeds derived from the experiment seed.
enum class Stage : std::uint64_t { kSplit = 1, kTarget, kEvaluation, kPretrain, kFinetune, kAttack, kCompare };
std::uint64_t stage_seed(const ExperimentConfig& config, Stage stage);

void write_json(const std::filesystem::path& path, const nlohmann::json& value);
nlohmann::json read_json(const std::filesystem::path& path);

DatasetSplit run_split(const ExperimentConfig& config, const Workspace& ws);
DatasetSplit load_split(const Workspace& ws);

// role is "target" or "evaluation". Writes the checkpoint and a report
// with train/test accuracy and warnings, which is also returned.
nlohmann::json run_train_classifier(const ExperimentConfig& config, const Workspace& ws, const std::string& role);

PseudoLabeledDataset run_select(const ExperimentConfig& config, const Workspace& ws);
PseudoLabeledDataset load_selection(const Workspace& ws, int num_classes);

// Public images and their pseudo-labels in selection order.
struct PseudoLabeledImages {
  torch::Tensor images;
  torch::Tensor labels;
};
PseudoLabeledImages selected_images(const ExperimentConfig& config, const Workspace& ws,
                                    const PseudoLabeledDataset& selection);

PretrainResult run_pretrain(const ExperimentConfig& config, const Workspace& ws);

// Target classes from a 1-based list; empty means all classes.
std::vector<int> internal_targets(const std::vector<int>& external, int num_classes);

CentroidTable target_centroids(const ExperimentConfig& config, const Workspace& ws, const ClassifierHandle& target);

FinetuneResult run_finetune(const ExperimentConfig& config, const Workspace& ws);

struct AttackRun {
  std::vector<ReconstructionResult> classes;
  torch::Tensor images;  // final images of every class, class-major
  torch::Tensor labels;  // 0-based
};

// Reconstructs images for the configured classes with the fine-tuned
// denoiser (or the pretrained one), writing <dir>/<class>/<index>.png,
// trace.csv and summary.json.
AttackRun run_attack(const ExperimentConfig& config, const Workspace& ws, bool use_finetuned = true,
                     const std::string& dir_name = "attack");

// Reads reconstructions back from <dir>/<class>/<index>.png.
struct Reconstructions {
  torch::Tensor images;
  torch::Tensor labels;
};
Reconstructions read_reconstructions(const std::filesystem::path& dir, int image_size, int num_classes);

// Full metric battery for reconstructions against the private images.
// PSNR/SSIM compare each reconstruction with the same-class private image of
// highest PSNR.
MetricsReport evaluate_reconstructions(const ClassifierHandle& evaluator, const torch::Tensor& recon,
                                       const torch::Tensor& recon_labels, const torch::Tensor& private_images,
                                       const torch::Tensor& private_labels, int prdc_k);

MetricsReport run_evaluate(const ExperimentConfig& config, const Workspace& ws, const std::string& dir_name = "attack");

// Fine-tuning loss-trend curves for several loss families, as CSV.
void run_compare_losses(const ExperimentConfig& config, const Workspace& ws, const std::filesystem::path& csv,
                        const std::vector<LossFamily>& families);

struct SamplerComparison {
  double iir_acc1 = 0.0;
  double iir_fid = 0.0;
  double sampler_acc1 = 0.0;
  double sampler_fid = 0.0;
  std::vector<double> iir_cls;       // mean target L_cls per class on the optimized x_0
  std::vector<double> denoised_cls;  // same after post-denoising
  std::vector<double> sampler_cls;   // same for plain guided samples with matching seeds
  nlohmann::json to_json() const;
};

// Attack output without PGD against plain sampling from the same denoiser
// and seeds. Accuracy and FID are measured on the post-denoised attack
// output.
SamplerComparison run_compare_samplers(const ExperimentConfig& config, const Workspace& ws);

}  // namespace invdiff

#endif  // INVDIFF_PIPELINE_HPP
