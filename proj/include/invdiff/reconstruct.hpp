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
#ifndef INVDIFF_RECONSTRUCT_HPP
#define INVDIFF_RECONSTRUCT_HPP

#include <cstdint>
#include <functional>
#include <vector>

#include <torch/torch.h>

#include "invdiff/classifiers.hpp"
#include "invdiff/config.hpp"
#include "invdiff/diffusion.hpp"
#include "invdiff/losses.hpp"

namespace invdiff {

struct TimeSchedule {
  std::vector<int> steps;  // t_1..t_N
  std::vector<int> base;   // unperturbed linear sequence
  int t_high = 0;
  int t_low = 0;
  int perturbation = 0;
};

// t_i = round(t_high + (t_low - t_high) * (i - 1) / (N - 1)) plus a uniform
// integer offset in [-w, w], clipped to [1, T].
TimeSchedule make_time_schedule(int N, int t_high, int t_low, int w, int T, std::uint64_t seed);

// Adamax on a single tensor, matching the usual formulation:
// m = b1 m + (1 - b1) g; u = max(b2 u, |g| + eps); x -= lr / (1 - b1^n) * m / u.
class Adamax {
 public:
  Adamax(double lr, double beta1, double beta2, double eps = 1e-8) : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(torch::Tensor& param, const torch::Tensor& grad);

 private:
  double lr_, beta1_, beta2_, eps_;
  int64_t steps_ = 0;
  torch::Tensor m_, u_;
};

// Per-sample losses [B] of the image batch being optimized.
using PriorLossFn = std::function<torch::Tensor(const torch::Tensor& x0, int t, at::Generator& gen)>;
using ClsLossFn = std::function<torch::Tensor(const torch::Tensor& x0)>;

struct IirResult {
  torch::Tensor initial;  // x_0 before the first step
  torch::Tensor images;   // final x_0, in [-1, 1]
  std::vector<double> prior_trace;  // batch means, one per iteration
  std::vector<double> cls_trace;
  std::vector<double> total_trace;
};

// For each t_i: evaluates prior(x_0, t_i) + cls(x_0) at the current x_0,
// records the batch means, takes one Adamax step on the batch sum and clamps
// x_0 to [-1, 1]. A non-finite loss raises a numerical error naming the
// iteration.
IirResult run_iir(const torch::Tensor& x_init, const TimeSchedule& times, const PriorLossFn& prior,
                  const ClsLossFn& cls, const AttackConfig& config, at::Generator& gen);

// Per-sample objective averaged over the schedule: mean_i prior(x_0, t_i) +
// cls(x_0). The generator is seeded identically per call, so two images are
// scored on the same noise draws.
torch::Tensor iir_objective(const torch::Tensor& x0, const TimeSchedule& times, const PriorLossFn& prior,
                            const ClsLossFn& cls, std::uint64_t seed);

// ||eps - guided eps_hat(x_t, labels, t)||^2 per sample with one fresh eps
// per call; summed over pixels or averaged according to reduction.
PriorLossFn diffusion_prior(const NoisePredictor& model, const NoiseSchedule& schedule, const torch::Tensor& labels,
                            double scale, PriorReduction reduction);

ClsLossFn classifier_loss_fn(const ClassifierHandle& target, const CentroidTable* centroids,
                             const torch::Tensor& labels, const LossConfig& loss);

// Noises x_0 to t_dn with fresh eps, then runs the deterministic sampler
// back to 0 with the given scale. Output is clamped to [-1, 1].
torch::Tensor post_denoise(const NoisePredictor& model, const NoiseSchedule& schedule, const torch::Tensor& x0,
                           const torch::Tensor& labels, int t_dn, int steps, double scale, at::Generator& gen);

struct PgdResult {
  torch::Tensor images;              // x_0 + delta_K, not clamped
  std::vector<double> delta_norms;   // largest per-image ||delta|| after each iteration
};

// delta <- proj_eps(delta - step * grad CE(T(x_0 + delta), y)), K times,
// projecting each image's delta onto the l2 ball of radius epsilon.
PgdResult pgd_refine(const ClassifierHandle& target, const torch::Tensor& x0, const torch::Tensor& labels,
                     const PGDConfig& config);
// Same iteration for any logit function.
PgdResult pgd_refine(const std::function<torch::Tensor(const torch::Tensor&)>& logits, const torch::Tensor& x0,
                     const torch::Tensor& labels, const PGDConfig& config);

struct ReconstructionResult {
  int label = 0;  // 0-based
  std::uint64_t seed = 0;
  TimeSchedule times;
  IirResult iir;
  torch::Tensor denoised;  // after post-denoising (equals iir.images when disabled)
  torch::Tensor final;     // after PGD (equals denoised when disabled), clamped to [-1, 1]
  std::vector<double> pgd_norms;
  torch::Tensor predicted;  // target's prediction on final
};

// Full reconstruction of config.images_per_class images for one class.
ReconstructionResult iir_attack(const ConditionalDenoiser& model, const NoiseSchedule& schedule,
                                const ClassifierHandle& target, const CentroidTable* centroids, int label,
                                const AttackConfig& config, std::uint64_t seed);

// Plain guided sampling of the same number of images, for comparison with
// the optimization-based attack.
torch::Tensor plain_samples(const ConditionalDenoiser& model, const NoiseSchedule& schedule, int label,
                            const AttackConfig& config, int sampler_steps, std::uint64_t seed);

}  // namespace invdiff

#endif  // INVDIFF_RECONSTRUCT_HPP
