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
#ifndef INVDIFF_DIFFUSION_HPP
#define INVDIFF_DIFFUSION_HPP

#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "invdiff/config.hpp"
#include "invdiff/schedule.hpp"
#include "invdiff/unet.hpp"

namespace invdiff {

// eps(x_t, t, labels). Anything with this signature can stand in for the
// U-Net, which keeps the algebra testable with closed-form predictors.
using NoisePredictor =
    std::function<torch::Tensor(const torch::Tensor& x, const torch::Tensor& t, const torch::Tensor& labels)>;

NoisePredictor predictor_of(ConditionalDenoiser model);

// x_t = sqrt(a) * x_0 + sqrt(1 - a) * eps with a = alpha_bar_t.
torch::Tensor q_sample(double alpha_bar, const torch::Tensor& x0, const torch::Tensor& eps);
torch::Tensor q_sample(const NoiseSchedule& schedule, const torch::Tensor& x0, int t, const torch::Tensor& eps);
// Per-sample timesteps, t: [B].
torch::Tensor q_sample(const NoiseSchedule& schedule, const torch::Tensor& x0, const torch::Tensor& t,
                       const torch::Tensor& eps);

// x0_hat = (x_t - sqrt(1 - a) * eps) / sqrt(a). a = 0 raises a numerical
// error.
torch::Tensor predict_x0(double alpha_bar, const torch::Tensor& x_t, const torch::Tensor& eps);
torch::Tensor predict_x0(const NoiseSchedule& schedule, const torch::Tensor& x_t, const torch::Tensor& eps, int t);

// eps_u + s * (eps_c - eps_u), with eps_u the null-label prediction. s = 0
// and s = 1 return the unconditional and conditional predictions as is.
torch::Tensor guided_noise(const NoisePredictor& model, const torch::Tensor& x_t, const torch::Tensor& labels,
                           const torch::Tensor& t, double scale);

// Descending timesteps visited by an S-step sampler starting at t_start:
// round(t_start * (S - i) / S) for i = 0..S-1, duplicates removed.
std::vector<int> sampler_timesteps(int t_start, int steps);

struct SampleResult {
  torch::Tensor image;                  // clamped to [-1, 1]
  std::vector<torch::Tensor> x0_trace;  // clamped x0_hat after every step
  std::vector<int> timesteps;
};

// Deterministic (eta = 0) x0-based sampler from x_start at t_start down to
// the clean image. Each step predicts x0_hat, clamps it, re-derives the
// noise and jumps to the next visited timestep. Differentiable when
// autograd is enabled.
SampleResult ddim_sample(const NoisePredictor& model, const NoiseSchedule& schedule, const torch::Tensor& x_start,
                         int t_start, const torch::Tensor& labels, double scale, int steps);

// Full generation from x_T ~ N(0, I) drawn with gen.
SampleResult sample(const NoisePredictor& model, const NoiseSchedule& schedule, const torch::Tensor& labels,
                    double scale, int steps, int image_size, at::Generator& gen);

// Replaces each label by kNullLabel with probability p.
torch::Tensor apply_label_dropout(const torch::Tensor& labels, double p, at::Generator& gen);

// Batch mean of ||eps - model(x_t, labels, t)||^2 (sum over pixels).
torch::Tensor denoising_loss(const NoisePredictor& model, const NoiseSchedule& schedule, const torch::Tensor& x0,
                             const torch::Tensor& labels, const torch::Tensor& t, const torch::Tensor& eps);

// Exponential moving average of a module's parameters. The effective decay
// warms up as min(rate, (1 + n) / (10 + n)) over update count n.
class ParameterEma {
 public:
  ParameterEma(const torch::nn::Module& module, double rate);
  void update(const torch::nn::Module& module);
  void copy_to(torch::nn::Module& module) const;
  const std::vector<std::pair<std::string, torch::Tensor>>& shadow() const { return shadow_; }

 private:
  double rate_;
  int64_t updates_ = 0;
  std::vector<std::pair<std::string, torch::Tensor>> shadow_;
};

struct PretrainResult {
  std::vector<double> losses;             // per iteration
  std::vector<double> validation_losses;  // fixed batch, every log_every iterations and at the end
  std::vector<std::pair<std::string, torch::Tensor>> ema;
};

// Minimizes the label-conditioned denoising loss with t uniform in 1..T,
// classifier-free label dropout and AdamW, maintaining a parameter EMA.
// A non-finite loss raises a training error naming the iteration.
PretrainResult pretrain(ConditionalDenoiser& model, const NoiseSchedule& schedule, const torch::Tensor& images,
                        const torch::Tensor& labels, const PretrainConfig& recipe, std::uint64_t seed);

struct DenoiserCheckpoint {
  ConditionalDenoiser sampling{nullptr};  // EMA or fine-tuned weights
  ConditionalDenoiser raw{nullptr};
  NoiseSchedule schedule = NoiseSchedule::make(1);
  nlohmann::json extra = nlohmann::json::object();
};

void save_denoiser(const std::filesystem::path& path, const ConditionalDenoiser& sampling,
                   const ConditionalDenoiser& raw, const NoiseSchedule& schedule,
                   const nlohmann::json& extra = nlohmann::json::object());
// expected_image_size = 0 skips the geometry check.
DenoiserCheckpoint load_denoiser(const std::filesystem::path& path, int expected_image_size = 0);

ConditionalDenoiser clone_denoiser(const ConditionalDenoiser& model);

}  // namespace invdiff

#endif  // INVDIFF_DIFFUSION_HPP
