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
#include "invdiff/diffusion.hpp"

#include <c10/util/Logging.h>

#include <cmath>

#include "invdiff/checkpoint.hpp"
#include "invdiff/errors.hpp"
#include "invdiff/random.hpp"

namespace invdiff {

namespace {

// [B] coefficients broadcast against [B, ...] images.
torch::Tensor per_sample(const torch::Tensor& values, const torch::Tensor& like) {
  std::vector<int64_t> shape(static_cast<std::size_t>(like.dim()), 1);
  shape[0] = like.size(0);
  return values.to(like.scalar_type()).view(shape);
}

torch::Tensor filled_steps(int64_t batch, int t) { return torch::full({batch}, t, torch::kInt64); }

}  // namespace

NoisePredictor predictor_of(ConditionalDenoiser model) {
  return [model](const torch::Tensor& x, const torch::Tensor& t, const torch::Tensor& labels) mutable {
    return model->forward(x, t, labels);
  };
}

torch::Tensor q_sample(double alpha_bar, const torch::Tensor& x0, const torch::Tensor& eps) {
  if (x0.sizes() != eps.sizes()) fail(ErrorCategory::kShape, "noise and image geometry differ");
  return std::sqrt(alpha_bar) * x0 + std::sqrt(1.0 - alpha_bar) * eps;
}

torch::Tensor q_sample(const NoiseSchedule& schedule, const torch::Tensor& x0, int t, const torch::Tensor& eps) {
  if (t < 1 || t > schedule.timesteps()) {
    fail(ErrorCategory::kIndex, "timestep " + std::to_string(t) + " outside [1, " +
                                    std::to_string(schedule.timesteps()) + "]");
  }
  return q_sample(schedule.alpha_bar(t), x0, eps);
}

torch::Tensor q_sample(const NoiseSchedule& schedule, const torch::Tensor& x0, const torch::Tensor& t,
                       const torch::Tensor& eps) {
  if (x0.sizes() != eps.sizes()) fail(ErrorCategory::kShape, "noise and image geometry differ");
  if (t.numel() > 0 && t.min().item<int64_t>() < 1) fail(ErrorCategory::kIndex, "timestep below 1");
  auto a = schedule.alpha_bar(t);
  return per_sample(a.sqrt(), x0) * x0 + per_sample((1.0 - a).sqrt(), x0) * eps;
}

torch::Tensor predict_x0(double alpha_bar, const torch::Tensor& x_t, const torch::Tensor& eps) {
  if (!(alpha_bar > 0.0)) fail(ErrorCategory::kNumerical, "x0 prediction is singular at alpha_bar = 0");
  return (x_t - std::sqrt(1.0 - alpha_bar) * eps) / std::sqrt(alpha_bar);
}

torch::Tensor predict_x0(const NoiseSchedule& schedule, const torch::Tensor& x_t, const torch::Tensor& eps, int t) {
  return predict_x0(schedule.alpha_bar(t), x_t, eps);
}

torch::Tensor guided_noise(const NoisePredictor& model, const torch::Tensor& x_t, const torch::Tensor& labels,
                           const torch::Tensor& t, double scale) {
  if (scale == 1.0) return model(x_t, t, labels);
  auto null = torch::full_like(labels, kNullLabel);
  if (scale == 0.0) return model(x_t, t, null);
  auto both = model(torch::cat({x_t, x_t}), torch::cat({t, t}), torch::cat({labels, null}));
  auto parts = both.chunk(2, 0);
  const auto& cond = parts[0];
  const auto& uncond = parts[1];
  return uncond + scale * (cond - uncond);
}

std::vector<int> sampler_timesteps(int t_start, int steps) {
  if (t_start < 1 || steps < 1) fail(ErrorCategory::kConfig, "sampler needs t_start >= 1 and steps >= 1");
  std::vector<int> out;
  for (int i = 0; i < steps; ++i) {
    const int t = static_cast<int>(std::lround(static_cast<double>(t_start) * (steps - i) / steps));
    if (t >= 1 && (out.empty() || t < out.back())) out.push_back(t);
  }
  return out;
}

SampleResult ddim_sample(const NoisePredictor& model, const NoiseSchedule& schedule, const torch::Tensor& x_start,
                         int t_start, const torch::Tensor& labels, double scale, int steps) {
  SampleResult result;
  result.timesteps = sampler_timesteps(t_start, steps);
  auto x = x_start;
  const int64_t batch = x.size(0);
  for (std::size_t i = 0; i < result.timesteps.size(); ++i) {
    const int t = result.timesteps[i];
    const int t_next = i + 1 < result.timesteps.size() ? result.timesteps[i + 1] : 0;
    const double a = schedule.alpha_bar(t);
    const double a_next = schedule.alpha_bar(t_next);
    auto eps = guided_noise(model, x, labels, filled_steps(batch, t), scale);
    auto x0 = predict_x0(a, x, eps).clamp(-1.0, 1.0);
    result.x0_trace.push_back(x0);
    if (t_next == 0) {
      x = x0;
    } else {
      auto eps_clamped = (x - std::sqrt(a) * x0) / std::sqrt(1.0 - a);
      x = std::sqrt(a_next) * x0 + std::sqrt(1.0 - a_next) * eps_clamped;
    }
  }
  result.image = x.clamp(-1.0, 1.0);
  return result;
}

SampleResult sample(const NoisePredictor& model, const NoiseSchedule& schedule, const torch::Tensor& labels,
                    double scale, int steps, int image_size, at::Generator& gen) {
  auto x_t = torch::randn({labels.size(0), 3, image_size, image_size}, gen);
  return ddim_sample(model, schedule, x_t, schedule.timesteps(), labels, scale, steps);
}

torch::Tensor apply_label_dropout(const torch::Tensor& labels, double p, at::Generator& gen) {
  auto drop = torch::rand({labels.size(0)}, gen) < p;
  return torch::where(drop, torch::full_like(labels, kNullLabel), labels);
}

torch::Tensor denoising_loss(const NoisePredictor& model, const NoiseSchedule& schedule, const torch::Tensor& x0,
                             const torch::Tensor& labels, const torch::Tensor& t, const torch::Tensor& eps) {
  auto x_t = q_sample(schedule, x0, t, eps);
  auto residual = eps - model(x_t, t, labels);
  return residual.pow(2).flatten(1).sum(1).mean();
}

ParameterEma::ParameterEma(const torch::nn::Module& module, double rate) : rate_(rate) {
  for (const auto& item : module.named_parameters()) shadow_.emplace_back(item.key(), item.value().detach().clone());
}

void ParameterEma::update(const torch::nn::Module& module) {
  torch::NoGradGuard no_grad;
  ++updates_;
  const double decay = std::min(rate_, (1.0 + updates_) / (10.0 + updates_));
  auto params = module.named_parameters();
  for (auto& [name, value] : shadow_) value.mul_(decay).add_(params[name].detach(), 1.0 - decay);
}

void ParameterEma::copy_to(torch::nn::Module& module) const {
  torch::NoGradGuard no_grad;
  auto params = module.named_parameters();
  for (const auto& [name, value] : shadow_) params[name].copy_(value);
}

PretrainResult pretrain(ConditionalDenoiser& model, const NoiseSchedule& schedule, const torch::Tensor& images,
                        const torch::Tensor& labels, const PretrainConfig& recipe, std::uint64_t seed) {
  if (images.size(0) == 0) fail(ErrorCategory::kTraining, "pretraining needs at least one image");
  auto gen = make_generator(seed);
  auto predictor = predictor_of(model);
  torch::optim::AdamW optimizer(model->parameters(), torch::optim::AdamWOptions(recipe.lr)
                                                         .betas({recipe.beta1, recipe.beta2})
                                                         .weight_decay(recipe.weight_decay));
  ParameterEma ema(*model, recipe.ema_rate);
  const int64_t n = images.size(0);
  const int T = schedule.timesteps();

  // Fixed validation batch: same images, timesteps and noise every time.
  auto val_gen = make_generator(derive_seed(seed, 99));
  const int64_t val_n = std::min<int64_t>(n, 64);
  auto val_x0 = images.slice(0, 0, val_n);
  auto val_labels = labels.slice(0, 0, val_n);
  auto val_t = torch::randint(1, T + 1, {val_n}, val_gen, torch::kInt64);
  auto val_eps = torch::randn(val_x0.sizes(), val_gen);
  auto validate = [&] {
    torch::NoGradGuard no_grad;
    return denoising_loss(predictor, schedule, val_x0, val_labels, val_t, val_eps).item<double>();
  };

  PretrainResult result;
  model->train();
  for (int it = 0; it < recipe.iterations; ++it) {
    if (recipe.log_every > 0 && it % recipe.log_every == 0) result.validation_losses.push_back(validate());
    auto idx = torch::randint(0, n, {std::min<int64_t>(recipe.batch_size, n)}, gen, torch::kInt64);
    auto x0 = images.index_select(0, idx);
    auto flip = torch::rand({x0.size(0)}, gen) < recipe.flip_probability;
    x0 = torch::where(flip.view({-1, 1, 1, 1}), x0.flip({3}), x0);
    auto y = apply_label_dropout(labels.index_select(0, idx), recipe.label_dropout, gen);
    auto t = torch::randint(1, T + 1, {x0.size(0)}, gen, torch::kInt64);
    auto eps = torch::randn(x0.sizes(), gen);
    auto loss = denoising_loss(predictor, schedule, x0, y, t, eps);
    const double value = loss.item<double>();
    if (!std::isfinite(value)) {
      fail(ErrorCategory::kTraining, "pretraining loss is not finite at iteration " + std::to_string(it));
    }
    optimizer.zero_grad();
    loss.backward();
    optimizer.step();
    ema.update(*model);
    result.losses.push_back(value);
    if (recipe.log_every > 0 && (it + 1) % recipe.log_every == 0) {
      LOG(INFO) << "pretrain " << it + 1 << "/" << recipe.iterations << " loss " << value;
    }
  }
  result.validation_losses.push_back(validate());
  model->eval();
  result.ema = ema.shadow();
  return result;
}

ConditionalDenoiser clone_denoiser(const ConditionalDenoiser& model) {
  ConditionalDenoiser copy(model->shape());
  torch::NoGradGuard no_grad;
  auto source = model->named_parameters();
  for (auto& item : copy->named_parameters()) item.value().copy_(source[item.key()]);
  copy->to(model->parameters().front().scalar_type());
  copy->eval();
  return copy;
}

void save_denoiser(const std::filesystem::path& path, const ConditionalDenoiser& sampling,
                   const ConditionalDenoiser& raw, const NoiseSchedule& schedule, const nlohmann::json& extra) {
  if (!(sampling->shape() == raw->shape())) fail(ErrorCategory::kPersistence, "sampling and raw shapes differ");
  Checkpoint ckpt;
  ckpt.metadata = {{"kind", "denoiser"},
                   {"image_size", sampling->shape().image_size},
                   {"shape", sampling->shape().to_json()},
                   {"schedule", schedule.metadata()},
                   {"middle_block", ConditionalDenoiserImpl::middle_block()},
                   {"label_embedding", ConditionalDenoiserImpl::label_embedding()},
                   {"extra", extra}};
  append_module(ckpt, *sampling, "sampling.");
  append_module(ckpt, *raw, "raw.");
  save_checkpoint(path, ckpt);
}

DenoiserCheckpoint load_denoiser(const std::filesystem::path& path, int expected_image_size) {
  auto ckpt = load_checkpoint(path);
  expect_metadata(ckpt, "kind", "denoiser");
  if (expected_image_size != 0) expect_metadata(ckpt, "image_size", expected_image_size);
  expect_metadata(ckpt, "middle_block", ConditionalDenoiserImpl::middle_block());
  DenoiserCheckpoint out;
  try {
    const auto shape = DenoiserShape::from_json(ckpt.metadata.at("shape"));
    out.schedule = NoiseSchedule::from_metadata(ckpt.metadata.at("schedule"));
    out.extra = ckpt.metadata.value("extra", nlohmann::json::object());
    out.sampling = ConditionalDenoiser(shape);
    out.raw = ConditionalDenoiser(shape);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::kPersistence, "malformed denoiser metadata in " + path.string() + ": " + e.what());
  } catch (const Error& e) {
    fail(ErrorCategory::kPersistence, "invalid denoiser metadata in " + path.string() + ": " + e.what());
  }
  load_into(*out.sampling, ckpt, "sampling.");
  load_into(*out.raw, ckpt, "raw.");
  out.sampling->eval();
  out.raw->eval();
  return out;
}

}  // namespace invdiff
