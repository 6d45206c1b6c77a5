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
#include "invdiff/reconstruct.hpp"

#include <cmath>
#include <sstream>

#include "invdiff/errors.hpp"
#include "invdiff/random.hpp"

namespace invdiff {

TimeSchedule make_time_schedule(int N, int t_high, int t_low, int w, int T, std::uint64_t seed) {
  if (N < 0 || w < 0 || t_low < 1 || t_low > t_high || t_high > T) {
    fail(ErrorCategory::kConfig, "time schedule needs N >= 0, w >= 0 and 1 <= t_low <= t_high <= T");
  }
  TimeSchedule out;
  out.t_high = t_high;
  out.t_low = t_low;
  out.perturbation = w;
  auto gen = make_generator(seed);
  auto offsets = torch::randint(-w, w + 1, {N}, gen, torch::kInt64);
  for (int i = 0; i < N; ++i) {
    const double frac = N == 1 ? 0.0 : static_cast<double>(i) / (N - 1);
    const int base = static_cast<int>(std::lround(t_high + (t_low - t_high) * frac));
    out.base.push_back(base);
    out.steps.push_back(std::clamp(base + static_cast<int>(offsets[i].item<int64_t>()), 1, T));
  }
  return out;
}

void Adamax::step(torch::Tensor& param, const torch::Tensor& grad) {
  torch::NoGradGuard no_grad;
  if (!m_.defined()) {
    m_ = torch::zeros_like(param);
    u_ = torch::zeros_like(param);
  }
  ++steps_;
  m_.mul_(beta1_).add_(grad, 1.0 - beta1_);
  u_ = torch::maximum(u_ * beta2_, grad.abs() + eps_);
  const double step = lr_ / (1.0 - std::pow(beta1_, static_cast<double>(steps_)));
  param.sub_(step * m_ / u_);
}

IirResult run_iir(const torch::Tensor& x_init, const TimeSchedule& times, const PriorLossFn& prior,
                  const ClsLossFn& cls, const AttackConfig& config, at::Generator& gen) {
  IirResult result;
  result.initial = x_init.detach().clone();
  auto x = x_init.detach().clone();
  Adamax optimizer(config.lr, config.beta1, config.beta2);
  for (std::size_t i = 0; i < times.steps.size(); ++i) {
    x.set_requires_grad(true);
    auto l_prior = prior(x, times.steps[i], gen);
    auto l_cls = cls(x);
    auto total = l_prior + l_cls;
    const double p = l_prior.mean().item<double>();
    const double c = l_cls.mean().item<double>();
    if (!std::isfinite(p) || !std::isfinite(c)) {
      std::ostringstream msg;
      msg << "reconstruction loss is not finite at iteration " << i + 1 << " (t = " << times.steps[i]
          << ", prior " << p << ", cls " << c << ")";
      fail(ErrorCategory::kNumerical, msg.str());
    }
    result.prior_trace.push_back(p);
    result.cls_trace.push_back(c);
    result.total_trace.push_back(p + c);
    auto grad = torch::autograd::grad({total.sum()}, {x})[0];
    x = x.detach();
    optimizer.step(x, grad);
    x.clamp_(-1.0, 1.0);
  }
  result.images = x.detach();
  return result;
}

torch::Tensor iir_objective(const torch::Tensor& x0, const TimeSchedule& times, const PriorLossFn& prior,
                            const ClsLossFn& cls, std::uint64_t seed) {
  if (times.steps.empty()) fail(ErrorCategory::kConfig, "objective needs at least one timestep");
  torch::NoGradGuard no_grad;
  auto gen = make_generator(seed);
  auto x = x0.detach();
  auto total = torch::zeros({x.size(0)}, x.options());
  for (int t : times.steps) total += prior(x, t, gen);
  return total / static_cast<double>(times.steps.size()) + cls(x);
}

PriorLossFn diffusion_prior(const NoisePredictor& model, const NoiseSchedule& schedule, const torch::Tensor& labels,
                            double scale, PriorReduction reduction) {
  return [=](const torch::Tensor& x0, int t, at::Generator& gen) {
    auto eps = torch::randn(x0.sizes(), gen);
    auto x_t = q_sample(schedule, x0, t, eps);
    auto steps = torch::full({x0.size(0)}, t, torch::kInt64);
    auto residual = (eps - guided_noise(model, x_t, labels, steps, scale)).pow(2).flatten(1);
    return reduction == PriorReduction::kSum ? residual.sum(1) : residual.mean(1);
  };
}

ClsLossFn classifier_loss_fn(const ClassifierHandle& target, const CentroidTable* centroids,
                             const torch::Tensor& labels, const LossConfig& loss) {
  return [=](const torch::Tensor& x0) {
    auto [features, logits] = target.forward(x0);
    return classification_loss(logits, features, labels, centroids, loss);
  };
}

torch::Tensor post_denoise(const NoisePredictor& model, const NoiseSchedule& schedule, const torch::Tensor& x0,
                           const torch::Tensor& labels, int t_dn, int steps, double scale, at::Generator& gen) {
  if (t_dn < 1 || t_dn > schedule.timesteps()) {
    fail(ErrorCategory::kConfig, "post-denoise level must lie in [1, " + std::to_string(schedule.timesteps()) + "]");
  }
  torch::NoGradGuard no_grad;
  auto eps = torch::randn(x0.sizes(), gen);
  auto x_t = q_sample(schedule, x0, t_dn, eps);
  return ddim_sample(model, schedule, x_t, t_dn, labels, scale, steps).image;
}

PgdResult pgd_refine(const std::function<torch::Tensor(const torch::Tensor&)>& logits, const torch::Tensor& x0,
                     const torch::Tensor& labels, const PGDConfig& config) {
  if (!(config.step_size > 0.0) || !(config.epsilon > 0.0) || config.iterations < 0) {
    fail(ErrorCategory::kConfig, "PGD needs step_size > 0, epsilon > 0 and iterations >= 0");
  }
  PgdResult result;
  auto base = x0.detach();
  auto delta = torch::zeros_like(base);
  for (int k = 0; k < config.iterations; ++k) {
    delta.set_requires_grad(true);
    auto loss = cross_entropy(logits(base + delta), labels).sum();
    auto grad = torch::autograd::grad({loss}, {delta})[0];
    torch::NoGradGuard no_grad;
    delta = delta.detach() - config.step_size * grad;
    auto norms = delta.flatten(1).norm(2, 1);
    auto factor = torch::where(norms > config.epsilon, config.epsilon / norms, torch::ones_like(norms));
    std::vector<int64_t> shape(static_cast<std::size_t>(delta.dim()), 1);
    shape[0] = delta.size(0);
    delta = delta * factor.view(shape);
    // Rounding can leave a projected norm a few ulps above epsilon.
    for (int pass = 0; pass < 8; ++pass) {
      auto after = delta.flatten(1).norm(2, 1).to(torch::kDouble);
      auto over = after > config.epsilon;
      if (!over.any().item<bool>()) break;
      auto shrink = torch::where(over, torch::full_like(after, 1.0 - 1e-6 * (pass + 1)), torch::ones_like(after));
      delta = delta * shrink.to(delta.scalar_type()).view(shape);
    }
    result.delta_norms.push_back(
        delta.numel() == 0 ? 0.0 : delta.flatten(1).norm(2, 1).to(torch::kDouble).max().item<double>());
  }
  result.images = base + delta.detach();
  return result;
}

PgdResult pgd_refine(const ClassifierHandle& target, const torch::Tensor& x0, const torch::Tensor& labels,
                     const PGDConfig& config) {
  return pgd_refine([&](const torch::Tensor& x) { return target.logits(x); }, x0, labels, config);
}

ReconstructionResult iir_attack(const ConditionalDenoiser& model, const NoiseSchedule& schedule,
                                const ClassifierHandle& target, const CentroidTable* centroids, int label,
                                const AttackConfig& config, std::uint64_t seed) {
  validate(config.loss, target.num_classes());
  target.freeze();
  for (auto& p : model->parameters()) p.set_requires_grad(false);
  ReconstructionResult out;
  out.label = label;
  out.seed = seed;
  out.times = make_time_schedule(config.iterations, config.t_high, config.t_low, config.perturbation,
                                 schedule.timesteps(), derive_seed(seed, 1));
  auto gen = make_generator(seed);
  const int size = model->shape().image_size;
  auto labels = torch::full({config.images_per_class}, label, torch::kInt64);
  auto x_init = torch::randn({config.images_per_class, 3, size, size}, gen);
  auto predictor = predictor_of(model);
  out.iir = run_iir(x_init, out.times,
                    diffusion_prior(predictor, schedule, labels, config.guidance_scale, config.prior_reduction),
                    classifier_loss_fn(target, centroids, labels, config.loss), config, gen);
  out.denoised = config.post_denoise ? post_denoise(predictor, schedule, out.iir.images, labels, config.denoise_t,
                                                    config.denoise_steps, config.denoise_scale, gen)
                                     : out.iir.images;
  if (config.use_pgd) {
    auto pgd = pgd_refine(target, out.denoised, labels, config.pgd);
    out.final = pgd.images.clamp(-1.0, 1.0);
    out.pgd_norms = std::move(pgd.delta_norms);
  } else {
    out.final = out.denoised;
  }
  out.predicted = target.predict(out.final);
  for (auto& p : model->parameters()) p.set_requires_grad(true);
  return out;
}

torch::Tensor plain_samples(const ConditionalDenoiser& model, const NoiseSchedule& schedule, int label,
                            const AttackConfig& config, int sampler_steps, std::uint64_t seed) {
  torch::NoGradGuard no_grad;
  auto gen = make_generator(seed);
  auto labels = torch::full({config.images_per_class}, label, torch::kInt64);
  return sample(predictor_of(model), schedule, labels, config.guidance_scale, sampler_steps,
                model->shape().image_size, gen)
      .image;
}

}  // namespace invdiff
