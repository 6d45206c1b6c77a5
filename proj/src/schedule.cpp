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
#include "invdiff/schedule.hpp"

#include <cmath>

#include "invdiff/errors.hpp"

namespace invdiff {

NoiseSchedule NoiseSchedule::make(int timesteps, const std::string& kind, double beta_start, double beta_end) {
  if (timesteps < 1) fail(ErrorCategory::kConfig, "a noise schedule needs T >= 1");
  std::vector<double> alpha_bar(static_cast<std::size_t>(timesteps));
  if (kind == "linear") {
    if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end)) {
      fail(ErrorCategory::kConfig, "linear schedule needs 0 < beta_start <= beta_end < 1");
    }
    double running = 1.0;
    for (int i = 0; i < timesteps; ++i) {
      const double beta =
          timesteps == 1 ? beta_start : beta_start + (beta_end - beta_start) * i / static_cast<double>(timesteps - 1);
      running *= 1.0 - beta;
      alpha_bar[static_cast<std::size_t>(i)] = running;
    }
  } else if (kind == "cosine") {
    auto f = [&](double t) {
      const double v = std::cos((t / timesteps + 0.008) / 1.008 * M_PI / 2.0);
      return v * v;
    };
    double running = 1.0;
    for (int i = 0; i < timesteps; ++i) {
      const double beta = std::min(1.0 - f(i + 1) / f(i), 0.999);
      running *= 1.0 - beta;
      alpha_bar[static_cast<std::size_t>(i)] = running;
    }
  } else {
    fail(ErrorCategory::kConfig, "unknown schedule kind '" + kind + "'");
  }
  return from_alpha_bar(std::move(alpha_bar));
}

NoiseSchedule NoiseSchedule::from_alpha_bar(std::vector<double> alpha_bar) {
  if (alpha_bar.empty()) fail(ErrorCategory::kConfig, "a noise schedule needs T >= 1");
  for (std::size_t i = 0; i < alpha_bar.size(); ++i) {
    const double a = alpha_bar[i];
    if (!std::isfinite(a) || a <= 0.0 || a > 1.0) {
      fail(ErrorCategory::kConfig, "alpha_bar must lie in (0, 1]; entry " + std::to_string(i + 1) + " is " +
                                       std::to_string(a));
    }
    if (i > 0 && !(a < alpha_bar[i - 1])) {
      fail(ErrorCategory::kConfig, "alpha_bar must be strictly decreasing; violated at t=" + std::to_string(i + 1));
    }
  }
  return NoiseSchedule(std::move(alpha_bar));
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t == 0) return 1.0;
  if (t < 0 || t > timesteps()) {
    fail(ErrorCategory::kIndex, "timestep " + std::to_string(t) + " outside [1, " + std::to_string(timesteps()) + "]");
  }
  return alpha_bar_[static_cast<std::size_t>(t - 1)];
}

torch::Tensor NoiseSchedule::alpha_bar(const torch::Tensor& t) const {
  auto steps = t.to(torch::kInt64).contiguous();
  if (steps.numel() > 0) {
    const auto lo = steps.min().item<int64_t>();
    const auto hi = steps.max().item<int64_t>();
    if (lo < 0 || hi > timesteps()) {
      fail(ErrorCategory::kIndex, "timestep outside [1, " + std::to_string(timesteps()) + "]");
    }
  }
  std::vector<double> padded{1.0};
  padded.insert(padded.end(), alpha_bar_.begin(), alpha_bar_.end());
  auto table = torch::tensor(padded, torch::kDouble);
  return table.index_select(0, steps.flatten()).view(steps.sizes());
}

nlohmann::json NoiseSchedule::metadata() const { return {{"timesteps", timesteps()}, {"alpha_bar", alpha_bar_}}; }

NoiseSchedule NoiseSchedule::from_metadata(const nlohmann::json& j) {
  auto values = j.at("alpha_bar").get<std::vector<double>>();
  if (static_cast<int>(values.size()) != j.at("timesteps").get<int>()) {
    fail(ErrorCategory::kPersistence, "schedule metadata length mismatch");
  }
  return from_alpha_bar(std::move(values));
}

}  // namespace invdiff
