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
#ifndef INVDIFF_SCHEDULE_HPP
#define INVDIFF_SCHEDULE_HPP

#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

namespace invdiff {

// Cumulative signal coefficients alpha_bar_t for t = 1..T. Strictly
// decreasing, 0 < alpha_bar_T < alpha_bar_1 <= 1 (a single-step schedule
// only needs 0 < alpha_bar_1 <= 1).
class NoiseSchedule {
 public:
  // kind: "linear" (betas evenly spaced in [beta_start, beta_end]) or
  // "cosine" (squared-cosine alpha_bar with offset 0.008, betas capped at
  // 0.999). T < 1 raises a configuration error.
  static NoiseSchedule make(int timesteps, const std::string& kind = "linear", double beta_start = 1e-4,
                            double beta_end = 0.02);
  // Validates a hand-made table; raises a configuration error when the
  // invariants do not hold.
  static NoiseSchedule from_alpha_bar(std::vector<double> alpha_bar);

  int timesteps() const { return static_cast<int>(alpha_bar_.size()); }
  // 1-based; out of range raises an index error. t = 0 is the clean image
  // (alpha_bar_0 = 1) and is accepted.
  double alpha_bar(int t) const;
  const std::vector<double>& alpha_bars() const { return alpha_bar_; }
  // Per-sample alpha_bar (float64) for an integer tensor of timesteps.
  torch::Tensor alpha_bar(const torch::Tensor& t) const;

  nlohmann::json metadata() const;
  static NoiseSchedule from_metadata(const nlohmann::json& j);

  bool operator==(const NoiseSchedule& other) const { return alpha_bar_ == other.alpha_bar_; }

 private:
  explicit NoiseSchedule(std::vector<double> alpha_bar) : alpha_bar_(std::move(alpha_bar)) {}

  std::vector<double> alpha_bar_;
};

}  // namespace invdiff

#endif  // INVDIFF_SCHEDULE_HPP
