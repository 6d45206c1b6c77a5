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
#ifndef INVDIFF_TESTS_FIXTURES_HPP
#define INVDIFF_TESTS_FIXTURES_HPP

#include <atomic>
#include <filesystem>
#include <string>

#include <gtest/gtest.h>
#include <torch/torch.h>
#include <unistd.h>

#include "invdiff/errors.hpp"
#include "invdiff/unet.hpp"

namespace testing_support {

// A fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "invdiff") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// 8x8 images, two levels, a few thousand parameters per layer.
inline invdiff::DenoiserShape tiny_shape(int num_classes = 3) {
  invdiff::DenoiserShape shape;
  shape.image_size = 8;
  shape.num_classes = num_classes;
  shape.base_channels = 8;
  shape.channel_mult = {1, 2};
  shape.res_blocks = 1;
  shape.groups = 4;
  return shape;
}

// Fresh denoisers start with zero output convolutions, which blocks the
// gradient to inner layers; a small jitter stands in for pretraining.
inline void jitter_parameters(invdiff::ConditionalDenoiser& model, double scale = 0.05) {
  torch::NoGradGuard no_grad;
  for (auto& p : model->parameters()) p.add_(torch::randn_like(p) * scale);
}

// Passes when fn throws invdiff::Error of the given category.
template <typename Fn>
::testing::AssertionResult throws_category(Fn&& fn, invdiff::ErrorCategory category) {
  try {
    fn();
  } catch (const invdiff::Error& e) {
    if (e.category() == category) return ::testing::AssertionSuccess();
    return ::testing::AssertionFailure() << "wrong category " << invdiff::category_name(e.category()) << ": "
                                         << e.what();
  } catch (const std::exception& e) {
    return ::testing::AssertionFailure() << "foreign exception: " << e.what();
  }
  return ::testing::AssertionFailure() << "nothing thrown";
}

}  // namespace testing_support

#endif  // INVDIFF_TESTS_FIXTURES_HPP
