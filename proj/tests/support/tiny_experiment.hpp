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
#ifndef INVDIFF_TESTS_TINY_EXPERIMENT_HPP
#define INVDIFF_TESTS_TINY_EXPERIMENT_HPP

#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "invdiff/synthetic.hpp"

namespace testing_support {

// A whole experiment small enough to run every stage in seconds: three
// private identities plus two public ones at 8x8.
inline nlohmann::json tiny_experiment(const std::filesystem::path& corpus) {
  return {
      {"seed", 5},
      {"image_size", 8},
      {"num_classes", 3},
      {"data", {{"corpus", corpus.string()}, {"private_classes", {"001", "002", "003"}}}},
      {"classifier",
       {{"target", {{"architecture", "target-cnn"}, {"epochs", 3}, {"batch_size", 16}, {"lr", 0.02}}},
        {"evaluation", {{"architecture", "eval-resnet"}, {"epochs", 3}, {"batch_size", 16}, {"lr", 0.02}}},
        {"test_fraction", 0.2}}},
      {"select", {{"top_n", 4}}},
      {"schedule", {{"timesteps", 40}, {"kind", "cosine"}}},
      {"denoiser", {{"base_channels", 8}, {"channel_mult", {1, 2}}, {"res_blocks", 1}, {"groups", 4}}},
      {"pretrain", {{"iterations", 20}, {"batch_size", 8}, {"lr", 1e-3}, {"ema_rate", 0.9}, {"log_every", 10}}},
      {"finetune",
       {{"layers_to_keep", 3}, {"probe_epochs", 1}, {"scheme", "epochs"}, {"epochs", 1}, {"sampler_steps", 3},
        {"batch_size", 2}, {"lr", 1e-3}}},
      {"attack",
       {{"iterations", 3}, {"lr", 0.1}, {"t_high", 40}, {"t_low", 10}, {"perturbation", 4}, {"denoise_t", 6},
        {"denoise_steps", 3}, {"images_per_class", 2}, {"pgd", {{"iterations", 2}}}}},
  };
}

inline void write_tiny_corpus(const std::filesystem::path& root) {
  invdiff::SyntheticCorpusSpec spec;
  spec.identities = 5;
  spec.images_per_identity = 10;
  spec.width = 12;
  spec.height = 10;
  invdiff::write_synthetic_corpus(root, spec);
}

inline void write_config(const std::filesystem::path& path, const nlohmann::json& doc) {
  std::ofstream out(path);
  out << doc.dump(2);
}

}  // namespace testing_support

#endif  // INVDIFF_TESTS_TINY_EXPERIMENT_HPP
