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
#ifndef INVDIFF_CHECKPOINT_HPP
#define INVDIFF_CHECKPOINT_HPP

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

namespace invdiff {

// A named tensor list plus free-form JSON metadata.
//
// On-disk layout (little endian):
//   8 bytes  magic "INVDIFF\0"
//   u32      format version
//   u64      header length H
//   H bytes  JSON header: {"metadata": ..., "tensors": [{name, dtype, shape, offset, bytes}]}
//   ...      raw tensor payload, contiguous, in header order
//   u32      CRC-32 of every preceding byte
struct Checkpoint {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<std::pair<std::string, torch::Tensor>> tensors;

  const torch::Tensor& at(const std::string& name) const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);

// Raises a persistence error on a foreign file, a version mismatch, a
// truncated payload or a checksum mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies tensors named prefix + <parameter name> into the module's
// parameters and buffers, requiring an exact name and shape match.
void load_into(torch::nn::Module& module, const Checkpoint& checkpoint, const std::string& prefix = "");
void append_module(Checkpoint& checkpoint, const torch::nn::Module& module, const std::string& prefix = "");

// Checks metadata[key] == expected, raising a persistence error otherwise.
void expect_metadata(const Checkpoint& checkpoint, const std::string& key, const nlohmann::json& expected);

}  // namespace invdiff

#endif  // INVDIFF_CHECKPOINT_HPP
