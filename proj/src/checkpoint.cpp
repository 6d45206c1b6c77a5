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
#include "invdiff/checkpoint.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <iterator>

#include "invdiff/errors.hpp"

namespace invdiff {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'I', 'N', 'V', 'D', 'I', 'F', 'F', '\0'};

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat: return "f32";
    case torch::kDouble: return "f64";
    case torch::kInt64: return "i64";
    case torch::kInt32: return "i32";
    case torch::kUInt8: return "u8";
    default: fail(ErrorCategory::kPersistence, "unsupported tensor dtype in checkpoint");
  }
}

torch::ScalarType parse_dtype(const std::string& s) {
  if (s == "f32") return torch::kFloat;
  if (s == "f64") return torch::kDouble;
  if (s == "i64") return torch::kInt64;
  if (s == "i32") return torch::kInt32;
  if (s == "u8") return torch::kUInt8;
  fail(ErrorCategory::kPersistence, "unknown tensor dtype '" + s + "' in checkpoint");
}

template <typename T>
void put(std::string& out, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  out.append(bytes, sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t& pos, const std::filesystem::path& path) {
  if (pos + sizeof(T) > in.size()) fail(ErrorCategory::kPersistence, "truncated checkpoint " + path.string());
  T value;
  std::memcpy(&value, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

}  // namespace

const torch::Tensor& Checkpoint::at(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  fail(ErrorCategory::kPersistence, "checkpoint has no tensor '" + name + "'");
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  json header;
  header["metadata"] = checkpoint.metadata;
  header["tensors"] = json::array();
  std::string payload;
  for (const auto& [name, tensor] : checkpoint.tensors) {
    auto t = tensor.detach().cpu().contiguous();
    const auto bytes = static_cast<std::size_t>(t.numel()) * t.element_size();
    header["tensors"].push_back({{"name", name},
                                 {"dtype", dtype_name(t.scalar_type())},
                                 {"shape", t.sizes().vec()},
                                 {"offset", payload.size()},
                                 {"bytes", bytes}});
    payload.append(static_cast<const char*>(t.data_ptr()), bytes);
  }
  const std::string text = header.dump();

  std::string blob(kMagic, sizeof(kMagic));
  put<std::uint32_t>(blob, kCheckpointVersion);
  put<std::uint64_t>(blob, text.size());
  blob += text;
  blob += payload;
  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(blob.data()), static_cast<uInt>(blob.size())));
  put<std::uint32_t>(blob, crc);

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) fail(ErrorCategory::kPersistence, "cannot write checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCategory::kPersistence, "cannot open checkpoint " + path.string());
  const std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (blob.size() < sizeof(kMagic) || std::memcmp(blob.data(), kMagic, sizeof(kMagic)) != 0) {
    fail(ErrorCategory::kPersistence, path.string() + " is not an invdiff checkpoint");
  }
  std::size_t pos = sizeof(kMagic);
  const auto version = take<std::uint32_t>(blob, pos, path);
  if (version != kCheckpointVersion) {
    fail(ErrorCategory::kPersistence, "checkpoint " + path.string() + " has format version " +
                                          std::to_string(version) + ", expected " +
                                          std::to_string(kCheckpointVersion));
  }
  if (blob.size() < pos + 12) fail(ErrorCategory::kPersistence, "truncated checkpoint " + path.string());
  std::size_t crc_pos = blob.size() - 4;
  std::size_t tail = crc_pos;
  const auto stored_crc = take<std::uint32_t>(blob, tail, path);
  const auto actual_crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(blob.data()), static_cast<uInt>(crc_pos)));
  if (stored_crc != actual_crc) fail(ErrorCategory::kPersistence, "checksum mismatch in " + path.string());

  const auto header_len = take<std::uint64_t>(blob, pos, path);
  if (pos + header_len > crc_pos) fail(ErrorCategory::kPersistence, "truncated checkpoint " + path.string());
  json header;
  try {
    header = json::parse(blob.substr(pos, header_len));
  } catch (const json::exception& e) {
    fail(ErrorCategory::kPersistence, "corrupt checkpoint header in " + path.string());
  }
  pos += header_len;
  const std::size_t payload_start = pos;
  const std::size_t payload_size = crc_pos - payload_start;

  Checkpoint checkpoint;
  try {
    checkpoint.metadata = header.at("metadata");
    for (const auto& entry : header.at("tensors")) {
      const auto dtype = parse_dtype(entry.at("dtype").get<std::string>());
      const auto shape = entry.at("shape").get<std::vector<int64_t>>();
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto bytes = entry.at("bytes").get<std::size_t>();
      auto tensor = torch::empty(shape, torch::TensorOptions().dtype(dtype));
      if (offset + bytes > payload_size ||
          bytes != static_cast<std::size_t>(tensor.numel()) * tensor.element_size()) {
        fail(ErrorCategory::kPersistence, "tensor table out of bounds in " + path.string());
      }
      std::memcpy(tensor.data_ptr(), blob.data() + payload_start + offset, bytes);
      checkpoint.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(tensor));
    }
  } catch (const json::exception& e) {
    fail(ErrorCategory::kPersistence, "corrupt tensor table in " + path.string() + ": " + e.what());
  }
  return checkpoint;
}

void append_module(Checkpoint& checkpoint, const torch::nn::Module& module, const std::string& prefix) {
  for (const auto& item : module.named_parameters()) {
    checkpoint.tensors.emplace_back(prefix + item.key(), item.value().detach().clone());
  }
  for (const auto& item : module.named_buffers()) {
    checkpoint.tensors.emplace_back(prefix + item.key(), item.value().detach().clone());
  }
}

void load_into(torch::nn::Module& module, const Checkpoint& checkpoint, const std::string& prefix) {
  torch::NoGradGuard no_grad;
  auto copy = [&](const std::string& name, torch::Tensor& target) {
    const auto& source = checkpoint.at(prefix + name);
    if (source.sizes() != target.sizes()) {
      fail(ErrorCategory::kPersistence, "shape mismatch for '" + prefix + name + "'");
    }
    target.copy_(source);
  };
  for (auto& item : module.named_parameters()) copy(item.key(), item.value());
  for (auto& item : module.named_buffers()) copy(item.key(), item.value());
}

void expect_metadata(const Checkpoint& checkpoint, const std::string& key, const json& expected) {
  if (!checkpoint.metadata.contains(key) || checkpoint.metadata.at(key) != expected) {
    fail(ErrorCategory::kPersistence, "checkpoint metadata '" + key + "' is " +
                                          (checkpoint.metadata.contains(key) ? checkpoint.metadata.at(key).dump()
                                                                             : std::string("missing")) +
                                          ", expected " + expected.dump());
  }
}

}  // namespace invdiff
