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
#ifndef INVDIFF_IMAGE_HPP
#define INVDIFF_IMAGE_HPP

#include <cstdint>
#include <filesystem>
#include <vector>

#include <torch/torch.h>

namespace invdiff {

// 8-bit interleaved pixels as decoded from disk.
struct RawImage {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 or 3
  std::vector<std::uint8_t> pixels;
};

// Decodes PNG (via libpng) or binary PGM/PPM. Anything else, or a damaged
// file, raises an ingestion error.
RawImage read_image(const std::filesystem::path& path);

// Writes an 8-bit RGB PNG. The tensor is [3, H, W] in [-1, 1]; values are
// clamped and rounded.
void write_png(const std::filesystem::path& path, const torch::Tensor& image);
void write_png(const std::filesystem::path& path, const RawImage& image);

// Center-crops to a square, resizes to image_size and maps [0, 255] to
// [-1, 1]. Grayscale input is replicated to three channels. Returns a
// float32 [3, image_size, image_size] tensor.
torch::Tensor preprocess(const RawImage& image, int image_size);

// [3, H, W] in [-1, 1] -> 8-bit RGB.
RawImage to_raw(const torch::Tensor& image);

}  // namespace invdiff

#endif  // INVDIFF_IMAGE_HPP
