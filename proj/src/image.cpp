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
#include "invdiff/image.hpp"

#include <png.h>

#include <cctype>
#include <cstring>
#include <fstream>
#include <iterator>

#include "invdiff/errors.hpp"

namespace invdiff {

namespace {

RawImage read_png(const std::filesystem::path& path) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    fail(ErrorCategory::kIngestion, "cannot decode " + path.string() + ": " + png.message);
  }
  const bool gray = (png.format & PNG_FORMAT_FLAG_COLOR) == 0;
  png.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  RawImage out;
  out.width = static_cast<int>(png.width);
  out.height = static_cast<int>(png.height);
  out.channels = gray ? 1 : 3;
  out.pixels.resize(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, out.pixels.data(), 0, nullptr)) {
    std::string message = png.message;
    png_image_free(&png);
    fail(ErrorCategory::kIngestion, "cannot decode " + path.string() + ": " + message);
  }
  return out;
}

// Binary netpbm: P5 (gray) and P6 (RGB), maxval <= 255.
RawImage read_netpbm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  auto bad = [&](const std::string& why) {
    fail(ErrorCategory::kIngestion, "cannot decode " + path.string() + ": " + why);
  };
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&] {
    skip_space();
    long value = 0;
    std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      value = value * 10 + (bytes[pos++] - '0');
      if (value > 1 << 20) bad("header value too large");
    }
    if (pos == start) bad("malformed header");
    return static_cast<int>(value);
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) bad("not a binary PGM/PPM");
  RawImage out;
  out.channels = bytes[1] == '5' ? 1 : 3;
  pos = 2;
  out.width = number();
  out.height = number();
  int maxval = number();
  if (out.width <= 0 || out.height <= 0 || maxval <= 0 || maxval > 255) bad("unsupported geometry or depth");
  ++pos;  // single whitespace byte after maxval
  std::size_t need = static_cast<std::size_t>(out.width) * out.height * out.channels;
  if (bytes.size() < pos + need) bad("truncated pixel data");
  out.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                    bytes.begin() + static_cast<std::ptrdiff_t>(pos + need));
  if (maxval != 255) {
    for (auto& p : out.pixels) p = static_cast<std::uint8_t>(std::lround(p * 255.0 / maxval));
  }
  return out;
}

}  // namespace

RawImage read_image(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) {
    fail(ErrorCategory::kIngestion, "no such image file: " + path.string());
  }
  std::ifstream in(path, std::ios::binary);
  unsigned char magic[8] = {};
  in.read(reinterpret_cast<char*>(magic), sizeof(magic));
  if (in.gcount() == 8 && png_sig_cmp(magic, 0, 8) == 0) return read_png(path);
  if (in.gcount() >= 2 && magic[0] == 'P') return read_netpbm(path);
  fail(ErrorCategory::kIngestion, "unrecognized image format: " + path.string());
}

void write_png(const std::filesystem::path& path, const RawImage& image) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
    fail(ErrorCategory::kPersistence, "cannot write " + path.string() + ": " + png.message);
  }
}

RawImage to_raw(const torch::Tensor& image) {
  if (image.dim() != 3 || image.size(0) != 3) {
    fail(ErrorCategory::kShape, "expected a [3, H, W] image tensor");
  }
  auto bytes = ((image.detach().to(torch::kFloat).clamp(-1.0, 1.0) + 1.0) * 127.5)
                   .round()
                   .to(torch::kUInt8)
                   .permute({1, 2, 0})
                   .contiguous();
  RawImage out;
  out.height = static_cast<int>(image.size(1));
  out.width = static_cast<int>(image.size(2));
  out.channels = 3;
  out.pixels.assign(bytes.data_ptr<std::uint8_t>(), bytes.data_ptr<std::uint8_t>() + bytes.numel());
  return out;
}

void write_png(const std::filesystem::path& path, const torch::Tensor& image) {
  write_png(path, to_raw(image));
}

torch::Tensor preprocess(const RawImage& image, int image_size) {
  if (image.width <= 0 || image.height <= 0 ||
      image.pixels.size() != static_cast<std::size_t>(image.width) * image.height * image.channels) {
    fail(ErrorCategory::kIngestion, "image buffer does not match its geometry");
  }
  auto hwc = torch::from_blob(const_cast<std::uint8_t*>(image.pixels.data()),
                              {image.height, image.width, image.channels}, torch::kUInt8);
  auto chw = hwc.permute({2, 0, 1}).to(torch::kFloat);
  if (image.channels == 1) chw = chw.expand({3, image.height, image.width});

  const int side = std::min(image.width, image.height);
  const int top = (image.height - side) / 2;
  const int left = (image.width - side) / 2;
  auto square = chw.slice(1, top, top + side).slice(2, left, left + side);
  if (side != image_size) {
    namespace F = torch::nn::functional;
    square = F::interpolate(square.unsqueeze(0), F::InterpolateFuncOptions()
                                                     .size(std::vector<int64_t>{image_size, image_size})
                                                     .mode(torch::kBilinear)
                                                     .align_corners(false)
                                                     .antialias(side > image_size))
                 .squeeze(0);
  }
  return (square / 127.5 - 1.0).clamp(-1.0, 1.0).contiguous();
}

}  // namespace invdiff
