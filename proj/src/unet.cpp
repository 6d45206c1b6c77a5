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
#include "invdiff/unet.hpp"

#include <cmath>
#include <numeric>

#include "invdiff/errors.hpp"

namespace invdiff {

namespace nn = torch::nn;

namespace {

nn::Conv2d conv3x3(int in, int out, int stride = 1) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

nn::GroupNorm group_norm(int groups, int channels) {
  return nn::GroupNorm(nn::GroupNormOptions(std::gcd(groups, channels), channels));
}

}  // namespace

nlohmann::json DenoiserShape::to_json() const {
  return {{"image_size", image_size},       {"num_classes", num_classes}, {"base_channels", base_channels},
          {"channel_mult", channel_mult}, {"res_blocks", res_blocks},   {"groups", groups}};
}

DenoiserShape DenoiserShape::from_json(const nlohmann::json& j) {
  DenoiserShape s;
  s.image_size = j.at("image_size").get<int>();
  s.num_classes = j.at("num_classes").get<int>();
  s.base_channels = j.at("base_channels").get<int>();
  s.channel_mult = j.at("channel_mult").get<std::vector<int>>();
  s.res_blocks = j.at("res_blocks").get<int>();
  s.groups = j.at("groups").get<int>();
  return s;
}

torch::Tensor timestep_embedding(const torch::Tensor& t, int dim) {
  const int half = dim / 2;
  auto options = torch::TensorOptions().dtype(t.is_floating_point() ? t.scalar_type() : torch::kFloat);
  auto freqs = torch::exp(-std::log(10000.0) * torch::arange(half, options) / half);
  auto args = t.to(options.dtype()).unsqueeze(1) * freqs.unsqueeze(0);
  return torch::cat({torch::cos(args), torch::sin(args)}, 1);
}

ResBlockImpl::ResBlockImpl(int in_channels, int out_channels, int emb_dim, int groups) {
  in_norm = register_module("in_norm", group_norm(groups, in_channels));
  in_conv = register_module("in_conv", conv3x3(in_channels, out_channels));
  emb_proj = register_module("emb_proj", nn::Linear(emb_dim, out_channels));
  out_norm = register_module("out_norm", group_norm(groups, out_channels));
  out_conv = register_module("out_conv", conv3x3(out_channels, out_channels));
  if (in_channels != out_channels) {
    skip = register_module("skip", nn::Conv2d(nn::Conv2dOptions(in_channels, out_channels, 1)));
  }
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& emb) {
  auto h = in_conv(torch::silu(in_norm(x)));
  h = h + emb_proj(torch::silu(emb)).unsqueeze(-1).unsqueeze(-1);
  h = out_conv(torch::silu(out_norm(h)));
  return (skip ? skip(x) : x) + h;
}

AttentionBlockImpl::AttentionBlockImpl(int channels, int groups) {
  norm = register_module("norm", group_norm(groups, channels));
  qkv = register_module("qkv", nn::Conv2d(nn::Conv2dOptions(channels, 3 * channels, 1)));
  proj_out = register_module("proj_out", nn::Conv2d(nn::Conv2dOptions(channels, channels, 1)));
}

torch::Tensor AttentionBlockImpl::forward(const torch::Tensor& x) {
  const auto b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  auto parts = qkv(norm(x)).reshape({b, 3, c, h * w}).unbind(1);
  auto weights = torch::softmax(torch::einsum("bct,bcs->bts", {parts[0], parts[1]}) / std::sqrt(double(c)), -1);
  auto mixed = torch::einsum("bts,bcs->bct", {weights, parts[2]}).reshape({b, c, h, w});
  return x + proj_out(mixed);
}

ConditionalDenoiserImpl::ConditionalDenoiserImpl(const DenoiserShape& shape)
    : shape_(shape), emb_dim_(4 * shape.base_channels) {
  if (shape.num_classes < 1 || shape.base_channels < 1 || shape.channel_mult.empty() || shape.res_blocks < 1) {
    fail(ErrorCategory::kConfig, "invalid denoiser shape");
  }
  if (shape.image_size % (1 << (shape.channel_mult.size() - 1)) != 0) {
    fail(ErrorCategory::kConfig, "image_size is not divisible by the U-Net downsampling factor");
  }
  const int base = shape.base_channels;
  const int groups = shape.groups;
  time_fc1 = register_module("time_fc1", nn::Linear(base, emb_dim_));
  time_fc2 = register_module("time_fc2", nn::Linear(emb_dim_, emb_dim_));
  label_embed = register_module("label_embed", nn::Embedding(shape.num_classes + 1, emb_dim_));
  input_conv = register_module("input_conv", conv3x3(3, base));

  down = nn::ModuleList();
  std::vector<int> skip_channels{base};
  int ch = base;
  const int levels = static_cast<int>(shape.channel_mult.size());
  for (int level = 0; level < levels; ++level) {
    const int out = base * shape.channel_mult[static_cast<std::size_t>(level)];
    for (int r = 0; r < shape.res_blocks; ++r) {
      down->push_back(ResBlock(ch, out, emb_dim_, groups));
      down_kind_.push_back('r');
      ch = out;
      skip_channels.push_back(ch);
    }
    if (level + 1 < levels) {
      down->push_back(conv3x3(ch, ch, 2));
      down_kind_.push_back('d');
      skip_channels.push_back(ch);
    }
  }
  register_module("down", down);

  middle_a = register_module("middle_a", ResBlock(ch, ch, emb_dim_, groups));
  middle_attn = register_module("middle_attn", AttentionBlock(ch, groups));
  middle_b = register_module("middle_b", ResBlock(ch, ch, emb_dim_, groups));

  up = nn::ModuleList();
  for (int level = levels - 1; level >= 0; --level) {
    const int out = base * shape.channel_mult[static_cast<std::size_t>(level)];
    for (int r = 0; r <= shape.res_blocks; ++r) {
      const int skip = skip_channels.back();
      skip_channels.pop_back();
      up->push_back(ResBlock(ch + skip, out, emb_dim_, groups));
      up_kind_.push_back('r');
      ch = out;
    }
    if (level > 0) {
      up->push_back(conv3x3(ch, ch));
      up_kind_.push_back('u');
    }
  }
  register_module("up", up);

  out_norm = register_module("out_norm", group_norm(groups, ch));
  out_conv = register_module("out_conv", conv3x3(ch, 3));
  torch::NoGradGuard no_grad;
  out_conv->weight.zero_();
  out_conv->bias.zero_();
}

torch::Tensor ConditionalDenoiserImpl::forward(const torch::Tensor& x, const torch::Tensor& t,
                                               const torch::Tensor& labels) {
  if (x.dim() != 4 || x.size(1) != 3 || x.size(2) != shape_.image_size || x.size(3) != shape_.image_size) {
    fail(ErrorCategory::kShape, "denoiser expects [B, 3, " + std::to_string(shape_.image_size) + ", " +
                                    std::to_string(shape_.image_size) + "], got " + c10::str(x.sizes()));
  }
  if (t.numel() != x.size(0) || labels.numel() != x.size(0)) {
    fail(ErrorCategory::kShape, "denoiser needs one timestep and one label per image");
  }
  auto rows = labels.to(torch::kInt64) + 1;
  if (rows.numel() > 0 && (rows.min().item<int64_t>() < 0 || rows.max().item<int64_t>() > shape_.num_classes)) {
    fail(ErrorCategory::kIndex, "denoiser label outside {null, 0..C-1}");
  }
  auto temb = timestep_embedding(t.to(x.scalar_type()), shape_.base_channels);
  auto emb = time_fc2(torch::silu(time_fc1(temb))) + label_embed(rows);

  std::vector<torch::Tensor> skips;
  auto h = input_conv(x);
  skips.push_back(h);
  for (std::size_t i = 0; i < down->size(); ++i) {
    if (down_kind_[i] == 'r') {
      h = down[i]->as<ResBlockImpl>()->forward(h, emb);
    } else {
      h = down[i]->as<nn::Conv2dImpl>()->forward(h);
    }
    skips.push_back(h);
  }
  h = middle_a(h, emb);
  h = middle_attn(h);
  h = middle_b(h, emb);
  for (std::size_t i = 0; i < up->size(); ++i) {
    if (up_kind_[i] == 'r') {
      h = up[i]->as<ResBlockImpl>()->forward(torch::cat({h, skips.back()}, 1), emb);
      skips.pop_back();
    } else {
      h = torch::upsample_nearest2d(h, {h.size(2) * 2, h.size(3) * 2});
      h = up[i]->as<nn::Conv2dImpl>()->forward(h);
    }
  }
  return out_conv(torch::silu(out_norm(h)));
}

const std::vector<std::string>& ConditionalDenoiserImpl::middle_block() {
  static const std::vector<std::string> names = {
      "middle_a.in_norm", "middle_a.in_conv",     "middle_a.emb_proj", "middle_a.out_norm", "middle_a.out_conv",
      "middle_attn.norm", "middle_attn.qkv",      "middle_attn.proj_out",
      "middle_b.in_norm", "middle_b.in_conv",     "middle_b.emb_proj", "middle_b.out_norm", "middle_b.out_conv"};
  return names;
}

const std::string& ConditionalDenoiserImpl::label_embedding() {
  static const std::string name = "label_embed";
  return name;
}

std::string ConditionalDenoiserImpl::layer_of(const std::string& parameter_name) {
  const auto dot = parameter_name.rfind('.');
  return dot == std::string::npos ? parameter_name : parameter_name.substr(0, dot);
}

std::vector<std::string> ConditionalDenoiserImpl::layer_names() const {
  std::vector<std::string> out;
  for (const auto& item : named_parameters()) {
    auto layer = layer_of(item.key());
    if (out.empty() || out.back() != layer) out.push_back(layer);
  }
  return out;
}

std::vector<std::pair<std::string, torch::Tensor>> ConditionalDenoiserImpl::layer_parameters(
    const std::string& layer) const {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& item : named_parameters()) {
    if (layer_of(item.key()) == layer) out.emplace_back(item.key(), item.value());
  }
  if (out.empty()) fail(ErrorCategory::kConfig, "denoiser has no layer named '" + layer + "'");
  return out;
}

}  // namespace invdiff
