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
#ifndef INVDIFF_UNET_HPP
#define INVDIFF_UNET_HPP

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

namespace invdiff {

// Label value meaning "no condition"; it maps to row 0 of the label
// embedding table, class c to row c + 1.
inline constexpr int64_t kNullLabel = -1;

struct DenoiserShape {
  int image_size = 64;
  int num_classes = 2;
  int base_channels = 32;
  std::vector<int> channel_mult{1, 2, 2};
  int res_blocks = 1;
  int groups = 8;

  nlohmann::json to_json() const;
  static DenoiserShape from_json(const nlohmann::json& j);
  bool operator==(const DenoiserShape&) const = default;
};

// Residual block with five parameterized layers, in order: in_norm,
// in_conv, emb_proj, out_norm, out_conv.
class ResBlockImpl : public torch::nn::Module {
 public:
  ResBlockImpl(int in_channels, int out_channels, int emb_dim, int groups);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& emb);

 private:
  torch::nn::GroupNorm in_norm{nullptr};
  torch::nn::Conv2d in_conv{nullptr};
  torch::nn::Linear emb_proj{nullptr};
  torch::nn::GroupNorm out_norm{nullptr};
  torch::nn::Conv2d out_conv{nullptr};
  torch::nn::Conv2d skip{nullptr};
};
TORCH_MODULE(ResBlock);

// Single-head self-attention over spatial positions with three
// parameterized layers: norm, qkv, proj_out.
class AttentionBlockImpl : public torch::nn::Module {
 public:
  AttentionBlockImpl(int channels, int groups);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::GroupNorm norm{nullptr};
  torch::nn::Conv2d qkv{nullptr};
  torch::nn::Conv2d proj_out{nullptr};
};
TORCH_MODULE(AttentionBlock);

// Noise predictor eps(x_t, y, t). A small U-Net: one level per entry of
// channel_mult, a middle block of ResBlock / AttentionBlock / ResBlock
// (13 layers), skip connections, sinusoidal time embedding plus a learned
// label embedding with C + 1 rows.
//
// Every parameter belongs to exactly one named layer: the path of the leaf
// module that owns it ("middle_a.in_conv", "label_embed", ...).
class ConditionalDenoiserImpl : public torch::nn::Module {
 public:
  explicit ConditionalDenoiserImpl(const DenoiserShape& shape);

  // x: [B, 3, S, S]; t: [B] timesteps (any numeric dtype); labels: [B]
  // int64 0-based classes or kNullLabel. Output has the geometry of x.
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& t, const torch::Tensor& labels);

  const DenoiserShape& shape() const { return shape_; }

  // Every layer name, in parameter registration order.
  std::vector<std::string> layer_names() const;
  // The 13 middle-block layers, numbered 1..13 by position in this list.
  static const std::vector<std::string>& middle_block();
  static const std::string& label_embedding();
  static std::string layer_of(const std::string& parameter_name);

  std::vector<std::pair<std::string, torch::Tensor>> layer_parameters(const std::string& layer) const;

 private:
  DenoiserShape shape_;
  int emb_dim_;
  torch::nn::Linear time_fc1{nullptr}, time_fc2{nullptr};
  torch::nn::Embedding label_embed{nullptr};
  torch::nn::Conv2d input_conv{nullptr};
  torch::nn::ModuleList down{nullptr};
  ResBlock middle_a{nullptr};
  AttentionBlock middle_attn{nullptr};
  ResBlock middle_b{nullptr};
  torch::nn::ModuleList up{nullptr};
  torch::nn::GroupNorm out_norm{nullptr};
  torch::nn::Conv2d out_conv{nullptr};
  // Per entry of down/up: what kind of block it is.
  std::vector<char> down_kind_, up_kind_;
};
TORCH_MODULE(ConditionalDenoiser);

torch::Tensor timestep_embedding(const torch::Tensor& t, int dim);

}  // namespace invdiff

#endif  // INVDIFF_UNET_HPP
