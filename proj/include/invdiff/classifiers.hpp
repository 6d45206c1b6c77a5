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
#ifndef INVDIFF_CLASSIFIERS_HPP
#define INVDIFF_CLASSIFIERS_HPP

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "invdiff/config.hpp"

namespace invdiff {

// A classifier split into a feature extractor and a linear head so the
// penultimate activations are always available next to the logits.
class ClassifierNet : public torch::nn::Module {
 public:
  virtual torch::Tensor features(const torch::Tensor& x) = 0;
  virtual torch::nn::Linear& head() = 0;
  virtual int feature_dim() const = 0;
};

// "target-cnn": three conv/BN/ReLU stages, two max-pools, global average
// pooling and a 128-wide fully connected feature layer.
// "eval-resnet": a residual network with two strided stages and 192 pooled
// features.
std::shared_ptr<ClassifierNet> make_classifier_net(const std::string& architecture, int num_classes);

class ClassifierHandle {
 public:
  ClassifierHandle() = default;
  ClassifierHandle(std::shared_ptr<ClassifierNet> net, std::string architecture, int num_classes, int image_size,
                   InputTransform transform);

  const std::string& architecture() const { return architecture_; }
  int num_classes() const { return num_classes_; }
  int feature_dim() const { return net_->feature_dim(); }
  int image_size() const { return image_size_; }
  InputTransform input_transform() const { return transform_; }
  ClassifierNet& net() const { return *net_; }

  // Batch is [B, 3, S, S] in [-1, 1]. Both are differentiable with respect
  // to the input; the network is kept in inference mode. B == 0 yields an
  // empty result. Other geometries raise a shape error.
  torch::Tensor logits(const torch::Tensor& batch) const;
  torch::Tensor features(const torch::Tensor& batch) const;
  // {features, logits} from one pass.
  std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& batch) const;

  // Argmax class per image, computed in chunks without autograd.
  torch::Tensor predict(const torch::Tensor& batch, int64_t chunk = 256) const;

  void freeze() const;
  void to(torch::ScalarType dtype) const;

  void save(const std::filesystem::path& path, double test_accuracy) const;
  // Rejects checkpoints that are not classifiers or whose image size
  // differs from expected_image_size (when nonzero).
  static ClassifierHandle load(const std::filesystem::path& path, int expected_image_size = 0);

 private:
  torch::Tensor prepare(const torch::Tensor& batch) const;

  std::shared_ptr<ClassifierNet> net_;
  std::string architecture_;
  int num_classes_ = 0;
  int image_size_ = 0;
  InputTransform transform_ = InputTransform::kIdentity;
};

struct TrainedClassifier {
  ClassifierHandle model;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::vector<double> epoch_losses;
  std::vector<std::string> warnings;
};

// SGD with momentum and weight decay, random horizontal flips, shuffled
// minibatches. Weight init and data order are seeded. A test accuracy at or
// below chance adds a training-failure warning.
TrainedClassifier train_classifier(const torch::Tensor& train_images, const torch::Tensor& train_labels,
                                   const torch::Tensor& test_images, const torch::Tensor& test_labels,
                                   const ClassifierRecipe& recipe, int num_classes, InputTransform transform,
                                   std::uint64_t seed);

double accuracy(const ClassifierHandle& model, const torch::Tensor& images, const torch::Tensor& labels);

}  // namespace invdiff

#endif  // INVDIFF_CLASSIFIERS_HPP
