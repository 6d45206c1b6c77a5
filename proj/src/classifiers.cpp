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
#include "invdiff/classifiers.hpp"

#include <c10/util/Logging.h>

#include "invdiff/checkpoint.hpp"
#include "invdiff/errors.hpp"
#include "invdiff/random.hpp"

namespace invdiff {

namespace nn = torch::nn;

namespace {

nn::Sequential conv_bn_relu(int in, int out, int stride = 1) {
  return nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1).bias(false)),
                        nn::BatchNorm2d(out), nn::ReLU());
}

class TargetCnn : public ClassifierNet {
 public:
  explicit TargetCnn(int num_classes)
      : stage1_(register_module("stage1", conv_bn_relu(3, 32))),
        stage2_(register_module("stage2", conv_bn_relu(32, 64))),
        stage3_(register_module("stage3", conv_bn_relu(64, 128))),
        fc_(register_module("fc", nn::Linear(128, kFeatureDim))),
        head_(register_module("head", nn::Linear(kFeatureDim, num_classes))) {}

  torch::Tensor features(const torch::Tensor& x) override {
    auto h = torch::max_pool2d(stage1_->forward(x), 2);
    h = torch::max_pool2d(stage2_->forward(h), 2);
    h = stage3_->forward(h).mean({2, 3});
    return torch::relu(fc_->forward(h));
  }
  nn::Linear& head() override { return head_; }
  int feature_dim() const override { return kFeatureDim; }

 private:
  static constexpr int kFeatureDim = 128;
  nn::Sequential stage1_, stage2_, stage3_;
  nn::Linear fc_;
  nn::Linear head_;
};

class ResidualUnit : public nn::Module {
 public:
  ResidualUnit(int in, int out, int stride)
      : conv1_(register_module("conv1", nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1).bias(false)))),
        bn1_(register_module("bn1", nn::BatchNorm2d(out))),
        conv2_(register_module("conv2", nn::Conv2d(nn::Conv2dOptions(out, out, 3).padding(1).bias(false)))),
        bn2_(register_module("bn2", nn::BatchNorm2d(out))) {
    if (stride != 1 || in != out) {
      shortcut_ = register_module(
          "shortcut", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in, out, 1).stride(stride).bias(false)),
                                     nn::BatchNorm2d(out)));
    }
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto h = torch::relu(bn1_->forward(conv1_->forward(x)));
    h = bn2_->forward(conv2_->forward(h));
    return torch::relu(h + (shortcut_ ? shortcut_->forward(x) : x));
  }

 private:
  nn::Conv2d conv1_;
  nn::BatchNorm2d bn1_;
  nn::Conv2d conv2_;
  nn::BatchNorm2d bn2_;
  nn::Sequential shortcut_{nullptr};
};

class EvalResNet : public ClassifierNet {
 public:
  explicit EvalResNet(int num_classes)
      : stem_(register_module("stem", conv_bn_relu(3, 48))),
        unit1_(register_module("unit1", std::make_shared<ResidualUnit>(48, 48, 1))),
        unit2_(register_module("unit2", std::make_shared<ResidualUnit>(48, 96, 2))),
        unit3_(register_module("unit3", std::make_shared<ResidualUnit>(96, kFeatureDim, 2))),
        head_(register_module("head", nn::Linear(kFeatureDim, num_classes))) {}

  torch::Tensor features(const torch::Tensor& x) override {
    auto h = stem_->forward(x);
    h = unit3_->forward(unit2_->forward(unit1_->forward(h)));
    return h.mean({2, 3});
  }
  nn::Linear& head() override { return head_; }
  int feature_dim() const override { return kFeatureDim; }

 private:
  static constexpr int kFeatureDim = 192;
  nn::Sequential stem_;
  std::shared_ptr<ResidualUnit> unit1_, unit2_, unit3_;
  nn::Linear head_;
};

const char* transform_name(InputTransform t) { return t == InputTransform::kIdentity ? "identity" : "unit"; }

}  // namespace

std::shared_ptr<ClassifierNet> make_classifier_net(const std::string& architecture, int num_classes) {
  if (num_classes < 2) fail(ErrorCategory::kConfig, "a classifier needs at least two classes");
  if (architecture == "target-cnn") return std::make_shared<TargetCnn>(num_classes);
  if (architecture == "eval-resnet") return std::make_shared<EvalResNet>(num_classes);
  fail(ErrorCategory::kConfig, "unknown classifier architecture '" + architecture + "'");
}

ClassifierHandle::ClassifierHandle(std::shared_ptr<ClassifierNet> net, std::string architecture, int num_classes,
                                   int image_size, InputTransform transform)
    : net_(std::move(net)),
      architecture_(std::move(architecture)),
      num_classes_(num_classes),
      image_size_(image_size),
      transform_(transform) {
  net_->eval();
}

torch::Tensor ClassifierHandle::prepare(const torch::Tensor& batch) const {
  if (batch.dim() != 4 || batch.size(1) != 3 || batch.size(2) != image_size_ || batch.size(3) != image_size_) {
    fail(ErrorCategory::kShape, "classifier '" + architecture_ + "' expects [B, 3, " + std::to_string(image_size_) +
                                    ", " + std::to_string(image_size_) + "], got " + c10::str(batch.sizes()));
  }
  return transform_ == InputTransform::kUnitRange ? (batch + 1.0) * 0.5 : batch;
}

std::pair<torch::Tensor, torch::Tensor> ClassifierHandle::forward(const torch::Tensor& batch) const {
  auto x = prepare(batch);
  if (x.size(0) == 0) {
    auto options = x.options();
    return {torch::empty({0, feature_dim()}, options), torch::empty({0, num_classes_}, options)};
  }
  auto f = net_->features(x);
  return {f, net_->head()->forward(f)};
}

torch::Tensor ClassifierHandle::logits(const torch::Tensor& batch) const { return forward(batch).second; }

torch::Tensor ClassifierHandle::features(const torch::Tensor& batch) const { return forward(batch).first; }

torch::Tensor ClassifierHandle::predict(const torch::Tensor& batch, int64_t chunk) const {
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> out;
  for (int64_t i = 0; i < batch.size(0); i += chunk) {
    out.push_back(logits(batch.slice(0, i, std::min(batch.size(0), i + chunk))).argmax(1));
  }
  return out.empty() ? torch::empty({0}, torch::kInt64) : torch::cat(out);
}

void ClassifierHandle::freeze() const {
  net_->eval();
  for (auto& p : net_->parameters()) p.set_requires_grad(false);
}

void ClassifierHandle::to(torch::ScalarType dtype) const { net_->to(dtype); }

void ClassifierHandle::save(const std::filesystem::path& path, double test_accuracy) const {
  Checkpoint ckpt;
  ckpt.metadata = {{"kind", "classifier"},
                   {"architecture", architecture_},
                   {"num_classes", num_classes_},
                   {"image_size", image_size_},
                   {"feature_dim", feature_dim()},
                   {"input_transform", transform_name(transform_)},
                   {"test_accuracy", test_accuracy}};
  append_module(ckpt, *net_);
  save_checkpoint(path, ckpt);
}

ClassifierHandle ClassifierHandle::load(const std::filesystem::path& path, int expected_image_size) {
  auto ckpt = load_checkpoint(path);
  expect_metadata(ckpt, "kind", "classifier");
  if (expected_image_size != 0) expect_metadata(ckpt, "image_size", expected_image_size);
  try {
    const auto& m = ckpt.metadata;
    auto architecture = m.at("architecture").get<std::string>();
    const int num_classes = m.at("num_classes").get<int>();
    auto net = make_classifier_net(architecture, num_classes);
    load_into(*net, ckpt);
    const auto transform =
        m.at("input_transform").get<std::string>() == "unit" ? InputTransform::kUnitRange : InputTransform::kIdentity;
    return ClassifierHandle(std::move(net), architecture, num_classes, m.at("image_size").get<int>(), transform);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::kPersistence, "malformed classifier metadata in " + path.string() + ": " + e.what());
  }
}

double accuracy(const ClassifierHandle& model, const torch::Tensor& images, const torch::Tensor& labels) {
  if (images.size(0) == 0) return 0.0;
  auto predicted = model.predict(images);
  return predicted.eq(labels).to(torch::kDouble).mean().item<double>();
}

TrainedClassifier train_classifier(const torch::Tensor& train_images, const torch::Tensor& train_labels,
                                   const torch::Tensor& test_images, const torch::Tensor& test_labels,
                                   const ClassifierRecipe& recipe, int num_classes, InputTransform transform,
                                   std::uint64_t seed) {
  if (train_images.size(0) == 0) fail(ErrorCategory::kTraining, "no training images");
  const auto present = std::get<0>(torch::_unique(train_labels)).numel();
  if (present < 2) fail(ErrorCategory::kTraining, "training data must contain at least two classes");

  torch::manual_seed(seed);
  auto net = make_classifier_net(recipe.architecture, num_classes);
  ClassifierHandle handle(net, recipe.architecture, num_classes, static_cast<int>(train_images.size(2)), transform);
  auto gen = make_generator(derive_seed(seed, 1));

  torch::optim::SGD optimizer(net->parameters(), torch::optim::SGDOptions(recipe.lr)
                                                     .momentum(recipe.momentum)
                                                     .weight_decay(recipe.weight_decay));
  TrainedClassifier result;
  const int64_t n = train_images.size(0);
  for (int epoch = 0; epoch < recipe.epochs; ++epoch) {
    net->train();
    auto order = torch::randperm(n, gen, torch::kInt64);
    double total = 0.0;
    int64_t batches = 0;
    for (int64_t start = 0; start < n; start += recipe.batch_size) {
      auto idx = order.slice(0, start, std::min(n, start + recipe.batch_size));
      // BatchNorm cannot normalize a single sample.
      if (idx.numel() < 2) continue;
      auto x = train_images.index_select(0, idx);
      auto y = train_labels.index_select(0, idx);
      auto flip = torch::rand({x.size(0)}, gen) < recipe.flip_probability;
      x = torch::where(flip.view({-1, 1, 1, 1}), x.flip({3}), x);
      if (transform == InputTransform::kUnitRange) x = (x + 1.0) * 0.5;
      auto logits = net->head()->forward(net->features(x));
      auto loss = torch::nn::functional::cross_entropy(logits, y);
      optimizer.zero_grad();
      loss.backward();
      optimizer.step();
      total += loss.item<double>();
      ++batches;
    }
    result.epoch_losses.push_back(batches ? total / batches : 0.0);
    if (!std::isfinite(result.epoch_losses.back())) {
      fail(ErrorCategory::kTraining, recipe.architecture + " training diverged at epoch " + std::to_string(epoch));
    }
  }
  net->eval();
  result.model = handle;
  result.train_accuracy = accuracy(handle, train_images, train_labels);
  result.test_accuracy = test_images.size(0) ? accuracy(handle, test_images, test_labels) : 0.0;
  if (result.test_accuracy <= 1.0 / num_classes) {
    result.warnings.push_back(recipe.architecture + " test accuracy " + std::to_string(result.test_accuracy) +
                              " is at or below chance after the full schedule");
    LOG(WARNING) << result.warnings.back();
  }
  return result;
}

}  // namespace invdiff
