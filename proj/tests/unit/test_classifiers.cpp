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
#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "invdiff/checkpoint.hpp"
#include "invdiff/classifiers.hpp"
#include "oracles.hpp"

namespace invdiff {
namespace {

using testing_support::TempDir;
using testing_support::throws_category;

ClassifierHandle make_handle(const std::string& arch, int classes = 4, int size = 8,
                             InputTransform transform = InputTransform::kIdentity) {
  torch::manual_seed(12);
  return ClassifierHandle(make_classifier_net(arch, classes), arch, classes, size, transform);
}

class Architectures : public ::testing::TestWithParam<std::string> {};

TEST_P(Architectures, GeometryAndHeadConsistency) {
  auto model = make_handle(GetParam());
  torch::NoGradGuard no_grad;
  auto x = torch::rand({5, 3, 8, 8}) * 2 - 1;
  auto [features, logits] = model.forward(x);
  EXPECT_EQ(logits.sizes(), (std::vector<int64_t>{5, 4}));
  EXPECT_EQ(features.sizes(), (std::vector<int64_t>{5, model.feature_dim()}));
  EXPECT_TRUE(torch::equal(model.net().head()->forward(features), logits));
  EXPECT_TRUE(torch::equal(model.logits(x), logits));
  EXPECT_TRUE(torch::equal(model.features(x), features));
  auto probs = torch::softmax(logits, 1).sum(1);
  EXPECT_TRUE(torch::allclose(probs, torch::ones({5}), 1e-6, 1e-6));
}

TEST_P(Architectures, RowsAreIndependentOfTheBatch) {
  auto model = make_handle(GetParam());
  torch::NoGradGuard no_grad;
  auto x = torch::rand({3, 3, 8, 8}) * 2 - 1;
  auto dup = torch::cat({x, x});
  auto logits = model.logits(dup);
  EXPECT_TRUE(torch::allclose(logits.slice(0, 0, 3), logits.slice(0, 3, 6), 0, 1e-6));
  EXPECT_TRUE(torch::allclose(model.logits(x.slice(0, 1, 2)), logits.slice(0, 1, 2), 0, 1e-5));
}

TEST_P(Architectures, EmptyBatchAndBadGeometry) {
  auto model = make_handle(GetParam());
  auto empty = model.logits(torch::zeros({0, 3, 8, 8}));
  EXPECT_EQ(empty.sizes(), (std::vector<int64_t>{0, 4}));
  EXPECT_EQ(model.predict(torch::zeros({0, 3, 8, 8})).numel(), 0);
  for (auto bad : {torch::zeros({2, 3, 16, 16}), torch::zeros({2, 1, 8, 8}), torch::zeros({3, 8, 8})}) {
    EXPECT_TRUE(throws_category([&] { model.logits(bad); }, ErrorCategory::kShape)) << bad.sizes();
  }
}

TEST_P(Architectures, InputGradientMatchesCentralDifferences) {
  auto model = make_handle(GetParam(), 3);
  model.to(torch::kDouble);
  model.freeze();
  auto x = (torch::rand({1, 3, 8, 8}, torch::kDouble) * 2 - 1);
  auto weights = torch::tensor({{0.7, -1.2, 0.4}}, torch::kDouble);
  auto objective = [&](const torch::Tensor& v) { return (model.logits(v) * weights).sum(); };
  auto input = x.clone().requires_grad_();
  objective(input).backward();
  torch::NoGradGuard no_grad;
  auto fd = oracle::central_difference([&](const torch::Tensor& v) { return objective(v).item<double>(); }, x);
  EXPECT_LT(oracle::relative_error(input.grad(), fd), 1e-3);
}

TEST_P(Architectures, PredictMatchesArgmaxAcrossChunks) {
  auto model = make_handle(GetParam());
  auto x = torch::rand({7, 3, 8, 8}) * 2 - 1;
  torch::Tensor expected;
  {
    torch::NoGradGuard no_grad;
    expected = model.logits(x).argmax(1);
  }
  EXPECT_TRUE(torch::equal(model.predict(x), expected));
  EXPECT_TRUE(torch::equal(model.predict(x, 3), expected));
  EXPECT_DOUBLE_EQ(accuracy(model, x, expected), 1.0);
  EXPECT_DOUBLE_EQ(accuracy(model, x, (expected + 1) % 4), 0.0);
}

TEST_P(Architectures, SaveLoadRoundTrip) {
  TempDir dir;
  auto model = make_handle(GetParam());
  model.save(dir / "c.ckpt", 0.75);
  auto back = ClassifierHandle::load(dir / "c.ckpt", 8);
  EXPECT_EQ(back.architecture(), GetParam());
  EXPECT_EQ(back.num_classes(), 4);
  EXPECT_EQ(back.feature_dim(), model.feature_dim());
  torch::NoGradGuard no_grad;
  auto x = torch::rand({4, 3, 8, 8}) * 2 - 1;
  EXPECT_TRUE(torch::equal(back.logits(x), model.logits(x)));
  EXPECT_TRUE(throws_category([&] { ClassifierHandle::load(dir / "c.ckpt", 16); }, ErrorCategory::kPersistence));
  Checkpoint other;
  other.metadata = {{"kind", "denoiser"}};
  save_checkpoint(dir / "o.ckpt", other);
  EXPECT_TRUE(throws_category([&] { ClassifierHandle::load(dir / "o.ckpt"); }, ErrorCategory::kPersistence));
}

INSTANTIATE_TEST_SUITE_P(Classifiers, Architectures, ::testing::Values("target-cnn", "eval-resnet"));

TEST(Classifiers, ArchitecturesDiffer) {
  auto a = make_handle("target-cnn");
  auto b = make_handle("eval-resnet");
  EXPECT_NE(a.feature_dim(), b.feature_dim());
  EXPECT_TRUE(throws_category([] { make_classifier_net("vgg", 3); }, ErrorCategory::kConfig));
}

TEST(Classifiers, UnitRangeTransformFeedsShiftedInput) {
  auto scaled = make_handle("target-cnn", 4, 8, InputTransform::kUnitRange);
  ClassifierHandle plain(std::shared_ptr<ClassifierNet>(&scaled.net(), [](ClassifierNet*) {}), "target-cnn", 4, 8,
                         InputTransform::kIdentity);
  torch::NoGradGuard no_grad;
  auto x = torch::rand({3, 3, 8, 8}) * 2 - 1;
  EXPECT_TRUE(torch::equal(scaled.logits(x), plain.logits((x + 1.0) * 0.5)));
}

TEST(Classifiers, FreezeStopsParameterGradients) {
  auto model = make_handle("target-cnn");
  model.freeze();
  for (const auto& p : model.net().parameters()) EXPECT_FALSE(p.requires_grad());
  auto x = torch::rand({2, 3, 8, 8}).requires_grad_();
  model.logits(x).sum().backward();
  EXPECT_TRUE(x.grad().defined());
}

// Two colour classes with pixel noise.
std::pair<torch::Tensor, torch::Tensor> colour_toy(int per_class, std::uint64_t seed) {
  torch::manual_seed(seed);
  auto red = torch::tensor({0.8, -0.6, -0.6}).view({1, 3, 1, 1});
  auto blue = torch::tensor({-0.6, -0.6, 0.8}).view({1, 3, 1, 1});
  auto a = red + 0.2 * torch::randn({per_class, 3, 8, 8});
  auto b = blue + 0.2 * torch::randn({per_class, 3, 8, 8});
  auto labels = torch::cat({torch::zeros({per_class}, torch::kInt64), torch::ones({per_class}, torch::kInt64)});
  return {torch::cat({a, b}).clamp(-1, 1), labels};
}

ClassifierRecipe quick_recipe(const std::string& arch, int epochs) {
  ClassifierRecipe r;
  r.architecture = arch;
  r.epochs = epochs;
  r.batch_size = 8;
  r.lr = 0.05;
  return r;
}

TEST(Training, SeparableToyIsLearned) {
  auto [train_x, train_y] = colour_toy(16, 1);
  auto [test_x, test_y] = colour_toy(8, 2);
  for (const std::string arch : {"target-cnn", "eval-resnet"}) {
    auto trained = train_classifier(train_x, train_y, test_x, test_y, quick_recipe(arch, 4), 2,
                                    InputTransform::kIdentity, 5);
    EXPECT_DOUBLE_EQ(trained.test_accuracy, 1.0) << arch;
    EXPECT_DOUBLE_EQ(trained.train_accuracy, 1.0) << arch;
    EXPECT_EQ(trained.epoch_losses.size(), 4u);
    EXPECT_TRUE(trained.warnings.empty());
  }
}

TEST(Training, SameSeedSameWeights) {
  auto [x, y] = colour_toy(8, 3);
  auto a = train_classifier(x, y, x, y, quick_recipe("target-cnn", 2), 2, InputTransform::kIdentity, 9);
  auto b = train_classifier(x, y, x, y, quick_recipe("target-cnn", 2), 2, InputTransform::kIdentity, 9);
  EXPECT_EQ(a.epoch_losses, b.epoch_losses);
  auto pb = b.model.net().named_parameters();
  for (const auto& item : a.model.net().named_parameters()) EXPECT_TRUE(torch::equal(item.value(), pb[item.key()]));
}

TEST(Training, ChanceAccuracyWarns) {
  // Identical images in both classes: any classifier scores exactly 1/2.
  auto x = torch::zeros({8, 3, 8, 8});
  auto y = torch::tensor({0, 1, 0, 1, 0, 1, 0, 1}, torch::kInt64);
  auto trained = train_classifier(x, y, x, y, quick_recipe("target-cnn", 1), 2, InputTransform::kIdentity, 1);
  EXPECT_DOUBLE_EQ(trained.test_accuracy, 0.5);
  EXPECT_FALSE(trained.warnings.empty());
}

}  // namespace
}  // namespace invdiff
