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

#include <cmath>

#include "fixtures.hpp"
#include "invdiff/metrics.hpp"
#include "oracles.hpp"

namespace invdiff {
namespace {

namespace F = torch::nn::functional;
using testing_support::throws_category;

TEST(AttackAccuracy, PerfectPredictions) {
  auto labels = torch::tensor({0, 3, 2, 1}, torch::kInt64);
  auto logits = F::one_hot(labels, 6).to(torch::kFloat) * 5.0;
  auto acc = attack_accuracy(logits, labels);
  EXPECT_DOUBLE_EQ(acc.acc1, 1.0);
  EXPECT_DOUBLE_EQ(acc.acc5, 1.0);
  EXPECT_EQ(acc.hit, std::vector<bool>(4, true));
}

TEST(AttackAccuracy, TopFiveContainsTopOne) {
  torch::manual_seed(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto logits = torch::randn({50, 12});
    auto labels = torch::randint(0, 12, {50}, torch::kInt64);
    auto acc = attack_accuracy(logits, labels);
    EXPECT_LE(acc.acc1, acc.acc5);
    EXPECT_GE(acc.acc1, 0.0);
    EXPECT_LE(acc.acc5, 1.0);
  }
}

TEST(AttackAccuracy, HitMaskMatchesArgmax) {
  auto logits = torch::tensor({{0.1, 0.9, 0.0}, {0.8, 0.1, 0.1}, {0.2, 0.3, 0.5}});
  auto labels = torch::tensor({1, 1, 2}, torch::kInt64);
  auto acc = attack_accuracy(logits, labels);
  EXPECT_EQ(acc.hit, (std::vector<bool>{true, false, true}));
  EXPECT_NEAR(acc.acc1, 2.0 / 3.0, 1e-12);
}

TEST(AttackAccuracy, RandomLogitsMatchChance) {
  torch::manual_seed(11);
  const int n = 20000;
  auto logits = torch::randn({n, 10});
  auto labels = torch::randint(0, 10, {n}, torch::kInt64);
  auto acc = attack_accuracy(logits, labels);
  EXPECT_NEAR(acc.acc1, 0.1, 3.0 * std::sqrt(0.1 * 0.9 / n));
  EXPECT_NEAR(acc.acc5, 0.5, 3.0 * std::sqrt(0.5 * 0.5 / n));
}

TEST(Fid, SelfDistanceIsZero) {
  torch::manual_seed(1);
  auto a = torch::randn({200, 8}, torch::kDouble);
  EXPECT_LE(fid(a, a), 1e-6);
}

TEST(Fid, Symmetric) {
  torch::manual_seed(2);
  auto a = torch::randn({300, 6}, torch::kDouble);
  auto b = torch::randn({250, 6}, torch::kDouble) * 1.5 + 0.3;
  EXPECT_NEAR(fid(a, b), fid(b, a), 1e-6);
}

TEST(Fid, ShiftedGaussianMatchesSquaredMeanGap) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(7);
  const int n = 10000;
  auto mu = torch::tensor({3.0, -2.0, 1.0, 2.0, 0.0, -1.0}, torch::kDouble);
  auto a = at::randn({n, 6}, gen, torch::kDouble);
  auto b = at::randn({n, 6}, gen, torch::kDouble) + mu;
  const double expected = mu.pow(2).sum().item<double>();
  EXPECT_NEAR(fid(a, b), expected, 0.02 * expected);
}

TEST(Fid, RejectsMismatchedWidthsAndTinySets) {
  EXPECT_TRUE(throws_category([] { fid(torch::zeros({5, 3}), torch::zeros({5, 4})); }, ErrorCategory::kShape));
  EXPECT_TRUE(throws_category([] { fid(torch::zeros({1, 3}), torch::zeros({5, 3})); }, ErrorCategory::kShape));
}

TEST(KnnDist, HandMinimum) {
  auto recon = torch::tensor({{0.0, 0.0}}, torch::kDouble);
  auto priv = torch::tensor({{3.0, 0.0}, {0.0, 4.0}}, torch::kDouble);
  auto d = knn_dist(recon, torch::tensor({0}, torch::kInt64), {true}, priv, torch::tensor({0, 0}, torch::kInt64));
  ASSERT_TRUE(d.has_value());
  EXPECT_DOUBLE_EQ(*d, 3.0);
}

TEST(KnnDist, CoincidentReconstructionContributesZero) {
  auto priv = torch::tensor({{1.0, 2.0}, {5.0, 5.0}}, torch::kDouble);
  auto d = knn_dist(priv.slice(0, 0, 1), torch::tensor({1}, torch::kInt64), {true}, priv,
                    torch::tensor({1, 1}, torch::kInt64));
  ASSERT_TRUE(d.has_value());
  EXPECT_DOUBLE_EQ(*d, 0.0);
}

TEST(KnnDist, OnlyRecognizedReconstructionsCount) {
  // Private class 0 at the origin, class 1 at (10, 0).
  auto priv = torch::tensor({{0.0, 0.0}, {10.0, 0.0}}, torch::kDouble);
  auto priv_labels = torch::tensor({0, 1}, torch::kInt64);
  // Distances to their own class: 1, 100, 2, 50.
  auto recon = torch::tensor({{1.0, 0.0}, {0.0, 100.0}, {12.0, 0.0}, {10.0, 50.0}}, torch::kDouble);
  auto labels = torch::tensor({0, 0, 1, 1}, torch::kInt64);
  auto d = knn_dist(recon, labels, {true, false, true, false}, priv, priv_labels);
  ASSERT_TRUE(d.has_value());
  EXPECT_DOUBLE_EQ(*d, 1.5);
  auto all = knn_dist(recon, labels, {true, true, true, true}, priv, priv_labels);
  EXPECT_DOUBLE_EQ(*all, (1.0 + 100.0 + 2.0 + 50.0) / 4.0);
}

TEST(KnnDist, AbsentWhenNothingRecognized) {
  auto priv = torch::zeros({2, 3});
  auto d = knn_dist(torch::ones({2, 3}), torch::tensor({0, 0}, torch::kInt64), {false, false}, priv,
                    torch::tensor({0, 0}, torch::kInt64));
  EXPECT_FALSE(d.has_value());
}

TEST(KnnDist, MissingPrivateClassIsAConfigError) {
  EXPECT_TRUE(throws_category(
      [] {
        knn_dist(torch::ones({1, 2}), torch::tensor({2}, torch::kInt64), {true}, torch::zeros({2, 2}),
                 torch::tensor({0, 1}, torch::kInt64));
      },
      ErrorCategory::kConfig));
}

TEST(ImageQuality, IdenticalImages) {
  torch::manual_seed(4);
  auto a = torch::rand({3, 16, 16}) * 2 - 1;
  EXPECT_EQ(psnr(a, a), kPsnrIdentical);
  EXPECT_TRUE(std::isinf(psnr(a, a)));
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
}

TEST(ImageQuality, PsnrOfUniformOffset) {
  torch::manual_seed(5);
  auto a = torch::rand({3, 16, 16}, torch::kDouble) - 0.5;
  // MSE = 0.01 with a peak of 2.
  EXPECT_NEAR(psnr(a, a + 0.1), 10.0 * std::log10(4.0 / 0.01), 1e-9);
  // A [0, 1] range with the same offset.
  EXPECT_NEAR(psnr(a, a - 0.1, 1.0), 20.0, 1e-9);
}

TEST(ImageQuality, SsimSymmetricAndBounded) {
  torch::manual_seed(6);
  for (int trial = 0; trial < 10; ++trial) {
    auto a = torch::rand({3, 16, 16}) * 2 - 1;
    auto b = (a + 0.3 * torch::randn({3, 16, 16})).clamp(-1, 1);
    const double ab = ssim(a, b);
    EXPECT_NEAR(ab, ssim(b, a), 1e-6);
    EXPECT_LT(ab, 1.0);
    EXPECT_GT(ab, -1.0);
  }
}

TEST(ImageQuality, SsimOfNonnegativeImagesInUnitRange) {
  torch::manual_seed(8);
  for (int trial = 0; trial < 10; ++trial) {
    auto a = torch::rand({3, 16, 16});
    auto b = (a + 0.1 * torch::randn({3, 16, 16})).clamp(0, 1);
    const double s = ssim(a, b, 1.0);
    EXPECT_GE(s, 0.0);
    EXPECT_LE(s, 1.0);
  }
}

TEST(ImageQuality, SsimDropsWithNoise) {
  torch::manual_seed(9);
  auto a = torch::rand({3, 16, 16}) * 2 - 1;
  auto noise = torch::randn({3, 16, 16});
  EXPECT_GT(ssim(a, a + 0.05 * noise), ssim(a, a + 0.5 * noise));
}

TEST(ImageQuality, SmallImagesUseAShrunkWindow) {
  auto a = torch::rand({3, 6, 6});
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
  EXPECT_TRUE(throws_category([&] { ssim(a, torch::rand({3, 6, 7})); }, ErrorCategory::kShape));
  EXPECT_TRUE(throws_category([&] { psnr(a, torch::rand({3, 6, 7})); }, ErrorCategory::kShape));
}

void expect_matches_oracle(const torch::Tensor& real, const torch::Tensor& fake, int k) {
  const auto got = prdc(real, fake, k);
  const auto want = oracle::brute_prdc(oracle::to_matrix(real), oracle::to_matrix(fake), k);
  EXPECT_EQ(got.precision, want.precision);
  EXPECT_EQ(got.recall, want.recall);
  EXPECT_EQ(got.density, want.density);
  EXPECT_EQ(got.coverage, want.coverage);
}

TEST(Prdc, AgreesExactlyWithBruteForce) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(21);
  for (int trial = 0; trial < 25; ++trial) {
    const int64_t n = 6 + trial % 45;
    const int64_t m = 50 - trial % 40;
    const int k = 1 + trial % 5;
    auto real = at::randn({n, 4}, gen, torch::kDouble);
    auto fake = at::randn({m, 4}, gen, torch::kDouble) * 0.8 + 0.4;
    expect_matches_oracle(real, fake, k);
  }
}

TEST(Prdc, IdenticalSetsHaveFullPrecisionAndRecall) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(22);
  auto real = at::randn({10, 3}, gen, torch::kDouble);
  auto s = prdc(real, real, 3);
  EXPECT_DOUBLE_EQ(s.precision, 1.0);
  EXPECT_DOUBLE_EQ(s.recall, 1.0);
  expect_matches_oracle(real, real, 3);
}

TEST(Prdc, FarFakesHaveZeroPrecisionAndCoverage) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(23);
  auto real = at::randn({10, 3}, gen, torch::kDouble);
  auto fake = at::randn({10, 3}, gen, torch::kDouble) + 1000.0;
  auto s = prdc(real, fake, 3);
  EXPECT_DOUBLE_EQ(s.precision, 0.0);
  EXPECT_DOUBLE_EQ(s.coverage, 0.0);
  EXPECT_DOUBLE_EQ(s.density, 0.0);
  expect_matches_oracle(real, fake, 3);
}

TEST(Prdc, RatesStayInUnitInterval) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(24);
  for (int trial = 0; trial < 20; ++trial) {
    auto s = prdc(at::randn({20, 5}, gen, torch::kDouble), at::rand({15, 5}, gen, torch::kDouble) * 3, 3);
    for (double v : {s.precision, s.recall, s.coverage}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    EXPECT_GE(s.density, 0.0);
  }
}

TEST(Prdc, UndersizedClassesAreSkipped) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(25);
  std::vector<torch::Tensor> real{at::randn({8, 3}, gen, torch::kDouble), at::randn({3, 3}, gen, torch::kDouble)};
  std::vector<torch::Tensor> fake{at::randn({8, 3}, gen, torch::kDouble), at::randn({8, 3}, gen, torch::kDouble)};
  auto report = prdc_by_class(real, fake, 3);
  ASSERT_EQ(report.classes.size(), 2u);
  EXPECT_TRUE(report.classes[0].scores.has_value());
  EXPECT_FALSE(report.classes[1].scores.has_value());
  EXPECT_EQ(report.warnings.size(), 1u);
  ASSERT_TRUE(report.mean.has_value());
  EXPECT_EQ(report.mean->precision, report.classes[0].scores->precision);
}

TEST(Prdc, AutomaticNeighbourCount) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(26);
  std::vector<torch::Tensor> big{at::randn({8, 3}, gen, torch::kDouble), at::randn({7, 3}, gen, torch::kDouble)};
  EXPECT_EQ(prdc_by_class(big, big, 0).k, 5);
  std::vector<torch::Tensor> small{at::randn({8, 3}, gen, torch::kDouble), at::randn({5, 3}, gen, torch::kDouble)};
  EXPECT_EQ(prdc_by_class(small, small, 0).k, 3);
  EXPECT_EQ(prdc_by_class(big, big, 2).k, 2);
}

TEST(Prdc, MeanOverClasses) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(27);
  std::vector<torch::Tensor> real{at::randn({9, 2}, gen, torch::kDouble), at::randn({9, 2}, gen, torch::kDouble)};
  std::vector<torch::Tensor> fake{real[0].clone(), at::randn({9, 2}, gen, torch::kDouble) + 500.0};
  auto report = prdc_by_class(real, fake, 3);
  ASSERT_TRUE(report.mean.has_value());
  EXPECT_DOUBLE_EQ(report.mean->precision, 0.5);
}

TEST(Summary, InfiniteValuesAreCountedSeparately) {
  auto s = summarize({1.0, 3.0, kPsnrIdentical});
  EXPECT_EQ(s.count, 3);
  EXPECT_EQ(s.infinite, 1);
  EXPECT_DOUBLE_EQ(s.mean, 2.0);
  EXPECT_DOUBLE_EQ(s.stddev, std::sqrt(2.0));
  EXPECT_DOUBLE_EQ(s.min, 1.0);
  EXPECT_DOUBLE_EQ(s.max, 3.0);
}

TEST(Report, JsonCarriesContractFields) {
  MetricsReport r;
  r.images = 2;
  r.classes = 1;
  r.acc1 = 0.5;
  r.acc5 = 1.0;
  r.fid = 1.25;
  r.psnr = {kPsnrIdentical, 20.0};
  r.ssim = {1.0, 0.5};
  auto j = r.to_json();
  EXPECT_DOUBLE_EQ(j.at("acc1").get<double>(), 0.5);
  EXPECT_DOUBLE_EQ(j.at("fid").get<double>(), 1.25);
  EXPECT_TRUE(j.at("knn_dist").is_null());
  EXPECT_NE(j.dump().find("inf"), std::string::npos);
  EXPECT_FALSE(r.to_table().empty());
}

}  // namespace
}  // namespace invdiff
