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

#include <fstream>
#include <iterator>
#include <set>

#include "fixtures.hpp"
#include "invdiff/pipeline.hpp"
#include "tiny_experiment.hpp"

namespace invdiff {
namespace {

namespace fs = std::filesystem;
using testing_support::TempDir;
using testing_support::throws_category;

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = read_bytes(e.path());
  }
  return out;
}

// Runs every stage once on the tiny experiment; the tests inspect the
// workspace afterwards.
class PipelineRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    configure_determinism();
    dir_ = new TempDir("pipeline");
    testing_support::write_tiny_corpus(*dir_ / "corpus");
    config_ = new ExperimentConfig(parse_config(testing_support::tiny_experiment(*dir_ / "corpus")));
    ws_ = new Workspace{*dir_ / "run"};
    split_ = new DatasetSplit(run_split(*config_, *ws_));
    target_report_ = new nlohmann::json(run_train_classifier(*config_, *ws_, "target"));
    run_train_classifier(*config_, *ws_, "evaluation");
    selection_ = new PseudoLabeledDataset(run_select(*config_, *ws_));
    run_pretrain(*config_, *ws_);
    finetune_ = new FinetuneResult(run_finetune(*config_, *ws_));
    attack_ = new AttackRun(run_attack(*config_, *ws_));
    report_ = new MetricsReport(run_evaluate(*config_, *ws_));
  }

  static void TearDownTestSuite() {
    delete report_;
    delete attack_;
    delete finetune_;
    delete selection_;
    delete target_report_;
    delete split_;
    delete ws_;
    delete config_;
    delete dir_;
  }

  static inline TempDir* dir_ = nullptr;
  static inline ExperimentConfig* config_ = nullptr;
  static inline Workspace* ws_ = nullptr;
  static inline DatasetSplit* split_ = nullptr;
  static inline nlohmann::json* target_report_ = nullptr;
  static inline PseudoLabeledDataset* selection_ = nullptr;
  static inline FinetuneResult* finetune_ = nullptr;
  static inline AttackRun* attack_ = nullptr;
  static inline MetricsReport* report_ = nullptr;
};

TEST_F(PipelineRun, SplitSeparatesPrivateIdentities) {
  EXPECT_EQ(split_->private_images.size(), 30u);
  EXPECT_EQ(split_->public_images.size(), 20u);
  auto back = load_split(*ws_);
  EXPECT_EQ(back.manifest(), split_->manifest());
}

TEST_F(PipelineRun, ClassifiersAreSavedWithReports) {
  for (const std::string role : {"target", "evaluation"}) {
    EXPECT_TRUE(fs::exists(ws_->classifier(role))) << role;
    auto report = read_json(ws_->classifier_report(role));
    EXPECT_GE(report["test_accuracy"].get<double>(), 0.0);
    EXPECT_LE(report["test_accuracy"].get<double>(), 1.0);
  }
  EXPECT_EQ((*target_report_)["architecture"], "target-cnn");
  auto target = ClassifierHandle::load(ws_->classifier("target"), 8);
  EXPECT_EQ(target.num_classes(), 3);
}

TEST_F(PipelineRun, SelectionDrawsFromThePublicSide) {
  EXPECT_EQ(selection_->top_n, 4);
  EXPECT_EQ(selection_->entries().size(), 12u);
  for (const auto& e : selection_->entries()) {
    EXPECT_GE(e.image, 0);
    EXPECT_LT(e.image, 20);
  }
  auto loaded = load_selection(*ws_, 3);
  EXPECT_TRUE(torch::equal(loaded.image_indices(), selection_->image_indices()));
  auto images = selected_images(*config_, *ws_, loaded);
  EXPECT_EQ(images.images.sizes(), (std::vector<int64_t>{12, 3, 8, 8}));
  EXPECT_TRUE(torch::equal(images.labels, selection_->labels()));
}

TEST_F(PipelineRun, FinetuneKeepsConfiguredLayers) {
  // Three ranked middle-block layers plus the label embedding.
  EXPECT_EQ(finetune_->selected.size(), 4u);
  const auto ranked = finetune_->probe.ranked_layers();
  for (int i = 0; i < 3; ++i) EXPECT_EQ(finetune_->selected[static_cast<std::size_t>(i)], ranked[static_cast<std::size_t>(i)]);
  EXPECT_EQ(finetune_->epochs_run, 1);
  EXPECT_TRUE(fs::exists(ws_->finetuned()));
  EXPECT_TRUE(fs::exists(ws_->change_rates()));
}

TEST_F(PipelineRun, AttackWritesImagesThatReadBack) {
  EXPECT_EQ(attack_->images.sizes(), (std::vector<int64_t>{6, 3, 8, 8}));
  EXPECT_TRUE(torch::equal(attack_->labels, torch::tensor({0, 0, 1, 1, 2, 2}, torch::kInt64)));
  EXPECT_LE(attack_->images.abs().max().item<double>(), 1.0);
  auto back = read_reconstructions(ws_->attack_dir(), 8, 3);
  EXPECT_TRUE(torch::equal(back.labels, attack_->labels));
  // PNG storage quantizes to 8 bits.
  EXPECT_LE((back.images - attack_->images).abs().max().item<double>(), 1.0 / 127.5 + 1e-6);
  EXPECT_TRUE(fs::exists(ws_->attack_dir() / "summary.json"));
}

TEST_F(PipelineRun, EvaluationCoversEveryImage) {
  EXPECT_EQ(report_->images, 6);
  EXPECT_EQ(report_->classes, 3);
  EXPECT_EQ(report_->psnr.size(), 6u);
  EXPECT_EQ(report_->ssim.size(), 6u);
  EXPECT_GE(report_->acc1, 0.0);
  EXPECT_LE(report_->acc1, report_->acc5);
  EXPECT_TRUE(std::isfinite(report_->fid));
}

TEST_F(PipelineRun, AttackRerunIsByteIdentical) {
  run_attack(*config_, *ws_, true, "again");
  EXPECT_EQ(tree_bytes(ws_->attack_dir("again")), tree_bytes(ws_->attack_dir()));
}

TEST_F(PipelineRun, StagesFailCleanlyWithoutTheirInputs) {
  const Workspace empty{*dir_ / "empty"};
  EXPECT_TRUE(throws_category([&] { load_split(empty); }, ErrorCategory::kPersistence));
  EXPECT_TRUE(throws_category([&] { run_select(*config_, empty); }, ErrorCategory::kPersistence));
  EXPECT_TRUE(throws_category([&] { run_evaluate(*config_, empty); }, ErrorCategory::kPersistence));
  EXPECT_TRUE(throws_category([&] { read_reconstructions(empty.attack_dir(), 8, 3); }, ErrorCategory::kPersistence));
}

TEST(Pipeline, InternalTargets) {
  EXPECT_EQ(internal_targets({}, 3), (std::vector<int>{0, 1, 2}));
  EXPECT_EQ(internal_targets({3, 1}, 3), (std::vector<int>{2, 0}));
  EXPECT_TRUE(throws_category([] { internal_targets({4}, 3); }, ErrorCategory::kConfig));
  EXPECT_TRUE(throws_category([] { internal_targets({0}, 3); }, ErrorCategory::kConfig));
}

TEST(Pipeline, StageSeedsDifferAndFollowTheExperimentSeed) {
  ExperimentConfig a;
  a.seed = 1;
  ExperimentConfig b;
  b.seed = 2;
  std::set<std::uint64_t> seen;
  for (auto s : {Stage::kSplit, Stage::kTarget, Stage::kEvaluation, Stage::kPretrain, Stage::kFinetune,
                 Stage::kAttack, Stage::kCompare}) {
    seen.insert(stage_seed(a, s));
    EXPECT_NE(stage_seed(a, s), stage_seed(b, s));
  }
  EXPECT_EQ(seen.size(), 7u);
}

TEST(Pipeline, JsonFilesRoundTrip) {
  TempDir dir;
  nlohmann::json doc = {{"a", 1.5}, {"b", {1, 2}}};
  write_json(dir / "x" / "doc.json", doc);
  EXPECT_EQ(read_json(dir / "x" / "doc.json"), doc);
  EXPECT_TRUE(throws_category([&] { read_json(dir / "absent.json"); }, ErrorCategory::kPersistence));
}

}  // namespace
}  // namespace invdiff
