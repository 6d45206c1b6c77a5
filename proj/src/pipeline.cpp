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
#include "invdiff/pipeline.hpp"

#include <c10/util/Logging.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

#include "invdiff/errors.hpp"
#include "invdiff/image.hpp"
#include "invdiff/random.hpp"

namespace invdiff {

namespace fs = std::filesystem;

void configure_determinism() {
  torch::set_num_threads(1);
  at::globalContext().setDeterministicAlgorithms(true, /*warn_only=*/false);
}

std::uint64_t stage_seed(const ExperimentConfig& config, Stage stage) {
  return derive_seed(config.seed, static_cast<std::uint64_t>(stage));
}

void write_json(const fs::path& path, const nlohmann::json& value) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << value.dump(2) << '\n';
  if (!out) fail(ErrorCategory::kPersistence, "cannot write " + path.string());
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCategory::kPersistence, "cannot read " + path.string() + "; run the producing stage first");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::kPersistence, "malformed JSON in " + path.string() + ": " + e.what());
  }
}

namespace {

void require_file(const fs::path& path, const std::string& stage) {
  if (!fs::exists(path)) fail(ErrorCategory::kPersistence, path.string() + " is missing; run '" + stage + "' first");
}

std::ofstream open_csv(const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) fail(ErrorCategory::kPersistence, "cannot write " + path.string());
  return out;
}

torch::Tensor private_images_of(const DatasetSplit& split, int image_size) {
  return load_images(split.private_images, image_size);
}

ClassifierHandle load_role(const ExperimentConfig& config, const Workspace& ws, const std::string& role) {
  require_file(ws.classifier(role), "train-classifier");
  auto model = ClassifierHandle::load(ws.classifier(role), config.image_size);
  if (model.num_classes() != config.num_classes) {
    fail(ErrorCategory::kPersistence, ws.classifier(role).string() + " was trained for a different class count");
  }
  model.freeze();
  return model;
}

DenoiserShape denoiser_shape(const ExperimentConfig& config) {
  DenoiserShape shape;
  shape.image_size = config.image_size;
  shape.num_classes = config.num_classes;
  shape.base_channels = config.denoiser.base_channels;
  shape.channel_mult = config.denoiser.channel_mult;
  shape.res_blocks = config.denoiser.res_blocks;
  shape.groups = config.denoiser.groups;
  return shape;
}

std::string index_name(std::size_t i) {
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "%04zu.png", i);
  return buffer;
}

double mean_cls(const ClassifierHandle& target, const CentroidTable* centroids, const torch::Tensor& images,
                const torch::Tensor& labels, const LossConfig& loss) {
  torch::NoGradGuard no_grad;
  auto [features, logits] = target.forward(images);
  return classification_loss(logits, features, labels, centroids, loss).mean().item<double>();
}

}  // namespace

DatasetSplit run_split(const ExperimentConfig& config, const Workspace& ws) {
  auto corpus = scan_corpus(config.data.corpus);
  auto split = split_dataset(corpus, config.data.private_classes, config);
  verify_split(split);
  write_json(ws.manifest(), split.manifest());
  LOG(INFO) << "split: " << split.private_images.size() << " private, " << split.public_images.size() << " public";
  return split;
}

DatasetSplit load_split(const Workspace& ws) {
  require_file(ws.manifest(), "split");
  auto split = DatasetSplit::from_manifest(read_json(ws.manifest()));
  verify_split(split);
  return split;
}

nlohmann::json run_train_classifier(const ExperimentConfig& config, const Workspace& ws, const std::string& role) {
  if (role != "target" && role != "evaluation") fail(ErrorCategory::kConfig, "unknown classifier role " + role);
  auto split = load_split(ws);
  if (split.num_classes() != config.num_classes) {
    fail(ErrorCategory::kConfig, "the split has " + std::to_string(split.num_classes()) + " classes, config says " +
                                     std::to_string(config.num_classes));
  }
  const auto train = split.private_subset(Subset::kTrain);
  const auto test = split.private_subset(Subset::kTest);
  const auto& recipe = role == "target" ? config.classifier.target : config.classifier.evaluation;
  auto trained = train_classifier(load_images(train, config.image_size), labels_of(train),
                                  load_images(test, config.image_size), labels_of(test), recipe, config.num_classes,
                                  config.classifier.input_transform,
                                  stage_seed(config, role == "target" ? Stage::kTarget : Stage::kEvaluation));
  fs::create_directories(ws.classifier(role).parent_path());
  trained.model.save(ws.classifier(role), trained.test_accuracy);
  nlohmann::json report = {{"role", role},
                           {"architecture", recipe.architecture},
                           {"num_classes", config.num_classes},
                           {"train_images", train.size()},
                           {"test_images", test.size()},
                           {"train_accuracy", trained.train_accuracy},
                           {"test_accuracy", trained.test_accuracy},
                           {"epoch_losses", trained.epoch_losses},
                           {"warnings", trained.warnings}};
  write_json(ws.classifier_report(role), report);
  LOG(INFO) << role << " classifier test accuracy " << trained.test_accuracy;
  return report;
}

PseudoLabeledDataset run_select(const ExperimentConfig& config, const Workspace& ws) {
  auto split = load_split(ws);
  auto target = load_role(config, ws, "target");
  auto images = load_images(split.public_images, config.image_size);
  const int n = config.select.top_n.value_or(default_top_n(images.size(0)));
  auto selection = select_top_n(target, images, n);
  nlohmann::json classes = nlohmann::json::array();
  for (int c = 0; c < selection.num_classes; ++c) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : selection.by_class[static_cast<std::size_t>(c)]) {
      const auto& record = split.public_images[static_cast<std::size_t>(e.image)];
      entries.push_back({{"public_index", e.image},
                         {"file", record.path.string()},
                         {"digest", record.digest},
                         {"score", e.score}});
    }
    classes.push_back({{"class", to_external_label(c)}, {"entries", entries}});
  }
  write_json(ws.selection(), {{"top_n", selection.top_n},
                              {"num_classes", selection.num_classes},
                              {"classes", classes},
                              {"warnings", selection.warnings}});
  return selection;
}

PseudoLabeledDataset load_selection(const Workspace& ws, int num_classes) {
  require_file(ws.selection(), "select");
  auto j = read_json(ws.selection());
  PseudoLabeledDataset out;
  try {
    out.num_classes = j.at("num_classes").get<int>();
    out.top_n = j.at("top_n").get<int>();
    out.warnings = j.at("warnings").get<std::vector<std::string>>();
    out.by_class.resize(static_cast<std::size_t>(out.num_classes));
    for (const auto& cls : j.at("classes")) {
      const int c = to_internal_label(cls.at("class").get<int>());
      if (c < 0 || c >= out.num_classes) fail(ErrorCategory::kPersistence, "selection lists an unknown class");
      for (const auto& e : cls.at("entries")) {
        out.by_class[static_cast<std::size_t>(c)].push_back(
            {e.at("public_index").get<int64_t>(), c, e.at("score").get<double>()});
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::kPersistence, std::string("malformed selection: ") + e.what());
  }
  if (out.num_classes != num_classes) fail(ErrorCategory::kPersistence, "selection class count differs from config");
  return out;
}

PseudoLabeledImages selected_images(const ExperimentConfig& config, const Workspace& ws,
                                    const PseudoLabeledDataset& selection) {
  auto split = load_split(ws);
  auto indices = selection.image_indices();
  std::vector<ImageRecord> records;
  for (int64_t i = 0; i < indices.size(0); ++i) {
    const auto idx = static_cast<std::size_t>(indices[i].item<int64_t>());
    if (idx >= split.public_images.size()) fail(ErrorCategory::kPersistence, "selection index outside public set");
    records.push_back(split.public_images[idx]);
  }
  return {load_images(records, config.image_size), selection.labels()};
}

PretrainResult run_pretrain(const ExperimentConfig& config, const Workspace& ws) {
  auto selection = load_selection(ws, config.num_classes);
  auto data = selected_images(config, ws, selection);
  const auto seed = stage_seed(config, Stage::kPretrain);
  torch::manual_seed(seed);
  ConditionalDenoiser model(denoiser_shape(config));
  auto schedule = NoiseSchedule::make(config.schedule.timesteps, config.schedule.kind, config.schedule.beta_start,
                                      config.schedule.beta_end);
  auto result = pretrain(model, schedule, data.images, data.labels, config.pretrain, derive_seed(seed, 1));
  auto sampling = clone_denoiser(model);
  {
    torch::NoGradGuard no_grad;
    auto params = sampling->named_parameters();
    for (const auto& [name, value] : result.ema) params[name].copy_(value);
  }
  fs::create_directories(ws.pretrained().parent_path());
  save_denoiser(ws.pretrained(), sampling, model, schedule,
                {{"stage", "pretrain"},
                 {"iterations", config.pretrain.iterations},
                 {"final_validation_loss", result.validation_losses.back()}});
  auto log = open_csv(ws.pretrained().parent_path() / "loss.csv");
  log << "iteration,loss\n";
  for (std::size_t i = 0; i < result.losses.size(); ++i) log << i + 1 << ',' << result.losses[i] << '\n';
  auto val = open_csv(ws.pretrained().parent_path() / "validation.csv");
  val << "checkpoint,loss\n";
  for (std::size_t i = 0; i < result.validation_losses.size(); ++i) {
    val << i << ',' << result.validation_losses[i] << '\n';
  }
  return result;
}

std::vector<int> internal_targets(const std::vector<int>& external, int num_classes) {
  std::vector<int> out;
  if (external.empty()) {
    for (int c = 0; c < num_classes; ++c) out.push_back(c);
    return out;
  }
  for (int e : external) {
    const int c = to_internal_label(e);
    if (c < 0 || c >= num_classes) fail(ErrorCategory::kConfig, "target class " + std::to_string(e) + " outside 1..C");
    out.push_back(c);
  }
  return out;
}

CentroidTable target_centroids(const ExperimentConfig& config, const Workspace& ws, const ClassifierHandle& target) {
  auto selection = load_selection(ws, config.num_classes);
  auto split = load_split(ws);
  return estimate_centroids(target, load_images(split.public_images, config.image_size), selection);
}

FinetuneResult run_finetune(const ExperimentConfig& config, const Workspace& ws) {
  require_file(ws.pretrained(), "pretrain");
  auto ckpt = load_denoiser(ws.pretrained(), config.image_size);
  auto target = load_role(config, ws, "target");
  auto centroids = target_centroids(config, ws, target);
  auto model = ckpt.sampling;
  auto result = finetune(model, ckpt.schedule, target, &centroids,
                         internal_targets(config.finetune.target_classes, config.num_classes), config.finetune,
                         stage_seed(config, Stage::kFinetune));
  fs::create_directories(ws.finetuned().parent_path());
  save_denoiser(ws.finetuned(), model, model, ckpt.schedule,
                {{"stage", "finetune"}, {"selected", result.selected}, {"epochs", result.epochs_run}});
  auto report = result.probe.to_json();
  report["selected"] = result.selected;
  report["epochs_run"] = result.epochs_run;
  report["epoch_accuracies"] = result.epoch_accuracies;
  report["threshold_reached"] = result.threshold_reached;
  report["warnings"] = result.warnings;
  write_json(ws.change_rates(), report);
  auto log = open_csv(ws.finetuned().parent_path() / "batches.csv");
  log << "batch,loss,accuracy\n";
  for (std::size_t i = 0; i < result.batch_losses.size(); ++i) {
    log << i + 1 << ',' << result.batch_losses[i] << ',' << result.batch_accuracies[i] << '\n';
  }
  return result;
}

AttackRun run_attack(const ExperimentConfig& config, const Workspace& ws, bool use_finetuned,
                     const std::string& dir_name) {
  const auto path = use_finetuned ? ws.finetuned() : ws.pretrained();
  require_file(path, use_finetuned ? "finetune" : "pretrain");
  auto ckpt = load_denoiser(path, config.image_size);
  auto target = load_role(config, ws, "target");
  std::optional<CentroidTable> centroids;
  if (config.attack.loss.family == LossFamily::kCombined) centroids = target_centroids(config, ws, target);
  const auto dir = ws.attack_dir(dir_name);
  fs::remove_all(dir);
  fs::create_directories(dir);

  AttackRun run;
  std::vector<torch::Tensor> images, labels;
  auto trace = open_csv(dir / "trace.csv");
  trace << "class,iteration,t,prior,cls,total\n";
  nlohmann::json summary = nlohmann::json::array();
  const auto base_seed = stage_seed(config, Stage::kAttack);
  for (int c : internal_targets(config.attack.target_classes, config.num_classes)) {
    auto result = iir_attack(ckpt.sampling, ckpt.schedule, target, centroids ? &*centroids : nullptr, c,
                             config.attack, derive_seed(base_seed, static_cast<std::uint64_t>(c)));
    const auto class_dir = dir / std::to_string(to_external_label(c));
    fs::create_directories(class_dir);
    for (int64_t i = 0; i < result.final.size(0); ++i) {
      write_png(class_dir / index_name(static_cast<std::size_t>(i)), result.final[i]);
    }
    for (std::size_t i = 0; i < result.iir.total_trace.size(); ++i) {
      trace << to_external_label(c) << ',' << i + 1 << ',' << result.times.steps[i] << ','
            << result.iir.prior_trace[i] << ',' << result.iir.cls_trace[i] << ',' << result.iir.total_trace[i]
            << '\n';
    }
    std::vector<int> predicted;
    for (int64_t i = 0; i < result.predicted.size(0); ++i) {
      predicted.push_back(to_external_label(static_cast<int>(result.predicted[i].item<int64_t>())));
    }
    summary.push_back({{"class", to_external_label(c)},
                       {"seed", result.seed},
                       {"timesteps", result.times.steps},
                       {"target_predictions", predicted},
                       {"pgd_norms", result.pgd_norms}});
    images.push_back(result.final);
    labels.push_back(torch::full({result.final.size(0)}, c, torch::kInt64));
    run.classes.push_back(std::move(result));
  }
  write_json(dir / "summary.json", {{"denoiser", use_finetuned ? "finetune" : "pretrain"}, {"classes", summary}});
  run.images = torch::cat(images);
  run.labels = torch::cat(labels);
  return run;
}

Reconstructions read_reconstructions(const fs::path& dir, int image_size, int num_classes) {
  if (!fs::is_directory(dir)) fail(ErrorCategory::kPersistence, dir.string() + " is missing; run 'attack' first");
  std::vector<std::pair<int, fs::path>> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_directory()) continue;
    int external = 0;
    try {
      external = std::stoi(entry.path().filename().string());
    } catch (const std::exception&) {
      fail(ErrorCategory::kIngestion, "unexpected directory " + entry.path().string());
    }
    const int c = to_internal_label(external);
    if (c < 0 || c >= num_classes) fail(ErrorCategory::kIngestion, "class directory outside 1..C: " + entry.path().string());
    for (const auto& image : fs::directory_iterator(entry.path())) {
      if (image.path().extension() == ".png") files.emplace_back(c, image.path());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) fail(ErrorCategory::kIngestion, "no reconstructions under " + dir.string());
  std::vector<torch::Tensor> images;
  std::vector<int64_t> labels;
  for (const auto& [c, path] : files) {
    images.push_back(preprocess(read_image(path), image_size));
    labels.push_back(c);
  }
  return {torch::stack(images), torch::tensor(labels, torch::kInt64)};
}

MetricsReport evaluate_reconstructions(const ClassifierHandle& evaluator, const torch::Tensor& recon,
                                       const torch::Tensor& recon_labels, const torch::Tensor& private_images,
                                       const torch::Tensor& private_labels, int prdc_k) {
  MetricsReport report;
  report.images = static_cast<int>(recon.size(0));
  auto accuracy = attack_accuracy(evaluator, recon, recon_labels);
  report.acc1 = accuracy.acc1;
  report.acc5 = accuracy.acc5;
  auto embed = classifier_embedder(evaluator);
  auto recon_features = embed(recon);
  auto private_features = embed(private_images);
  report.fid = fid(private_features, recon_features);
  report.knn_dist = knn_dist(recon_features, recon_labels, accuracy.hit, private_features, private_labels);
  if (!report.knn_dist) report.warnings.push_back("no reconstruction was recognized; KNN Dist is absent");
  for (int64_t i = 0; i < recon.size(0); ++i) {
    auto candidates = private_images.index({private_labels == recon_labels[i]});
    double best = -std::numeric_limits<double>::infinity();
    int64_t best_index = 0;
    for (int64_t j = 0; j < candidates.size(0); ++j) {
      const double value = psnr(recon[i], candidates[j]);
      if (value > best) {
        best = value;
        best_index = j;
      }
    }
    report.psnr.push_back(best);
    report.ssim.push_back(ssim(recon[i], candidates[best_index]));
  }
  std::set<int64_t> attacked;
  for (int64_t i = 0; i < recon_labels.size(0); ++i) attacked.insert(recon_labels[i].item<int64_t>());
  report.classes = static_cast<int>(attacked.size());
  std::vector<torch::Tensor> real, fake;
  for (auto c : attacked) {
    real.push_back(private_features.index({private_labels == c}));
    fake.push_back(recon_features.index({recon_labels == c}));
  }
  report.prdc = prdc_by_class(real, fake, prdc_k);
  std::size_t i = 0;
  for (auto c : attacked) report.prdc.classes[i++].label = static_cast<int>(c);
  report.warnings.insert(report.warnings.end(), report.prdc.warnings.begin(), report.prdc.warnings.end());
  return report;
}

MetricsReport run_evaluate(const ExperimentConfig& config, const Workspace& ws, const std::string& dir_name) {
  auto split = load_split(ws);
  auto evaluator = load_role(config, ws, "evaluation");
  auto recon = read_reconstructions(ws.attack_dir(dir_name), config.image_size, config.num_classes);
  auto report = evaluate_reconstructions(evaluator, recon.images, recon.labels,
                                         private_images_of(split, config.image_size), labels_of(split.private_images),
                                         config.evaluate.prdc_k);
  const auto dir = ws.evaluation_dir(dir_name);
  write_json(dir / "report.json", report.to_json());
  std::ofstream table(dir / "report.md");
  table << report.to_table();
  if (!table) fail(ErrorCategory::kPersistence, "cannot write " + (dir / "report.md").string());
  return report;
}

void run_compare_losses(const ExperimentConfig& config, const Workspace& ws, const fs::path& csv,
                        const std::vector<LossFamily>& families) {
  require_file(ws.pretrained(), "pretrain");
  auto ckpt = load_denoiser(ws.pretrained(), config.image_size);
  auto target = load_role(config, ws, "target");
  auto centroids = target_centroids(config, ws, target);
  fs::create_directories(csv.parent_path());
  write_loss_trends(csv, ckpt.sampling, ckpt.schedule, target, centroids,
                    internal_targets(config.finetune.target_classes, config.num_classes), config.finetune, families,
                    stage_seed(config, Stage::kCompare));
}

nlohmann::json SamplerComparison::to_json() const {
  return {{"iir", {{"acc1", iir_acc1}, {"fid", iir_fid}, {"cls", iir_cls}, {"denoised_cls", denoised_cls}}},
          {"sampler", {{"acc1", sampler_acc1}, {"fid", sampler_fid}, {"cls", sampler_cls}}}};
}

SamplerComparison run_compare_samplers(const ExperimentConfig& config, const Workspace& ws) {
  const auto path = fs::exists(ws.finetuned()) ? ws.finetuned() : ws.pretrained();
  require_file(path, "pretrain");
  auto ckpt = load_denoiser(path, config.image_size);
  auto target = load_role(config, ws, "target");
  auto evaluator = load_role(config, ws, "evaluation");
  auto centroids = target_centroids(config, ws, target);
  auto split = load_split(ws);
  auto attack = config.attack;
  attack.use_pgd = false;
  SamplerComparison out;
  std::vector<torch::Tensor> iir_images, plain_images, labels;
  const auto base_seed = stage_seed(config, Stage::kAttack);
  for (int c : internal_targets(attack.target_classes, config.num_classes)) {
    const auto seed = derive_seed(base_seed, static_cast<std::uint64_t>(c));
    auto result = iir_attack(ckpt.sampling, ckpt.schedule, target, &centroids, c, attack, seed);
    auto iir = result.final;
    auto plain = plain_samples(ckpt.sampling, ckpt.schedule, c, attack, config.finetune.sampler_steps, seed);
    auto y = torch::full({iir.size(0)}, c, torch::kInt64);
    out.iir_cls.push_back(mean_cls(target, &centroids, result.iir.images, y, attack.loss));
    out.denoised_cls.push_back(mean_cls(target, &centroids, iir, y, attack.loss));
    out.sampler_cls.push_back(mean_cls(target, &centroids, plain, y, attack.loss));
    iir_images.push_back(iir);
    plain_images.push_back(plain);
    labels.push_back(y);
  }
  auto y = torch::cat(labels);
  auto private_images = private_images_of(split, config.image_size);
  auto embed = classifier_embedder(evaluator);
  auto real = embed(private_images);
  auto iir = torch::cat(iir_images);
  auto plain = torch::cat(plain_images);
  out.iir_acc1 = attack_accuracy(evaluator, iir, y).acc1;
  out.sampler_acc1 = attack_accuracy(evaluator, plain, y).acc1;
  out.iir_fid = fid(real, embed(iir));
  out.sampler_fid = fid(real, embed(plain));
  return out;
}

}  // namespace invdiff
