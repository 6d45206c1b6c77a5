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
// Command-line driver for the attack pipeline. Each subcommand runs one
// stage against a workspace directory (--out); stages read what earlier
// stages wrote there.

#include <c10/util/Logging.h>

#include <CLI11.hpp>
#include <iostream>
#include <optional>
#include <sstream>

#include "invdiff/config.hpp"
#include "invdiff/errors.hpp"
#include "invdiff/pipeline.hpp"
#include "invdiff/synthetic.hpp"

namespace {

using namespace invdiff;

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  bool verbose = false;
};

struct AttackOverrides {
  std::optional<int> iterations, k, pgd_iterations, t_high, t_low, images_per_class;
  std::optional<double> scale, alpha, pgd_step, pgd_epsilon;
  std::optional<std::string> loss;
  bool no_pgd = false;
  bool pretrained = false;
  std::string dir = "attack";
};

ExperimentConfig load(const GlobalOptions& g) {
  if (g.config.empty()) fail(ErrorCategory::kConfig, "--config is required for this command");
  auto config = load_config(g.config);
  if (g.seed) config.seed = *g.seed;
  return config;
}

void apply(const AttackOverrides& o, ExperimentConfig& config) {
  auto& a = config.attack;
  if (o.iterations) a.iterations = *o.iterations;
  if (o.scale) a.guidance_scale = *o.scale;
  if (o.loss) a.loss.family = parse_loss_family(*o.loss);
  if (o.k) a.loss.k = *o.k;
  if (o.alpha) a.loss.alpha = *o.alpha;
  if (o.pgd_step) a.pgd.step_size = *o.pgd_step;
  if (o.pgd_epsilon) a.pgd.epsilon = *o.pgd_epsilon;
  if (o.pgd_iterations) a.pgd.iterations = *o.pgd_iterations;
  if (o.t_high) a.t_high = *o.t_high;
  if (o.t_low) a.t_low = *o.t_low;
  if (o.images_per_class) a.images_per_class = *o.images_per_class;
  if (o.no_pgd) a.use_pgd = false;
  validate(config);
}

int run(int argc, char** argv) {
  CLI::App app{"Diffusion-prior model inversion: train, attack and evaluate"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--config", g.config, "Experiment configuration (JSON)");
  app.add_option("--seed", g.seed, "Override the configured seed");
  app.add_option("--out", g.out, "Workspace directory")->capture_default_str();
  app.add_flag("-v,--verbose", g.verbose, "Log progress");

  auto* split = app.add_subcommand("split", "Split the corpus into private and public sides");

  auto* train = app.add_subcommand("train-classifier", "Train the target and/or evaluation classifier");
  std::string role = "both";
  std::string report_path;
  train->add_option("--role", role, "target, evaluation or both")
      ->check(CLI::IsMember({"target", "evaluation", "both"}))
      ->capture_default_str();
  train->add_option("--report", report_path, "Write test accuracies as JSON to this file");

  auto* select = app.add_subcommand("select", "Pseudo-label public images with top-n selection");
  std::optional<int> top_n;
  select->add_option("--top-n", top_n, "Images per class");

  auto* pretrain = app.add_subcommand("pretrain", "Pretrain the conditional denoiser");
  std::optional<int> pretrain_iterations;
  pretrain->add_option("--iterations", pretrain_iterations, "Training iterations");

  auto* finetune = app.add_subcommand("finetune", "Fine-tune the denoiser against the target classifier");
  std::optional<int> finetune_epochs;
  finetune->add_option("--epochs", finetune_epochs, "Epochs for the fixed-epoch scheme");

  auto* attack = app.add_subcommand("attack", "Reconstruct class images");
  AttackOverrides o;
  attack->add_option("--iterations", o.iterations, "Reconstruction iterations N");
  attack->add_option("--scale", o.scale, "Guidance scale s");
  attack->add_option("--loss", o.loss, "ce, poincare, max-margin, top-k or combined");
  attack->add_option("--k", o.k, "Top-k width");
  attack->add_option("--alpha", o.alpha, "Feature regularization weight");
  attack->add_option("--pgd-step", o.pgd_step, "PGD step size");
  attack->add_option("--pgd-epsilon", o.pgd_epsilon, "PGD l2 radius");
  attack->add_option("--pgd-iterations", o.pgd_iterations, "PGD iterations");
  attack->add_option("--t-high", o.t_high, "First timestep of the schedule");
  attack->add_option("--t-low", o.t_low, "Last timestep of the schedule");
  attack->add_option("--images-per-class", o.images_per_class, "Reconstructions per class");
  attack->add_flag("--no-pgd", o.no_pgd, "Skip PGD refinement");
  attack->add_flag("--pretrained", o.pretrained, "Use the pretrained instead of the fine-tuned denoiser");
  attack->add_option("--dir", o.dir, "Output directory name inside the workspace")->capture_default_str();

  auto* evaluate = app.add_subcommand("evaluate", "Score reconstructions against the private images");
  std::string eval_dir = "attack";
  evaluate->add_option("--dir", eval_dir, "Reconstruction directory name inside the workspace")
      ->capture_default_str();

  auto* corpus = app.add_subcommand("make-corpus", "Write a synthetic labeled image corpus");
  SyntheticCorpusSpec spec;
  std::string corpus_root;
  corpus->add_option("root", corpus_root, "Output directory")->required();
  corpus->add_option("--identities", spec.identities)->capture_default_str();
  corpus->add_option("--images", spec.images_per_identity, "Images per identity")->capture_default_str();
  corpus->add_option("--width", spec.width)->capture_default_str();
  corpus->add_option("--height", spec.height)->capture_default_str();
  corpus->add_option("--corpus-seed", spec.seed)->capture_default_str();

  auto* losses = app.add_subcommand("compare-losses", "Fine-tuning loss trends per loss family (CSV)");
  std::vector<std::string> families{"poincare", "max-margin", "combined"};
  losses->add_option("--families", families)->capture_default_str();

  auto* samplers = app.add_subcommand("compare-samplers", "Attack output vs plain guided sampling (JSON)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : exit_code(ErrorCategory::kConfig);
  }

  if (g.verbose) FLAGS_caffe2_log_level = 0;
  configure_determinism();
  const Workspace ws{g.out};

  if (corpus->parsed()) {
    write_synthetic_corpus(corpus_root, spec);
    std::cout << "wrote " << spec.identities * spec.images_per_identity << " images to " << corpus_root << '\n';
    return 0;
  }
  auto config = load(g);
  if (split->parsed()) {
    auto s = run_split(config, ws);
    std::cout << "private " << s.private_images.size() << ", public " << s.public_images.size() << ", manifest "
              << ws.manifest().string() << '\n';
  } else if (train->parsed()) {
    nlohmann::json report = nlohmann::json::object();
    for (const std::string r : {"target", "evaluation"}) {
      if (role == r || role == "both") {
        auto rep = run_train_classifier(config, ws, r);
        report[r] = {{"architecture", rep["architecture"]},
                     {"test_accuracy", rep["test_accuracy"]},
                     {"train_accuracy", rep["train_accuracy"]},
                     {"warnings", rep["warnings"]}};
      }
    }
    if (!report_path.empty()) write_json(report_path, report);
    std::cout << report.dump(2) << '\n';
  } else if (select->parsed()) {
    if (top_n) config.select.top_n = *top_n;
    auto s = run_select(config, ws);
    std::cout << "top-" << s.top_n << " selection for " << s.num_classes << " classes written to "
              << ws.selection().string() << '\n';
  } else if (pretrain->parsed()) {
    if (pretrain_iterations) config.pretrain.iterations = *pretrain_iterations;
    validate(config);
    auto r = run_pretrain(config, ws);
    std::cout << "validation loss " << r.validation_losses.front() << " -> " << r.validation_losses.back() << '\n';
  } else if (finetune->parsed()) {
    if (finetune_epochs) config.finetune.epochs = *finetune_epochs;
    validate(config);
    auto r = run_finetune(config, ws);
    std::ostringstream layers;
    for (const auto& l : r.selected) layers << ' ' << l;
    std::cout << "fine-tuned" << layers.str() << " for " << r.epochs_run << " epochs\n";
  } else if (attack->parsed()) {
    apply(o, config);
    auto r = run_attack(config, ws, !o.pretrained, o.dir);
    std::cout << r.images.size(0) << " reconstructions written to " << ws.attack_dir(o.dir).string() << '\n';
  } else if (evaluate->parsed()) {
    auto report = run_evaluate(config, ws, eval_dir);
    std::cout << report.to_table();
  } else if (losses->parsed()) {
    std::vector<LossFamily> parsed;
    for (const auto& f : families) parsed.push_back(parse_loss_family(f));
    const auto csv = ws.root / "compare" / "loss_trends.csv";
    run_compare_losses(config, ws, csv, parsed);
    std::cout << "loss trends written to " << csv.string() << '\n';
  } else if (samplers->parsed()) {
    auto result = run_compare_samplers(config, ws);
    write_json(ws.root / "compare" / "samplers.json", result.to_json());
    std::cout << result.to_json().dump(2) << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const invdiff::Error& e) {
    std::cerr << "error [" << invdiff::category_name(e.category()) << "]: " << e.what() << '\n';
    return invdiff::exit_code(e.category());
  } catch (const c10::Error& e) {
    std::cerr << "error [tensor]: " << e.what_without_backtrace() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error [internal]: " << e.what() << '\n';
    return 1;
  }
}
