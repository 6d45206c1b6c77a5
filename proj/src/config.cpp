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
#include "invdiff/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "invdiff/errors.hpp"

namespace invdiff {

using nlohmann::json;

namespace {

// Reads one JSON object, remembering which keys were consumed so that
// anything left over can be reported as unknown.
class Section {
 public:
  Section(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) {
      fail(ErrorCategory::kConfig, "section '" + path_ + "' must be an object");
    }
  }

  // Rejects any key that was never read.
  void finish() const {
    for (const auto& [key, value] : node_.items()) {
      if (!seen_.count(key)) {
        fail(ErrorCategory::kConfig, "unknown key '" + qualified(key) + "'");
      }
    }
  }

  bool has(const std::string& key) const { return node_.contains(key); }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!node_.contains(key)) return;
    try {
      out = node_.at(key).get<T>();
    } catch (const json::exception& e) {
      fail(ErrorCategory::kConfig, "bad value for '" + qualified(key) + "': " + e.what());
    }
  }

  template <typename T>
  void require(const std::string& key, T& out) {
    if (!node_.contains(key)) {
      fail(ErrorCategory::kConfig, "missing required key '" + qualified(key) + "'");
    }
    get(key, out);
  }

  // Runs body on the named sub-object when present; returns whether it was.
  template <typename Body>
  bool child(const std::string& key, Body&& body) {
    seen_.insert(key);
    if (!node_.contains(key)) return false;
    Section sub(node_.at(key), qualified(key));
    body(sub);
    sub.finish();
    return true;
  }

  std::string qualified(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  const json& node_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename Enum>
Enum parse_choice(const std::string& where, const std::string& value,
                  std::initializer_list<std::pair<const char*, Enum>> choices) {
  for (const auto& [name, e] : choices) {
    if (value == name) return e;
  }
  std::string allowed;
  for (const auto& [name, e] : choices) allowed += std::string(allowed.empty() ? "" : ", ") + name;
  fail(ErrorCategory::kConfig, "'" + where + "' must be one of {" + allowed + "}, got '" + value + "'");
}

void read_recipe(Section& s, ClassifierRecipe& r) {
  s.get("architecture", r.architecture);
  s.get("epochs", r.epochs);
  s.get("batch_size", r.batch_size);
  s.get("lr", r.lr);
  s.get("momentum", r.momentum);
  s.get("weight_decay", r.weight_decay);
  s.get("flip_probability", r.flip_probability);
}

// Returns true when "k" was present.
bool read_loss(Section& s, LossConfig& loss) {
  std::string family = loss_family_name(loss.family);
  s.get("family", family);
  loss.family = parse_loss_family(family);
  bool has_k = s.has("k");
  s.get("k", loss.k);
  s.get("alpha", loss.alpha);
  std::string agg = loss.aggregation == TopKAggregation::kMean ? "mean" : "sum";
  s.get("aggregation", agg);
  loss.aggregation = parse_choice<TopKAggregation>(
      s.qualified("aggregation"), agg,
      {{"mean", TopKAggregation::kMean}, {"sum", TopKAggregation::kSum}});
  return has_k;
}

void check(bool ok, const std::string& message) {
  if (!ok) fail(ErrorCategory::kConfig, message);
}

}  // namespace

LossFamily parse_loss_family(const std::string& name) {
  return parse_choice<LossFamily>("loss.family", name,
                                  {{"ce", LossFamily::kCrossEntropy},
                                   {"poincare", LossFamily::kPoincare},
                                   {"max-margin", LossFamily::kMaxMargin},
                                   {"top-k", LossFamily::kTopK},
                                   {"combined", LossFamily::kCombined}});
}

std::string loss_family_name(LossFamily family) {
  switch (family) {
    case LossFamily::kCrossEntropy: return "ce";
    case LossFamily::kPoincare: return "poincare";
    case LossFamily::kMaxMargin: return "max-margin";
    case LossFamily::kTopK: return "top-k";
    case LossFamily::kCombined: return "combined";
  }
  return "combined";
}

ExperimentConfig parse_config(const json& document, const std::filesystem::path& base_dir) {
  ExperimentConfig c;
  bool finetune_k = false;
  bool attack_k = false;
  {
    Section root(document, "");
    root.get("seed", c.seed);
    root.require("image_size", c.image_size);
    root.require("num_classes", c.num_classes);

    bool has_data = root.child("data", [&](Section& data) {
      std::string corpus;
      data.require("corpus", corpus);
      c.data.corpus = corpus;
      data.require("private_classes", c.data.private_classes);
    });
    if (!has_data) fail(ErrorCategory::kConfig, "missing required section 'data'");

    root.child("classifier", [&](Section& s) {
      s.child("target", [&](Section& t) { read_recipe(t, c.classifier.target); });
      s.child("evaluation", [&](Section& e) { read_recipe(e, c.classifier.evaluation); });
      std::string transform = "identity";
      s.get("input_transform", transform);
      c.classifier.input_transform = parse_choice<InputTransform>(
          "classifier.input_transform", transform,
          {{"identity", InputTransform::kIdentity}, {"unit", InputTransform::kUnitRange}});
      s.get("test_fraction", c.classifier.test_fraction);
    });

    root.child("select", [&](Section& s) {
      int n = 0;
      bool present = s.has("top_n");
      s.get("top_n", n);
      if (present) c.select.top_n = n;
    });

    root.child("schedule", [&](Section& s) {
      s.get("timesteps", c.schedule.timesteps);
      s.get("kind", c.schedule.kind);
      s.get("beta_start", c.schedule.beta_start);
      s.get("beta_end", c.schedule.beta_end);
    });

    root.child("denoiser", [&](Section& s) {
      s.get("base_channels", c.denoiser.base_channels);
      s.get("channel_mult", c.denoiser.channel_mult);
      s.get("res_blocks", c.denoiser.res_blocks);
      s.get("groups", c.denoiser.groups);
    });

    root.child("pretrain", [&](Section& s) {
      auto& p = c.pretrain;
      s.get("iterations", p.iterations);
      s.get("batch_size", p.batch_size);
      s.get("lr", p.lr);
      s.get("beta1", p.beta1);
      s.get("beta2", p.beta2);
      s.get("weight_decay", p.weight_decay);
      s.get("ema_rate", p.ema_rate);
      s.get("label_dropout", p.label_dropout);
      s.get("flip_probability", p.flip_probability);
      s.get("log_every", p.log_every);
    });

    root.child("finetune", [&](Section& s) {
      auto& f = c.finetune;
      s.get("layers_to_keep", f.layers_to_keep);
      s.get("probe_epochs", f.probe_epochs);
      std::string scheme = f.scheme == StoppingScheme::kFixedEpochs ? "epochs" : "accuracy";
      s.get("scheme", scheme);
      f.scheme = parse_choice<StoppingScheme>(
          "finetune.scheme", scheme,
          {{"epochs", StoppingScheme::kFixedEpochs}, {"accuracy", StoppingScheme::kAccuracyThreshold}});
      s.get("epochs", f.epochs);
      s.get("accuracy_threshold", f.accuracy_threshold);
      s.get("max_epochs", f.max_epochs);
      s.get("augmentations", f.augmentations);
      s.get("sampler_steps", f.sampler_steps);
      s.get("guidance_scale", f.guidance_scale);
      s.get("batch_size", f.batch_size);
      s.get("lr", f.lr);
      s.get("weight_decay", f.weight_decay);
      std::string mode = f.timestep_mode == TimestepMode::kMulti ? "multi" : "last";
      s.get("timestep_mode", mode);
      f.timestep_mode = parse_choice<TimestepMode>(
          "finetune.timestep_mode", mode, {{"multi", TimestepMode::kMulti}, {"last", TimestepMode::kLast}});
      s.get("target_classes", f.target_classes);
      s.child("loss", [&](Section& l) { finetune_k = read_loss(l, f.loss); });
    });

    root.child("attack", [&](Section& s) {
      auto& a = c.attack;
      s.get("iterations", a.iterations);
      s.get("guidance_scale", a.guidance_scale);
      s.get("lr", a.lr);
      s.get("beta1", a.beta1);
      s.get("beta2", a.beta2);
      s.get("t_high", a.t_high);
      s.get("t_low", a.t_low);
      s.get("perturbation", a.perturbation);
      std::string reduction = a.prior_reduction == PriorReduction::kSum ? "sum" : "mean";
      s.get("prior_reduction", reduction);
      a.prior_reduction = parse_choice<PriorReduction>(
          "attack.prior_reduction", reduction, {{"sum", PriorReduction::kSum}, {"mean", PriorReduction::kMean}});
      s.get("post_denoise", a.post_denoise);
      s.get("denoise_t", a.denoise_t);
      s.get("denoise_steps", a.denoise_steps);
      s.get("denoise_scale", a.denoise_scale);
      s.get("use_pgd", a.use_pgd);
      s.child("pgd", [&](Section& p) {
        p.get("step_size", a.pgd.step_size);
        p.get("epsilon", a.pgd.epsilon);
        p.get("iterations", a.pgd.iterations);
      });
      s.get("images_per_class", a.images_per_class);
      s.get("target_classes", a.target_classes);
      s.child("loss", [&](Section& l) { attack_k = read_loss(l, a.loss); });
    });

    root.child("evaluate", [&](Section& s) {
      s.get("prdc_k", c.evaluate.prdc_k);
    });
    root.finish();
  }

  // The default top-k width of 20 only fits large label sets; without an
  // explicit k it shrinks to C - 1.
  if (!finetune_k) c.finetune.loss.k = std::min(20, std::max(1, c.num_classes - 1));
  if (!attack_k) c.attack.loss.k = std::min(20, std::max(1, c.num_classes - 1));

  if (c.data.corpus.is_relative() && !base_dir.empty()) c.data.corpus = base_dir / c.data.corpus;
  validate(c);
  if (!std::filesystem::is_directory(c.data.corpus)) {
    fail(ErrorCategory::kConfig, "data.corpus does not exist: " + c.data.corpus.string());
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCategory::kConfig, "cannot open config " + path.string());
  json document;
  try {
    document = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    fail(ErrorCategory::kConfig, "malformed config " + path.string() + ": " + e.what());
  }
  return parse_config(document, path.parent_path());
}

void validate(const LossConfig& loss, int num_classes) {
  check(loss.k >= 1 && loss.k <= num_classes - 1,
        "loss.k must lie in [1, C-1] = [1, " + std::to_string(num_classes - 1) + "], got " +
            std::to_string(loss.k));
  check(loss.alpha >= 0.0, "loss.alpha must be >= 0");
}

void validate(const ExperimentConfig& c) {
  check(c.num_classes >= 2, "num_classes must be >= 2");
  check(c.image_size >= 8 && c.image_size % 2 == 0, "image_size must be even and >= 8");
  check(static_cast<int>(c.data.private_classes.size()) == c.num_classes,
        "data.private_classes must list exactly num_classes labels");
  std::set<std::string> unique(c.data.private_classes.begin(), c.data.private_classes.end());
  check(unique.size() == c.data.private_classes.size(), "data.private_classes has duplicates");
  check(c.classifier.test_fraction > 0.0 && c.classifier.test_fraction < 1.0,
        "classifier.test_fraction must lie in (0, 1)");
  for (const auto* r : {&c.classifier.target, &c.classifier.evaluation}) {
    check(r->epochs >= 0 && r->batch_size >= 1 && r->lr > 0.0, "classifier recipe out of range");
  }
  check(c.classifier.target.architecture != c.classifier.evaluation.architecture,
        "target and evaluation classifiers must use different architectures");
  if (c.select.top_n) check(*c.select.top_n >= 1, "select.top_n must be >= 1");
  check(c.schedule.timesteps >= 1, "schedule.timesteps must be >= 1");
  check(!c.denoiser.channel_mult.empty() && c.denoiser.base_channels >= 1 && c.denoiser.res_blocks >= 1,
        "denoiser shape out of range");
  check(c.image_size % (1 << (c.denoiser.channel_mult.size() - 1)) == 0,
        "image_size must be divisible by the U-Net downsampling factor");
  check(c.pretrain.iterations >= 0 && c.pretrain.batch_size >= 1, "pretrain sizes out of range");
  check(c.pretrain.ema_rate >= 0.0 && c.pretrain.ema_rate < 1.0, "pretrain.ema_rate must lie in [0, 1)");
  check(c.pretrain.label_dropout >= 0.0 && c.pretrain.label_dropout < 1.0,
        "pretrain.label_dropout must lie in [0, 1)");
  const auto& f = c.finetune;
  check(f.layers_to_keep >= 1 && f.layers_to_keep <= 13, "finetune.layers_to_keep must lie in [1, 13]");
  check(f.accuracy_threshold > 0.0 && f.accuracy_threshold <= 1.0,
        "finetune.accuracy_threshold must lie in (0, 1]");
  check(f.epochs >= 0 && f.probe_epochs >= 0 && f.max_epochs >= 1, "finetune epochs out of range");
  check(f.sampler_steps >= 1 && f.batch_size >= 1 && f.augmentations >= 1, "finetune sizes out of range");
  check(f.guidance_scale >= 0.0, "finetune.guidance_scale must be >= 0");
  validate(f.loss, c.num_classes);
  const auto& a = c.attack;
  check(a.iterations >= 0, "attack.iterations must be >= 0");
  check(a.t_low >= 1 && a.t_low <= a.t_high && a.t_high <= c.schedule.timesteps,
        "attack time range must satisfy 1 <= t_low <= t_high <= T");
  check(a.perturbation >= 0, "attack.perturbation must be >= 0");
  check(a.denoise_t >= 1 && a.denoise_t <= c.schedule.timesteps, "attack.denoise_t must lie in [1, T]");
  check(a.denoise_steps >= 1, "attack.denoise_steps must be >= 1");
  check(a.guidance_scale >= 0.0 && a.denoise_scale >= 0.0, "guidance scales must be >= 0");
  check(a.pgd.step_size > 0.0 && a.pgd.epsilon > 0.0 && a.pgd.iterations >= 0, "attack.pgd out of range");
  check(a.images_per_class >= 1, "attack.images_per_class must be >= 1");
  validate(a.loss, c.num_classes);
  for (const auto* classes : {&f.target_classes, &a.target_classes}) {
    for (int y : *classes) check(y >= 1 && y <= c.num_classes, "target class out of range 1..C");
  }
  check(c.evaluate.prdc_k >= 0, "evaluate.prdc_k must be >= 0");
}

json to_json(const ExperimentConfig& c) {
  auto loss = [](const LossConfig& l) {
    return json{{"family", loss_family_name(l.family)},
                {"k", l.k},
                {"alpha", l.alpha},
                {"aggregation", l.aggregation == TopKAggregation::kMean ? "mean" : "sum"}};
  };
  auto recipe = [](const ClassifierRecipe& r) {
    return json{{"architecture", r.architecture}, {"epochs", r.epochs},     {"batch_size", r.batch_size},
                {"lr", r.lr},                     {"momentum", r.momentum}, {"weight_decay", r.weight_decay},
                {"flip_probability", r.flip_probability}};
  };
  json j;
  j["seed"] = c.seed;
  j["image_size"] = c.image_size;
  j["num_classes"] = c.num_classes;
  j["data"] = {{"corpus", c.data.corpus.string()}, {"private_classes", c.data.private_classes}};
  j["classifier"] = {{"target", recipe(c.classifier.target)},
                     {"evaluation", recipe(c.classifier.evaluation)},
                     {"input_transform",
                      c.classifier.input_transform == InputTransform::kIdentity ? "identity" : "unit"},
                     {"test_fraction", c.classifier.test_fraction}};
  j["select"] = json::object();
  if (c.select.top_n) j["select"]["top_n"] = *c.select.top_n;
  j["schedule"] = {{"timesteps", c.schedule.timesteps},
                   {"kind", c.schedule.kind},
                   {"beta_start", c.schedule.beta_start},
                   {"beta_end", c.schedule.beta_end}};
  j["denoiser"] = {{"base_channels", c.denoiser.base_channels},
                   {"channel_mult", c.denoiser.channel_mult},
                   {"res_blocks", c.denoiser.res_blocks},
                   {"groups", c.denoiser.groups}};
  const auto& p = c.pretrain;
  j["pretrain"] = {{"iterations", p.iterations},     {"batch_size", p.batch_size},
                   {"lr", p.lr},                     {"beta1", p.beta1},
                   {"beta2", p.beta2},               {"weight_decay", p.weight_decay},
                   {"ema_rate", p.ema_rate},         {"label_dropout", p.label_dropout},
                   {"flip_probability", p.flip_probability}, {"log_every", p.log_every}};
  const auto& f = c.finetune;
  j["finetune"] = {{"layers_to_keep", f.layers_to_keep},
                   {"probe_epochs", f.probe_epochs},
                   {"scheme", f.scheme == StoppingScheme::kFixedEpochs ? "epochs" : "accuracy"},
                   {"epochs", f.epochs},
                   {"accuracy_threshold", f.accuracy_threshold},
                   {"max_epochs", f.max_epochs},
                   {"augmentations", f.augmentations},
                   {"sampler_steps", f.sampler_steps},
                   {"guidance_scale", f.guidance_scale},
                   {"batch_size", f.batch_size},
                   {"lr", f.lr},
                   {"weight_decay", f.weight_decay},
                   {"timestep_mode", f.timestep_mode == TimestepMode::kMulti ? "multi" : "last"},
                   {"target_classes", f.target_classes},
                   {"loss", loss(f.loss)}};
  const auto& a = c.attack;
  j["attack"] = {{"iterations", a.iterations},
                 {"guidance_scale", a.guidance_scale},
                 {"lr", a.lr},
                 {"beta1", a.beta1},
                 {"beta2", a.beta2},
                 {"t_high", a.t_high},
                 {"t_low", a.t_low},
                 {"perturbation", a.perturbation},
                 {"prior_reduction", a.prior_reduction == PriorReduction::kSum ? "sum" : "mean"},
                 {"post_denoise", a.post_denoise},
                 {"denoise_t", a.denoise_t},
                 {"denoise_steps", a.denoise_steps},
                 {"denoise_scale", a.denoise_scale},
                 {"use_pgd", a.use_pgd},
                 {"pgd", {{"step_size", a.pgd.step_size}, {"epsilon", a.pgd.epsilon}, {"iterations", a.pgd.iterations}}},
                 {"images_per_class", a.images_per_class},
                 {"target_classes", a.target_classes},
                 {"loss", loss(a.loss)}};
  j["evaluate"] = {{"prdc_k", c.evaluate.prdc_k}};
  return j;
}

}  // namespace invdiff
