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
#include "invdiff/metrics.hpp"

#include <c10/util/Logging.h>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "invdiff/errors.hpp"

namespace invdiff {

namespace F = torch::nn::functional;

Embedder classifier_embedder(const ClassifierHandle& model) {
  return [model](const torch::Tensor& images) {
    torch::NoGradGuard no_grad;
    std::vector<torch::Tensor> parts;
    for (int64_t i = 0; i < images.size(0); i += 256) {
      parts.push_back(model.features(images.slice(0, i, std::min(images.size(0), i + 256))));
    }
    if (parts.empty()) return torch::zeros({0, model.feature_dim()});
    return torch::cat(parts);
  };
}

AttackAccuracy attack_accuracy(const torch::Tensor& logits, const torch::Tensor& labels) {
  if (logits.dim() != 2 || labels.dim() != 1 || logits.size(0) != labels.size(0)) {
    fail(ErrorCategory::kShape, "accuracy needs logits [N, C] and labels [N]");
  }
  AttackAccuracy out;
  const int64_t n = logits.size(0);
  if (n == 0) return out;
  const int64_t k = std::min<int64_t>(5, logits.size(1));
  auto order = std::get<1>(logits.detach().sort(/*stable=*/true, /*dim=*/1, /*descending=*/true));
  auto top1 = order.select(1, 0) == labels;
  auto top5 = (order.slice(1, 0, k) == labels.unsqueeze(1)).any(1);
  out.acc1 = top1.to(torch::kDouble).mean().item<double>();
  out.acc5 = top5.to(torch::kDouble).mean().item<double>();
  for (int64_t i = 0; i < n; ++i) out.hit.push_back(top1[i].item<bool>());
  return out;
}

AttackAccuracy attack_accuracy(const ClassifierHandle& evaluator, const torch::Tensor& images,
                               const torch::Tensor& labels) {
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> parts;
  for (int64_t i = 0; i < images.size(0); i += 256) {
    parts.push_back(evaluator.logits(images.slice(0, i, std::min(images.size(0), i + 256))));
  }
  auto logits = parts.empty() ? torch::zeros({0, evaluator.num_classes()}) : torch::cat(parts);
  return attack_accuracy(logits, labels);
}

namespace {

// Symmetric PSD square root; eigenvalues below -tol * max(1, |lambda|max)
// are reported.
torch::Tensor psd_sqrt(const torch::Tensor& m, const char* what, torch::Tensor* eigenvalues = nullptr) {
  auto sym = 0.5 * (m + m.transpose(0, 1));
  auto [values, vectors] = torch::linalg_eigh(sym, "L");
  const double largest = values.abs().max().item<double>();
  const double lowest = values.min().item<double>();
  if (lowest < -1e-8 * std::max(1.0, largest)) {
    std::ostringstream msg;
    msg << "fid: " << what << " has eigenvalue " << lowest << " (largest magnitude " << largest
        << "); the covariance square root is not PSD within tolerance";
    fail(ErrorCategory::kNumerical, msg.str());
  }
  values = values.clamp_min(0.0);
  if (eigenvalues) *eigenvalues = values;
  return vectors.matmul(torch::diag(values.sqrt())).matmul(vectors.transpose(0, 1));
}

std::pair<torch::Tensor, torch::Tensor> gaussian_fit(const torch::Tensor& x) {
  auto d = x.detach().to(torch::kDouble);
  auto mu = d.mean(0);
  auto centered = d - mu;
  return {mu, centered.transpose(0, 1).matmul(centered) / static_cast<double>(d.size(0) - 1)};
}

torch::Tensor pairwise(const torch::Tensor& a, const torch::Tensor& b) {
  return (a.unsqueeze(1) - b.unsqueeze(0)).pow(2).sum(2).sqrt();
}

}  // namespace

double fid(const torch::Tensor& real, const torch::Tensor& fake) {
  if (real.dim() != 2 || fake.dim() != 2 || real.size(1) != fake.size(1)) {
    fail(ErrorCategory::kShape, "fid needs feature matrices of equal width");
  }
  if (real.size(0) < 2 || fake.size(0) < 2) fail(ErrorCategory::kShape, "fid needs at least two samples per side");
  auto [mu_r, cov_r] = gaussian_fit(real);
  auto [mu_f, cov_f] = gaussian_fit(fake);
  auto root_r = psd_sqrt(cov_r, "real covariance");
  torch::Tensor product_eigs;
  psd_sqrt(root_r.matmul(cov_f).matmul(root_r), "covariance product", &product_eigs);
  const double mean_term = (mu_r - mu_f).pow(2).sum().item<double>();
  const double trace_term =
      (cov_r.trace() + cov_f.trace()).item<double>() - 2.0 * product_eigs.sqrt().sum().item<double>();
  return std::max(0.0, mean_term + trace_term);
}

std::optional<double> knn_dist(const torch::Tensor& recon_features, const torch::Tensor& recon_labels,
                               const std::vector<bool>& hit, const torch::Tensor& private_features,
                               const torch::Tensor& private_labels) {
  if (static_cast<int64_t>(hit.size()) != recon_features.size(0) || recon_labels.size(0) != recon_features.size(0)) {
    fail(ErrorCategory::kShape, "knn_dist needs one label and one hit flag per reconstruction");
  }
  auto priv = private_features.detach().to(torch::kDouble);
  double total = 0.0;
  int counted = 0;
  for (int64_t i = 0; i < recon_features.size(0); ++i) {
    if (!hit[static_cast<std::size_t>(i)]) continue;
    auto same = priv.index({private_labels == recon_labels[i]});
    if (same.size(0) == 0) {
      fail(ErrorCategory::kConfig, "no private images for attacked class " +
                                       std::to_string(recon_labels[i].item<int64_t>() + 1));
    }
    auto d = pairwise(recon_features[i].detach().to(torch::kDouble).unsqueeze(0), same);
    total += d.min().item<double>();
    ++counted;
  }
  if (counted == 0) {
    LOG(WARNING) << "knn_dist: no reconstruction was recognized; the metric is absent";
    return std::nullopt;
  }
  return total / counted;
}

double psnr(const torch::Tensor& a, const torch::Tensor& b, double data_range) {
  if (a.sizes() != b.sizes()) fail(ErrorCategory::kShape, "psnr needs images of equal geometry");
  const double mse = (a.to(torch::kDouble) - b.to(torch::kDouble)).pow(2).mean().item<double>();
  if (mse == 0.0) return kPsnrIdentical;
  return 10.0 * std::log10(data_range * data_range / mse);
}

double ssim(const torch::Tensor& a, const torch::Tensor& b, double data_range) {
  if (a.sizes() != b.sizes() || a.dim() != 3) fail(ErrorCategory::kShape, "ssim needs two [C, H, W] images");
  const int64_t channels = a.size(0);
  int64_t taps = std::min<int64_t>({11, a.size(1), a.size(2)});
  if (taps % 2 == 0) --taps;
  auto offsets = torch::arange(taps, torch::kDouble) - static_cast<double>(taps / 2);
  auto g = torch::exp(-offsets.pow(2) / (2.0 * 1.5 * 1.5));
  g = g / g.sum();
  auto window = torch::outer(g, g).expand({channels, 1, taps, taps}).contiguous();
  auto filter = [&](const torch::Tensor& x) {
    return F::conv2d(x.unsqueeze(0), window, F::Conv2dFuncOptions().groups(channels));
  };
  auto x = a.to(torch::kDouble);
  auto y = b.to(torch::kDouble);
  const double c1 = std::pow(0.01 * data_range, 2);
  const double c2 = std::pow(0.03 * data_range, 2);
  auto mu_x = filter(x);
  auto mu_y = filter(y);
  auto var_x = filter(x * x) - mu_x * mu_x;
  auto var_y = filter(y * y) - mu_y * mu_y;
  auto cov = filter(x * y) - mu_x * mu_y;
  auto map = ((2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)) / ((mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2));
  return map.mean().item<double>();
}

PrdcScores prdc(const torch::Tensor& real, const torch::Tensor& fake, int k) {
  if (real.dim() != 2 || fake.dim() != 2 || real.size(1) != fake.size(1)) {
    fail(ErrorCategory::kShape, "prdc needs feature matrices of equal width");
  }
  if (k < 1 || real.size(0) <= k || fake.size(0) <= k) {
    fail(ErrorCategory::kConfig, "prdc needs more than k samples on each side");
  }
  auto r = real.detach().to(torch::kDouble);
  auto f = fake.detach().to(torch::kDouble);
  // Column k of the sorted self-distances skips the zero self-distance.
  auto real_radius = std::get<0>(pairwise(r, r).sort(1)).select(1, k);
  auto fake_radius = std::get<0>(pairwise(f, f).sort(1)).select(1, k);
  auto d = pairwise(r, f);  // [N, M]
  auto inside_real = d < real_radius.unsqueeze(1);
  auto inside_fake = d < fake_radius.unsqueeze(0);
  PrdcScores s;
  s.precision = inside_real.any(0).to(torch::kDouble).mean().item<double>();
  s.recall = inside_fake.any(1).to(torch::kDouble).mean().item<double>();
  s.density = inside_real.to(torch::kDouble).sum().item<double>() / (static_cast<double>(k) * f.size(0));
  s.coverage = (std::get<0>(d.min(1)) < real_radius).to(torch::kDouble).mean().item<double>();
  return s;
}

PrdcReport prdc_by_class(const std::vector<torch::Tensor>& real, const std::vector<torch::Tensor>& fake, int k) {
  if (real.size() != fake.size()) fail(ErrorCategory::kShape, "prdc needs the same classes on both sides");
  PrdcReport report;
  if (k <= 0) {
    k = 5;
    for (std::size_t c = 0; c < real.size(); ++c) {
      if (real[c].size(0) <= 5 || fake[c].size(0) <= 5) k = 3;
    }
  }
  report.k = k;
  PrdcScores sum;
  int evaluated = 0;
  for (std::size_t c = 0; c < real.size(); ++c) {
    ClassPrdc entry;
    entry.label = static_cast<int>(c);
    if (real[c].size(0) <= k || fake[c].size(0) <= k) {
      report.warnings.push_back("prdc: class " + std::to_string(c + 1) + " has too few samples for k = " +
                                std::to_string(k) + " and is skipped");
      LOG(WARNING) << report.warnings.back();
    } else {
      entry.scores = prdc(real[c], fake[c], k);
      sum.precision += entry.scores->precision;
      sum.recall += entry.scores->recall;
      sum.density += entry.scores->density;
      sum.coverage += entry.scores->coverage;
      ++evaluated;
    }
    report.classes.push_back(entry);
  }
  if (evaluated > 0) {
    report.mean = PrdcScores{sum.precision / evaluated, sum.recall / evaluated, sum.density / evaluated,
                             sum.coverage / evaluated};
  }
  return report;
}

SummaryStats summarize(const std::vector<double>& values) {
  SummaryStats s;
  std::vector<double> finite;
  for (double v : values) {
    if (std::isinf(v)) {
      ++s.infinite;
    } else {
      finite.push_back(v);
    }
  }
  s.count = static_cast<int>(values.size());
  if (finite.empty()) return s;
  double total = 0.0;
  for (double v : finite) total += v;
  s.mean = total / finite.size();
  double sq = 0.0;
  for (double v : finite) sq += (v - s.mean) * (v - s.mean);
  s.stddev = finite.size() > 1 ? std::sqrt(sq / (finite.size() - 1)) : 0.0;
  s.min = *std::min_element(finite.begin(), finite.end());
  s.max = *std::max_element(finite.begin(), finite.end());
  return s;
}

namespace {

nlohmann::json scores_json(const PrdcScores& s) {
  return {{"precision", s.precision}, {"recall", s.recall}, {"density", s.density}, {"coverage", s.coverage}};
}

nlohmann::json stats_json(const SummaryStats& s) {
  return {{"mean", s.mean}, {"std", s.stddev}, {"min", s.min}, {"max", s.max}, {"count", s.count},
          {"infinite", s.infinite}};
}

nlohmann::json number_or_inf(double v) {
  if (std::isinf(v)) return "inf";
  return v;
}

}  // namespace

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json per_class = nlohmann::json::array();
  for (const auto& c : prdc.classes) {
    nlohmann::json row = {{"class", c.label + 1}};
    row["scores"] = c.scores ? scores_json(*c.scores) : nlohmann::json(nullptr);
    per_class.push_back(row);
  }
  nlohmann::json psnr_values = nlohmann::json::array();
  for (double v : psnr) psnr_values.push_back(number_or_inf(v));
  return {
      {"note", "FID and KNN Dist use evaluation-classifier features; values are comparable only within this "
               "repository's runs"},
      {"images", images},
      {"classes", classes},
      {"acc1", acc1},
      {"acc5", acc5},
      {"fid", fid},
      {"knn_dist", knn_dist ? nlohmann::json(*knn_dist) : nlohmann::json(nullptr)},
      {"psnr", {{"summary", stats_json(summarize(psnr))}, {"values", psnr_values}}},
      {"ssim", {{"summary", stats_json(summarize(ssim))}, {"values", ssim}}},
      {"prdc",
       {{"k", prdc.k},
        {"mean", prdc.mean ? scores_json(*prdc.mean) : nlohmann::json(nullptr)},
        {"classes", per_class}}},
      {"warnings", warnings},
  };
}

std::string MetricsReport::to_table() const {
  std::ostringstream out;
  auto p = summarize(psnr);
  auto s = summarize(ssim);
  out << std::fixed << std::setprecision(4);
  out << "| Acc1 | Acc5 | FID | KNN Dist | PSNR | SSIM | Precision | Recall | Density | Coverage |\n";
  out << "|---|---|---|---|---|---|---|---|---|---|\n";
  out << "| " << acc1 << " | " << acc5 << " | " << fid << " | ";
  if (knn_dist) {
    out << *knn_dist;
  } else {
    out << "n/a";
  }
  out << " | " << p.mean << " | " << s.mean << " | ";
  if (prdc.mean) {
    out << prdc.mean->precision << " | " << prdc.mean->recall << " | " << prdc.mean->density << " | "
        << prdc.mean->coverage << " |\n";
  } else {
    out << "n/a | n/a | n/a | n/a |\n";
  }
  out << "\n" << images << " reconstructions over " << classes
      << " classes. FID and KNN Dist use evaluation-classifier features.\n";
  return out.str();
}

}  // namespace invdiff
