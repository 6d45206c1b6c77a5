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
#include "invdiff/pseudo_label.hpp"

#include <c10/util/Logging.h>

#include "invdiff/errors.hpp"

namespace invdiff {

std::vector<PseudoLabelEntry> PseudoLabeledDataset::entries() const {
  std::vector<PseudoLabelEntry> out;
  for (const auto& cls : by_class) out.insert(out.end(), cls.begin(), cls.end());
  return out;
}

torch::Tensor PseudoLabeledDataset::image_indices() const {
  std::vector<int64_t> out;
  for (const auto& e : entries()) out.push_back(e.image);
  return torch::tensor(out, torch::kInt64);
}

torch::Tensor PseudoLabeledDataset::labels() const {
  std::vector<int64_t> out;
  for (const auto& e : entries()) out.push_back(e.label);
  return torch::tensor(out, torch::kInt64);
}

int default_top_n(int64_t public_count) {
  return static_cast<int>(std::max<int64_t>(1, (30 * public_count + 29999) / 30000));
}

PseudoLabeledDataset select_top_n(const torch::Tensor& logits, int n) {
  if (n < 1) fail(ErrorCategory::kConfig, "top-n selection needs n >= 1");
  if (logits.dim() != 2 || logits.size(0) == 0) {
    fail(ErrorCategory::kConfig, "top-n selection needs a non-empty public set");
  }
  PseudoLabeledDataset out;
  out.num_classes = static_cast<int>(logits.size(1));
  out.top_n = n;
  const int64_t count = logits.size(0);
  int64_t keep = n;
  if (n > count) {
    keep = count;
    out.warnings.push_back("top_n=" + std::to_string(n) + " exceeds the " + std::to_string(count) +
                           " public images; every image is selected for every class");
    LOG(WARNING) << out.warnings.back();
  }
  auto scores = logits.detach().to(torch::kDouble).contiguous();
  auto sorted = std::get<1>(scores.sort(/*stable=*/true, /*dim=*/0, /*descending=*/true));
  auto acc_idx = sorted.accessor<int64_t, 2>();
  auto acc_score = scores.accessor<double, 2>();
  out.by_class.resize(static_cast<std::size_t>(out.num_classes));
  for (int c = 0; c < out.num_classes; ++c) {
    for (int64_t r = 0; r < keep; ++r) {
      const int64_t image = acc_idx[r][c];
      out.by_class[static_cast<std::size_t>(c)].push_back({image, c, acc_score[image][c]});
    }
  }
  return out;
}

PseudoLabeledDataset select_top_n(const ClassifierHandle& model, const torch::Tensor& public_images, int n) {
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> chunks;
  for (int64_t i = 0; i < public_images.size(0); i += 256) {
    chunks.push_back(model.logits(public_images.slice(0, i, std::min(public_images.size(0), i + 256))));
  }
  if (chunks.empty()) fail(ErrorCategory::kConfig, "top-n selection needs a non-empty public set");
  return select_top_n(torch::cat(chunks), n);
}

}  // namespace invdiff
