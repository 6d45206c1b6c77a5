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
#include "invdiff/errors.hpp"

namespace invdiff {

std::string_view category_name(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::kConfig: return "configuration";
    case ErrorCategory::kIngestion: return "ingestion";
    case ErrorCategory::kSplitIntegrity: return "split-integrity";
    case ErrorCategory::kPersistence: return "persistence";
    case ErrorCategory::kShape: return "shape";
    case ErrorCategory::kIndex: return "index";
    case ErrorCategory::kNumerical: return "numerical";
    case ErrorCategory::kTraining: return "training";
  }
  return "unknown";
}

int exit_code(ErrorCategory category) {
  return 2 + static_cast<int>(category);
}

void fail(ErrorCategory category, const std::string& message) {
  throw Error(category, message);
}

}  // namespace invdiff
