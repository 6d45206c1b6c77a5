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
#ifndef INVDIFF_ERRORS_HPP
#define INVDIFF_ERRORS_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace invdiff {

// Every failure surfaced to the CLI carries one of these categories; the
// category decides the process exit code.
enum class ErrorCategory {
  kConfig,
  kIngestion,
  kSplitIntegrity,
  kPersistence,
  kShape,
  kIndex,
  kNumerical,
  kTraining,
};

std::string_view category_name(ErrorCategory category);

// Nonzero, distinct per category.
int exit_code(ErrorCategory category);

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}

  ErrorCategory category() const { return category_; }

 private:
  ErrorCategory category_;
};

[[noreturn]] void fail(ErrorCategory category, const std::string& message);

}  // namespace invdiff

#endif  // INVDIFF_ERRORS_HPP
