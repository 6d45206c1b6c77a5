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
#ifndef INVDIFF_SYNTHETIC_HPP
#define INVDIFF_SYNTHETIC_HPP

#include <cstdint>
#include <filesystem>

#include "invdiff/image.hpp"

namespace invdiff {

// Procedural face-like identities: each identity fixes colors, face shape,
// hair, eye and mouth geometry and an accessory; every sample of the
// identity re-renders it over a random background under random shift,
// scale, lighting, expression and sensor noise.
struct SyntheticCorpusSpec {
  int identities = 30;
  int images_per_identity = 50;
  int width = 40;
  int height = 32;
  std::uint64_t seed = 7;
};

RawImage render_identity_sample(const SyntheticCorpusSpec& spec, int identity, int sample);

// Writes <root>/<NNN>/<MMMM>.png with identity directories numbered from 1.
void write_synthetic_corpus(const std::filesystem::path& root, const SyntheticCorpusSpec& spec);

}  // namespace invdiff

#endif  // INVDIFF_SYNTHETIC_HPP
