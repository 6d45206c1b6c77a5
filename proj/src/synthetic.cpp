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
#include "invdiff/synthetic.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <random>

namespace invdiff {

namespace {

using Color = std::array<double, 3>;

struct Identity {
  Color skin, hair, eyes, mouth, accessory;
  double face_rx, face_ry, face_cy;
  int hair_style;      // 0 bald, 1 cap, 2 side part, 3 long
  double hair_line;    // fraction of face height covered from the top
  double eye_y, eye_spacing, eye_radius;
  double mouth_y, mouth_width, mouth_thickness;
  int accessory_kind;  // 0 none, 1 glasses, 2 cheek mark, 3 headband
  double mark_x, mark_y;
};

Color random_color(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  return {u(rng), u(rng), u(rng)};
}

Identity make_identity(std::uint64_t seed, int identity) {
  std::mt19937_64 rng(seed * 1000003ULL + static_cast<std::uint64_t>(identity) * 7919ULL + 17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Identity id;
  const double tone = 0.25 + 0.65 * u(rng);
  id.skin = {std::min(1.0, tone + 0.15), tone, std::max(0.0, tone - 0.12 - 0.1 * u(rng))};
  id.hair = random_color(rng, 0.0, 0.8);
  id.eyes = random_color(rng, 0.0, 0.6);
  id.mouth = {0.5 + 0.45 * u(rng), 0.1 + 0.3 * u(rng), 0.1 + 0.3 * u(rng)};
  id.accessory = random_color(rng, 0.0, 1.0);
  id.face_rx = 0.24 + 0.1 * u(rng);
  id.face_ry = 0.32 + 0.1 * u(rng);
  id.face_cy = 0.52 + 0.06 * u(rng);
  id.hair_style = static_cast<int>(rng() % 4);
  id.hair_line = 0.15 + 0.25 * u(rng);
  id.eye_y = 0.40 + 0.1 * u(rng);
  id.eye_spacing = 0.09 + 0.09 * u(rng);
  id.eye_radius = 0.025 + 0.03 * u(rng);
  id.mouth_y = 0.68 + 0.08 * u(rng);
  id.mouth_width = 0.06 + 0.12 * u(rng);
  id.mouth_thickness = 0.015 + 0.025 * u(rng);
  id.accessory_kind = static_cast<int>(rng() % 4);
  id.mark_x = (u(rng) < 0.5 ? -1.0 : 1.0) * (0.1 + 0.08 * u(rng));
  id.mark_y = 0.55 + 0.1 * u(rng);
  return id;
}

double sq(double v) { return v * v; }

}  // namespace

RawImage render_identity_sample(const SyntheticCorpusSpec& spec, int identity, int sample) {
  const Identity id = make_identity(spec.seed, identity);
  std::mt19937_64 rng(spec.seed ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(identity + 1)) ^
                      (0xC2B2AE3D27D4EB4FULL * static_cast<std::uint64_t>(sample + 1)));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.025);

  const double dx = 0.05 * u(rng);
  const double dy = 0.04 * u(rng);
  const double scale = 1.0 + 0.06 * u(rng);
  const double yaw = 0.03 * u(rng);
  const double light = 1.0 + 0.15 * u(rng);
  const double smile = 1.0 + 0.25 * u(rng);
  const double light_dir = 0.15 * u(rng);
  // Backgrounds vary per sample so identity is carried by the face alone.
  const Color background = random_color(rng, 0.05, 0.95);

  RawImage out;
  out.width = spec.width;
  out.height = spec.height;
  out.channels = 3;
  out.pixels.resize(static_cast<std::size_t>(spec.width) * spec.height * 3);

  // The face lives in a centered square so the center crop keeps it.
  const double side = std::min(spec.width, spec.height);
  const double ox = (spec.width - side) / 2.0;
  const double oy = (spec.height - side) / 2.0;
  constexpr int kSuper = 3;

  auto shade = [&](double x, double y) -> Color {
    // Undo the per-sample pose so that geometry below is in identity space.
    const double cx = 0.5 + dx, cy = id.face_cy + dy;
    const double fx = (x - cx) / scale, fy = (y - cy) / scale;
    Color c = background;

    const double face = sq(fx / id.face_rx) + sq(fy / id.face_ry);
    const bool long_hair = id.hair_style == 3 && std::abs(fx) < id.face_rx * 1.25 &&
                           fy > -id.face_ry * 1.1 && fy < id.face_ry * 0.6;
    if (long_hair) c = id.hair;
    if (face <= 1.0) {
      c = id.skin;
      const double top = -id.face_ry + 2.0 * id.face_ry * id.hair_line;
      if (id.hair_style == 1 && fy < top) c = id.hair;
      if (id.hair_style == 2 && fy < top + 0.08 * fx / id.face_rx) c = id.hair;
      if (id.hair_style == 3 && fy < top * 0.8) c = id.hair;
      // Interior features slide sideways with the head's yaw.
      const double gx = fx + yaw;
      const double ey = id.eye_y - id.face_cy;
      for (double side_sign : {-1.0, 1.0}) {
        const double d = std::sqrt(sq(gx - side_sign * id.eye_spacing) + sq(fy - ey));
        if (d < id.eye_radius) c = id.eyes;
        if (id.accessory_kind == 1 && std::abs(d - id.eye_radius * 1.9) < 0.018) c = id.accessory;
      }
      if (id.accessory_kind == 1 && std::abs(fy - ey) < 0.012 &&
          std::abs(gx) < id.eye_spacing - id.eye_radius * 1.9) {
        c = id.accessory;
      }
      const double my = id.mouth_y - id.face_cy;
      if (std::abs(gx) < id.mouth_width * smile && std::abs(fy - my) < id.mouth_thickness) c = id.mouth;
      if (id.accessory_kind == 2 && std::sqrt(sq(gx - id.mark_x) + sq(fy - (id.mark_y - id.face_cy))) < 0.03) {
        c = id.accessory;
      }
      if (id.accessory_kind == 3 && std::abs(fy - (top + 0.03)) < 0.025) c = id.accessory;
      const double lit = light * (1.0 + light_dir * fx / id.face_rx);
      for (auto& v : c) v *= lit;
    }
    return c;
  };

  for (int py = 0; py < spec.height; ++py) {
    for (int px = 0; px < spec.width; ++px) {
      Color acc = {0, 0, 0};
      for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
          const double x = (px - ox + (sx + 0.5) / kSuper) / side;
          const double y = (py - oy + (sy + 0.5) / kSuper) / side;
          const Color c = shade(x, y);
          for (int k = 0; k < 3; ++k) acc[static_cast<std::size_t>(k)] += c[static_cast<std::size_t>(k)];
        }
      }
      for (int k = 0; k < 3; ++k) {
        double v = acc[static_cast<std::size_t>(k)] / (kSuper * kSuper) + noise(rng);
        v = std::clamp(v, 0.0, 1.0);
        out.pixels[(static_cast<std::size_t>(py) * spec.width + px) * 3 + static_cast<std::size_t>(k)] =
            static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  }
  return out;
}

void write_synthetic_corpus(const std::filesystem::path& root, const SyntheticCorpusSpec& spec) {
  for (int identity = 0; identity < spec.identities; ++identity) {
    char name[32];
    std::snprintf(name, sizeof(name), "%03d", identity + 1);
    const auto dir = root / name;
    std::filesystem::create_directories(dir);
    for (int sample = 0; sample < spec.images_per_identity; ++sample) {
      char file[32];
      std::snprintf(file, sizeof(file), "%04d.png", sample);
      write_png(dir / file, render_identity_sample(spec, identity, sample));
    }
  }
}

}  // namespace invdiff
