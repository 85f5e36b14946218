// Copyright 2026 The qodcnn Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Procedural screen-content corpora for desk-scale experiments.
//
// Severity tables (level 1..5) are the normative definition of each synthetic
// distortion:
//
//   GN  additive Gaussian noise, std          {2, 5, 10, 20, 40}
//   GB  Gaussian blur, kernel std             {0.5, 1, 2, 3, 5}    (radius ceil(3 std))
//   MB  horizontal box motion blur, length    {3, 5, 9, 13, 17}
//   CC  contrast gain about 128               {0.9, 0.75, 0.6, 0.45, 0.3}
//   JC  8x8 block DCT, JPEG luminance table scaled by {1, 2, 4, 8, 16}
//
// Proxy DMOS for a distorted entry is 20 + 14 * level + offset(kind), with
// offset GN=0, GB=2, MB=2, CC=4, JC=0. It is monotone in level by
// construction and is not a model of human opinion scores.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "qodcnn/image.hpp"
#include "qodcnn/manifest.hpp"
#include "qodcnn/random.hpp"

namespace qodcnn {

inline constexpr int kSynthLevels = 5;
inline constexpr std::array<double, kSynthLevels> kNoiseStd = {2, 5, 10, 20, 40};
inline constexpr std::array<double, kSynthLevels> kBlurStd = {0.5, 1, 2, 3, 5};
inline constexpr std::array<int, kSynthLevels> kMotionLength = {3, 5, 9, 13, 17};
inline constexpr std::array<double, kSynthLevels> kContrastGain = {0.9, 0.75, 0.6, 0.45, 0.3};
inline constexpr std::array<double, kSynthLevels> kJpegTableScale = {1, 2, 4, 8, 16};

/// True for the kinds synth_distort can generate (GN, GB, MB, CC, JC).
bool is_synthesizable(DistortionType kind);

GrayImage synth_distort(const GrayImage& img, DistortionType kind, int level, std::uint64_t seed);

double proxy_dmos(DistortionType kind, int level);

// Content primitives, exposed for tests that need controlled textual/pictorial layouts.
struct Region {
  std::size_t row = 0, col = 0, height = 0, width = 0;
};
/// Dark glyph-like strokes in lines of text on a light background.
void render_text(GrayImage& img, const Region& r, Rng& rng);
/// Smooth low-frequency shading (gradients plus soft blobs).
void render_pictorial(GrayImage& img, const Region& r, Rng& rng);

/// Mixed textual/pictorial reference image; every quadrant-row holds both kinds.
GrayImage make_reference_image(std::size_t height, std::size_t width, std::uint64_t seed);

struct SynthCorpusOptions {
  std::size_t n_refs = 4;
  std::vector<DistortionType> kinds = {DistortionType::GN, DistortionType::GB, DistortionType::CC};
  int levels = kSynthLevels;
  std::uint64_t seed = 1;
  std::size_t height = 128;
  std::size_t width = 128;
};

/// Writes refs/*.png, dist/*.png and manifest.csv under out_dir and returns the manifest.
DatabaseManifest make_synthetic_manifest(const std::filesystem::path& out_dir, const SynthCorpusOptions& opt);

}  // namespace qodcnn
