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

// Local standard deviation (LSD) maps, per-patch LSD variance (VLSD)
// weights, and fusion of patch scores into one image score.

#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "qodcnn/image.hpp"
#include "qodcnn/network.hpp"
#include "qodcnn/patches.hpp"

namespace qodcnn {

struct LsdParams {
  std::size_t k = 3;  // half-height; the window spans 2k+1 rows
  std::size_t l = 3;  // half-width
  double sigma = 1.5;
};

struct LsdMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;
  LsdParams params;

  double at(std::size_t r, std::size_t c) const { return values[r * width + c]; }
};

/// Normalized (2k+1) x (2l+1) Gaussian window, row-major.
std::vector<double> lsd_window(const LsdParams& params);

/// Gaussian-weighted local standard deviation at every pixel, reflect-padded
/// borders. Vectorized over columns and OpenMP-parallel over rows.
LsdMap lsd_map(const GrayImage& img, const LsdParams& params = {});

namespace reference {
/// Per-pixel direct sum with the local mean computed first; serial.
LsdMap lsd_map(const GrayImage& img, const LsdParams& params = {});
}  // namespace reference

/// Population variance of the map inside the kPatchSize square at (top, left).
double vlsd(const LsdMap& map, std::size_t top, std::size_t left);

/// VLSD of every grid patch of `map`, in extract_patches order.
std::vector<double> patch_vlsd(const LsdMap& map);

/// Sum(s*w)/Sum(w), or the plain mean when Sum(w) <= 1e-12. Equal weights give
/// exactly average_pool. The result is clamped to [min s, max s].
double weighted_pool(std::span<const double> scores, std::span<const double> weights);
double average_pool(std::span<const double> scores);

enum class Pooling { Vlsd, Average };
std::string_view to_string(Pooling p);
std::optional<Pooling> parse_pooling(std::string_view s);

struct LocalQualityMap {
  std::size_t grid_rows = 0;
  std::size_t grid_cols = 0;
  std::vector<GridPos> positions;
  std::vector<double> scores;
  std::vector<double> weights;  // VLSD of the distorted image
  double score = 0.0;
  Pooling pooling = Pooling::Vlsd;

  bool operator==(const LocalQualityMap&) const = default;
};

LocalQualityMap score_image(const QodcnnModel& model, const GrayImage& img, const GrayImage* ref,
                            Pooling pooling);

/// Shannon entropy (bits) of the gradient-magnitude histogram over a patch.
/// Comparison baseline for VLSD weighting only.
double gradient_entropy(const GrayImage& img, std::size_t top, std::size_t left, std::size_t bins = 32);
std::vector<double> patch_gradient_entropy(const GrayImage& img, std::size_t bins = 32);

/// CSV columns: row,col,score,vlsd
void write_quality_csv(const std::filesystem::path& path, const LocalQualityMap& map);
/// Two panels side by side: patch scores and VLSD weights, each min-max scaled.
void write_quality_heatmap(const std::filesystem::path& path, const LocalQualityMap& map);

}  // namespace qodcnn
