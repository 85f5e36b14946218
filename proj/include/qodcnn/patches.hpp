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

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "qodcnn/image.hpp"

namespace qodcnn {

inline constexpr std::size_t kPatchSize = 32;
inline constexpr std::size_t kPatchPixels = kPatchSize * kPatchSize;

struct GridPos {
  std::size_t row = 0;
  std::size_t col = 0;
  bool operator==(const GridPos&) const = default;
  auto operator<=>(const GridPos&) const = default;
};

/// B patches of kPatchSize x kPatchSize values in [0, 1], stored contiguously.
struct PatchBatch {
  std::vector<double> patches;  // B * kPatchPixels
  std::vector<double> labels;
  std::vector<std::string> source_ids;
  std::vector<GridPos> grid_positions;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  std::span<const double> patch(std::size_t i) const {
    return {patches.data() + i * kPatchPixels, kPatchPixels};
  }

  void append(const PatchBatch& other);
  /// Copies the listed patches, in the order given.
  PatchBatch gather(std::span<const std::size_t> indices) const;
  /// Throws std::logic_error when the parallel arrays disagree in length.
  void check_consistent() const;
};

/// Non-overlapping grid anchored at the top-left; partial border tiles are dropped.
PatchBatch extract_patches(const GrayImage& img, double label, const std::string& source_id);

}  // namespace qodcnn
