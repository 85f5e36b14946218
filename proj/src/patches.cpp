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

#include "qodcnn/patches.hpp"

#include <stdexcept>

namespace qodcnn {

void PatchBatch::append(const PatchBatch& other) {
  patches.insert(patches.end(), other.patches.begin(), other.patches.end());
  labels.insert(labels.end(), other.labels.begin(), other.labels.end());
  source_ids.insert(source_ids.end(), other.source_ids.begin(), other.source_ids.end());
  grid_positions.insert(grid_positions.end(), other.grid_positions.begin(), other.grid_positions.end());
}

PatchBatch PatchBatch::gather(std::span<const std::size_t> indices) const {
  PatchBatch out;
  out.patches.reserve(indices.size() * kPatchPixels);
  for (std::size_t i : indices) {
    if (i >= size()) throw std::out_of_range("PatchBatch::gather: index out of range");
    auto p = patch(i);
    out.patches.insert(out.patches.end(), p.begin(), p.end());
    out.labels.push_back(labels[i]);
    out.source_ids.push_back(source_ids[i]);
    out.grid_positions.push_back(grid_positions[i]);
  }
  return out;
}

void PatchBatch::check_consistent() const {
  const auto n = labels.size();
  if (patches.size() != n * kPatchPixels || source_ids.size() != n || grid_positions.size() != n)
    throw std::logic_error("PatchBatch: inconsistent array lengths");
}

PatchBatch extract_patches(const GrayImage& img, double label, const std::string& source_id) {
  if (img.height() < kPatchSize || img.width() < kPatchSize)
    throw std::invalid_argument("extract_patches: image " + std::to_string(img.height()) + "x" +
                                std::to_string(img.width()) + " is smaller than the patch size");
  const std::size_t rows = img.height() / kPatchSize;
  const std::size_t cols = img.width() / kPatchSize;
  PatchBatch out;
  out.patches.reserve(rows * cols * kPatchPixels);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      for (std::size_t y = 0; y < kPatchSize; ++y) {
        auto src = img.row(r * kPatchSize + y).subspan(c * kPatchSize, kPatchSize);
        for (double v : src) out.patches.push_back(v / 255.0);
      }
      out.labels.push_back(label);
      out.source_ids.push_back(source_id);
      out.grid_positions.push_back({r, c});
    }
  }
  return out;
}

}  // namespace qodcnn
