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
#include <filesystem>
#include <span>
#include <vector>

namespace qodcnn {

/// Interleaved RGB image, values in [0, 255].
struct RgbImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;  // height * width * 3, row-major, RGB interleaved
};

/// Single-channel image with values in [0, 255], row-major.
class GrayImage {
 public:
  GrayImage() = default;
  GrayImage(std::size_t height, std::size_t width, double fill = 0.0);
  GrayImage(std::size_t height, std::size_t width, std::vector<double> pixels);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return pixels_.size(); }
  bool empty() const { return pixels_.empty(); }

  double& at(std::size_t row, std::size_t col) { return pixels_[row * width_ + col]; }
  double at(std::size_t row, std::size_t col) const { return pixels_[row * width_ + col]; }

  std::span<double> pixels() { return pixels_; }
  std::span<const double> pixels() const { return pixels_; }
  std::span<const double> row(std::size_t r) const { return {pixels_.data() + r * width_, width_}; }

  /// Throws std::domain_error when any pixel is non-finite or outside [0, 255].
  void validate() const;

  /// Rounds to the nearest 8-bit level and clamps, as a PNG round-trip would.
  void quantize_8bit();

  bool operator==(const GrayImage&) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<double> pixels_;
};

/// BT.601 luma: Y = 0.299 R + 0.587 G + 0.114 B.
GrayImage to_grayscale(const RgbImage& rgb);

// 8-bit PNG I/O. Reading accepts gray, gray+alpha, RGB, RGBA and palette files;
// color inputs are converted with to_grayscale.
GrayImage read_png_gray(const std::filesystem::path& path);
void write_png_gray(const std::filesystem::path& path, const GrayImage& img);
void write_png_rgb(const std::filesystem::path& path, std::size_t height, std::size_t width,
                   std::span<const unsigned char> rgb);

}  // namespace qodcnn
