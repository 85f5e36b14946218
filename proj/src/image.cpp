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

#include "qodcnn/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <string>

namespace qodcnn {

GrayImage::GrayImage(std::size_t height, std::size_t width, double fill)
    : height_(height), width_(width), pixels_(height * width, fill) {}

GrayImage::GrayImage(std::size_t height, std::size_t width, std::vector<double> pixels)
    : height_(height), width_(width), pixels_(std::move(pixels)) {
  if (pixels_.size() != height_ * width_)
    throw std::invalid_argument("GrayImage: pixel count does not match " + std::to_string(height_) +
                                "x" + std::to_string(width_));
}

void GrayImage::validate() const {
  for (std::size_t i = 0; i < pixels_.size(); ++i) {
    const double v = pixels_[i];
    if (!std::isfinite(v) || v < 0.0 || v > 255.0)
      throw std::domain_error("GrayImage: pixel " + std::to_string(i) + " out of range [0, 255]");
  }
}

void GrayImage::quantize_8bit() {
  for (double& v : pixels_) v = std::clamp(std::round(v), 0.0, 255.0);
}

GrayImage to_grayscale(const RgbImage& rgb) {
  if (rgb.pixels.size() != rgb.height * rgb.width * 3)
    throw std::invalid_argument("to_grayscale: expected height*width*3 values");
  std::vector<double> out(rgb.height * rgb.width);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double r = rgb.pixels[3 * i];
    const double g = rgb.pixels[3 * i + 1];
    const double b = rgb.pixels[3 * i + 2];
    if (!std::isfinite(r) || !std::isfinite(g) || !std::isfinite(b))
      throw std::domain_error("to_grayscale: non-finite input at pixel " + std::to_string(i));
    out[i] = std::clamp(0.299 * r + 0.587 * g + 0.114 * b, 0.0, 255.0);
  }
  return GrayImage(rgb.height, rgb.width, std::move(out));
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw std::runtime_error("cannot open " + path.string());
  return f;
}

[[noreturn]] void png_error_fn(png_structp, png_const_charp msg) { throw std::runtime_error(msg); }
void png_warning_fn(png_structp, png_const_charp) {}

void write_png(const std::filesystem::path& path, std::size_t height, std::size_t width, int color_type,
               int channels, const unsigned char* data) {
  auto f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp& p;
    png_infop& i;
    ~Guard() { png_destroy_write_struct(&p, &i); }
  } guard{png, info};
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t r = 0; r < height; ++r)
    png_write_row(png, const_cast<png_bytep>(data + r * width * channels));
  png_write_end(png, nullptr);
}

}  // namespace

GrayImage read_png_gray(const std::filesystem::path& path) {
  auto f = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
  if (!png) throw std::runtime_error("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp& p;
    png_infop& i;
    ~Guard() { png_destroy_read_struct(&p, &i, nullptr); }
  } guard{png, info};

  try {
    png_init_io(png, f.get());
    png_read_info(png, info);
    const auto color = png_get_color_type(png, info);
    const auto depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const std::size_t width = png_get_image_width(png, info);
    const std::size_t height = png_get_image_height(png, info);
    const std::size_t channels = png_get_channels(png, info);
    std::vector<unsigned char> buf(height * width * channels);
    std::vector<png_bytep> rows(height);
    for (std::size_t r = 0; r < height; ++r) rows[r] = buf.data() + r * width * channels;
    png_read_image(png, rows.data());

    if (channels == 1) {
      std::vector<double> px(buf.begin(), buf.end());
      return GrayImage(height, width, std::move(px));
    }
    if (channels != 3) throw std::runtime_error("unsupported channel count");
    RgbImage rgb{height, width, std::vector<double>(buf.begin(), buf.end())};
    return to_grayscale(rgb);
  } catch (const std::exception& e) {
    throw std::runtime_error("read_png_gray(" + path.string() + "): " + e.what());
  }
}

void write_png_gray(const std::filesystem::path& path, const GrayImage& img) {
  std::vector<unsigned char> buf(img.size());
  auto px = img.pixels();
  for (std::size_t i = 0; i < buf.size(); ++i)
    buf[i] = static_cast<unsigned char>(std::clamp(std::round(px[i]), 0.0, 255.0));
  write_png(path, img.height(), img.width(), PNG_COLOR_TYPE_GRAY, 1, buf.data());
}

void write_png_rgb(const std::filesystem::path& path, std::size_t height, std::size_t width,
                   std::span<const unsigned char> rgb) {
  if (rgb.size() != height * width * 3) throw std::invalid_argument("write_png_rgb: size mismatch");
  write_png(path, height, width, PNG_COLOR_TYPE_RGB, 3, rgb.data());
}

}  // namespace qodcnn
