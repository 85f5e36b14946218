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

#include "qodcnn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>
#include <string>

namespace qodcnn {

namespace {

std::ptrdiff_t reflect(std::ptrdiff_t i, std::ptrdiff_t n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

void check_level(int level) {
  if (level < 1 || level > kSynthLevels)
    throw std::invalid_argument("synth_distort: level " + std::to_string(level) + " outside 1.." +
                                std::to_string(kSynthLevels));
}

void clamp_pixels(GrayImage& img) {
  for (double& v : img.pixels()) v = std::clamp(v, 0.0, 255.0);
}

// Separable 1-D filter along rows (horizontal) or columns, reflect borders.
GrayImage filter_1d(const GrayImage& img, const std::vector<double>& taps, bool horizontal) {
  const auto h = static_cast<std::ptrdiff_t>(img.height());
  const auto w = static_cast<std::ptrdiff_t>(img.width());
  const auto radius = static_cast<std::ptrdiff_t>(taps.size() / 2);
  GrayImage out(img.height(), img.width());
  for (std::ptrdiff_t y = 0; y < h; ++y) {
    for (std::ptrdiff_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
        const double tap = taps[static_cast<std::size_t>(k + radius)];
        acc += horizontal ? tap * img.at(y, reflect(x + k, w)) : tap * img.at(reflect(y + k, h), x);
      }
      out.at(y, x) = acc;
    }
  }
  return out;
}

GrayImage gaussian_blur(const GrayImage& img, double sigma) {
  const auto radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> taps(2 * radius + 1);
  double sum = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    taps[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
    sum += taps[k + radius];
  }
  for (double& t : taps) t /= sum;
  return filter_1d(filter_1d(img, taps, true), taps, false);
}

GrayImage motion_blur(const GrayImage& img, int length) {
  std::vector<double> taps(length, 1.0 / length);
  return filter_1d(img, taps, true);
}

constexpr int kJpegLuma[64] = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99,
};

GrayImage block_dct_quantize(const GrayImage& img, double table_scale) {
  double basis[8][8];
  for (int u = 0; u < 8; ++u) {
    const double cu = u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
    for (int x = 0; x < 8; ++x) basis[u][x] = cu * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
  }
  double q[64];
  for (int i = 0; i < 64; ++i) q[i] = std::max(1.0, std::round(kJpegLuma[i] * table_scale));

  const std::size_t h = img.height(), w = img.width();
  GrayImage out(h, w);
  for (std::size_t by = 0; by < h; by += 8) {
    for (std::size_t bx = 0; bx < w; bx += 8) {
      double blk[8][8], coef[8][8], tmp[8][8];
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
          blk[y][x] = img.at(std::min(by + y, h - 1), std::min(bx + x, w - 1)) - 128.0;
      // forward 2-D DCT as two 1-D passes
      for (int y = 0; y < 8; ++y)
        for (int u = 0; u < 8; ++u) {
          double s = 0.0;
          for (int x = 0; x < 8; ++x) s += basis[u][x] * blk[y][x];
          tmp[y][u] = s;
        }
      for (int v = 0; v < 8; ++v)
        for (int u = 0; u < 8; ++u) {
          double s = 0.0;
          for (int y = 0; y < 8; ++y) s += basis[v][y] * tmp[y][u];
          coef[v][u] = std::round(s / q[v * 8 + u]) * q[v * 8 + u];
        }
      for (int v = 0; v < 8; ++v)
        for (int x = 0; x < 8; ++x) {
          double s = 0.0;
          for (int u = 0; u < 8; ++u) s += basis[u][x] * coef[v][u];
          tmp[v][x] = s;
        }
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
          if (by + y >= h || bx + x >= w) continue;
          double s = 0.0;
          for (int v = 0; v < 8; ++v) s += basis[v][y] * tmp[v][x];
          out.at(by + y, bx + x) = s + 128.0;
        }
    }
  }
  return out;
}

}  // namespace

bool is_synthesizable(DistortionType kind) {
  switch (kind) {
    case DistortionType::GN:
    case DistortionType::GB:
    case DistortionType::MB:
    case DistortionType::CC:
    case DistortionType::JC:
      return true;
    default:
      return false;
  }
}

GrayImage synth_distort(const GrayImage& img, DistortionType kind, int level, std::uint64_t seed) {
  check_level(level);
  const auto idx = static_cast<std::size_t>(level - 1);
  GrayImage out;
  switch (kind) {
    case DistortionType::GN: {
      out = img;
      Rng rng(mix_seed(seed));
      std::normal_distribution<double> noise(0.0, kNoiseStd[idx]);
      for (double& v : out.pixels()) v += noise(rng);
      break;
    }
    case DistortionType::GB:
      out = gaussian_blur(img, kBlurStd[idx]);
      break;
    case DistortionType::MB:
      out = motion_blur(img, kMotionLength[idx]);
      break;
    case DistortionType::CC: {
      out = img;
      const double g = kContrastGain[idx];
      for (double& v : out.pixels()) v = 128.0 + g * (v - 128.0);
      break;
    }
    case DistortionType::JC:
      out = block_dct_quantize(img, kJpegTableScale[idx]);
      break;
    default:
      throw std::invalid_argument("synth_distort: cannot synthesize distortion " + std::string(to_string(kind)));
  }
  clamp_pixels(out);
  return out;
}

double proxy_dmos(DistortionType kind, int level) {
  double offset = 0.0;
  switch (kind) {
    case DistortionType::GB:
    case DistortionType::MB:
      offset = 2.0;
      break;
    case DistortionType::CC:
      offset = 4.0;
      break;
    default:
      break;
  }
  return 20.0 + 14.0 * level + offset;
}

void render_text(GrayImage& img, const Region& r, Rng& rng) {
  std::uniform_real_distribution<double> bg_dist(225.0, 250.0), ink_dist(10.0, 70.0);
  std::uniform_int_distribution<int> glyph_h_dist(7, 11), word_len(2, 7), stroke_count(2, 4), stroke_kind(0, 7);
  const double bg = bg_dist(rng);
  for (std::size_t y = r.row; y < r.row + r.height; ++y)
    for (std::size_t x = r.col; x < r.col + r.width; ++x) img.at(y, x) = bg;

  const double ink = ink_dist(rng);
  auto plot = [&](std::size_t y, std::size_t x) {
    if (y < r.row + r.height && x < r.col + r.width) img.at(y, x) = ink;
  };

  std::size_t y0 = r.row + 2;
  while (true) {
    const int gh = glyph_h_dist(rng);
    const int gw = std::max(4, gh * 3 / 5);
    if (y0 + gh > r.row + r.height) break;
    std::size_t x0 = r.col + 2;
    while (x0 + gw <= r.col + r.width) {
      const int n = word_len(rng);
      for (int g = 0; g < n && x0 + gw <= r.col + r.width; ++g) {
        const int strokes = stroke_count(rng);
        for (int s = 0; s < strokes; ++s) {
          switch (stroke_kind(rng)) {
            case 0:  // left stem
              for (int t = 0; t < gh; ++t) plot(y0 + t, x0);
              break;
            case 1:  // right stem
              for (int t = 0; t < gh; ++t) plot(y0 + t, x0 + gw - 1);
              break;
            case 2:  // center stem
              for (int t = 0; t < gh; ++t) plot(y0 + t, x0 + gw / 2);
              break;
            case 3:  // top bar
              for (int t = 0; t < gw; ++t) plot(y0, x0 + t);
              break;
            case 4:  // middle bar
              for (int t = 0; t < gw; ++t) plot(y0 + gh / 2, x0 + t);
              break;
            case 5:  // baseline
              for (int t = 0; t < gw; ++t) plot(y0 + gh - 1, x0 + t);
              break;
            case 6:  // falling diagonal
              for (int t = 0; t < gh; ++t) plot(y0 + t, x0 + t * (gw - 1) / std::max(1, gh - 1));
              break;
            default:  // rising diagonal
              for (int t = 0; t < gh; ++t) plot(y0 + gh - 1 - t, x0 + t * (gw - 1) / std::max(1, gh - 1));
              break;
          }
        }
        x0 += gw + 2;
      }
      x0 += gw;  // word gap
    }
    y0 += gh + gh / 2 + 1;
  }
}

void render_pictorial(GrayImage& img, const Region& r, Rng& rng) {
  std::uniform_real_distribution<double> base(70.0, 170.0), slope(-50.0, 50.0), amp(-60.0, 60.0), u01(0.0, 1.0);
  const double b = base(rng), sx = slope(rng), sy = slope(rng);
  struct Blob {
    double cy, cx, a, s;
  };
  std::vector<Blob> blobs;
  for (int i = 0; i < 3; ++i)
    blobs.push_back({u01(rng), u01(rng), amp(rng), 0.15 + 0.25 * u01(rng)});
  for (std::size_t y = 0; y < r.height; ++y) {
    for (std::size_t x = 0; x < r.width; ++x) {
      const double fy = static_cast<double>(y) / std::max<std::size_t>(1, r.height - 1);
      const double fx = static_cast<double>(x) / std::max<std::size_t>(1, r.width - 1);
      double v = b + sx * fx + sy * fy;
      for (const auto& bl : blobs) {
        const double d2 = (fy - bl.cy) * (fy - bl.cy) + (fx - bl.cx) * (fx - bl.cx);
        v += bl.a * std::exp(-0.5 * d2 / (bl.s * bl.s));
      }
      img.at(r.row + y, r.col + x) = std::clamp(v, 10.0, 245.0);
    }
  }
}

GrayImage make_reference_image(std::size_t height, std::size_t width, std::uint64_t seed) {
  GrayImage img(height, width);
  Rng rng(mix_seed(seed));
  const std::size_t h2 = height / 2, w2 = width / 2;
  const Region quads[4] = {
      {0, 0, h2, w2}, {0, w2, h2, width - w2}, {h2, 0, height - h2, w2}, {h2, w2, height - h2, width - w2}};
  // Text on one diagonal, pictorial content on the other.
  const bool main_diag = std::uniform_int_distribution<int>(0, 1)(rng) == 0;
  for (int q = 0; q < 4; ++q) {
    const bool text = ((q == 0 || q == 3) == main_diag);
    if (text)
      render_text(img, quads[q], rng);
    else
      render_pictorial(img, quads[q], rng);
  }
  return img;
}

DatabaseManifest make_synthetic_manifest(const std::filesystem::path& out_dir, const SynthCorpusOptions& opt) {
  if (opt.n_refs < 2) throw std::invalid_argument("make_synthetic_manifest: n_refs must be >= 2");
  if (opt.levels < 1 || opt.levels > kSynthLevels)
    throw std::invalid_argument("make_synthetic_manifest: levels must lie in 1.." + std::to_string(kSynthLevels));
  if (opt.kinds.empty()) throw std::invalid_argument("make_synthetic_manifest: no distortion kinds");
  for (auto k : opt.kinds)
    if (!is_synthesizable(k))
      throw std::invalid_argument("make_synthetic_manifest: cannot synthesize " + std::string(to_string(k)));
  if (opt.height < 32 || opt.width < 32)
    throw std::invalid_argument("make_synthetic_manifest: images must be at least 32x32");

  std::error_code ec;
  std::filesystem::create_directories(out_dir / "refs", ec);
  if (!ec) std::filesystem::create_directories(out_dir / "dist", ec);
  if (ec) throw std::runtime_error("make_synthetic_manifest: cannot create " + out_dir.string() + ": " + ec.message());

  DatabaseManifest m;
  m.root = out_dir;
  for (std::size_t r = 0; r < opt.n_refs; ++r) {
    char name[32];
    std::snprintf(name, sizeof name, "ref%02zu", r);
    const std::string ref_id = name;
    GrayImage ref = make_reference_image(opt.height, opt.width, derive_seed(opt.seed, r));
    ref.quantize_8bit();
    const auto ref_rel = std::filesystem::path("refs") / (ref_id + ".png");
    write_png_gray(out_dir / ref_rel, ref);

    for (auto kind : opt.kinds) {
      for (int level = 1; level <= opt.levels; ++level) {
        const auto stream = (r * 64 + static_cast<std::size_t>(kind)) * 16 + static_cast<std::size_t>(level);
        GrayImage d = synth_distort(ref, kind, level, derive_seed(opt.seed, 1000 + stream));
        const auto rel = std::filesystem::path("dist") /
                         (ref_id + "_" + std::string(to_string(kind)) + "_" + std::to_string(level) + ".png");
        write_png_gray(out_dir / rel, d);
        m.entries.push_back({rel, ref_rel, ref_id, kind, level, proxy_dmos(kind, level)});
      }
    }
  }
  save_manifest(out_dir / "manifest.csv", m);
  return m;
}

}  // namespace qodcnn
