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

#include "qodcnn/pooling.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <stdexcept>
#include <string>

namespace qodcnn {

namespace {

std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
  const auto m = static_cast<std::ptrdiff_t>(n);
  if (i < 0) i = -i;
  if (i >= m) i = 2 * (m - 1) - i;
  return static_cast<std::size_t>(i);
}

void check_lsd_input(const GrayImage& img, const LsdParams& p) {
  if (!(p.sigma > 0.0)) throw std::invalid_argument("lsd_map: sigma must be > 0");
  if (img.height() < 2 * p.k + 1 || img.width() < 2 * p.l + 1)
    throw std::invalid_argument("lsd_map: image " + std::to_string(img.height()) + "x" +
                                std::to_string(img.width()) + " smaller than the " + std::to_string(2 * p.k + 1) +
                                "x" + std::to_string(2 * p.l + 1) + " window");
}

}  // namespace

std::vector<double> lsd_window(const LsdParams& p) {
  const auto kh = static_cast<std::ptrdiff_t>(p.k);
  const auto lh = static_cast<std::ptrdiff_t>(p.l);
  std::vector<double> w;
  w.reserve((2 * p.k + 1) * (2 * p.l + 1));
  for (std::ptrdiff_t a = -kh; a <= kh; ++a)
    for (std::ptrdiff_t b = -lh; b <= lh; ++b)
      w.push_back(std::exp(-static_cast<double>(a * a + b * b) / (2.0 * p.sigma * p.sigma)));
  const double sum = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& v : w) v /= sum;
  return w;
}

LsdMap lsd_map(const GrayImage& img, const LsdParams& p) {
  check_lsd_input(img, p);
  const std::size_t h = img.height(), w = img.width();
  const std::size_t ph = h + 2 * p.k, pw = w + 2 * p.l;
  const std::size_t wh = 2 * p.k + 1, ww = 2 * p.l + 1;
  const auto win = lsd_window(p);

  std::vector<double> pad(ph * pw);
  for (std::size_t r = 0; r < ph; ++r) {
    const std::size_t sr = reflect(static_cast<std::ptrdiff_t>(r) - static_cast<std::ptrdiff_t>(p.k), h);
    for (std::size_t c = 0; c < pw; ++c)
      pad[r * pw + c] = img.at(sr, reflect(static_cast<std::ptrdiff_t>(c) - static_cast<std::ptrdiff_t>(p.l), w));
  }

  LsdMap out{h, w, std::vector<double>(h * w), p};
  // Sums run on offsets from the centre pixel, so constant regions give exactly zero.
#pragma omp parallel
  {
    std::vector<double> mu(w), acc(w);
#pragma omp for schedule(static)
    for (std::size_t r = 0; r < h; ++r) {
      const double* centre = pad.data() + (r + p.k) * pw + p.l;
      std::fill(mu.begin(), mu.end(), 0.0);
      for (std::size_t a = 0; a < wh; ++a)
        for (std::size_t b = 0; b < ww; ++b) {
          const double wt = win[a * ww + b];
          const double* src = pad.data() + (r + a) * pw + b;
#pragma omp simd
          for (std::size_t c = 0; c < w; ++c) mu[c] += wt * (src[c] - centre[c]);
        }
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t a = 0; a < wh; ++a)
        for (std::size_t b = 0; b < ww; ++b) {
          const double wt = win[a * ww + b];
          const double* src = pad.data() + (r + a) * pw + b;
#pragma omp simd
          for (std::size_t c = 0; c < w; ++c) {
            const double d = src[c] - centre[c] - mu[c];
            acc[c] += wt * d * d;
          }
        }
      double* dst = out.values.data() + r * w;
      for (std::size_t c = 0; c < w; ++c) dst[c] = std::sqrt(acc[c]);
    }
  }
  return out;
}

namespace reference {

LsdMap lsd_map(const GrayImage& img, const LsdParams& p) {
  check_lsd_input(img, p);
  const std::size_t h = img.height(), w = img.width();
  const auto kh = static_cast<std::ptrdiff_t>(p.k);
  const auto lh = static_cast<std::ptrdiff_t>(p.l);
  const auto win = lsd_window(p);
  const std::size_t ww = 2 * p.l + 1;
  LsdMap out{h, w, std::vector<double>(h * w), p};
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      auto px = [&](std::ptrdiff_t a, std::ptrdiff_t b) {
        return img.at(reflect(static_cast<std::ptrdiff_t>(i) + a, h), reflect(static_cast<std::ptrdiff_t>(j) + b, w));
      };
      double mu = 0.0;
      for (std::ptrdiff_t a = -kh; a <= kh; ++a)
        for (std::ptrdiff_t b = -lh; b <= lh; ++b)
          mu += win[static_cast<std::size_t>(a + kh) * ww + static_cast<std::size_t>(b + lh)] * px(a, b);
      double var = 0.0;
      for (std::ptrdiff_t a = -kh; a <= kh; ++a)
        for (std::ptrdiff_t b = -lh; b <= lh; ++b) {
          const double d = px(a, b) - mu;
          var += win[static_cast<std::size_t>(a + kh) * ww + static_cast<std::size_t>(b + lh)] * d * d;
        }
      out.values[i * w + j] = std::sqrt(var);
    }
  return out;
}

}  // namespace reference

double vlsd(const LsdMap& map, std::size_t top, std::size_t left) {
  if (top + kPatchSize > map.height || left + kPatchSize > map.width)
    throw std::out_of_range("vlsd: region at (" + std::to_string(top) + ", " + std::to_string(left) +
                            ") exceeds the " + std::to_string(map.height) + "x" + std::to_string(map.width) + " map");
  double mean = 0.0;
  for (std::size_t r = 0; r < kPatchSize; ++r)
    for (std::size_t c = 0; c < kPatchSize; ++c) mean += map.at(top + r, left + c);
  mean /= static_cast<double>(kPatchPixels);
  double var = 0.0;
  for (std::size_t r = 0; r < kPatchSize; ++r)
    for (std::size_t c = 0; c < kPatchSize; ++c) {
      const double d = map.at(top + r, left + c) - mean;
      var += d * d;
    }
  return var / static_cast<double>(kPatchPixels);
}

std::vector<double> patch_vlsd(const LsdMap& map) {
  std::vector<double> out;
  for (std::size_t r = 0; r + kPatchSize <= map.height; r += kPatchSize)
    for (std::size_t c = 0; c + kPatchSize <= map.width; c += kPatchSize) out.push_back(vlsd(map, r, c));
  return out;
}

double average_pool(std::span<const double> scores) {
  if (scores.empty()) throw std::invalid_argument("average_pool: empty score list");
  return std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
}

double weighted_pool(std::span<const double> scores, std::span<const double> weights) {
  if (scores.empty()) throw std::invalid_argument("weighted_pool: empty score list");
  if (scores.size() != weights.size())
    throw std::invalid_argument("weighted_pool: " + std::to_string(scores.size()) + " scores but " +
                                std::to_string(weights.size()) + " weights");
  double wsum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("weighted_pool: negative or NaN weight");
    wsum += w;
  }
  const bool uniform = std::all_of(weights.begin(), weights.end(), [&](double w) { return w == weights[0]; });
  if (uniform || wsum <= 1e-12) return average_pool(scores);
  double acc = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) acc += scores[i] * weights[i];
  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  return std::clamp(acc / wsum, *lo, *hi);
}

std::string_view to_string(Pooling p) { return p == Pooling::Vlsd ? "vlsd" : "average"; }

std::optional<Pooling> parse_pooling(std::string_view s) {
  if (s == "vlsd") return Pooling::Vlsd;
  if (s == "average") return Pooling::Average;
  return std::nullopt;
}

LocalQualityMap score_image(const QodcnnModel& model, const GrayImage& img, const GrayImage* ref,
                            Pooling pooling) {
  if (model.is_fr() && !ref) throw std::invalid_argument("score_image: FR model needs a reference image");
  if (!model.is_fr() && ref) throw std::invalid_argument("score_image: NR model does not take a reference image");
  if (ref && (ref->height() != img.height() || ref->width() != img.width()))
    throw std::invalid_argument("score_image: reference is " + std::to_string(ref->height()) + "x" +
                                std::to_string(ref->width()) + ", distorted is " + std::to_string(img.height()) + "x" +
                                std::to_string(img.width()));
  const PatchBatch dist = extract_patches(img, 0.0, "image");
  std::optional<PatchBatch> refp;
  if (ref) refp = extract_patches(*ref, 0.0, "image");

  LocalQualityMap out;
  out.pooling = pooling;
  out.grid_rows = img.height() / kPatchSize;
  out.grid_cols = img.width() / kPatchSize;
  out.positions = dist.grid_positions;
  out.scores = predict(model, dist, refp ? &*refp : nullptr);
  out.weights = patch_vlsd(lsd_map(img));
  out.score = pooling == Pooling::Vlsd ? weighted_pool(out.scores, out.weights) : average_pool(out.scores);
  return out;
}

double gradient_entropy(const GrayImage& img, std::size_t top, std::size_t left, std::size_t bins) {
  if (top + kPatchSize > img.height() || left + kPatchSize > img.width())
    throw std::out_of_range("gradient_entropy: region exceeds image bounds");
  if (bins < 2) throw std::invalid_argument("gradient_entropy: need at least 2 bins");
  const std::size_t h = img.height(), w = img.width();
  // Central differences of 8-bit data stay below 255 / sqrt(2).
  const double max_mag = 255.0 / std::sqrt(2.0);
  std::vector<double> hist(bins, 0.0);
  for (std::size_t r = top; r < top + kPatchSize; ++r)
    for (std::size_t c = left; c < left + kPatchSize; ++c) {
      const double gx = 0.5 * (img.at(r, std::min(c + 1, w - 1)) - img.at(r, c > 0 ? c - 1 : 0));
      const double gy = 0.5 * (img.at(std::min(r + 1, h - 1), c) - img.at(r > 0 ? r - 1 : 0, c));
      const double m = std::min(std::hypot(gx, gy), max_mag);
      const auto b = std::min(bins - 1, static_cast<std::size_t>(m / max_mag * static_cast<double>(bins)));
      hist[b] += 1.0;
    }
  double e = 0.0;
  for (double n : hist)
    if (n > 0.0) {
      const double q = n / static_cast<double>(kPatchPixels);
      e -= q * std::log2(q);
    }
  return e;
}

std::vector<double> patch_gradient_entropy(const GrayImage& img, std::size_t bins) {
  std::vector<double> out;
  for (std::size_t r = 0; r + kPatchSize <= img.height(); r += kPatchSize)
    for (std::size_t c = 0; c + kPatchSize <= img.width(); c += kPatchSize)
      out.push_back(gradient_entropy(img, r, c, bins));
  return out;
}

void write_quality_csv(const std::filesystem::path& path, const LocalQualityMap& map) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "row,col,score,vlsd\n" << std::setprecision(10);
  for (std::size_t i = 0; i < map.scores.size(); ++i)
    out << map.positions[i].row << ',' << map.positions[i].col << ',' << map.scores[i] << ',' << map.weights[i]
        << '\n';
}

void write_quality_heatmap(const std::filesystem::path& path, const LocalQualityMap& map) {
  constexpr std::size_t cell = 16, gap = 8;
  if (map.scores.empty()) throw std::invalid_argument("write_quality_heatmap: empty map");
  const std::size_t ph = map.grid_rows * cell, pw = map.grid_cols * cell;
  const std::size_t width = 2 * pw + gap;
  std::vector<unsigned char> rgb(ph * width * 3, 255);
  auto panel = [&](std::span<const double> v, std::size_t x0) {
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    const double span = *hi - *lo;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double t = span > 0.0 ? (v[i] - *lo) / span : 0.5;
      // Blue for low values through to red for high ones.
      const auto red = static_cast<unsigned char>(std::lround(255.0 * t));
      const auto green = static_cast<unsigned char>(std::lround(255.0 * (1.0 - std::abs(2.0 * t - 1.0))));
      const auto blue = static_cast<unsigned char>(std::lround(255.0 * (1.0 - t)));
      for (std::size_t y = 0; y < cell; ++y)
        for (std::size_t x = 0; x < cell; ++x) {
          const std::size_t py = map.positions[i].row * cell + y;
          const std::size_t px = x0 + map.positions[i].col * cell + x;
          unsigned char* p = &rgb[(py * width + px) * 3];
          p[0] = red;
          p[1] = green;
          p[2] = blue;
        }
    }
  };
  panel(map.scores, 0);
  panel(map.weights, pw + gap);
  write_png_rgb(path, ph, width, rgb);
}

}  // namespace qodcnn
