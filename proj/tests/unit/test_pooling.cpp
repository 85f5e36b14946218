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

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "qodcnn/pooling.hpp"
#include "qodcnn/synth.hpp"
#include "test_support.hpp"

using namespace qodcnn;
using namespace qodcnn::testing;

namespace {

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

QodcnnModel tiny_model(Mode mode) {
  ModelConfig c;
  c.mode = mode;
  c.conv_channels = {2, 2, 4, 4, 4, 4, 8, 8};
  c.fc_width = 8;
  auto m = build_model(c, 21);
  // Non-trivial bias so scores are not all near zero.
  m.tensor("fc2.bias").data[0] = 40.0;
  return m;
}

}  // namespace

TEST_CASE("LSD window is a normalized 7x7 Gaussian") {
  const auto w = lsd_window({});
  REQUIRE(w.size() == 49);
  CHECK(std::accumulate(w.begin(), w.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(w[24] == *std::max_element(w.begin(), w.end()));
  CHECK(w[0] == doctest::Approx(w[48]).epsilon(1e-15));
  CHECK(w[0] / w[24] == doctest::Approx(std::exp(-18.0 / 4.5)).epsilon(1e-12));
}

TEST_CASE("LSD matches the brute-force oracle and the reference implementation") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const auto img = random_image(40 + seed, 37 + 3 * seed, seed);
    const auto fast = lsd_map(img);
    const auto slow = reference::lsd_map(img);
    const auto oracle = brute_force_lsd(img);
    CHECK(fast.height == img.height());
    CHECK(fast.width == img.width());
    CHECK(max_abs_diff(fast.values, oracle) < 1e-9);
    CHECK(max_abs_diff(slow.values, oracle) < 1e-9);
    for (double v : fast.values) CHECK(v >= 0.0);
  }
  // Smallest legal image and a non-default window.
  const auto small = random_image(7, 7, 9);
  CHECK(max_abs_diff(lsd_map(small).values, brute_force_lsd(small)) < 1e-9);
  const auto wide = random_image(20, 30, 10);
  CHECK(max_abs_diff(lsd_map(wide, {2, 4, 0.8}).values, brute_force_lsd(wide, 2, 4, 0.8)) < 1e-9);
  CHECK_THROWS_AS(lsd_map(random_image(6, 40, 1)), std::invalid_argument);
  CHECK_THROWS_AS(lsd_map(random_image(40, 40, 1), {3, 3, 0.0}), std::invalid_argument);
}

TEST_CASE("LSD examples") {
  for (double v : lsd_map(GrayImage(33, 41, 87.0)).values) CHECK(v == 0.0);

  auto img = random_image(48, 48, 4);
  for (double& v : img.pixels()) v *= 0.5;
  auto shifted = img;
  for (double& v : shifted.pixels()) v += 100.0;
  CHECK(max_abs_diff(lsd_map(img).values, lsd_map(shifted).values) < 1e-9);

  GrayImage spike(21, 21, 0.0);
  spike.at(10, 10) = 200.0;
  const auto w = lsd_window({});
  // Window centred on the spike: mu = w0 * h, variance = sum_k w_k (x_k - mu)^2.
  const double mu = w[24] * 200.0;
  double var = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k) var += w[k] * ((k == 24 ? 200.0 : 0.0) - mu) * ((k == 24 ? 200.0 : 0.0) - mu);
  CHECK(std::abs(lsd_map(spike).at(10, 10) - std::sqrt(var)) < 1e-9);
  CHECK(max_abs_diff(lsd_map(spike).values, brute_force_lsd(spike)) < 1e-9);
}

TEST_CASE("VLSD examples") {
  LsdMap flat{32, 32, std::vector<double>(1024, 3.0), {}};
  CHECK(vlsd(flat, 0, 0) == 0.0);

  LsdMap half{32, 40, std::vector<double>(32 * 40, 0.0), {}};
  for (std::size_t r = 16; r < 32; ++r)
    for (std::size_t c = 0; c < 40; ++c) half.values[r * 40 + c] = 1.0;
  CHECK(vlsd(half, 0, 0) == 0.25);
  CHECK(vlsd(half, 0, 8) == 0.25);
  CHECK_THROWS_AS(vlsd(half, 1, 0), std::out_of_range);
  CHECK_THROWS_AS(vlsd(half, 0, 9), std::out_of_range);

  // Scaling pixels by a scales LSD by a, so the variance of LSD scales by a^2.
  const auto img = random_image(64, 64, 5);
  for (double a : {0.25, 0.5, 0.9}) {
    GrayImage scaled = img;
    for (double& v : scaled.pixels()) v *= a;
    const auto base = patch_vlsd(lsd_map(img));
    const auto s = patch_vlsd(lsd_map(scaled));
    REQUIRE(base.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) CHECK(s[i] == doctest::Approx(a * a * base[i]).epsilon(1e-10));
  }
}

TEST_CASE("pooling examples and invariants") {
  const std::vector<double> s{10.0, 50.0}, w{3.0, 1.0};
  CHECK(weighted_pool(s, w) == 20.0);
  const std::vector<double> five{5.0}, mid{0.0, 100.0};
  CHECK(average_pool(five) == 5.0);
  CHECK(average_pool(mid) == 50.0);

  const auto scores = random_values(37, 1, 10.0, 90.0);
  const auto weights = random_values(37, 2, 0.0, 5.0);
  const std::vector<double> unit(37, 1.0), uniform(37, 0.37), zeros(37, 0.0);
  CHECK(weighted_pool(scores, unit) == average_pool(scores));
  CHECK(weighted_pool(scores, uniform) == average_pool(scores));
  CHECK(weighted_pool(scores, zeros) == average_pool(scores));

  const double base = weighted_pool(scores, weights);
  for (double c : {1e-6, 0.3, 7.0, 1e6}) {
    std::vector<double> wc = weights;
    for (double& v : wc) v *= c;
    CHECK(weighted_pool(scores, wc) == doctest::Approx(base).epsilon(1e-13));
  }
  CHECK(base >= *std::min_element(scores.begin(), scores.end()));
  CHECK(base <= *std::max_element(scores.begin(), scores.end()));

  std::vector<std::size_t> perm(37);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(mix_seed(3));
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<double> ps, pw;
  for (auto i : perm) {
    ps.push_back(scores[i]);
    pw.push_back(weights[i]);
  }
  CHECK(weighted_pool(ps, pw) == doctest::Approx(base).epsilon(1e-13));
  CHECK(average_pool(ps) == doctest::Approx(average_pool(scores)).epsilon(1e-13));

  const std::vector<double> neg{1.0, -1.0}, nan_w{1.0, NAN}, empty;
  CHECK_THROWS_AS(weighted_pool(s, neg), std::invalid_argument);
  CHECK_THROWS_AS(weighted_pool(s, nan_w), std::invalid_argument);
  CHECK_THROWS_AS(weighted_pool(s, five), std::invalid_argument);
  CHECK_THROWS_AS(weighted_pool(empty, empty), std::invalid_argument);
  CHECK_THROWS_AS(average_pool(empty), std::invalid_argument);
}

TEST_CASE("pooling names") {
  CHECK(parse_pooling("vlsd") == Pooling::Vlsd);
  CHECK(parse_pooling("average") == Pooling::Average);
  CHECK_FALSE(parse_pooling("max").has_value());
  CHECK(to_string(Pooling::Vlsd) == "vlsd");
}

TEST_CASE("score_image") {
  const auto nr = tiny_model(Mode::NR);
  const auto one = random_image(32, 32, 1);
  for (auto p : {Pooling::Vlsd, Pooling::Average}) {
    const auto m = score_image(nr, one, nullptr, p);
    REQUIRE(m.scores.size() == 1);
    CHECK(m.score == m.scores[0]);
    CHECK(m.pooling == p);
  }

  const auto img = random_image(70, 100, 2);
  const auto a = score_image(nr, img, nullptr, Pooling::Vlsd);
  CHECK(a == score_image(nr, img, nullptr, Pooling::Vlsd));
  CHECK(a.grid_rows == 2);
  CHECK(a.grid_cols == 3);
  CHECK(a.positions.size() == 6);
  CHECK(a.weights == patch_vlsd(lsd_map(img)));
  CHECK(a.score == weighted_pool(a.scores, a.weights));
  CHECK(score_image(nr, img, nullptr, Pooling::Average).score == average_pool(a.scores));

  const auto fr = tiny_model(Mode::FR);
  const auto ref = random_image(70, 100, 3);
  const auto f = score_image(fr, img, &ref, Pooling::Vlsd);
  // Weights come from the distorted image only.
  CHECK(f.weights == a.weights);
  CHECK_THROWS_AS(score_image(fr, img, nullptr, Pooling::Vlsd), std::invalid_argument);
  CHECK_THROWS_AS(score_image(nr, img, &ref, Pooling::Vlsd), std::invalid_argument);
  const auto small_ref = random_image(64, 100, 3);
  CHECK_THROWS_AS(score_image(fr, img, &small_ref, Pooling::Vlsd), std::invalid_argument);
}

TEST_CASE("VLSD is larger on text than on smooth gradients") {
  GrayImage img(128, 128, 255.0);
  Rng rng(mix_seed(12));
  render_text(img, {0, 0, 128, 64}, rng);
  render_pictorial(img, {0, 64, 128, 64}, rng);
  const auto w = patch_vlsd(lsd_map(img));
  REQUIRE(w.size() == 16);
  double text = 0.0, pict = 0.0;
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) (c < 2 ? text : pict) += w[r * 4 + c] / 8.0;
  CHECK(text > pict);
}

TEST_CASE("gradient entropy") {
  CHECK(gradient_entropy(GrayImage(32, 32, 9.0), 0, 0) == 0.0);
  const auto img = random_image(64, 64, 8);
  const double h = gradient_entropy(img, 0, 32);
  CHECK(h > 0.0);
  CHECK(h <= 5.0 + 1e-12);  // bits, at most log2(bins)
  CHECK(patch_gradient_entropy(img).size() == 4);
  CHECK(patch_gradient_entropy(img)[1] == h);
  CHECK_THROWS_AS(gradient_entropy(img, 33, 0), std::out_of_range);
  CHECK_THROWS_AS(gradient_entropy(img, 0, 0, 1), std::invalid_argument);
}

TEST_CASE("quality map export") {
  const auto dir = scratch_dir("pooling_export");
  const auto m = score_image(tiny_model(Mode::NR), random_image(64, 96, 4), nullptr, Pooling::Vlsd);
  write_quality_csv(dir / "map.csv", m);
  std::ifstream in(dir / "map.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "row,col,score,vlsd");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 6);

  write_quality_heatmap(dir / "map.png", m);
  const auto png = read_png_gray(dir / "map.png");
  CHECK(png.height() == 2 * 16);
  CHECK(png.width() == 2 * 3 * 16 + 8);
  CHECK_THROWS_AS(write_quality_heatmap(dir / "empty.png", LocalQualityMap{}), std::invalid_argument);
}
