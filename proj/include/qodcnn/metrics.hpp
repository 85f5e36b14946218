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

// Correlation metrics and the five-parameter logistic mapping
//
//   f(x) = b1 * (1/2 - 1 / (1 + exp(b2 * (x - b3)))) + b4 * x + b5
//
// applied to objective scores before PLCC and RMSE are taken.

#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace qodcnn {

/// Pearson correlation. Throws std::invalid_argument for N < 3, length
/// mismatch, or a constant input.
double plcc(std::span<const double> o, std::span<const double> s);
/// Spearman correlation: Pearson on fractional (tie-averaged) ranks.
double srcc(std::span<const double> o, std::span<const double> s);
double rmse(std::span<const double> o, std::span<const double> s);

/// 1-based ranks; tied values share the mean of their positions.
std::vector<double> fractional_ranks(std::span<const double> v);

struct LogisticParams {
  std::array<double, 5> beta{};
  double operator()(double x) const;
};

struct LogisticFit {
  LogisticParams params;
  double initial_sse = 0.0;
  double sse = 0.0;
  int starts_used = 0;
  bool converged = false;  // false: params are the best found, not a certified minimum
};

/// Levenberg-Marquardt least squares of f(o) against s. Needs N >= 6 and a
/// non-constant o. The first start is b1 = sign(corr) * (max s - min s),
/// b2 = 1/std(o), b3 = mean(o), b4 = 0, b5 = mean(s); further starts rescale
/// b2 and b1 when the first does not converge.
LogisticFit logistic_fit(std::span<const double> o, std::span<const double> s);

struct Mapping {
  LogisticParams params;
  std::string method;  // "logistic" or "linear" (fewer than 6 points)
  bool warning = false;

  double operator()(double x) const { return params(x); }
};

/// Logistic fit when N >= 6, otherwise an ordinary least-squares line.
Mapping fit_mapping(std::span<const double> pred, std::span<const double> dmos);

struct MetricSet {
  std::size_t n = 0;
  double plcc = 0.0;  // NaN when undefined (constant data or N < 3)
  double srcc = 0.0;
  double rmse = 0.0;
  Mapping mapping;
};

/// PLCC and RMSE between dmos and mapping(pred); SRCC on the raw predictions.
MetricSet evaluate_mapped(const Mapping& mapping, std::span<const double> pred, std::span<const double> dmos);
/// Fits the mapping on the same data it evaluates.
MetricSet evaluate_scores(std::span<const double> pred, std::span<const double> dmos);

double psnr(std::span<const double> a, std::span<const double> b, double peak = 255.0);

}  // namespace qodcnn
