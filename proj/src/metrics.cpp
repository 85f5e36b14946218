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

#include "qodcnn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace qodcnn {

namespace {

void check_pair(std::span<const double> o, std::span<const double> s, std::size_t min_n, const char* fn) {
  if (o.size() != s.size())
    throw std::invalid_argument(std::string(fn) + ": length mismatch (" + std::to_string(o.size()) + " vs " +
                                std::to_string(s.size()) + ")");
  if (o.size() < min_n)
    throw std::invalid_argument(std::string(fn) + ": need at least " + std::to_string(min_n) + " points");
}

double mean(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

double pearson(std::span<const double> o, std::span<const double> s, const char* fn) {
  const double mo = mean(o), ms = mean(s);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < o.size(); ++i) {
    const double a = o[i] - mo, b = s[i] - ms;
    sxy += a * b;
    sxx += a * a;
    syy += b * b;
  }
  if (sxx == 0.0 || syy == 0.0) throw std::invalid_argument(std::string(fn) + ": correlation undefined for constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// 1/(1+exp(z)) without overflow.
double inv_one_plus_exp(double z) {
  if (z >= 0.0) {
    const double e = std::exp(-z);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(z));
}

double sse(const LogisticParams& p, std::span<const double> o, std::span<const double> s) {
  double acc = 0.0;
  for (std::size_t i = 0; i < o.size(); ++i) {
    const double r = p(o[i]) - s[i];
    acc += r * r;
  }
  return acc;
}

struct LmOutcome {
  LogisticParams params;
  double sse;
  bool converged;
};

LmOutcome levenberg_marquardt(LogisticParams p, std::span<const double> o, std::span<const double> s) {
  using Mat5 = Eigen::Matrix<double, 5, 5>;
  using Vec5 = Eigen::Matrix<double, 5, 1>;
  constexpr int kMaxIter = 500;
  double cur = sse(p, o, s);
  double lambda = 1e-3;
  for (int it = 0; it < kMaxIter; ++it) {
    Mat5 jtj = Mat5::Zero();
    Vec5 jtr = Vec5::Zero();
    for (std::size_t i = 0; i < o.size(); ++i) {
      const auto& b = p.beta;
      const double q = inv_one_plus_exp(b[1] * (o[i] - b[2]));
      const double dq = q * (1.0 - q);
      Vec5 j;
      j << 0.5 - q, b[0] * dq * (o[i] - b[2]), -b[0] * dq * b[1], o[i], 1.0;
      const double r = p(o[i]) - s[i];
      jtj.noalias() += j * j.transpose();
      jtr += j * r;
    }
    if (jtr.cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + cur)) return {p, cur, true};

    bool improved = false;
    while (lambda < 1e12) {
      Mat5 a = jtj;
      for (int d = 0; d < 5; ++d) a(d, d) += lambda * std::max(jtj(d, d), 1e-12);
      const Vec5 delta = a.ldlt().solve(-jtr);
      LogisticParams cand = p;
      for (int d = 0; d < 5; ++d) cand.beta[static_cast<std::size_t>(d)] += delta(d);
      const double next = sse(cand, o, s);
      if (std::isfinite(next) && next < cur) {
        const double rel = (cur - next) / std::max(cur, 1e-300);
        p = cand;
        cur = next;
        lambda = std::max(lambda / 10.0, 1e-12);
        improved = true;
        if (rel < 1e-12) return {p, cur, true};
        break;
      }
      lambda *= 10.0;
    }
    // No downhill step at any damping: a stationary point up to round-off.
    if (!improved) return {p, cur, true};
  }
  return {p, cur, false};
}

}  // namespace

std::vector<double> fractional_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = r;
    i = j + 1;
  }
  return rank;
}

double plcc(std::span<const double> o, std::span<const double> s) {
  check_pair(o, s, 3, "plcc");
  return pearson(o, s, "plcc");
}

double srcc(std::span<const double> o, std::span<const double> s) {
  check_pair(o, s, 3, "srcc");
  const auto ro = fractional_ranks(o);
  const auto rs = fractional_ranks(s);
  return pearson(ro, rs, "srcc");
}

double rmse(std::span<const double> o, std::span<const double> s) {
  check_pair(o, s, 1, "rmse");
  double acc = 0.0;
  for (std::size_t i = 0; i < o.size(); ++i) acc += (o[i] - s[i]) * (o[i] - s[i]);
  return std::sqrt(acc / static_cast<double>(o.size()));
}

double LogisticParams::operator()(double x) const {
  return beta[0] * (0.5 - inv_one_plus_exp(beta[1] * (x - beta[2]))) + beta[3] * x + beta[4];
}

LogisticFit logistic_fit(std::span<const double> o, std::span<const double> s) {
  check_pair(o, s, 6, "logistic_fit");
  for (std::size_t i = 0; i < o.size(); ++i)
    if (!std::isfinite(o[i]) || !std::isfinite(s[i])) throw std::invalid_argument("logistic_fit: non-finite input");
  const double mo = mean(o), ms = mean(s);
  double var = 0.0;
  for (double x : o) var += (x - mo) * (x - mo);
  const double sd = std::sqrt(var / static_cast<double>(o.size()));
  if (!(sd > 0.0)) throw std::invalid_argument("logistic_fit: objective scores are constant");
  double corr_sign = 1.0;
  try {
    corr_sign = pearson(o, s, "logistic_fit") < 0.0 ? -1.0 : 1.0;
  } catch (const std::invalid_argument&) {
  }
  const auto [lo, hi] = std::minmax_element(s.begin(), s.end());

  LogisticParams init{{corr_sign * (*hi - *lo), 1.0 / sd, mo, 0.0, ms}};
  LogisticFit fit;
  fit.initial_sse = sse(init, o, s);
  fit.params = init;
  fit.sse = fit.initial_sse;

  // Restart budget: the documented start, then b2 scaled by 1/10, 10, 1/100, 100, then b1 flipped.
  constexpr double kSlopeScale[] = {1.0, 0.1, 10.0, 0.01, 100.0};
  std::vector<LogisticParams> starts;
  for (double sign : {1.0, -1.0})
    for (double k : kSlopeScale) {
      LogisticParams p = init;
      p.beta[0] *= sign;
      p.beta[1] *= k;
      starts.push_back(p);
    }
  for (const auto& start : starts) {
    ++fit.starts_used;
    const auto r = levenberg_marquardt(start, o, s);
    if (r.sse < fit.sse || (r.sse == fit.sse && r.converged && !fit.converged)) {
      fit.params = r.params;
      fit.sse = r.sse;
      fit.converged = r.converged;
    }
    if (r.converged && fit.converged) break;
  }
  return fit;
}

Mapping fit_mapping(std::span<const double> pred, std::span<const double> dmos) {
  check_pair(pred, dmos, 2, "fit_mapping");
  Mapping m;
  const bool constant = std::all_of(pred.begin(), pred.end(), [&](double v) { return v == pred[0]; });
  if (pred.size() >= 6 && !constant) {
    const auto fit = logistic_fit(pred, dmos);
    m.params = fit.params;
    m.method = "logistic";
    m.warning = !fit.converged;
    return m;
  }
  const double mx = mean(pred), my = mean(dmos);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    sxx += (pred[i] - mx) * (pred[i] - mx);
    sxy += (pred[i] - mx) * (dmos[i] - my);
  }
  const double slope = sxx > 0.0 ? sxy / sxx : 0.0;
  m.params = LogisticParams{{0.0, 1.0, mx, slope, my - slope * mx}};
  m.method = "linear";
  m.warning = !(sxx > 0.0);
  return m;
}

MetricSet evaluate_mapped(const Mapping& mapping, std::span<const double> pred, std::span<const double> dmos) {
  check_pair(pred, dmos, 1, "evaluate_mapped");
  MetricSet out;
  out.n = pred.size();
  out.mapping = mapping;
  std::vector<double> mapped(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) mapped[i] = mapping(pred[i]);
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  try {
    out.plcc = plcc(dmos, mapped);
  } catch (const std::invalid_argument&) {
    out.plcc = nan;
  }
  try {
    out.srcc = srcc(dmos, pred);
  } catch (const std::invalid_argument&) {
    out.srcc = nan;
  }
  out.rmse = rmse(dmos, mapped);
  return out;
}

MetricSet evaluate_scores(std::span<const double> pred, std::span<const double> dmos) {
  return evaluate_mapped(fit_mapping(pred, dmos), pred, dmos);
}

double psnr(std::span<const double> a, std::span<const double> b, double peak) {
  const double e = rmse(a, b);
  if (e == 0.0) return std::numeric_limits<double>::infinity();
  return 20.0 * std::log10(peak / e);
}

}  // namespace qodcnn
