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

// Acceptance runner. Prints one PASS/FAIL line per criterion with the
// measured value, its pinned limit and the wall-clock budget, then a few
// report-only lines. Exit status is nonzero when any criterion fails.
//
//   qodcnn_acceptance            run everything
//   qodcnn_acceptance 1 5 9      run selected criteria

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "qodcnn/checkpoint.hpp"
#include "qodcnn/metrics.hpp"
#include "qodcnn/pooling.hpp"
#include "qodcnn/protocol.hpp"
#include "qodcnn/synth.hpp"
#include "qodcnn/trainer.hpp"
#include "test_support.hpp"

using namespace qodcnn;
using namespace qodcnn::testing;

namespace {

// Pinned limits.
constexpr double kLsdTol = 1e-9;
constexpr double kGradTol = 1e-4;
constexpr double kGradStep = 1e-3;
constexpr double kOverfitL1 = 2.0;
constexpr int kOverfitSteps = 500;
constexpr double kOverfitLr = 1e-2;
constexpr int kSelectionCases = 1000;
constexpr double kIdentityTol = 1e-12;
constexpr double kLogisticRmse = 0.5;
constexpr double kPoolTol = 1e-12;
constexpr double kE2eSrcc = 0.8;
constexpr double kE2ePlcc = 0.8;

struct Outcome {
  Outcome() = default;
  Outcome(bool p, std::string d) : pass(p), detail(std::move(d)) {}

  bool pass = false;
  std::string detail;
  std::vector<std::string> notes;  // report-only lines printed after the verdict
};

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// 1 ---------------------------------------------------------------------------
Outcome lsd_oracle() {
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto img = random_image(64, 64, 1000 + s);
    const auto fast = lsd_map(img);
    const auto oracle = brute_force_lsd(img);
    for (std::size_t i = 0; i < oracle.size(); ++i) worst = std::max(worst, std::abs(fast.values[i] - oracle[i]));
  }
  return {worst < kLsdTol, "max|lsd - oracle| = " + fmt("%.3g", worst) + " over 20 images (limit " +
                               fmt("%.0e", kLsdTol) + ")"};
}

// 2 ---------------------------------------------------------------------------
Outcome gradient_check() {
  double worst = 0.0;
  std::size_t checked = 0, crossings = 0;
  std::string where;
  for (bool fr : {false, true}) {
    ModelConfig c;
    c.weight_decay = 1e-2;
    auto m = build_custom(gradcheck_topology(fr), c, 17);
    condition_for_gradcheck(m, 18);
    const std::size_t b = 4;
    const auto d = random_values(b * 64, 31), r = random_values(b * 64, 32);
    std::optional<InputView> rv;
    if (fr) rv = InputView{r, b};
    auto probe = m;
    auto target = forward_train(probe, InputView{d, b}, rv).scores;
    for (std::size_t i = 0; i < b; ++i) target[i] += i % 2 ? -5.0 : 5.0;
    const auto res = finite_difference_check(m, d, fr ? &r : nullptr, b, target, kGradStep);
    checked += res.checked;
    crossings += res.pattern_changes;
    if (res.max_rel_error >= worst) {
      worst = res.max_rel_error;
      where = std::string(fr ? "FR " : "NR ") + res.worst;
    }
  }
  return {worst < kGradTol && crossings == 0,
          "max rel err = " + fmt("%.3g", worst) + " at " + where + " over " + std::to_string(checked) +
              " entries, step " + fmt("%.0e", kGradStep) + ", kink crossings " + std::to_string(crossings) +
              " (limit " + fmt("%.0e", kGradTol) + ")"};
}

// 3 ---------------------------------------------------------------------------
Outcome overfit() {
  TrainingSet ts;
  const auto labels = random_values(16, 52, 20.0, 90.0);
  for (std::size_t i = 0; i < 16; ++i) {
    const auto img = random_image(32, 32, 600 + i);
    ts.dist.append(extract_patches(img, labels[i], "p" + std::to_string(i)));
  }
  auto m = build_custom(micro_topology(), ModelConfig{}, 4);
  TrainSchedule s;
  s.base_lr = kOverfitLr;
  s.decay_interval_epochs = kOverfitSteps;  // constant rate
  s.total_epochs = kOverfitSteps;           // one full batch per epoch
  s.batch_size = 16;
  s.min_lr = 1e-13;
  s.seed = 5;
  const auto res = pretrain(m, ts, s);
  auto probe = m;
  const auto train_pred = forward_train(probe, InputView{ts.dist.patches, 16}).scores;
  const double l1 = l1_loss(train_pred, ts.dist.labels);
  const double l1_infer = l1_loss(predict(m, ts.dist, nullptr), ts.dist.labels);
  Outcome o{l1 < kOverfitL1, "train-phase L1 after " + std::to_string(kOverfitSteps) + " steps = " + fmt("%.4g", l1) +
                                 " (limit " + fmt("%.1f", kOverfitL1) + ", lr " + fmt("%.0e", kOverfitLr) + ")"};
  o.notes.push_back("infer-phase L1 on the same patches = " + fmt("%.4g", l1_infer) + "; first-epoch objective " +
                    fmt("%.4g", res.history.front().loss));
  return o;
}

// 4 ---------------------------------------------------------------------------
Outcome selection_law() {
  Rng rng(mix_seed(4040));
  std::uniform_int_distribution<int> images(1, 6), patches(1, 200), coarse(0, 7);
  std::uniform_real_distribution<double> ratio(0.0, 1.0), val(0.0, 100.0);
  int bad = 0;
  for (int c = 0; c < kSelectionCases; ++c) {
    const double p = std::max(1e-9, ratio(rng));
    std::vector<std::vector<double>> scores(static_cast<std::size_t>(images(rng)));
    std::vector<double> dmos;
    for (auto& s : scores) {
      s.resize(static_cast<std::size_t>(patches(rng)));
      for (double& v : s) v = c % 3 == 0 ? coarse(rng) * 5.0 : val(rng);
      dmos.push_back(val(rng));
    }
    const auto r = select_patches(scores, dmos, p);
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const auto n = scores[i].size();
      const auto expect = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(p * static_cast<double>(n))));
      const auto& im = r.images[i];
      std::vector<bool> kept(n, false);
      for (auto k : im.kept) kept[k] = true;
      double max_kept = -INFINITY, min_drop = INFINITY;
      for (std::size_t k = 0; k < n; ++k) {
        const double e = std::abs(scores[i][k] - dmos[i]);
        (kept[k] ? max_kept : min_drop) = kept[k] ? std::max(max_kept, e) : std::min(min_drop, e);
      }
      if (im.kept.size() != expect || max_kept > min_drop) ++bad;
    }
  }
  return {bad == 0, std::to_string(kSelectionCases) + " random cases, " + std::to_string(bad) +
                        " images violating count or ordering"};
}

// 5 ---------------------------------------------------------------------------
Outcome metric_identities() {
  Rng rng(mix_seed(5050));
  std::uniform_real_distribution<double> u(-50.0, 50.0), pos(0.1, 10.0);
  double worst_p = 0.0, worst_s = 0.0, worst_closed = 0.0;
  bool rmse_ok = true;
  for (int t = 0; t < 200; ++t) {
    std::vector<double> o(3 + static_cast<std::size_t>(t % 50)), affine, mono;
    for (double& v : o) v = u(rng);
    const double a = pos(rng), b = u(rng);
    for (double v : o) {
      affine.push_back(a * v + b);
      mono.push_back(std::exp(v / 20.0) + v);
    }
    worst_p = std::max(worst_p, std::abs(plcc(o, affine) - 1.0));
    worst_s = std::max(worst_s, std::abs(srcc(o, mono) - 1.0));
    rmse_ok &= rmse(o, o) == 0.0;
    auto other = o;
    other[static_cast<std::size_t>(t) % other.size()] += 1e-9;
    rmse_ok &= rmse(o, other) > 0.0;
  }
  std::size_t perms = 0;
  for (std::size_t n = 3; n <= 7; ++n) {
    std::vector<double> o(n), s(n);
    std::iota(o.begin(), o.end(), 1.0);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    do {
      double d2 = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        s[i] = static_cast<double>(perm[i]);
        d2 += (static_cast<double>(i) - s[i]) * (static_cast<double>(i) - s[i]);
      }
      const double nn = static_cast<double>(n);
      worst_closed = std::max(worst_closed, std::abs(srcc(o, s) - (1.0 - 6.0 * d2 / (nn * (nn * nn - 1.0)))));
      ++perms;
    } while (std::next_permutation(perm.begin(), perm.end()));
  }
  const bool pass = worst_p < kIdentityTol && worst_s < kIdentityTol && worst_closed < kIdentityTol && rmse_ok;
  return {pass, "|PLCC-1| " + fmt("%.2g", worst_p) + ", |SRCC-1| " + fmt("%.2g", worst_s) + ", closed-form gap " +
                    fmt("%.2g", worst_closed) + " over " + std::to_string(perms) + " permutations, RMSE zero iff equal: " +
                    (rmse_ok ? "yes" : "no") + " (limit " + fmt("%.0e", kIdentityTol) + ")"};
}

// 6 ---------------------------------------------------------------------------
Outcome logistic_recovery() {
  const LogisticParams truth{{40, 0.1, 50, 0.2, 10}};
  Rng rng(mix_seed(6060));
  std::uniform_real_distribution<double> x(0.0, 100.0);
  std::normal_distribution<double> noise(0.0, 0.1);
  std::vector<double> o, s;
  for (int i = 0; i < 200; ++i) {
    o.push_back(x(rng));
    s.push_back(truth(o.back()) + noise(rng));
  }
  const auto fit = logistic_fit(o, s);
  double err = 0.0;
  for (double v : o) err += (fit.params(v) - truth(v)) * (fit.params(v) - truth(v));
  err = std::sqrt(err / 200.0);
  std::ostringstream beta;
  for (double b : fit.params.beta) beta << ' ' << fmt("%.4g", b);
  return {err < kLogisticRmse && fit.converged,
          "RMSE vs noiseless curve = " + fmt("%.4g", err) + " (limit " + fmt("%.1f", kLogisticRmse) +
              "), beta =" + beta.str() + ", converged " + (fit.converged ? "yes" : "no")};
}

// 7 ---------------------------------------------------------------------------
Outcome pooling_invariants() {
  int exact_fail = 0, scale_fail = 0, bound_fail = 0;
  Rng rng(mix_seed(7070));
  std::uniform_int_distribution<int> len(1, 64);
  for (int t = 0; t < 500; ++t) {
    const auto n = static_cast<std::size_t>(len(rng));
    const auto s = random_values(n, 9000 + static_cast<std::uint64_t>(t), 0.0, 100.0);
    const auto w = random_values(n, 19000 + static_cast<std::uint64_t>(t), 0.0, 10.0);
    const std::vector<double> uni(n, 0.5 + t);
    exact_fail += weighted_pool(s, uni) != average_pool(s);
    const double base = weighted_pool(s, w);
    for (double c : {1e-3, 3.0, 1e4}) {
      std::vector<double> wc = w;
      for (double& v : wc) v *= c;
      scale_fail += std::abs(weighted_pool(s, wc) - base) > kPoolTol * std::max(1.0, std::abs(base));
    }
    bound_fail += base < *std::min_element(s.begin(), s.end()) || base > *std::max_element(s.begin(), s.end());
  }
  return {exact_fail + scale_fail + bound_fail == 0,
          "500 cases: uniform!=average " + std::to_string(exact_fail) + ", scale drift " + std::to_string(scale_fail) +
              ", out of bounds " + std::to_string(bound_fail)};
}

// 8 ---------------------------------------------------------------------------
Outcome end_to_end() {
  const auto dir = scratch_dir("acceptance_e2e");
  SynthCorpusOptions opt;
  opt.n_refs = 6;
  opt.kinds = {DistortionType::GN, DistortionType::GB, DistortionType::CC};
  opt.levels = 5;
  opt.seed = 1;
  const auto manifest = make_synthetic_manifest(dir / "corpus", opt);

  PipelineConfig cfg;
  cfg.model.mode = Mode::NR;
  cfg.model.conv_channels = {16, 16, 32, 32, 64, 64, 64, 64};
  cfg.model.fc_width = 128;
  for (auto* s : {&cfg.stage1, &cfg.stage2}) {
    s->base_lr = 1e-3;
    s->total_epochs = 20;
    s->batch_size = 64;
  }
  cfg.pooling = Pooling::Vlsd;
  cfg.seed = 1;
  const auto rep = run_protocol(manifest, cfg, 2, cfg.seed);
  write_report_json(dir / "report.json", rep);

  const auto* row = rep.find("stage2_vlsd");
  const double srcc_v = row ? row->srcc : NAN, plcc_v = row ? row->plcc : NAN;
  Outcome o{rep.complete_repeats == 2 && srcc_v >= kE2eSrcc && plcc_v >= kE2ePlcc,
            "stage2_vlsd mean SRCC " + fmt("%.4f", srcc_v) + ", PLCC " + fmt("%.4f", plcc_v) + " over " +
                std::to_string(rep.complete_repeats) + "/2 repeats (limits " + fmt("%.2f", kE2eSrcc) + ", " +
                fmt("%.2f", kE2ePlcc) + ")"};
  for (const char* v : {"stage1_average", "stage1_vlsd", "stage2_average", "stage2_vlsd"})
    if (const auto* r = rep.find(v))
      o.notes.push_back(std::string(v) + ": PLCC " + fmt("%.4f", r->plcc) + " SRCC " + fmt("%.4f", r->srcc) +
                        " RMSE " + fmt("%.3f", r->rmse));
  for (const auto& r : rep.repeats)
    if (!r.complete) o.notes.push_back("repeat " + std::to_string(r.index) + " failed: " + r.error);
  o.notes.push_back("report written to " + (dir / "report.json").string());
  return o;
}

// 9 ---------------------------------------------------------------------------
Outcome checkpoint_round_trip() {
  const auto dir = scratch_dir("acceptance_ckpt");
  ModelConfig c;
  c.mode = Mode::FR;
  c.conv_channels = {16, 16, 32, 32, 64, 64, 64, 64};
  c.fc_width = 128;
  auto m = build_model(c, 99);
  randomize_tensors(m, 98);
  round_to_storage_precision(m);
  PatchBatch dist, ref;
  for (std::size_t i = 0; i < 100; ++i) {
    dist.append(extract_patches(random_image(32, 32, 3000 + i), 50.0, "d"));
    ref.append(extract_patches(random_image(32, 32, 5000 + i), 50.0, "d"));
  }
  const auto before = predict(m, dist, &ref);
  const auto id = save_checkpoint(dir / "m.ckpt", m, {"", "acceptance", ""});
  CheckpointInfo info;
  const auto loaded = load_checkpoint(dir / "m.ckpt", &info);
  const auto after = predict(loaded, dist, &ref);
  std::size_t diff = 0;
  for (std::size_t i = 0; i < before.size(); ++i) diff += before[i] != after[i];
  const bool same_tensors = loaded.tensors == m.tensors;
  return {diff == 0 && same_tensors && info.id == id,
          std::to_string(diff) + " of 100 infer-mode scores differ after reload; tensors identical: " +
              (same_tensors ? "yes" : "no") + "; id " + id};
}

// Report-only: clean vs GN-5 agreement of per-patch VLSD and gradient entropy.
std::vector<std::string> noise_robustness_report() {
  std::vector<double> rho_v, rho_g;
  for (std::uint64_t s = 0; s < 6; ++s) {
    GrayImage clean = make_reference_image(128, 128, derive_seed(1, s));
    clean.quantize_8bit();
    GrayImage noisy = synth_distort(clean, DistortionType::GN, 5, 77 + s);
    rho_v.push_back(srcc(patch_vlsd(lsd_map(clean)), patch_vlsd(lsd_map(noisy))));
    rho_g.push_back(srcc(patch_gradient_entropy(clean), patch_gradient_entropy(noisy)));
  }
  const double mv = std::accumulate(rho_v.begin(), rho_v.end(), 0.0) / 6.0;
  const double mg = std::accumulate(rho_g.begin(), rho_g.end(), 0.0) / 6.0;
  return {"clean vs GN-5 per-patch SRCC over 6 references: VLSD " + fmt("%.4f", mv) + ", gradient entropy " +
          fmt("%.4f", mg) + " (" + (mv > mg ? "VLSD more stable" : "VLSD not more stable") + ")"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "lsd-oracle", 10, lsd_oracle},
      {2, "gradient-check", 120, gradient_check},
      {3, "overfit", 120, overfit},
      {4, "selection-law", 10, selection_law},
      {5, "metric-identities", 10, metric_identities},
      {6, "logistic-recovery", 10, logistic_recovery},
      {7, "pooling-invariants", 5, pooling_invariants},
      {8, "end-to-end", 1800, end_to_end},
      {9, "checkpoint-round-trip", 10, checkpoint_round_trip},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : all) {
    if (!wanted.empty() && !wanted.contains(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_budget = secs <= c.budget_s;
    const bool pass = o.pass && in_budget;
    failed += !pass;
    char head[96];
    std::snprintf(head, sizeof head, "%s  %d %-22s", pass ? "PASS" : "FAIL", c.id, c.name);
    std::cout << head << o.detail << "; " << fmt("%.1f", secs) << " s (budget " << fmt("%.0f", c.budget_s) << " s"
              << (in_budget ? "" : ", exceeded") << ")\n";
    for (const auto& n : o.notes) std::cout << "      " << n << '\n';
    std::cout << std::flush;
  }
  if (wanted.empty())
    for (const auto& line : noise_robustness_report()) std::cout << "INFO  noise-robustness          " << line << '\n';
  std::cout << (failed ? "acceptance: " + std::to_string(failed) + " criterion(s) failed" : "acceptance: all passed")
            << '\n';
  return failed ? 1 : 0;
}
