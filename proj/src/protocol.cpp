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

#include "qodcnn/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "qodcnn/checkpoint.hpp"
#include "qodcnn/random.hpp"

namespace qodcnn {

namespace {

using nlohmann::json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void progress(const StageArtifacts& a, const std::string& msg) {
  if (a.progress) a.progress(msg);
}

MetricSet safe_evaluate(const std::vector<double>& pred, const std::vector<double>& dmos,
                        const Mapping* mapping = nullptr) {
  try {
    return mapping ? evaluate_mapped(*mapping, pred, dmos) : evaluate_scores(pred, dmos);
  } catch (const std::invalid_argument&) {
    MetricSet m;
    m.n = pred.size();
    m.plcc = m.srcc = m.rmse = kNaN;
    m.mapping.method = "none";
    m.mapping.warning = true;
    return m;
  }
}

const std::vector<double>& pooled(const ImageScores& s, Pooling p) { return p == Pooling::Vlsd ? s.vlsd : s.average; }

std::vector<double> pick(const std::vector<double>& v, const std::vector<std::size_t>& idx) {
  std::vector<double> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(v[i]);
  return out;
}

std::vector<DistortionType> types_in(const std::vector<DistortionType>& types) {
  std::set<DistortionType> s(types.begin(), types.end());
  return {s.begin(), s.end()};
}

VariantResult evaluate_variant(const std::string& name, const ImageScores& scores, Pooling pooling) {
  VariantResult v;
  v.name = name;
  const auto& pred = pooled(scores, pooling);
  v.overall = safe_evaluate(pred, scores.dmos);
  for (DistortionType t : types_in(scores.types)) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < scores.types.size(); ++i)
      if (scores.types[i] == t) idx.push_back(i);
    v.per_type.emplace_back(std::string(to_string(t)), safe_evaluate(pick(pred, idx), pick(scores.dmos, idx)));
  }
  return v;
}

std::vector<const LoadedImage*> images_with_refs(const std::vector<LoadedImage>& all,
                                                 const std::vector<std::string>& refs) {
  const std::set<std::string> keep(refs.begin(), refs.end());
  std::vector<const LoadedImage*> out;
  for (const auto& im : all)
    if (keep.contains(im.entry.ref_id)) out.push_back(&im);
  return out;
}

std::vector<const LoadedImage*> all_images(const std::vector<LoadedImage>& all) {
  std::vector<const LoadedImage*> out;
  for (const auto& im : all) out.push_back(&im);
  return out;
}

std::string checkpoint_id(const QodcnnModel& m, const std::string& stage, const std::string& parent) {
  CheckpointInfo info{"", stage, parent};
  serialize_checkpoint(m, info);
  return info.id;
}

TrainOptions stage_options(const StageArtifacts& a, const std::string& stage, const std::string& file,
                           const std::string& parent) {
  TrainOptions opt;
  opt.stage = stage;
  opt.parent_id = parent;
  if (a.checkpoint_dir) {
    std::filesystem::create_directories(*a.checkpoint_dir);
    opt.checkpoint_path = *a.checkpoint_dir / (a.prefix + file);
  }
  if (a.progress)
    opt.on_epoch = [&a](const EpochRecord& r) {
      std::ostringstream os;
      os << a.prefix << r.stage << " epoch " << r.epoch << " loss " << std::setprecision(6) << r.loss << " lr "
         << r.lr;
      a.progress(os.str());
    };
  return opt;
}

struct Stage2 {
  QodcnnModel model;
  TrainingSelection selection;
  std::vector<EpochRecord> history;
  std::string id;
};

Stage2 run_stage2(const PipelineConfig& cfg, const QodcnnModel& stage1, const std::string& stage1_id,
                  const TrainingSet& data, double ratio, std::uint64_t seed, const StageArtifacts& a,
                  const std::string& file) {
  Stage2 out{stage1, select_training_patches(stage1, data, ratio), {}, {}};
  const TrainingSet subset = data.gather(out.selection.kept_indices);
  TrainSchedule s2 = cfg.stage2;
  s2.seed = derive_seed(seed, 3);
  auto res = finetune(out.model, subset, s2, stage_options(a, "finetune", file, stage1_id));
  out.history = std::move(res.history);
  out.id = res.checkpoint_id.empty() ? checkpoint_id(out.model, "finetune", stage1_id) : res.checkpoint_id;
  return out;
}

SummaryRow aggregate(const std::string& variant, const std::string& distortion, const std::vector<const MetricSet*>& sets,
                     bool median) {
  SummaryRow row{variant, distortion, kNaN, kNaN, kNaN, 0};
  auto reduce = [&](auto field) {
    std::vector<double> v;
    for (const auto* m : sets) {
      const double x = field(*m);
      if (std::isfinite(x)) v.push_back(x);
    }
    row.repeats = std::max(row.repeats, v.size());
    if (v.empty()) return kNaN;
    if (!median) return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };
  row.plcc = reduce([](const MetricSet& m) { return m.plcc; });
  row.srcc = reduce([](const MetricSet& m) { return m.srcc; });
  row.rmse = reduce([](const MetricSet& m) { return m.rmse; });
  return row;
}

void summarize(EvaluationReport& rep, bool median) {
  rep.aggregate = median ? "median" : "mean";
  rep.complete_repeats = 0;
  // Variant and type order follow the first complete repeat.
  const RepeatRecord* first = nullptr;
  for (const auto& r : rep.repeats)
    if (r.complete) {
      ++rep.complete_repeats;
      if (!first) first = &r;
    }
  if (!first) return;
  for (const auto& v0 : first->variants) {
    std::vector<const MetricSet*> sets;
    for (const auto& r : rep.repeats)
      if (r.complete)
        for (const auto& v : r.variants)
          if (v.name == v0.name) sets.push_back(&v.overall);
    rep.summary.push_back(aggregate(v0.name, "ALL", sets, median));
    for (const auto& [type, _] : v0.per_type) {
      std::vector<const MetricSet*> tsets;
      for (const auto& r : rep.repeats)
        if (r.complete)
          for (const auto& v : r.variants)
            if (v.name == v0.name)
              for (const auto& [t, m] : v.per_type)
                if (t == type) tsets.push_back(&m);
      rep.summary.push_back(aggregate(v0.name, type, tsets, median));
    }
  }
}

std::string ratio_tag(double r) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "p%.2f", r);
  return buf;
}

}  // namespace

std::vector<std::string> PipelineConfig::problems() const {
  auto out = model.problems();
  for (const auto& p : stage1.problems()) out.push_back("stage1." + p);
  for (const auto& p : stage2.problems()) out.push_back("stage2." + p);
  if (!(selection_ratio > 0.0 && selection_ratio <= 1.0)) out.push_back("selection_ratio must lie in (0, 1]");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) out.push_back("train_fraction must lie in (0, 1)");
  return out;
}

std::vector<LoadedImage> load_images(const DatabaseManifest& manifest, bool with_refs) {
  std::vector<LoadedImage> out;
  std::map<std::filesystem::path, GrayImage> ref_cache;
  for (const auto& e : manifest.entries) {
    LoadedImage im{e, read_png_gray(manifest.dist_file(e)), std::nullopt};
    if (with_refs) {
      const auto rp = manifest.ref_file(e);
      if (!rp) throw std::invalid_argument("load_images: " + e.dist_path.string() + " has no reference path");
      auto it = ref_cache.find(*rp);
      if (it == ref_cache.end()) it = ref_cache.emplace(*rp, read_png_gray(*rp)).first;
      im.ref = it->second;
    }
    out.push_back(std::move(im));
  }
  return out;
}

TrainingSet build_training_set(const std::vector<const LoadedImage*>& images, Mode mode) {
  TrainingSet set;
  if (mode == Mode::FR) set.ref.emplace();
  for (const auto* im : images) {
    const std::string id = im->entry.dist_path.generic_string();
    set.dist.append(extract_patches(im->dist, im->entry.dmos, id));
    if (mode == Mode::FR) {
      if (!im->ref) throw std::invalid_argument("build_training_set: FR mode needs reference images");
      set.ref->append(extract_patches(*im->ref, im->entry.dmos, id));
    }
  }
  return set;
}

TrainedPipeline train_pipeline(const PipelineConfig& cfg, const TrainingSet& data, std::uint64_t seed,
                               bool run_stage2_flag, const StageArtifacts& a) {
  TrainedPipeline out{build_model(cfg.model, derive_seed(seed, 1)), std::nullopt, {}, std::nullopt, {}, {}};
  TrainSchedule s1 = cfg.stage1;
  s1.seed = derive_seed(seed, 2);
  progress(a, a.prefix + "stage1: " + std::to_string(data.size()) + " patches");
  auto r1 = pretrain(out.stage1, data, s1, stage_options(a, "pretrain", "stage1.ckpt", ""));
  out.history = std::move(r1.history);
  out.stage1_id = r1.checkpoint_id.empty() ? checkpoint_id(out.stage1, "pretrain", "") : r1.checkpoint_id;
  if (!run_stage2_flag) return out;

  auto s2 = run_stage2(cfg, out.stage1, out.stage1_id, data, cfg.selection_ratio, seed, a, "stage2.ckpt");
  progress(a, a.prefix + "stage2: " + std::to_string(s2.selection.kept_indices.size()) + " patches selected");
  out.history.insert(out.history.end(), s2.history.begin(), s2.history.end());
  out.stage2 = std::move(s2.model);
  out.selection = std::move(s2.selection);
  out.stage2_id = s2.id;
  return out;
}

ImageScores score_images(const QodcnnModel& model, const std::vector<const LoadedImage*>& images) {
  ImageScores out;
  for (const auto* im : images) {
    const auto q = score_image(model, im->dist, im->ref ? &*im->ref : nullptr, Pooling::Vlsd);
    out.types.push_back(im->entry.distortion_type);
    out.dmos.push_back(im->entry.dmos);
    out.average.push_back(average_pool(q.scores));
    out.vlsd.push_back(q.score);
  }
  return out;
}

std::string variant_name(int stage, Pooling pooling) {
  return "stage" + std::to_string(stage) + "_" + std::string(to_string(pooling));
}

const SummaryRow* EvaluationReport::find(const std::string& variant, const std::string& distortion) const {
  for (const auto& r : summary)
    if (r.variant == variant && r.distortion == distortion) return &r;
  return nullptr;
}

EvaluationReport run_protocol(const DatabaseManifest& manifest, const PipelineConfig& cfg, int n_repeats,
                              std::uint64_t seed, const StageArtifacts& a) {
  if (n_repeats < 1) throw std::invalid_argument("run_protocol: n_repeats must be >= 1");
  const auto images = load_images(manifest, cfg.model.mode == Mode::FR);
  EvaluationReport rep;
  rep.protocol = "split";
  rep.primary_variant = variant_name(2, cfg.pooling);
  rep.requested_repeats = n_repeats;
  for (int r = 0; r < n_repeats; ++r) {
    RepeatRecord rec;
    rec.index = r;
    rec.seed = derive_seed(seed, 100 + static_cast<std::uint64_t>(r));
    StageArtifacts ra = a;
    ra.prefix = a.prefix + "repeat" + std::to_string(r) + "_";
    try {
      const auto [train_m, test_m] = split_by_reference(manifest, cfg.train_fraction, rec.seed);
      rec.train_refs = train_m.reference_ids();
      rec.test_refs = test_m.reference_ids();
      const auto train_imgs = images_with_refs(images, rec.train_refs);
      const auto test_imgs = images_with_refs(images, rec.test_refs);
      if (train_imgs.empty() || test_imgs.empty()) throw std::runtime_error("split left an empty side");
      const auto data = build_training_set(train_imgs, cfg.model.mode);
      auto trained = train_pipeline(cfg, data, rec.seed, true, ra);
      rec.achieved_ratio = trained.selection->result.achieved_ratio;
      const auto s1 = score_images(trained.stage1, test_imgs);
      const auto s2 = score_images(*trained.stage2, test_imgs);
      for (Pooling p : {Pooling::Average, Pooling::Vlsd}) rec.variants.push_back(evaluate_variant(variant_name(1, p), s1, p));
      for (Pooling p : {Pooling::Average, Pooling::Vlsd}) rec.variants.push_back(evaluate_variant(variant_name(2, p), s2, p));
      if (!rep.scatter) {
        const auto& pred = pooled(s2, cfg.pooling);
        rep.scatter = ScatterData{rep.primary_variant, pred, s2.dmos, {}};
        for (const auto& v : rec.variants)
          if (v.name == rep.primary_variant) rep.scatter->mapping = v.overall.mapping;
      }
      rec.complete = true;
      progress(a, ra.prefix + "done");
    } catch (const std::exception& e) {
      rec.complete = false;
      rec.error = e.what();
      progress(a, ra.prefix + "failed: " + rec.error);
    }
    rep.repeats.push_back(std::move(rec));
  }
  summarize(rep, false);
  return rep;
}

EvaluationReport run_cross_database(const DatabaseManifest& train, const DatabaseManifest& test,
                                    const PipelineConfig& cfg, double fit_fraction, int n_repeats,
                                    std::uint64_t seed, const StageArtifacts& a) {
  if (n_repeats < 1) throw std::invalid_argument("run_cross_database: n_repeats must be >= 1");
  if (!(fit_fraction > 0.0 && fit_fraction < 1.0))
    throw std::invalid_argument("run_cross_database: fit_fraction must lie in (0, 1)");
  const auto ttypes = train.distortion_types();
  std::vector<DistortionType> shared;
  for (DistortionType t : test.distortion_types())
    if (std::find(ttypes.begin(), ttypes.end(), t) != ttypes.end()) shared.push_back(t);
  if (shared.empty()) throw std::invalid_argument("run_cross_database: no shared distortion types");
  const auto train_f = train.filter_types(shared);
  const auto test_f = test.filter_types(shared);
  const auto test_refs = test_f.reference_ids();
  if (test_refs.size() < 2)
    throw std::invalid_argument("run_cross_database: test database needs at least 2 references");

  const bool fr = cfg.model.mode == Mode::FR;
  const auto train_imgs = load_images(train_f, fr);
  const auto test_imgs = load_images(test_f, fr);
  const auto data = build_training_set(all_images(train_imgs), cfg.model.mode);
  auto trained = train_pipeline(cfg, data, derive_seed(seed, 1), true, a);
  const auto test_ptrs = all_images(test_imgs);
  const auto s1 = score_images(trained.stage1, test_ptrs);
  const auto s2 = score_images(*trained.stage2, test_ptrs);

  EvaluationReport rep;
  rep.protocol = "cross";
  rep.primary_variant = variant_name(2, cfg.pooling);
  rep.requested_repeats = n_repeats;
  const auto n_fit = static_cast<std::size_t>(std::clamp<long>(
      std::lround(fit_fraction * static_cast<double>(test_refs.size())), 1, static_cast<long>(test_refs.size()) - 1));
  for (int r = 0; r < n_repeats; ++r) {
    RepeatRecord rec;
    rec.index = r;
    rec.seed = derive_seed(seed, 100 + static_cast<std::uint64_t>(r));
    rec.train_refs = train_f.reference_ids();
    auto refs = test_refs;
    std::sort(refs.begin(), refs.end());
    Rng rng(mix_seed(rec.seed));
    std::shuffle(refs.begin(), refs.end(), rng);
    rec.fit_refs.assign(refs.begin(), refs.begin() + static_cast<std::ptrdiff_t>(n_fit));
    rec.test_refs.assign(refs.begin() + static_cast<std::ptrdiff_t>(n_fit), refs.end());
    const std::set<std::string> fit_set(rec.fit_refs.begin(), rec.fit_refs.end());
    std::vector<std::size_t> fit_idx, eval_idx;
    for (std::size_t i = 0; i < test_imgs.size(); ++i)
      (fit_set.contains(test_imgs[i].entry.ref_id) ? fit_idx : eval_idx).push_back(i);

    auto cross_variant = [&](const std::string& name, const ImageScores& sc, Pooling p) {
      const auto& pred = pooled(sc, p);
      auto eval_subset = [&](const std::vector<std::size_t>& fi, const std::vector<std::size_t>& ei) {
        const auto fp = pick(pred, fi), fd = pick(sc.dmos, fi);
        try {
          const Mapping m = fit_mapping(fp, fd);
          return safe_evaluate(pick(pred, ei), pick(sc.dmos, ei), &m);
        } catch (const std::invalid_argument&) {
          return safe_evaluate({}, {}, nullptr);
        }
      };
      VariantResult v;
      v.name = name;
      v.overall = eval_subset(fit_idx, eval_idx);
      for (DistortionType t : types_in(sc.types)) {
        std::vector<std::size_t> fi, ei;
        for (std::size_t i : fit_idx)
          if (sc.types[i] == t) fi.push_back(i);
        for (std::size_t i : eval_idx)
          if (sc.types[i] == t) ei.push_back(i);
        v.per_type.emplace_back(std::string(to_string(t)), eval_subset(fi, ei));
      }
      return v;
    };
    for (Pooling p : {Pooling::Average, Pooling::Vlsd}) rec.variants.push_back(cross_variant(variant_name(1, p), s1, p));
    for (Pooling p : {Pooling::Average, Pooling::Vlsd}) rec.variants.push_back(cross_variant(variant_name(2, p), s2, p));
    rec.achieved_ratio = trained.selection->result.achieved_ratio;
    rec.complete = true;
    if (!rep.scatter) {
      const auto& pred = pooled(s2, cfg.pooling);
      rep.scatter = ScatterData{rep.primary_variant, pick(pred, eval_idx), pick(s2.dmos, eval_idx), {}};
      for (const auto& v : rec.variants)
        if (v.name == rep.primary_variant) rep.scatter->mapping = v.overall.mapping;
    }
    rep.repeats.push_back(std::move(rec));
  }
  summarize(rep, true);
  return rep;
}

EvaluationReport run_proportion_sweep(const DatabaseManifest& manifest, const PipelineConfig& cfg,
                                      const std::vector<double>& ratios, int n_repeats, std::uint64_t seed,
                                      const StageArtifacts& a) {
  if (n_repeats < 1) throw std::invalid_argument("run_proportion_sweep: n_repeats must be >= 1");
  if (ratios.empty()) throw std::invalid_argument("run_proportion_sweep: no ratios given");
  for (double r : ratios)
    if (!(r > 0.0 && r <= 1.0)) throw std::invalid_argument("run_proportion_sweep: ratio outside (0, 1]");
  const auto images = load_images(manifest, cfg.model.mode == Mode::FR);
  EvaluationReport rep;
  rep.protocol = "sweep";
  rep.primary_variant = ratio_tag(cfg.selection_ratio) + "_" + std::string(to_string(cfg.pooling));
  rep.requested_repeats = n_repeats;
  for (int r = 0; r < n_repeats; ++r) {
    RepeatRecord rec;
    rec.index = r;
    rec.seed = derive_seed(seed, 100 + static_cast<std::uint64_t>(r));
    StageArtifacts ra = a;
    ra.prefix = a.prefix + "repeat" + std::to_string(r) + "_";
    try {
      const auto [train_m, test_m] = split_by_reference(manifest, cfg.train_fraction, rec.seed);
      rec.train_refs = train_m.reference_ids();
      rec.test_refs = test_m.reference_ids();
      const auto train_imgs = images_with_refs(images, rec.train_refs);
      const auto test_imgs = images_with_refs(images, rec.test_refs);
      if (train_imgs.empty() || test_imgs.empty()) throw std::runtime_error("split left an empty side");
      const auto data = build_training_set(train_imgs, cfg.model.mode);
      const auto trained = train_pipeline(cfg, data, rec.seed, false, ra);
      const auto s1 = score_images(trained.stage1, test_imgs);
      rec.variants.push_back(evaluate_variant(variant_name(1, cfg.pooling), s1, cfg.pooling));
      for (double ratio : ratios) {
        const std::string tag = ratio_tag(ratio);
        const auto s2 = run_stage2(cfg, trained.stage1, trained.stage1_id, data, ratio, rec.seed, ra,
                                   "stage2_" + tag + ".ckpt");
        const auto sc = score_images(s2.model, test_imgs);
        rec.variants.push_back(evaluate_variant(tag + "_" + std::string(to_string(cfg.pooling)), sc, cfg.pooling));
      }
      rec.complete = true;
    } catch (const std::exception& e) {
      rec.complete = false;
      rec.error = e.what();
      progress(a, ra.prefix + "failed: " + rec.error);
    }
    rep.repeats.push_back(std::move(rec));
  }
  summarize(rep, false);
  return rep;
}

namespace {

json metric_json(const MetricSet& m) {
  return json{{"n", m.n},
              {"plcc", m.plcc},
              {"srcc", m.srcc},
              {"rmse", m.rmse},
              {"mapping",
               {{"method", m.mapping.method},
                {"beta", m.mapping.params.beta},
                {"warning", m.mapping.warning}}}};
}

std::string csv_num(double v) {
  if (!std::isfinite(v)) return "";
  std::ostringstream os;
  os << std::setprecision(6) << std::fixed << v;
  return os.str();
}

}  // namespace

void write_report_json(const std::filesystem::path& path, const EvaluationReport& rep) {
  json j;
  j["protocol"] = rep.protocol;
  j["aggregate"] = rep.aggregate;
  j["primary_variant"] = rep.primary_variant;
  j["requested_repeats"] = rep.requested_repeats;
  j["complete_repeats"] = rep.complete_repeats;
  j["incomplete"] = rep.complete_repeats < rep.requested_repeats;
  j["repeats"] = json::array();
  for (const auto& r : rep.repeats) {
    json jr{{"index", r.index},        {"seed", r.seed},         {"train_refs", r.train_refs},
            {"test_refs", r.test_refs}, {"fit_refs", r.fit_refs}, {"complete", r.complete},
            {"error", r.error}};
    jr["achieved_ratio"] = r.achieved_ratio ? json(*r.achieved_ratio) : json(nullptr);
    jr["variants"] = json::array();
    for (const auto& v : r.variants) {
      json jv{{"name", v.name}, {"overall", metric_json(v.overall)}};
      jv["per_type"] = json::object();
      for (const auto& [t, m] : v.per_type) jv["per_type"][t] = metric_json(m);
      jr["variants"].push_back(jv);
    }
    j["repeats"].push_back(jr);
  }
  j["summary"] = json::array();
  for (const auto& s : rep.summary)
    j["summary"].push_back({{"variant", s.variant},
                            {"distortion", s.distortion},
                            {"plcc", s.plcc},
                            {"srcc", s.srcc},
                            {"rmse", s.rmse},
                            {"repeats", s.repeats}});
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void write_report_csv(const std::filesystem::path& path, const EvaluationReport& rep) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "variant,distortion,plcc,srcc,rmse,repeats\n";
  for (const auto& s : rep.summary)
    out << s.variant << ',' << s.distortion << ',' << csv_num(s.plcc) << ',' << csv_num(s.srcc) << ','
        << csv_num(s.rmse) << ',' << s.repeats << '\n';
}

namespace {

class Canvas {
 public:
  Canvas(std::size_t w, std::size_t h) : w_(w), h_(h), rgb_(w * h * 3, 255) {}

  void set(long x, long y, std::array<unsigned char, 3> c) {
    if (x < 0 || y < 0 || x >= static_cast<long>(w_) || y >= static_cast<long>(h_)) return;
    std::copy(c.begin(), c.end(), rgb_.begin() + static_cast<std::ptrdiff_t>((static_cast<std::size_t>(y) * w_ + static_cast<std::size_t>(x)) * 3));
  }

  void line(long x0, long y0, long x1, long y1, std::array<unsigned char, 3> c) {
    const long dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const long sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    long err = dx + dy;
    for (;;) {
      set(x0, y0, c);
      if (x0 == x1 && y0 == y1) break;
      const long e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }

  void disc(long cx, long cy, long r, std::array<unsigned char, 3> c) {
    for (long y = -r; y <= r; ++y)
      for (long x = -r; x <= r; ++x)
        if (x * x + y * y <= r * r) set(cx + x, cy + y, c);
  }

  void save(const std::filesystem::path& path) const { write_png_rgb(path, h_, w_, rgb_); }

 private:
  std::size_t w_, h_;
  std::vector<unsigned char> rgb_;
};

}  // namespace

void write_scatter_png(const std::filesystem::path& path, const ScatterData& d) {
  if (d.pred.empty() || d.pred.size() != d.dmos.size())
    throw std::invalid_argument("write_scatter_png: empty or mismatched data");
  constexpr long kW = 480, kH = 360, kM = 36;
  Canvas cv(kW, kH);
  auto [px0, px1] = std::minmax_element(d.pred.begin(), d.pred.end());
  auto [py0, py1] = std::minmax_element(d.dmos.begin(), d.dmos.end());
  double x0 = *px0, x1 = *px1, y0 = *py0, y1 = *py1;
  for (int i = 0; i <= 100; ++i) {
    const double y = d.mapping(x0 + (x1 - x0) * i / 100.0);
    if (std::isfinite(y)) {
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  if (x1 <= x0) x1 = x0 + 1.0;
  if (y1 <= y0) y1 = y0 + 1.0;
  auto sx = [&](double x) { return kM + std::lround((x - x0) / (x1 - x0) * (kW - 2 * kM)); };
  auto sy = [&](double y) { return kH - kM - std::lround((y - y0) / (y1 - y0) * (kH - 2 * kM)); };

  const std::array<unsigned char, 3> black{0, 0, 0}, blue{30, 80, 200}, red{210, 40, 40};
  cv.line(kM, kH - kM, kW - kM, kH - kM, black);
  cv.line(kM, kM, kM, kH - kM, black);
  long lx = sx(x0), ly = sy(d.mapping(x0));
  for (int i = 1; i <= 200; ++i) {
    const double x = x0 + (x1 - x0) * i / 200.0;
    const long nx = sx(x), ny = sy(d.mapping(x));
    cv.line(lx, ly, nx, ny, red);
    lx = nx;
    ly = ny;
  }
  for (std::size_t i = 0; i < d.pred.size(); ++i) cv.disc(sx(d.pred[i]), sy(d.dmos[i]), 3, blue);
  cv.save(path);
}

}  // namespace qodcnn
