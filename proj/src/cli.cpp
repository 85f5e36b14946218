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

#include "qodcnn/cli.hpp"

#include <filesystem>
#include <iomanip>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qodcnn/checkpoint.hpp"
#include "qodcnn/config.hpp"
#include "qodcnn/manifest.hpp"
#include "qodcnn/pooling.hpp"
#include "qodcnn/protocol.hpp"
#include "qodcnn/random.hpp"
#include "qodcnn/synth.hpp"
#include "qodcnn/trainer.hpp"

namespace qodcnn {

namespace {

namespace fs = std::filesystem;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SynthArgs {
  std::string out;
  std::size_t refs = 4;
  int levels = 5;
  std::vector<std::string> kinds{"GN", "GB", "CC"};
  std::uint64_t seed = 1;
  std::size_t height = 128, width = 128;
};

struct TrainArgs {
  std::string config;
  std::optional<std::string> manifest, out, init;
  std::string stage = "all";
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

struct ScoreArgs {
  std::string model, image;
  std::optional<std::string> ref, out;
  std::string pooling = "vlsd";
};

struct EvalArgs {
  std::string config;
  std::optional<std::string> manifest, out, train, test;
  std::optional<int> repeats;
  std::optional<std::uint64_t> seed;
  bool cross = false, sweep = false, quiet = false;
};

ProgressFn progress_to(std::ostream& err, bool quiet) {
  if (quiet) return {};
  return [&err](const std::string& msg) { err << msg << '\n' << std::flush; };
}

int cmd_make_synth(const SynthArgs& a, std::ostream& out) {
  SynthCorpusOptions opt;
  opt.n_refs = a.refs;
  opt.levels = a.levels;
  opt.seed = a.seed;
  opt.height = a.height;
  opt.width = a.width;
  opt.kinds.clear();
  for (const auto& k : a.kinds) {
    const auto t = parse_distortion_type(k);
    if (!t || !is_synthesizable(*t)) throw UsageError("--kinds: '" + k + "' cannot be synthesized");
    opt.kinds.push_back(*t);
  }
  if (a.levels < 1 || a.levels > 5) throw UsageError("--levels must lie in [1, 5]");
  if (a.refs < 1) throw UsageError("--refs must be >= 1");
  if (a.height < kPatchSize || a.width < kPatchSize) throw UsageError("--height/--width must be >= 32");
  make_synthetic_manifest(a.out, opt);
  out << (fs::path(a.out) / "manifest.csv").string() << '\n';
  return kExitOk;
}

RunConfig load_config_checked(const std::string& path, const std::optional<std::string>& manifest_flag,
                              bool need_manifest) {
  RunConfig cfg = load_run_config(path);
  if (manifest_flag) cfg.manifest = fs::path(*manifest_flag);
  std::vector<std::string> problems;
  if (need_manifest) {
    if (!cfg.manifest) problems.push_back("manifest: not set (config key or --manifest)");
    else if (!fs::exists(*cfg.manifest)) problems.push_back("manifest: " + cfg.manifest->string() + " does not exist");
  }
  if (!problems.empty()) throw ConfigError(problems);
  return cfg;
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  if (a.stage != "1" && a.stage != "2" && a.stage != "all") throw UsageError("--stage must be 1, 2 or all");
  RunConfig cfg = load_config_checked(a.config, a.manifest, true);
  if (a.seed) cfg.pipeline.seed = *a.seed;
  const fs::path out_dir = resolve_output_dir(a.out ? std::optional<fs::path>(*a.out) : std::nullopt, cfg.output_dir);
  const fs::path init = a.init ? fs::path(*a.init) : out_dir / "stage1.ckpt";
  if (a.stage == "2" && !fs::exists(init))
    throw ConfigError({"stage 2 needs a stage-1 checkpoint; " + init.string() + " does not exist"});
  fs::create_directories(out_dir);

  const auto manifest = load_manifest(*cfg.manifest);
  manifest.check_files();
  const auto& pc = cfg.pipeline;
  const auto images = load_images(manifest, pc.model.mode == Mode::FR);
  std::vector<const LoadedImage*> ptrs;
  for (const auto& im : images) ptrs.push_back(&im);
  const auto data = build_training_set(ptrs, pc.model.mode);

  StageArtifacts art;
  art.checkpoint_dir = out_dir;
  art.progress = progress_to(err, a.quiet);
  TrainingLog log;

  std::optional<QodcnnModel> stage1;
  if (a.stage == "2") {
    CheckpointInfo info;
    stage1 = load_checkpoint(init, &info);
    log.stage1_id = info.id;
  } else {
    auto trained = train_pipeline(pc, data, pc.seed, false, art);
    log.epochs = trained.history;
    log.stage1_id = trained.stage1_id;
    stage1 = std::move(trained.stage1);
    out << (out_dir / "stage1.ckpt").string() << '\n';
  }

  if (a.stage != "1") {
    const auto sel = select_training_patches(*stage1, data, pc.selection_ratio);
    write_selection_csv(out_dir / "selection.csv", data, sel);
    QodcnnModel model = *stage1;
    TrainSchedule s2 = pc.stage2;
    s2.seed = derive_seed(pc.seed, 3);
    TrainOptions opt;
    opt.stage = "finetune";
    opt.parent_id = log.stage1_id;
    opt.checkpoint_path = out_dir / "stage2.ckpt";
    if (art.progress)
      opt.on_epoch = [&](const EpochRecord& r) {
        art.progress("finetune epoch " + std::to_string(r.epoch) + " loss " + std::to_string(r.loss));
      };
    const auto res = finetune(model, data.gather(sel.kept_indices), s2, opt);
    log.epochs.insert(log.epochs.end(), res.history.begin(), res.history.end());
    log.stage2_id = res.checkpoint_id;
    log.selection_ratio = pc.selection_ratio;
    log.achieved_ratio = sel.result.achieved_ratio;
    out << (out_dir / "stage2.ckpt").string() << '\n';
  }
  write_training_log(out_dir / "training_log.json", log);
  return kExitOk;
}

int cmd_score(const ScoreArgs& a, std::ostream& out) {
  const auto pooling = parse_pooling(a.pooling);
  if (!pooling) throw UsageError("--pooling must be vlsd or average");
  const QodcnnModel model = load_checkpoint(a.model);
  if (model.is_fr() && !a.ref) throw UsageError("FR model requires --ref");
  if (!model.is_fr() && a.ref) throw UsageError("NR model does not take --ref");
  const GrayImage img = read_png_gray(a.image);
  std::optional<GrayImage> ref;
  if (a.ref) ref = read_png_gray(*a.ref);
  const auto map = score_image(model, img, ref ? &*ref : nullptr, *pooling);
  if (a.out) {
    const fs::path dir(*a.out);
    fs::create_directories(dir);
    const std::string stem = fs::path(a.image).stem().string();
    write_quality_csv(dir / (stem + "_map.csv"), map);
    write_quality_heatmap(dir / (stem + "_heatmap.png"), map);
  }
  out << std::setprecision(10) << map.score << '\n';
  return kExitOk;
}

void print_summary(std::ostream& out, const EvaluationReport& rep) {
  out << "protocol " << rep.protocol << ", " << rep.complete_repeats << "/" << rep.requested_repeats
      << " repeats complete, " << rep.aggregate << " over repeats\n";
  out << std::left << std::setw(16) << "variant" << std::setw(8) << "type" << std::right << std::setw(9) << "PLCC"
      << std::setw(9) << "SRCC" << std::setw(10) << "RMSE" << '\n';
  out << std::fixed << std::setprecision(4);
  for (const auto& r : rep.summary)
    out << std::left << std::setw(16) << r.variant << std::setw(8) << r.distortion << std::right << std::setw(9)
        << r.plcc << std::setw(9) << r.srcc << std::setw(10) << r.rmse << '\n';
  out << std::defaultfloat;
}

int cmd_evaluate(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  if (a.cross && a.sweep) throw UsageError("--cross and --sweep are exclusive");
  if (a.cross && (!a.train || !a.test)) throw UsageError("--cross needs --train and --test");
  if (!a.cross && (a.train || a.test)) throw UsageError("--train/--test are only valid with --cross");
  RunConfig cfg = load_config_checked(a.config, a.manifest, !a.cross);
  if (a.seed) cfg.pipeline.seed = *a.seed;
  if (a.repeats) {
    if (*a.repeats < 1) throw UsageError("--repeats must be >= 1");
    (a.cross ? cfg.cross_repeats : cfg.repeats) = *a.repeats;
  }
  const fs::path out_dir = resolve_output_dir(a.out ? std::optional<fs::path>(*a.out) : std::nullopt, cfg.output_dir);
  fs::create_directories(out_dir);

  StageArtifacts art;
  art.progress = progress_to(err, a.quiet);
  EvaluationReport rep;
  const auto& pc = cfg.pipeline;
  if (a.cross) {
    std::vector<std::string> problems;
    for (const auto* p : {&*a.train, &*a.test})
      if (!fs::exists(*p)) problems.push_back("manifest " + *p + " does not exist");
    if (!problems.empty()) throw ConfigError(problems);
    const auto train = load_manifest(*a.train);
    const auto test = load_manifest(*a.test);
    train.check_files();
    test.check_files();
    rep = run_cross_database(train, test, pc, cfg.fit_fraction, cfg.cross_repeats, pc.seed, art);
  } else {
    const auto manifest = load_manifest(*cfg.manifest);
    manifest.check_files();
    rep = a.sweep ? run_proportion_sweep(manifest, pc, cfg.sweep_ratios, cfg.repeats, pc.seed, art)
                  : run_protocol(manifest, pc, cfg.repeats, pc.seed, art);
  }
  write_report_json(out_dir / "report.json", rep);
  write_report_csv(out_dir / "report.csv", rep);
  if (rep.scatter) write_scatter_png(out_dir / "scatter.png", *rep.scatter);
  print_summary(out, rep);
  return rep.complete_repeats == rep.requested_repeats ? kExitOk : kExitFailure;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Screen-content image quality: synthesis, training, scoring and evaluation", "qodcnn"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("make-synth", "Write a synthetic distorted corpus and its manifest");
  synth->add_option("--out", sa.out, "Output directory")->required();
  synth->add_option("--refs", sa.refs, "Number of reference images");
  synth->add_option("--levels", sa.levels, "Severity levels per kind (1-5)");
  synth->add_option("--kinds", sa.kinds, "Distortion kinds, comma separated")->delimiter(',');
  synth->add_option("--seed", sa.seed, "Corpus seed");
  synth->add_option("--height", sa.height, "Image height");
  synth->add_option("--width", sa.width, "Image width");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Pretrain, select patches and fine-tune");
  train->add_option("--config", ta.config, "Run config JSON")->required();
  train->add_option("--manifest", ta.manifest, "Manifest CSV (overrides config)");
  train->add_option("--out", ta.out, "Output directory (overrides config)");
  train->add_option("--stage", ta.stage, "1, 2 or all");
  train->add_option("--init", ta.init, "Stage-1 checkpoint for --stage 2 (default <out>/stage1.ckpt)");
  train->add_option("--seed", ta.seed, "Master seed (overrides config)");
  train->add_flag("--quiet", ta.quiet, "No progress output");

  ScoreArgs sc;
  auto* score = app.add_subcommand("score", "Score one image with a checkpoint");
  score->add_option("--model", sc.model, "Checkpoint file")->required();
  score->add_option("--image", sc.image, "Distorted image (PNG)")->required();
  score->add_option("--ref", sc.ref, "Reference image for FR models");
  score->add_option("--pooling", sc.pooling, "vlsd or average");
  score->add_option("--out", sc.out, "Directory for the quality-map CSV and heatmap");

  EvalArgs ea;
  auto* eval = app.add_subcommand("evaluate", "Run an evaluation protocol");
  eval->add_option("--config", ea.config, "Run config JSON")->required();
  eval->add_option("--manifest", ea.manifest, "Manifest CSV (overrides config)");
  eval->add_option("--out", ea.out, "Output directory (overrides config)");
  eval->add_option("--repeats", ea.repeats, "Repeat count (overrides config)");
  eval->add_option("--seed", ea.seed, "Master seed (overrides config)");
  eval->add_flag("--cross", ea.cross, "Cross-database protocol");
  eval->add_option("--train", ea.train, "Training manifest for --cross");
  eval->add_option("--test", ea.test, "Test manifest for --cross");
  eval->add_flag("--sweep", ea.sweep, "Sweep the selection ratio");
  eval->add_flag("--quiet", ea.quiet, "No progress output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (synth->parsed()) return cmd_make_synth(sa, out);
    if (train->parsed()) return cmd_train(ta, out, err);
    if (score->parsed()) return cmd_score(sc, out);
    return cmd_evaluate(ea, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace qodcnn
