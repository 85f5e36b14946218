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

// Evaluation protocols: repeated reference-disjoint splits, cross-database
// transfer, and a sweep over the fine-tuning selection ratio.
//
// Every repeat reports four variants, stage{1,2}_{average,vlsd}. The
// primary variant is stage2 with the configured pooling.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "qodcnn/image.hpp"
#include "qodcnn/manifest.hpp"
#include "qodcnn/metrics.hpp"
#include "qodcnn/network.hpp"
#include "qodcnn/pooling.hpp"
#include "qodcnn/trainer.hpp"

namespace qodcnn {

struct PipelineConfig {
  ModelConfig model;
  TrainSchedule stage1;
  TrainSchedule stage2;
  double selection_ratio = 0.7;
  Pooling pooling = Pooling::Vlsd;
  double train_fraction = 0.8;
  std::uint64_t seed = 1;

  std::vector<std::string> problems() const;
};

struct LoadedImage {
  ManifestEntry entry;
  GrayImage dist;
  std::optional<GrayImage> ref;
};

/// Reads every distorted image (and reference, when `with_refs`).
std::vector<LoadedImage> load_images(const DatabaseManifest& manifest, bool with_refs);

/// Patches of the given images labelled with their DMOS; source_id is the dist path.
TrainingSet build_training_set(const std::vector<const LoadedImage*>& images, Mode mode);

using ProgressFn = std::function<void(const std::string&)>;

struct StageArtifacts {
  std::optional<std::filesystem::path> checkpoint_dir;  // stage1.ckpt / stage2.ckpt land here
  std::string prefix;                                   // file-name prefix, e.g. "repeat0_"
  ProgressFn progress;
};

struct TrainedPipeline {
  QodcnnModel stage1;
  std::optional<QodcnnModel> stage2;
  std::vector<EpochRecord> history;
  std::optional<TrainingSelection> selection;
  std::string stage1_id, stage2_id;
};

/// Stage 1 on every patch, then (when `run_stage2`) selection at the
/// configured ratio and stage 2 from the stage-1 weights.
TrainedPipeline train_pipeline(const PipelineConfig& cfg, const TrainingSet& data, std::uint64_t seed,
                               bool run_stage2, const StageArtifacts& artifacts = {});

struct ImageScores {
  std::vector<DistortionType> types;
  std::vector<double> dmos;
  std::vector<double> average;  // average-pooled score per image
  std::vector<double> vlsd;     // VLSD-weighted score per image
};

ImageScores score_images(const QodcnnModel& model, const std::vector<const LoadedImage*>& images);

struct VariantResult {
  std::string name;
  MetricSet overall;
  std::vector<std::pair<std::string, MetricSet>> per_type;  // canonical type order
};

struct RepeatRecord {
  int index = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> train_refs;
  std::vector<std::string> test_refs;  // cross-database: references used for evaluation
  std::vector<std::string> fit_refs;   // cross-database only
  bool complete = false;
  std::string error;
  std::optional<double> achieved_ratio;
  std::vector<VariantResult> variants;
};

struct SummaryRow {
  std::string variant;
  std::string distortion;  // "ALL" or a type name
  double plcc = 0.0, srcc = 0.0, rmse = 0.0;
  std::size_t repeats = 0;  // repeats contributing a finite value
};

struct ScatterData {
  std::string variant;
  std::vector<double> pred, dmos;
  Mapping mapping;
};

struct EvaluationReport {
  std::string protocol;   // "split", "cross", "sweep"
  std::string aggregate;  // "mean" or "median"
  std::string primary_variant;
  int requested_repeats = 0;
  int complete_repeats = 0;
  std::vector<RepeatRecord> repeats;
  std::vector<SummaryRow> summary;
  std::optional<ScatterData> scatter;

  const SummaryRow* find(const std::string& variant, const std::string& distortion = "ALL") const;
};

std::string variant_name(int stage, Pooling pooling);

/// Per repeat: split by reference, train both stages, score held-out images,
/// fit the mapping on them, and record metrics. Failed repeats are kept in the
/// report with complete = false and do not enter the mean.
EvaluationReport run_protocol(const DatabaseManifest& manifest, const PipelineConfig& cfg, int n_repeats,
                              std::uint64_t seed, const StageArtifacts& artifacts = {});

/// Trains once on the shared distortion types of `train`, then per repeat fits
/// the mapping on fit_fraction of the test references and evaluates on the
/// rest. Summary rows are medians.
EvaluationReport run_cross_database(const DatabaseManifest& train, const DatabaseManifest& test,
                                    const PipelineConfig& cfg, double fit_fraction, int n_repeats,
                                    std::uint64_t seed, const StageArtifacts& artifacts = {});

/// Like run_protocol, but stage 2 is repeated from one stage-1 model per
/// ratio. Variants are named "p<ratio>_<pooling>" plus the stage-1 baseline.
EvaluationReport run_proportion_sweep(const DatabaseManifest& manifest, const PipelineConfig& cfg,
                                      const std::vector<double>& ratios, int n_repeats, std::uint64_t seed,
                                      const StageArtifacts& artifacts = {});

void write_report_json(const std::filesystem::path& path, const EvaluationReport& report);
/// One row per summary entry: variant,distortion,plcc,srcc,rmse,repeats
void write_report_csv(const std::filesystem::path& path, const EvaluationReport& report);
/// Prediction vs DMOS scatter with the fitted mapping drawn over it.
void write_scatter_png(const std::filesystem::path& path, const ScatterData& data);

}  // namespace qodcnn
