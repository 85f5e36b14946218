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

// Two-stage training: pretrain on every patch, keep the patches whose
// predictions lie closest to their image's DMOS, fine-tune on those.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "qodcnn/checkpoint.hpp"
#include "qodcnn/network.hpp"
#include "qodcnn/patches.hpp"

namespace qodcnn {

struct TrainSchedule {
  double base_lr = 1e-4;
  double lr_decay = 0.1;
  int decay_interval_epochs = 10;
  double min_lr = 1e-13;
  int total_epochs = 200;
  std::size_t batch_size = 64;
  std::uint64_t seed = 1;

  std::vector<std::string> problems() const;
  void validate() const;
};

/// base_lr * lr_decay^floor(epoch / decay_interval_epochs), clamped below at min_lr.
double lr_at(const TrainSchedule& schedule, int epoch);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  TensorMap m, v;
};

/// One bias-corrected Adam update of every tensor named in `grads`.
void adam_step(AdamState& state, TensorMap& tensors, const TensorMap& grads, double lr);

/// Distorted patches plus, for FR models, index-aligned reference patches.
struct TrainingSet {
  PatchBatch dist;
  std::optional<PatchBatch> ref;

  std::size_t size() const { return dist.size(); }
  TrainingSet gather(std::span<const std::size_t> indices) const;
};

struct EpochRecord {
  std::string stage;
  int epoch = 0;
  double loss = 0.0;  // sample-weighted mean objective over the epoch
  double lr = 0.0;
};

struct TrainOptions {
  std::string stage = "pretrain";
  std::optional<std::filesystem::path> checkpoint_path;
  bool checkpoint_every_epoch = false;
  std::string parent_id;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::string checkpoint_id;  // empty when no checkpoint was written
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& msg, int epoch) : std::runtime_error(msg), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

/// Shuffled mini-batch training from the model's current weights. On a
/// non-finite objective the model is restored to the end of the last complete
/// epoch, that state is checkpointed (when a path is set), and TrainingDiverged is thrown.
TrainResult train_stage(QodcnnModel& model, const TrainingSet& data, const TrainSchedule& schedule,
                        const TrainOptions& options);

TrainResult pretrain(QodcnnModel& model, const TrainingSet& data, const TrainSchedule& schedule,
                     TrainOptions options = {});
/// Same loop with a fresh optimizer state; checkpoint stage "finetune".
TrainResult finetune(QodcnnModel& model, const TrainingSet& selected, const TrainSchedule& schedule,
                     TrainOptions options = {});

inline double effectiveness(double pred, double dmos) { return pred > dmos ? pred - dmos : dmos - pred; }

struct ImageSelection {
  std::vector<double> effectiveness;  // per patch, input order
  std::vector<std::size_t> kept;      // ascending patch indices
  double threshold = 0.0;             // largest kept effectiveness
};

struct SelectionResult {
  std::vector<ImageSelection> images;
  double achieved_ratio = 0.0;

  std::size_t kept_count() const;
  std::size_t total_count() const;
};

/// Per image keeps max(1, floor(ratio * N)) patches with the smallest
/// |pred - dmos|; ties go to the earlier patch.
SelectionResult select_patches(std::span<const std::vector<double>> scores, std::span<const double> dmos,
                               double ratio);

/// Patch indices of `set` grouped by source_id, in first-appearance order.
std::vector<std::vector<std::size_t>> group_by_source(const PatchBatch& set);

struct TrainingSelection {
  SelectionResult result;
  std::vector<std::vector<std::size_t>> groups;  // global indices per image
  std::vector<std::size_t> kept_indices;         // global, ascending
};

/// Scores every training patch with infer-phase statistics and applies select_patches.
TrainingSelection select_training_patches(const QodcnnModel& model, const TrainingSet& data, double ratio);

/// CSV columns: source_id,grid_row,grid_col,effectiveness,kept,threshold
void write_selection_csv(const std::filesystem::path& path, const TrainingSet& data, const TrainingSelection& sel);

struct TrainingLog {
  std::vector<EpochRecord> epochs;
  std::optional<double> selection_ratio;
  std::optional<double> achieved_ratio;
  std::string stage1_id, stage2_id;
};

void write_training_log(const std::filesystem::path& path, const TrainingLog& log);

}  // namespace qodcnn
