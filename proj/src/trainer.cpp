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

#include "qodcnn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>

#include <json.hpp>

#include "qodcnn/random.hpp"

namespace qodcnn {

std::vector<std::string> TrainSchedule::problems() const {
  std::vector<std::string> out;
  if (!(min_lr > 0.0)) out.push_back("min_lr must be > 0");
  if (!(base_lr >= min_lr)) out.push_back("base_lr must be >= min_lr");
  if (!(lr_decay > 0.0 && lr_decay < 1.0)) out.push_back("lr_decay must lie in (0, 1)");
  if (decay_interval_epochs < 1) out.push_back("decay_interval_epochs must be >= 1");
  if (total_epochs < 1) out.push_back("total_epochs must be >= 1");
  if (batch_size < 1) out.push_back("batch_size must be >= 1");
  return out;
}

void TrainSchedule::validate() const {
  auto p = problems();
  if (p.empty()) return;
  std::string msg = "invalid TrainSchedule:";
  for (const auto& s : p) msg += " " + s + ";";
  throw std::invalid_argument(msg);
}

double lr_at(const TrainSchedule& s, int epoch) {
  if (epoch < 0 || epoch >= s.total_epochs)
    throw std::out_of_range("lr_at: epoch " + std::to_string(epoch) + " outside [0, " +
                            std::to_string(s.total_epochs) + ")");
  const int decays = epoch / s.decay_interval_epochs;
  return std::max(s.min_lr, s.base_lr * std::pow(s.lr_decay, decays));
}

void adam_step(AdamState& st, TensorMap& tensors, const TensorMap& grads, double lr) {
  for (const auto& [name, g] : grads) {
    auto it = tensors.find(name);
    if (it == tensors.end() || it->second.data.size() != g.data.size())
      throw std::invalid_argument("adam_step: shape mismatch for " + name);
    for (double v : g.data)
      if (!std::isfinite(v)) throw std::domain_error("adam_step: non-finite gradient in " + name);
  }
  ++st.step;
  const double t = static_cast<double>(st.step);
  const double c1 = 1.0 - std::pow(st.beta1, t);
  const double c2 = 1.0 - std::pow(st.beta2, t);
  for (const auto& [name, g] : grads) {
    auto& w = tensors.at(name).data;
    auto& m = st.m[name].data;
    auto& v = st.v[name].data;
    if (m.empty()) {
      m.assign(w.size(), 0.0);
      v.assign(w.size(), 0.0);
      st.m[name].shape = st.v[name].shape = tensors.at(name).shape;
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g.data[i];
      v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g.data[i] * g.data[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + st.eps);
    }
  }
}

TrainingSet TrainingSet::gather(std::span<const std::size_t> indices) const {
  TrainingSet out{dist.gather(indices), std::nullopt};
  if (ref) out.ref = ref->gather(indices);
  return out;
}

namespace {

void check_training_set(const QodcnnModel& model, const TrainingSet& data) {
  if (data.size() == 0) throw std::invalid_argument("training: empty training set");
  data.dist.check_consistent();
  if (model.is_fr()) {
    if (!data.ref || data.ref->size() != data.dist.size())
      throw std::invalid_argument("training: FR model needs index-aligned reference patches");
    data.ref->check_consistent();
  } else if (data.ref) {
    throw std::invalid_argument("training: NR model does not take reference patches");
  }
}

}  // namespace

TrainResult train_stage(QodcnnModel& model, const TrainingSet& data, const TrainSchedule& schedule,
                        const TrainOptions& options) {
  schedule.validate();
  check_training_set(model, data);

  const std::size_t n = data.size();
  const std::size_t bs = std::min(schedule.batch_size, n);
  AdamState adam;
  TrainResult result;
  const auto trainable = model.trainable_names();
  TensorMap last_good = model.tensors;

  std::vector<double> dist_buf, ref_buf, target;
  std::vector<std::size_t> order(n);
  for (int epoch = 0; epoch < schedule.total_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(schedule.seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = lr_at(schedule, epoch);

    double weighted = 0.0;
    bool diverged = false;
    for (std::size_t b0 = 0; b0 < n; b0 += bs) {
      const std::size_t cnt = std::min(n, b0 + bs) - b0;
      dist_buf.resize(cnt * kPatchPixels);
      target.resize(cnt);
      if (data.ref) ref_buf.resize(cnt * kPatchPixels);
      for (std::size_t i = 0; i < cnt; ++i) {
        const std::size_t idx = order[b0 + i];
        auto p = data.dist.patch(idx);
        std::copy(p.begin(), p.end(), dist_buf.begin() + static_cast<std::ptrdiff_t>(i * kPatchPixels));
        if (data.ref) {
          auto r = data.ref->patch(idx);
          std::copy(r.begin(), r.end(), ref_buf.begin() + static_cast<std::ptrdiff_t>(i * kPatchPixels));
        }
        target[i] = data.dist.labels[idx];
      }
      std::optional<InputView> ref;
      if (data.ref) ref = InputView{ref_buf, cnt};
      GradientResult g;
      try {
        g = compute_gradients(model, InputView{dist_buf, cnt}, ref, target);
      } catch (const std::domain_error&) {
        diverged = true;
        break;
      }
      if (!std::isfinite(g.objective)) {
        diverged = true;
        break;
      }
      weighted += g.objective * static_cast<double>(cnt);
      TensorMap param_grads;
      for (const auto& name : trainable) param_grads[name] = std::move(g.grads.at(name));
      try {
        adam_step(adam, model.tensors, param_grads, lr);
      } catch (const std::domain_error&) {
        diverged = true;
        break;
      }
      round_to_storage_precision(model);
    }

    if (diverged) {
      model.tensors = last_good;
      if (options.checkpoint_path)
        result.checkpoint_id =
            save_checkpoint(*options.checkpoint_path, model, {"", options.stage, options.parent_id});
      throw TrainingDiverged("training diverged in " + options.stage + " epoch " + std::to_string(epoch), epoch);
    }

    EpochRecord rec{options.stage, epoch, weighted / static_cast<double>(n), lr};
    result.history.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);
    last_good = model.tensors;
    if (options.checkpoint_path && options.checkpoint_every_epoch)
      save_checkpoint(*options.checkpoint_path, model, {"", options.stage, options.parent_id});
  }
  if (options.checkpoint_path)
    result.checkpoint_id = save_checkpoint(*options.checkpoint_path, model, {"", options.stage, options.parent_id});
  return result;
}

TrainResult pretrain(QodcnnModel& model, const TrainingSet& data, const TrainSchedule& schedule,
                     TrainOptions options) {
  if (options.stage.empty()) options.stage = "pretrain";
  return train_stage(model, data, schedule, options);
}

TrainResult finetune(QodcnnModel& model, const TrainingSet& selected, const TrainSchedule& schedule,
                     TrainOptions options) {
  if (options.stage.empty() || options.stage == "pretrain") options.stage = "finetune";
  return train_stage(model, selected, schedule, options);
}

std::size_t SelectionResult::kept_count() const {
  std::size_t k = 0;
  for (const auto& im : images) k += im.kept.size();
  return k;
}

std::size_t SelectionResult::total_count() const {
  std::size_t k = 0;
  for (const auto& im : images) k += im.effectiveness.size();
  return k;
}

SelectionResult select_patches(std::span<const std::vector<double>> scores, std::span<const double> dmos,
                               double ratio) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw std::invalid_argument("select_patches: ratio must lie in (0, 1]");
  if (scores.size() != dmos.size()) throw std::invalid_argument("select_patches: one DMOS per image required");
  SelectionResult res;
  for (std::size_t img = 0; img < scores.size(); ++img) {
    const auto& s = scores[img];
    if (s.empty()) throw std::invalid_argument("select_patches: image " + std::to_string(img) + " has no patches");
    ImageSelection sel;
    sel.effectiveness.resize(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) sel.effectiveness[i] = effectiveness(s[i], dmos[img]);
    const auto n = s.size();
    const std::size_t keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n))));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return sel.effectiveness[a] < sel.effectiveness[b]; });
    sel.kept.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep));
    sel.threshold = sel.effectiveness[order[keep - 1]];
    std::sort(sel.kept.begin(), sel.kept.end());
    res.images.push_back(std::move(sel));
  }
  const auto total = res.total_count();
  res.achieved_ratio = total ? static_cast<double>(res.kept_count()) / static_cast<double>(total) : 0.0;
  return res;
}

std::vector<std::vector<std::size_t>> group_by_source(const PatchBatch& set) {
  std::vector<std::vector<std::size_t>> groups;
  std::map<std::string, std::size_t> slot;
  for (std::size_t i = 0; i < set.size(); ++i) {
    auto [it, inserted] = slot.try_emplace(set.source_ids[i], groups.size());
    if (inserted) groups.emplace_back();
    groups[it->second].push_back(i);
  }
  return groups;
}

TrainingSelection select_training_patches(const QodcnnModel& model, const TrainingSet& data, double ratio) {
  check_training_set(model, data);
  const auto pred = predict(model, data.dist, data.ref ? &*data.ref : nullptr);
  TrainingSelection out;
  out.groups = group_by_source(data.dist);
  std::vector<std::vector<double>> per_image;
  std::vector<double> dmos;
  for (const auto& g : out.groups) {
    std::vector<double> s;
    for (std::size_t i : g) s.push_back(pred[i]);
    per_image.push_back(std::move(s));
    dmos.push_back(data.dist.labels[g.front()]);
  }
  out.result = select_patches(per_image, dmos, ratio);
  for (std::size_t img = 0; img < out.groups.size(); ++img)
    for (std::size_t k : out.result.images[img].kept) out.kept_indices.push_back(out.groups[img][k]);
  std::sort(out.kept_indices.begin(), out.kept_indices.end());
  return out;
}

void write_selection_csv(const std::filesystem::path& path, const TrainingSet& data, const TrainingSelection& sel) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "source_id,grid_row,grid_col,effectiveness,kept,threshold\n" << std::setprecision(10);
  for (std::size_t img = 0; img < sel.groups.size(); ++img) {
    const auto& im = sel.result.images[img];
    for (std::size_t k = 0; k < sel.groups[img].size(); ++k) {
      const std::size_t idx = sel.groups[img][k];
      const bool kept = std::binary_search(im.kept.begin(), im.kept.end(), k);
      out << data.dist.source_ids[idx] << ',' << data.dist.grid_positions[idx].row << ','
          << data.dist.grid_positions[idx].col << ',' << im.effectiveness[k] << ',' << (kept ? 1 : 0) << ','
          << im.threshold << '\n';
    }
  }
}

void write_training_log(const std::filesystem::path& path, const TrainingLog& log) {
  nlohmann::json j;
  j["epochs"] = nlohmann::json::array();
  for (const auto& e : log.epochs)
    j["epochs"].push_back({{"stage", e.stage}, {"epoch", e.epoch}, {"loss", e.loss}, {"lr", e.lr}});
  j["selection_ratio"] = log.selection_ratio ? nlohmann::json(*log.selection_ratio) : nlohmann::json(nullptr);
  j["achieved_ratio"] = log.achieved_ratio ? nlohmann::json(*log.achieved_ratio) : nlohmann::json(nullptr);
  j["stage1_checkpoint"] = log.stage1_id;
  j["stage2_checkpoint"] = log.stage2_id;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace qodcnn
