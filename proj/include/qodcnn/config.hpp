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

// JSON run configuration. Relative paths resolve against the directory of
// the config file. Every key is optional; unknown keys are rejected.
//
//   {
//     "mode": "NR" | "FR",
//     "model":  { "conv_channels": [8 ints], "fc_width", "bn_epsilon", "weight_decay" },
//     "stage1": { "base_lr", "lr_decay", "decay_interval_epochs", "min_lr",
//                 "total_epochs", "batch_size" },
//     "stage2": { same keys; unset keys inherit from stage1 },
//     "selection_ratio", "pooling": "vlsd" | "average", "train_fraction",
//     "seed", "manifest", "output_dir",
//     "evaluation": { "repeats", "cross_repeats", "fit_fraction", "sweep_ratios": [reals] }
//   }

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "qodcnn/protocol.hpp"

namespace qodcnn {

struct RunConfig {
  PipelineConfig pipeline;
  std::optional<std::filesystem::path> manifest;
  std::optional<std::filesystem::path> output_dir;
  int repeats = 10;
  int cross_repeats = 100;
  double fit_fraction = 0.8;
  std::vector<double> sweep_ratios{0.5, 0.6, 0.7, 0.8, 0.9, 1.0};

  std::vector<std::string> problems() const;
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

/// Parses and validates; throws ConfigError listing every problem found.
RunConfig parse_run_config(std::string_view json_text, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

/// Name of the environment variable that supplies the default output root.
inline constexpr const char* kOutputRootEnv = "QODCNN_OUTPUT_ROOT";

/// Flag value, else config value, else $QODCNN_OUTPUT_ROOT, else ./qodcnn-out.
std::filesystem::path resolve_output_dir(const std::optional<std::filesystem::path>& flag,
                                         const std::optional<std::filesystem::path>& config);

}  // namespace qodcnn
