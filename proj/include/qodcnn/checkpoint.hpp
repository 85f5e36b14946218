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

// Checkpoint container:
//
//   bytes 0..7    magic "QODCKPT\0"
//   bytes 8..15   header length H, uint64 little-endian
//   next H bytes  UTF-8 JSON header
//   remainder     tensor payloads, little-endian IEEE-754 float32
//
// Header keys: format_version, config {mode, conv_channels, fc_width,
// bn_epsilon, weight_decay}, tensors [{name, shape, offset, count}] with
// offsets in bytes from the payload start, and provenance {id, stage,
// parent_id}. `id` is the FNV-1a 64-bit hash of the payload in hex.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "qodcnn/network.hpp"

namespace qodcnn {

inline constexpr int kCheckpointFormatVersion = 1;

struct CheckpointInfo {
  std::string id;         // filled in by save/load
  std::string stage;      // e.g. "pretrain", "finetune"
  std::string parent_id;  // id of the checkpoint this one was trained from, or empty
};

std::vector<std::uint8_t> serialize_checkpoint(const QodcnnModel& model, CheckpointInfo& info);
QodcnnModel deserialize_checkpoint(const std::vector<std::uint8_t>& bytes, CheckpointInfo* info = nullptr);

/// Writes the container and returns its id.
std::string save_checkpoint(const std::filesystem::path& path, const QodcnnModel& model, CheckpointInfo info = {});
QodcnnModel load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info = nullptr);

}  // namespace qodcnn
