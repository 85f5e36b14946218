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

#include "qodcnn/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include <json.hpp>

namespace qodcnn {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'Q', 'O', 'D', 'C', 'K', 'P', 'T', '\0'};

std::string fnv1a_hex(const std::uint8_t* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

json config_to_json(const ModelConfig& c) {
  return json{{"mode", std::string(to_string(c.mode))},
              {"conv_channels", c.conv_channels},
              {"fc_width", c.fc_width},
              {"bn_epsilon", c.bn_epsilon},
              {"weight_decay", c.weight_decay}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  auto mode = parse_mode(j.at("mode").get<std::string>());
  if (!mode) throw std::runtime_error("checkpoint: unknown mode");
  c.mode = *mode;
  c.conv_channels = j.at("conv_channels").get<std::vector<std::size_t>>();
  c.fc_width = j.at("fc_width").get<std::size_t>();
  c.bn_epsilon = j.at("bn_epsilon").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  return c;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const QodcnnModel& model, CheckpointInfo& info) {
  const QodcnnModel layout = build_model(model.config, 0);
  if (layout.tensors.size() != model.tensors.size())
    throw std::invalid_argument("serialize_checkpoint: model does not match the standard topology of its config");

  std::vector<std::uint8_t> payload;
  json dir = json::array();
  for (const auto& [name, t] : model.tensors) {
    auto it = layout.tensors.find(name);
    if (it == layout.tensors.end() || it->second.shape != t.shape)
      throw std::invalid_argument("serialize_checkpoint: unexpected tensor " + name);
    dir.push_back({{"name", name}, {"shape", t.shape}, {"offset", payload.size()}, {"count", t.numel()}});
    for (double v : t.data) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      for (int i = 0; i < 4; ++i) payload.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
    }
  }
  info.id = fnv1a_hex(payload.data(), payload.size());

  json header{{"format_version", kCheckpointFormatVersion},
              {"config", config_to_json(model.config)},
              {"tensors", dir},
              {"provenance", {{"id", info.id}, {"stage", info.stage}, {"parent_id", info.parent_id}}}};
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

QodcnnModel deserialize_checkpoint(const std::vector<std::uint8_t>& bytes, CheckpointInfo* info) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic");
  const std::uint64_t hlen = get_u64(bytes.data() + 8);
  if (hlen > bytes.size() - 16) throw std::runtime_error("checkpoint: truncated header");
  const json header = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(hlen));
  if (header.at("format_version").get<int>() != kCheckpointFormatVersion)
    throw std::runtime_error("checkpoint: unsupported format version");

  QodcnnModel model = build_model(config_from_json(header.at("config")), 0);
  const std::uint8_t* payload = bytes.data() + 16 + hlen;
  const std::size_t payload_size = bytes.size() - 16 - hlen;
  std::size_t loaded = 0;
  for (const auto& entry : header.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    auto& t = model.tensor(name);
    if (entry.at("shape").get<std::vector<std::size_t>>() != t.shape)
      throw std::runtime_error("checkpoint: shape mismatch for " + name);
    const auto offset = entry.at("offset").get<std::size_t>();
    const auto count = entry.at("count").get<std::size_t>();
    if (count != t.numel() || offset + 4 * count > payload_size)
      throw std::runtime_error("checkpoint: payload out of range for " + name);
    for (std::size_t i = 0; i < count; ++i) {
      const std::uint8_t* p = payload + offset + 4 * i;
      const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                                 (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
      t.data[i] = static_cast<double>(std::bit_cast<float>(bits));
    }
    ++loaded;
  }
  if (loaded != model.tensors.size()) throw std::runtime_error("checkpoint: missing tensors");
  const auto& prov = header.at("provenance");
  if (fnv1a_hex(payload, payload_size) != prov.at("id").get<std::string>())
    throw std::runtime_error("checkpoint: payload hash mismatch");
  if (info) {
    info->id = prov.at("id").get<std::string>();
    info->stage = prov.at("stage").get<std::string>();
    info->parent_id = prov.at("parent_id").get<std::string>();
  }
  return model;
}

std::string save_checkpoint(const std::filesystem::path& path, const QodcnnModel& model, CheckpointInfo info) {
  const auto bytes = serialize_checkpoint(model, info);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
  return info.id;
}

QodcnnModel load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes, info);
}

}  // namespace qodcnn
