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

#include "qodcnn/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace qodcnn {

namespace {

using nlohmann::json;

std::string join_problems(const std::vector<std::string>& p) {
  std::string msg = "invalid configuration:";
  for (const auto& s : p) msg += "\n  " + s;
  return msg;
}

// Collects type and key errors instead of stopping at the first one.
class Reader {
 public:
  explicit Reader(std::vector<std::string>& problems) : problems_(problems) {}

  void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, _] : obj.items())
      if (!ok.contains(k)) problems_.push_back(where + k + ": unknown key");
  }

  bool object(const json& parent, const char* key, const std::string& where) {
    if (!parent.contains(key)) return false;
    if (parent.at(key).is_object()) return true;
    problems_.push_back(where + key + ": expected an object");
    return false;
  }

  void number(const json& obj, const char* key, const std::string& where, double& out) {
    if (!obj.contains(key)) return;
    const auto& v = obj.at(key);
    if (v.is_number()) out = v.get<double>();
    else problems_.push_back(where + key + ": expected a number");
  }

  template <typename Int>
  void integer(const json& obj, const char* key, const std::string& where, Int& out) {
    if (!obj.contains(key)) return;
    const auto& v = obj.at(key);
    if (v.is_number_integer() && (std::is_signed_v<Int> || v.get<long long>() >= 0)) out = v.get<Int>();
    else problems_.push_back(where + key + ": expected " + (std::is_signed_v<Int> ? "an integer" : "a non-negative integer"));
  }

  void string(const json& obj, const char* key, const std::string& where, std::optional<std::string>& out) {
    if (!obj.contains(key)) return;
    const auto& v = obj.at(key);
    if (v.is_string()) out = v.get<std::string>();
    else problems_.push_back(where + key + ": expected a string");
  }

  std::vector<std::string>& problems() { return problems_; }

 private:
  std::vector<std::string>& problems_;
};

void read_schedule(Reader& rd, const json& j, const std::string& where, TrainSchedule& s) {
  rd.check_keys(j, where,
                {"base_lr", "lr_decay", "decay_interval_epochs", "min_lr", "total_epochs", "batch_size"});
  rd.number(j, "base_lr", where, s.base_lr);
  rd.number(j, "lr_decay", where, s.lr_decay);
  rd.integer(j, "decay_interval_epochs", where, s.decay_interval_epochs);
  rd.number(j, "min_lr", where, s.min_lr);
  rd.integer(j, "total_epochs", where, s.total_epochs);
  rd.integer(j, "batch_size", where, s.batch_size);
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::runtime_error(join_problems(problems)), problems_(std::move(problems)) {}

std::vector<std::string> RunConfig::problems() const {
  auto out = pipeline.problems();
  if (repeats < 1) out.push_back("evaluation.repeats must be >= 1");
  if (cross_repeats < 1) out.push_back("evaluation.cross_repeats must be >= 1");
  if (!(fit_fraction > 0.0 && fit_fraction < 1.0)) out.push_back("evaluation.fit_fraction must lie in (0, 1)");
  if (sweep_ratios.empty()) out.push_back("evaluation.sweep_ratios must not be empty");
  for (double r : sweep_ratios)
    if (!(r > 0.0 && r <= 1.0)) out.push_back("evaluation.sweep_ratios entries must lie in (0, 1]");
  return out;
}

RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError({std::string("config is not valid JSON: ") + e.what()});
  }
  if (!j.is_object()) throw ConfigError({"config must be a JSON object"});

  std::vector<std::string> problems;
  Reader rd(problems);
  RunConfig cfg;
  auto& p = cfg.pipeline;
  rd.check_keys(j, "",
                {"mode", "model", "stage1", "stage2", "selection_ratio", "pooling", "train_fraction", "seed",
                 "manifest", "output_dir", "evaluation"});

  std::optional<std::string> mode, pooling, manifest, output_dir;
  rd.string(j, "mode", "", mode);
  if (mode) {
    if (auto m = parse_mode(*mode)) p.model.mode = *m;
    else problems.push_back("mode: expected \"NR\" or \"FR\", got \"" + *mode + "\"");
  }

  if (rd.object(j, "model", "")) {
    const auto& m = j.at("model");
    rd.check_keys(m, "model.", {"conv_channels", "fc_width", "bn_epsilon", "weight_decay"});
    if (m.contains("conv_channels")) {
      const auto& c = m.at("conv_channels");
      bool ok = c.is_array();
      if (ok)
        for (const auto& v : c) ok = ok && v.is_number_integer() && v.get<long long>() > 0;
      if (ok) p.model.conv_channels = c.get<std::vector<std::size_t>>();
      else problems.push_back("model.conv_channels: expected an array of positive integers");
    }
    rd.integer(m, "fc_width", "model.", p.model.fc_width);
    rd.number(m, "bn_epsilon", "model.", p.model.bn_epsilon);
    rd.number(m, "weight_decay", "model.", p.model.weight_decay);
  }

  if (rd.object(j, "stage1", "")) read_schedule(rd, j.at("stage1"), "stage1.", p.stage1);
  p.stage2 = p.stage1;
  if (rd.object(j, "stage2", "")) read_schedule(rd, j.at("stage2"), "stage2.", p.stage2);

  rd.number(j, "selection_ratio", "", p.selection_ratio);
  rd.string(j, "pooling", "", pooling);
  if (pooling) {
    if (auto pm = parse_pooling(*pooling)) p.pooling = *pm;
    else problems.push_back("pooling: expected \"vlsd\" or \"average\", got \"" + *pooling + "\"");
  }
  rd.number(j, "train_fraction", "", p.train_fraction);
  rd.integer(j, "seed", "", p.seed);
  rd.string(j, "manifest", "", manifest);
  rd.string(j, "output_dir", "", output_dir);
  if (manifest) cfg.manifest = base_dir / *manifest;
  if (output_dir) cfg.output_dir = base_dir / *output_dir;

  if (rd.object(j, "evaluation", "")) {
    const auto& e = j.at("evaluation");
    rd.check_keys(e, "evaluation.", {"repeats", "cross_repeats", "fit_fraction", "sweep_ratios"});
    rd.integer(e, "repeats", "evaluation.", cfg.repeats);
    rd.integer(e, "cross_repeats", "evaluation.", cfg.cross_repeats);
    rd.number(e, "fit_fraction", "evaluation.", cfg.fit_fraction);
    if (e.contains("sweep_ratios")) {
      const auto& r = e.at("sweep_ratios");
      bool ok = r.is_array();
      if (ok)
        for (const auto& v : r) ok = ok && v.is_number();
      if (ok) cfg.sweep_ratios = r.get<std::vector<double>>();
      else problems.push_back("evaluation.sweep_ratios: expected an array of numbers");
    }
  }

  for (auto& s : cfg.problems()) problems.push_back(std::move(s));
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({"cannot read config " + path.string()});
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.parent_path());
}

std::filesystem::path resolve_output_dir(const std::optional<std::filesystem::path>& flag,
                                         const std::optional<std::filesystem::path>& config) {
  if (flag) return *flag;
  if (config) return *config;
  if (const char* root = std::getenv(kOutputRootEnv); root && *root) return root;
  return "qodcnn-out";
}

}  // namespace qodcnn
