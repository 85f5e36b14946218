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

#include "qodcnn/manifest.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "qodcnn/random.hpp"

namespace qodcnn {

namespace {

constexpr std::pair<DistortionType, std::string_view> kTypeNames[] = {
    {DistortionType::GN, "GN"}, {DistortionType::GB, "GB"},   {DistortionType::MB, "MB"},
    {DistortionType::CC, "CC"}, {DistortionType::JC, "JC"},   {DistortionType::J2C, "J2C"},
    {DistortionType::LSC, "LSC"}, {DistortionType::OTHER, "OTHER"},
};

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

// Comma-separated fields with optional double-quoting ("" escapes a quote).
std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(trim(cur));
  return fields;
}

std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return v;
}

std::optional<long> parse_int(const std::string& s) {
  if (s.empty()) return std::nullopt;
  long v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return v;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

}  // namespace

std::string_view to_string(DistortionType t) {
  for (auto [type, name] : kTypeNames)
    if (type == t) return name;
  return "OTHER";
}

std::optional<DistortionType> parse_distortion_type(std::string_view s) {
  std::string up(s);
  std::transform(up.begin(), up.end(), up.begin(), [](unsigned char c) { return std::toupper(c); });
  if (up == "JPEG" || up == "JC-LIKE") return DistortionType::JC;
  if (up == "JPEG2000" || up == "J2K") return DistortionType::J2C;
  for (auto [type, name] : kTypeNames)
    if (name == up) return type;
  return std::nullopt;
}

std::optional<std::filesystem::path> DatabaseManifest::ref_file(const ManifestEntry& e) const {
  if (!e.ref_path) return std::nullopt;
  return root / *e.ref_path;
}

std::vector<std::string> DatabaseManifest::reference_ids() const {
  std::vector<std::string> ids;
  std::set<std::string> seen;
  for (const auto& e : entries)
    if (seen.insert(e.ref_id).second) ids.push_back(e.ref_id);
  return ids;
}

std::vector<DistortionType> DatabaseManifest::distortion_types() const {
  std::set<DistortionType> s;
  for (const auto& e : entries) s.insert(e.distortion_type);
  return {s.begin(), s.end()};
}

DatabaseManifest DatabaseManifest::filter_refs(const std::vector<std::string>& ref_ids) const {
  const std::set<std::string> keep(ref_ids.begin(), ref_ids.end());
  DatabaseManifest out{root, {}};
  for (const auto& e : entries)
    if (keep.count(e.ref_id)) out.entries.push_back(e);
  return out;
}

DatabaseManifest DatabaseManifest::filter_types(const std::vector<DistortionType>& types) const {
  DatabaseManifest out{root, {}};
  for (const auto& e : entries)
    if (std::find(types.begin(), types.end(), e.distortion_type) != types.end()) out.entries.push_back(e);
  return out;
}

void DatabaseManifest::check_files() const {
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (!std::filesystem::exists(dist_file(e)))
      throw ManifestError("manifest row " + std::to_string(i + 1) + ": missing " + dist_file(e).string(), i + 1);
    if (auto r = ref_file(e); r && !std::filesystem::exists(*r))
      throw ManifestError("manifest row " + std::to_string(i + 1) + ": missing " + r->string(), i + 1);
  }
}

DatabaseManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot open manifest " + path.string(), 0);

  std::string line;
  if (!std::getline(in, line)) throw ManifestError("manifest " + path.string() + " is empty", 0);
  const auto header = split_csv_line(line);
  const auto expected = split_csv_line(kManifestHeader);
  if (header != expected)
    throw ManifestError("manifest header must be: " + std::string(kManifestHeader), 0);

  DatabaseManifest m;
  m.root = path.parent_path();
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    const auto f = split_csv_line(line);
    auto fail = [&](const std::string& what) -> ManifestError {
      return ManifestError("manifest row " + std::to_string(row) + ": " + what, row);
    };
    if (f.size() != expected.size())
      throw fail("expected " + std::to_string(expected.size()) + " fields, got " + std::to_string(f.size()));

    ManifestEntry e;
    if (f[0].empty()) throw fail("empty dist_path");
    e.dist_path = f[0];
    if (!f[1].empty()) e.ref_path = std::filesystem::path(f[1]);
    if (f[2].empty()) throw fail("empty ref_id");
    e.ref_id = f[2];
    auto type = parse_distortion_type(f[3]);
    if (!type) throw fail("unknown distortion_type '" + f[3] + "'");
    e.distortion_type = *type;
    auto level = parse_int(f[4]);
    if (!level || *level < 1) throw fail("distortion_level '" + f[4] + "' is not a positive integer");
    e.distortion_level = static_cast<int>(*level);
    auto dmos = parse_double(f[5]);
    if (!dmos) throw fail("dmos '" + f[5] + "' is not a number");
    if (!std::isfinite(*dmos)) throw fail("dmos is not finite");
    e.dmos = *dmos;
    m.entries.push_back(std::move(e));
  }
  return m;
}

void save_manifest(const std::filesystem::path& path, const DatabaseManifest& m) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest " + path.string());
  out << kManifestHeader << '\n';
  out << std::setprecision(17);
  for (const auto& e : m.entries) {
    out << csv_field(e.dist_path.generic_string()) << ',' << (e.ref_path ? csv_field(e.ref_path->generic_string()) : "")
        << ',' << csv_field(e.ref_id) << ',' << to_string(e.distortion_type) << ',' << e.distortion_level << ','
        << e.dmos << '\n';
  }
  if (!out) throw std::runtime_error("failed writing manifest " + path.string());
}

std::pair<DatabaseManifest, DatabaseManifest> split_by_reference(const DatabaseManifest& m,
                                                                 double train_fraction,
                                                                 std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw std::invalid_argument("split_by_reference: train_fraction must lie in (0, 1)");
  auto groups = m.reference_ids();
  if (groups.size() < 2) throw std::invalid_argument("split_by_reference: need at least 2 reference groups");
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(groups.size())));
  if (n_train < 1 || n_train >= groups.size())
    throw std::invalid_argument("split_by_reference: " + std::to_string(groups.size()) +
                                " groups cannot honor train_fraction " + std::to_string(train_fraction));

  // Sort first so the split depends only on the set of groups, not on row order.
  std::sort(groups.begin(), groups.end());
  Rng rng(mix_seed(seed));
  std::shuffle(groups.begin(), groups.end(), rng);
  std::vector<std::string> train(groups.begin(), groups.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::string> test(groups.begin() + static_cast<std::ptrdiff_t>(n_train), groups.end());
  return {m.filter_refs(train), m.filter_refs(test)};
}

}  // namespace qodcnn
