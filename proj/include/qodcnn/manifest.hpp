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

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace qodcnn {

enum class DistortionType { GN, GB, MB, CC, JC, J2C, LSC, OTHER };

std::string_view to_string(DistortionType t);
/// Accepts the canonical names; "JPEG" and "JPEG2000" are accepted as aliases.
std::optional<DistortionType> parse_distortion_type(std::string_view s);

struct ManifestEntry {
  std::filesystem::path dist_path;  // relative to the manifest root
  std::optional<std::filesystem::path> ref_path;
  std::string ref_id;
  DistortionType distortion_type = DistortionType::OTHER;
  int distortion_level = 1;
  double dmos = 0.0;
};

class ManifestError : public std::runtime_error {
 public:
  ManifestError(const std::string& msg, std::size_t row) : std::runtime_error(msg), row_(row) {}
  /// 1-based data row (the header is row 0); 0 when the error is not row-specific.
  std::size_t row() const { return row_; }

 private:
  std::size_t row_;
};

struct DatabaseManifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;

  std::filesystem::path dist_file(const ManifestEntry& e) const { return root / e.dist_path; }
  std::optional<std::filesystem::path> ref_file(const ManifestEntry& e) const;

  /// Distinct ref_ids in first-appearance order.
  std::vector<std::string> reference_ids() const;
  std::vector<DistortionType> distortion_types() const;

  DatabaseManifest filter_refs(const std::vector<std::string>& ref_ids) const;
  DatabaseManifest filter_types(const std::vector<DistortionType>& types) const;

  /// Checks that files exist on disk; throws ManifestError naming the row.
  void check_files() const;
};

inline constexpr std::string_view kManifestHeader =
    "dist_path,ref_path,ref_id,distortion_type,distortion_level,dmos";

/// Parses the CSV manifest. Paths stay unopened; `root` is the manifest's directory.
DatabaseManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const DatabaseManifest& m);

/// Splits whole reference groups. The train side receives
/// round(train_fraction * groups) groups chosen by a seeded shuffle.
std::pair<DatabaseManifest, DatabaseManifest> split_by_reference(const DatabaseManifest& m,
                                                                 double train_fraction,
                                                                 std::uint64_t seed);

}  // namespace qodcnn
