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

#include <doctest.h>

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "qodcnn/protocol.hpp"
#include "qodcnn/synth.hpp"
#include "test_support.hpp"

using namespace qodcnn;
using namespace qodcnn::testing;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

DatabaseManifest tiny_corpus(const std::filesystem::path& dir, std::size_t refs, std::uint64_t seed) {
  SynthCorpusOptions opt;
  opt.n_refs = refs;
  opt.kinds = {DistortionType::GN, DistortionType::CC};
  opt.levels = 3;
  opt.height = 64;
  opt.width = 64;
  opt.seed = seed;
  return make_synthetic_manifest(dir, opt);
}

PipelineConfig tiny_pipeline(Mode mode = Mode::NR) {
  PipelineConfig c;
  c.model.mode = mode;
  c.model.conv_channels = {2, 2, 4, 4, 4, 4, 8, 8};
  c.model.fc_width = 8;
  for (auto* s : {&c.stage1, &c.stage2}) {
    s->base_lr = 1e-3;
    s->total_epochs = 2;
    s->batch_size = 8;
  }
  c.train_fraction = 0.75;
  return c;
}

std::set<std::string> as_set(const std::vector<std::string>& v) { return {v.begin(), v.end()}; }

}  // namespace

TEST_CASE("pipeline config validation") {
  CHECK(tiny_pipeline().problems().empty());
  auto c = tiny_pipeline();
  c.selection_ratio = 1.5;
  c.train_fraction = 1.0;
  c.stage2.batch_size = 0;
  const auto p = c.problems();
  CHECK(p.size() >= 3);
}

TEST_CASE("variant names") {
  CHECK(variant_name(1, Pooling::Average) == "stage1_average");
  CHECK(variant_name(2, Pooling::Vlsd) == "stage2_vlsd");
}

TEST_CASE("images and training sets") {
  const auto dir = scratch_dir("protocol_images");
  const auto m = tiny_corpus(dir, 2, 1);
  const auto nr = load_images(m, false);
  REQUIRE(nr.size() == 12);
  CHECK_FALSE(nr[0].ref.has_value());
  const auto fr = load_images(m, true);
  REQUIRE(fr[0].ref.has_value());
  CHECK(fr[0].ref->height() == 64);

  std::vector<const LoadedImage*> ptrs;
  for (const auto& im : fr) ptrs.push_back(&im);
  const auto ts = build_training_set(ptrs, Mode::FR);
  CHECK(ts.size() == 48);
  REQUIRE(ts.ref.has_value());
  CHECK(ts.ref->size() == 48);
  CHECK(group_by_source(ts.dist).size() == 12);
  CHECK(ts.dist.labels[0] == m.entries[0].dmos);

  std::vector<const LoadedImage*> nr_ptrs;
  for (const auto& im : nr) nr_ptrs.push_back(&im);
  CHECK_FALSE(build_training_set(nr_ptrs, Mode::NR).ref.has_value());
  CHECK_THROWS_AS(build_training_set(nr_ptrs, Mode::FR), std::invalid_argument);
}

TEST_CASE("split protocol: repeats, disjoint references, all variants") {
  const auto dir = scratch_dir("protocol_split");
  const auto m = tiny_corpus(dir / "corpus", 4, 2);
  std::vector<std::string> progress;
  StageArtifacts art;
  art.checkpoint_dir = dir / "ckpt";
  art.progress = [&](const std::string& s) { progress.push_back(s); };
  const auto rep = run_protocol(m, tiny_pipeline(), 2, 5, art);
  CHECK(rep.protocol == "split");
  CHECK(rep.aggregate == "mean");
  CHECK(rep.primary_variant == "stage2_vlsd");
  CHECK(rep.requested_repeats == 2);
  CHECK(rep.complete_repeats == 2);
  REQUIRE(rep.repeats.size() == 2);
  for (const auto& r : rep.repeats) {
    INFO(r.error);
    CHECK(r.complete);
    CHECK(r.train_refs.size() == 3);
    CHECK(r.test_refs.size() == 1);
    const auto tr = as_set(r.train_refs);
    for (const auto& t : r.test_refs) CHECK_FALSE(tr.contains(t));
    CHECK(r.variants.size() == 4);
    REQUIRE(r.achieved_ratio.has_value());
    CHECK(*r.achieved_ratio == doctest::Approx(0.5));  // four patches per image, floor(0.7*4) = 2
  }
  CHECK(rep.repeats[0].seed != rep.repeats[1].seed);
  for (const char* v : {"stage1_average", "stage1_vlsd", "stage2_average", "stage2_vlsd"}) {
    const auto* row = rep.find(v);
    REQUIRE(row != nullptr);
    CHECK(row->repeats <= 2);
    CHECK(rep.find(v, "GN") != nullptr);
    CHECK(rep.find(v, "CC") != nullptr);
  }
  CHECK(rep.find("stage3_vlsd") == nullptr);
  REQUIRE(rep.scatter.has_value());
  CHECK(rep.scatter->pred.size() == 6);
  CHECK_FALSE(progress.empty());
  CHECK(std::filesystem::exists(dir / "ckpt" / "repeat0_stage1.ckpt"));
  CHECK(std::filesystem::exists(dir / "ckpt" / "repeat1_stage2.ckpt"));

  write_report_csv(dir / "report.csv", rep);
  std::ifstream csv(dir / "report.csv");
  std::string head;
  std::getline(csv, head);
  CHECK(head == "variant,distortion,plcc,srcc,rmse,repeats");
  write_scatter_png(dir / "scatter.png", *rep.scatter);
  CHECK(read_png_gray(dir / "scatter.png").width() > 0);

  CHECK_THROWS_AS(run_protocol(m, tiny_pipeline(), 0, 5), std::invalid_argument);
}

TEST_CASE("split protocol report is reproducible byte for byte") {
  const auto dir = scratch_dir("protocol_repro");
  const auto m = tiny_corpus(dir / "corpus", 3, 3);
  for (int run = 0; run < 2; ++run)
    write_report_json(dir / ("r" + std::to_string(run) + ".json"), run_protocol(m, tiny_pipeline(), 1, 11));
  const auto a = slurp(dir / "r0.json");
  CHECK(a == slurp(dir / "r1.json"));
  const auto j = nlohmann::json::parse(a);
  CHECK(j["protocol"] == "split");
  CHECK(j["incomplete"] == false);
  CHECK(j["repeats"].size() == 1);
}

TEST_CASE("cross-database protocol") {
  const auto dir = scratch_dir("protocol_cross");
  auto train = tiny_corpus(dir / "train", 3, 4);
  // LSC rows pointing at files that do not exist: they must be filtered out
  // before any image is opened.
  for (int i = 0; i < 3; ++i)
    train.entries.push_back({"dist/missing" + std::to_string(i) + ".png", std::nullopt, "ref00", DistortionType::LSC,
                             i + 1, 50.0});
  const auto test = tiny_corpus(dir / "test", 5, 5);
  const auto rep = run_cross_database(train, test, tiny_pipeline(), 0.6, 5, 7);
  CHECK(rep.protocol == "cross");
  CHECK(rep.aggregate == "median");
  CHECK(rep.complete_repeats == 5);
  REQUIRE(rep.repeats.size() == 5);
  for (const auto& r : rep.repeats) {
    CHECK(r.fit_refs.size() == 3);
    CHECK(r.test_refs.size() == 2);
    const auto fit = as_set(r.fit_refs);
    for (const auto& t : r.test_refs) CHECK_FALSE(fit.contains(t));
  }
  CHECK(rep.find("stage2_vlsd") != nullptr);

  DatabaseManifest lsc_only = train.filter_types({DistortionType::LSC});
  CHECK_THROWS_AS(run_cross_database(lsc_only, test, tiny_pipeline(), 0.6, 1, 7), std::invalid_argument);
  CHECK_THROWS_AS(run_cross_database(train, test, tiny_pipeline(), 1.0, 1, 7), std::invalid_argument);
}

TEST_CASE("selection-ratio sweep") {
  const auto dir = scratch_dir("protocol_sweep");
  const auto m = tiny_corpus(dir, 4, 6);
  const auto rep = run_proportion_sweep(m, tiny_pipeline(), {0.5, 1.0}, 1, 3);
  CHECK(rep.protocol == "sweep");
  CHECK(rep.find("p0.50_vlsd") != nullptr);
  CHECK(rep.find("p1.00_vlsd") != nullptr);
  CHECK(rep.find("stage1_vlsd") != nullptr);
  CHECK_THROWS_AS(run_proportion_sweep(m, tiny_pipeline(), {}, 1, 3), std::invalid_argument);
  CHECK_THROWS_AS(run_proportion_sweep(m, tiny_pipeline(), {1.2}, 1, 3), std::invalid_argument);
}
