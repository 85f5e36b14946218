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

#include <cmath>

#include "qodcnn/checkpoint.hpp"
#include "qodcnn/network.hpp"
#include "test_support.hpp"

using namespace qodcnn;
using namespace qodcnn::testing;

namespace {

ModelConfig small_config(Mode mode = Mode::NR) {
  ModelConfig c;
  c.mode = mode;
  c.conv_channels = {4, 4, 8, 8, 8, 8, 8, 8};
  c.fc_width = 16;
  return c;
}

}  // namespace

TEST_CASE("model config validation lists problems") {
  ModelConfig c;
  c.conv_channels = {1, 2, 3};
  c.fc_width = 0;
  c.bn_epsilon = -1.0;
  const auto p = c.problems();
  CHECK(p.size() >= 3);
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  CHECK(ModelConfig{}.problems().empty());
}

TEST_CASE("standard model produces one finite score per patch") {
  const auto model = build_model(ModelConfig{}, 7);
  const auto x = random_values(64 * kPatchPixels, 3);
  const auto out = infer(model, InputView{x, 64});
  REQUIRE(out.scores.size() == 64);
  for (double s : out.scores) CHECK(std::isfinite(s));
  CHECK_FALSE(out.trace.has_value());
}

TEST_CASE("standard tensor layout") {
  const auto nr = build_model(small_config(), 1);
  CHECK(nr.tensor("conv1.kernel").shape == std::vector<std::size_t>{4, 1, 3, 3});
  CHECK(nr.tensor("conv3.kernel").shape == std::vector<std::size_t>{8, 4, 3, 3});
  CHECK(nr.tensor("fc1.weight").shape == std::vector<std::size_t>{16, 8 * 2 * 2});
  CHECK(nr.tensor("fc2.bias").shape == std::vector<std::size_t>{1});
  CHECK_FALSE(nr.tensors.contains("ref_conv1.kernel"));
  const auto fr = build_model(small_config(Mode::FR), 1);
  CHECK(fr.tensor("conv3.kernel").shape == std::vector<std::size_t>{8, 8, 3, 3});
  CHECK(fr.tensors.contains("ref_bn2.running_var"));
  for (const auto& n : nr.penalized_names()) CHECK((n.ends_with(".kernel") || n.ends_with(".weight")));
}

TEST_CASE("initialization statistics") {
  ModelConfig c;
  const auto m = build_model(c, 11);
  const auto& k = m.tensor("conv8.kernel").data;  // fan_in = 256 * 9
  double s2 = 0.0;
  for (double v : k) s2 += v * v;
  CHECK(s2 / static_cast<double>(k.size()) == doctest::Approx(2.0 / (256.0 * 9.0)).epsilon(0.05));
  for (double v : m.tensor("bn3.alpha").data) CHECK(v == 1.0);
  for (double v : m.tensor("bn3.running_var").data) CHECK(v == 1.0);
  for (double v : m.tensor("fc1.bias").data) CHECK(v == 0.0);
  CHECK(build_model(c, 11).tensors == m.tensors);
  CHECK(build_model(c, 12).tensors != m.tensors);
}

TEST_CASE("infer matches a naive per-sample forward") {
  for (bool fr : {false, true}) {
    ModelConfig c = small_config(fr ? Mode::FR : Mode::NR);
    auto m = build_model(c, 5);
    randomize_tensors(m, 9);
    const std::size_t b = 5;
    const auto d = random_values(b * kPatchPixels, 21);
    const auto r = random_values(b * kPatchPixels, 22);
    std::optional<InputView> rv;
    if (fr) rv = InputView{r, b};
    const auto out = infer(m, InputView{d, b}, rv);
    NaiveForward oracle(m);
    for (std::size_t i = 0; i < b; ++i) {
      std::vector<double> di(d.begin() + static_cast<long>(i * kPatchPixels), d.begin() + static_cast<long>((i + 1) * kPatchPixels));
      std::vector<double> ri(r.begin() + static_cast<long>(i * kPatchPixels), r.begin() + static_cast<long>((i + 1) * kPatchPixels));
      const double expect = oracle.score(di, fr ? &ri : nullptr);
      CHECK(out.scores[i] == doctest::Approx(expect).epsilon(1e-12).scale(1.0));
    }
  }
}

TEST_CASE("all-zeros patch on a micro model follows the bias path") {
  auto m = build_custom(micro_topology(), ModelConfig{}, 3);
  randomize_tensors(m, 4);
  const std::vector<double> zeros(kPatchPixels, 0.0);
  const double got = infer(m, InputView{zeros, 1}).scores[0];
  CHECK(got == doctest::Approx(NaiveForward(m).score(zeros, nullptr)).epsilon(1e-13));
}

TEST_CASE("infer is deterministic and position independent") {
  const auto m = build_model(small_config(), 2);
  auto x = random_values(6 * kPatchPixels, 8);
  std::copy(x.begin(), x.begin() + kPatchPixels, x.begin() + 4 * kPatchPixels);
  const auto a = infer(m, InputView{x, 6}).scores;
  const auto b = infer(m, InputView{x, 6}).scores;
  CHECK(a == b);
  CHECK(a[0] == a[4]);
  const auto single = infer(m, InputView{std::span<const double>(x).first(kPatchPixels), 1}).scores;
  CHECK(single[0] == a[0]);
}

TEST_CASE("mode and reference checks") {
  const auto nr = build_model(small_config(), 1);
  const auto fr = build_model(small_config(Mode::FR), 1);
  const auto x = random_values(2 * kPatchPixels, 1);
  CHECK_THROWS_AS(infer(fr, InputView{x, 2}), std::invalid_argument);
  CHECK_THROWS_AS(infer(nr, InputView{x, 2}, InputView{x, 2}), std::invalid_argument);
  CHECK_THROWS_AS(infer(fr, InputView{x, 2}, InputView{std::span<const double>(x).first(kPatchPixels), 1}),
                  std::invalid_argument);
  CHECK_THROWS(infer(nr, InputView{std::span<const double>(x).first(100), 1}));
}

TEST_CASE("l1 loss examples") {
  const std::vector<double> p{3, 5}, t{1, 1};
  CHECK(l1_loss(p, t) == 3.0);
  CHECK(l1_loss(t, t) == 0.0);
  const std::vector<double> p2{5, 3}, t2{1, 1};
  CHECK(l1_loss(p2, t2) == l1_loss(p, t));
  CHECK_THROWS_AS(l1_loss(std::vector<double>{}, std::vector<double>{}), std::invalid_argument);
  CHECK_THROWS_AS(l1_loss(p, std::vector<double>{1}), std::invalid_argument);
}

TEST_CASE("objective penalty term") {
  ModelConfig c;
  c.weight_decay = 0.0;
  auto m = build_custom(gradcheck_topology(false), c, 1);
  const std::vector<double> p{1, 2, 3}, t{0, 0, 0};
  CHECK(objective(m, p, t) == l1_loss(p, t));

  std::size_t count = 0;
  for (const auto& n : m.penalized_names()) {
    for (double& v : m.tensor(n).data) v = 1.0;
    count += m.tensor(n).numel();
  }
  REQUIRE(count % 2 == 0);
  m.config.weight_decay = 1e-5;
  const std::vector<double> pb(count / 2, 2.0), tb(count / 2, 1.0);
  CHECK(objective(m, pb, tb) == doctest::Approx(1.0 + 1e-5).epsilon(1e-14));
  const double base = objective(m, pb, tb) - l1_loss(pb, tb);
  for (const auto& n : m.penalized_names())
    for (double& v : m.tensor(n).data) v = 2.0;
  CHECK(objective(m, pb, tb) - l1_loss(pb, tb) == doctest::Approx(4.0 * base).epsilon(1e-12));
}

TEST_CASE("finite-difference gradient check, NR and FR micro networks") {
  for (bool fr : {false, true}) {
    ModelConfig c;
    c.weight_decay = 1e-2;
    auto m = build_custom(gradcheck_topology(fr), c, 17);
    condition_for_gradcheck(m, 18);
    const std::size_t b = 4;
    const auto d = random_values(b * 64, 31);
    const auto r = random_values(b * 64, 32);
    std::optional<InputView> rv;
    if (fr) rv = InputView{r, b};
    auto probe = m;
    auto target = forward_train(probe, InputView{d, b}, rv).scores;
    for (std::size_t i = 0; i < b; ++i) target[i] += i % 2 ? -5.0 : 5.0;
    const auto res = finite_difference_check(m, d, fr ? &r : nullptr, b, target);
    INFO("fr=" << fr << " worst=" << res.worst);
    CHECK(res.checked > 100);
    CHECK(res.pattern_changes == 0);
    CHECK(res.max_rel_error < 1e-4);
  }
}

TEST_CASE("flat objective gives zero gradients") {
  ModelConfig c;
  c.weight_decay = 0.0;
  auto m = build_custom(gradcheck_topology(true), c, 2);
  const auto d = random_values(3 * 64, 1), r = random_values(3 * 64, 2);
  auto out = forward_train(m, InputView{d, 3}, InputView{r, 3});
  const auto target = out.scores;
  const auto g = backward(m, out, target);
  CHECK(g.objective == 0.0);
  for (const auto& [name, t] : g.grads)
    for (double v : t.data) CHECK(v == 0.0);
}

TEST_CASE("zero data gradient leaves only the penalty derivative") {
  ModelConfig c;
  c.weight_decay = 0.3;
  auto m = build_custom(gradcheck_topology(false), c, 4);
  const auto d = random_values(5 * 64, 6);
  auto out = forward_train(m, InputView{d, 5});
  const auto g = backward(m, out, out.scores);
  const auto pen = m.penalized_names();
  for (const auto& [name, t] : g.grads) {
    const bool penalized = std::find(pen.begin(), pen.end(), name) != pen.end();
    for (std::size_t i = 0; i < t.numel(); ++i)
      CHECK(t.data[i] == doctest::Approx(penalized ? 0.3 / 5.0 * m.tensor(name).data[i] : 0.0).epsilon(1e-14));
  }
}

TEST_CASE("non-finite activations are rejected in backward") {
  auto m = build_custom(gradcheck_topology(false), ModelConfig{}, 4);
  auto d = random_values(2 * 64, 6);
  d[3] = std::nan("");
  auto out = forward_train(m, InputView{d, 2});
  CHECK_THROWS_AS(backward(m, out, std::vector<double>{1.0, 2.0}), std::domain_error);
}

TEST_CASE("batch normalization statistics") {
  const std::size_t ch = 3, n = 4000;
  auto z = random_values(ch * n, 5, -50.0, 80.0);
  const std::vector<double> alpha(ch, 1.0), beta(ch, 0.0);
  BnRunningStats st{std::vector<double>(ch, 0.0), std::vector<double>(ch, 1.0)};
  const auto y = bn_forward(z, ch, alpha, beta, Phase::Train, st, 1e-5);
  for (std::size_t c = 0; c < ch; ++c) {
    double mu = 0.0, var = 0.0;
    for (std::size_t i = 0; i < n; ++i) mu += y[c * n + i];
    mu /= n;
    for (std::size_t i = 0; i < n; ++i) var += (y[c * n + i] - mu) * (y[c * n + i] - mu);
    var /= n;
    CHECK(std::abs(mu) < 1e-3);
    CHECK(std::abs(var - 1.0) < 1e-3);
    // running = 0.9 * init + 0.1 * batch
    double bm = 0.0;
    for (std::size_t i = 0; i < n; ++i) bm += z[c * n + i];
    bm /= n;
    CHECK(st.mean[c] == doctest::Approx(0.1 * bm).epsilon(1e-12));
  }
  const auto yi = bn_forward(z, ch, alpha, beta, Phase::Infer, st, 1e-5);
  CHECK(yi[0] == doctest::Approx((z[0] - st.mean[0]) / std::sqrt(st.var[0] + 1e-5)).epsilon(1e-12));
  BnRunningStats st2 = st;
  CHECK_THROWS(bn_forward(std::span<const double>(z).first(ch), ch, alpha, beta, Phase::Train, st2, 1e-5));
}

TEST_CASE("train forward updates running statistics, infer does not") {
  auto m = build_model(small_config(), 3);
  const auto x = random_values(4 * kPatchPixels, 4);
  const auto before = m.tensors;
  infer(m, InputView{x, 4});
  CHECK(m.tensors == before);
  forward_train(m, InputView{x, 4});
  CHECK(m.tensor("bn1.running_mean") != before.at("bn1.running_mean"));
  CHECK(m.tensor("conv1.kernel") == before.at("conv1.kernel"));
}

TEST_CASE("NR backbone loads into an FR model except the first post-concat conv") {
  const auto nr = build_model(small_config(), 1);
  auto fr = build_model(small_config(Mode::FR), 2);
  const auto mismatched = load_compatible(nr, fr);
  CHECK(mismatched == std::vector<std::string>{"conv3.kernel"});
  CHECK(fr.tensor("conv1.kernel") == nr.tensor("conv1.kernel"));
  CHECK(fr.tensor("fc1.weight") == nr.tensor("fc1.weight"));
  CHECK(fr.tensor("conv3.kernel") != Tensor::zeros(fr.tensor("conv3.kernel").shape));
}

TEST_CASE("custom topology validation") {
  Topology t = gradcheck_topology(false);
  t.trunk.back() = DenseLayer{"fc2", 4, 2};
  CHECK_THROWS_AS(build_custom(t, ModelConfig{}, 1), std::invalid_argument);
  Topology u = gradcheck_topology(false);
  u.trunk[1] = ConvLayer{"conv2", 5, 3};
  CHECK_THROWS_AS(build_custom(u, ModelConfig{}, 1), std::invalid_argument);
}

TEST_CASE("checkpoint round trip is bit exact") {
  auto m = build_model(small_config(Mode::FR), 9);
  const auto x = random_values(8 * kPatchPixels, 1), r = random_values(8 * kPatchPixels, 2);
  forward_train(m, InputView{x, 8}, InputView{r, 8});
  round_to_storage_precision(m);
  CheckpointInfo info{"", "pretrain", "abc"};
  const auto bytes = serialize_checkpoint(m, info);
  CHECK(info.id.size() == 16);
  CheckpointInfo back;
  const auto loaded = deserialize_checkpoint(bytes, &back);
  CHECK(loaded.tensors == m.tensors);
  CHECK(loaded.config == m.config);
  CHECK(back.id == info.id);
  CHECK(back.stage == "pretrain");
  CHECK(back.parent_id == "abc");
  CHECK(infer(loaded, InputView{x, 8}, InputView{r, 8}).scores == infer(m, InputView{x, 8}, InputView{r, 8}).scores);
  CheckpointInfo again{"", "pretrain", "abc"};
  CHECK(serialize_checkpoint(loaded, again) == bytes);

  const auto dir = scratch_dir("ckpt");
  const auto id = save_checkpoint(dir / "m.ckpt", m, {"", "finetune", info.id});
  CheckpointInfo disk;
  CHECK(load_checkpoint(dir / "m.ckpt", &disk).tensors == m.tensors);
  CHECK(disk.id == id);
  CHECK(disk.parent_id == info.id);
}

TEST_CASE("corrupted checkpoints are rejected") {
  const auto m = build_model(small_config(), 1);
  CheckpointInfo info;
  auto bytes = serialize_checkpoint(m, info);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS(deserialize_checkpoint(bad_magic));
  auto flipped = bytes;
  flipped.back() ^= 0x01;
  CHECK_THROWS(deserialize_checkpoint(flipped));
  auto truncated = bytes;
  truncated.resize(bytes.size() - 4);
  CHECK_THROWS(deserialize_checkpoint(truncated));
  CHECK_THROWS(load_checkpoint("/nonexistent/m.ckpt"));
}

TEST_CASE("custom topologies are not checkpointable") {
  const auto m = build_custom(gradcheck_topology(false), ModelConfig{}, 1);
  CheckpointInfo info;
  CHECK_THROWS_AS(serialize_checkpoint(m, info), std::invalid_argument);
}
