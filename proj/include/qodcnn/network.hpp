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

// Patch-level quality regression network.
//
// Backbone: [conv3x3-BN-ReLU, conv3x3-BN-ReLU, maxpool2x2] x 4, flatten,
// FC(fc_width)-ReLU, FC(1). In FR mode an unshared reference branch
// duplicates the first two conv-BN-ReLU layers and its feature maps are
// concatenated (distorted first) with the distorted branch before the first
// pooling layer.
//
// Parameters live in a single name -> tensor map:
//   <conv>.kernel [Cout][Cin][3][3]
//   <bn>.alpha, <bn>.beta, <bn>.running_mean, <bn>.running_var  [C]
//   <fc>.weight [out][in], <fc>.bias [out]
// Stored parameter values are kept representable in float32 so that a
// checkpoint round-trip is lossless; arithmetic is carried out in double.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "qodcnn/patches.hpp"

namespace qodcnn {

enum class Mode { NR, FR };
enum class Phase { Train, Infer };

std::string_view to_string(Mode m);
std::optional<Mode> parse_mode(std::string_view s);

struct ModelConfig {
  Mode mode = Mode::NR;
  std::vector<std::size_t> conv_channels = {32, 32, 64, 64, 128, 128, 256, 256};
  std::size_t fc_width = 512;
  double bn_epsilon = 1e-5;
  double weight_decay = 1e-5;  // penalty factor of the l2 term

  /// Returns human-readable problems; empty when valid.
  std::vector<std::string> problems() const;
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

inline constexpr double kBnMomentum = 0.9;

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  static Tensor zeros(std::vector<std::size_t> shape);
  std::size_t numel() const { return data.size(); }
  bool operator==(const Tensor&) const = default;
};

using TensorMap = std::map<std::string, Tensor>;

struct ConvLayer {
  std::string name;
  std::size_t in_channels = 0, out_channels = 0;
};
struct BatchNormLayer {
  std::string name;
  std::size_t channels = 0;
};
struct ReluLayer {};
struct MaxPoolLayer {};
struct FlattenLayer {};
struct DenseLayer {
  std::string name;
  std::size_t in_features = 0, out_features = 0;
};
using Layer = std::variant<ConvLayer, BatchNormLayer, ReluLayer, MaxPoolLayer, FlattenLayer, DenseLayer>;

/// Layer graph: optional reference branch, distorted branch, shared trunk.
/// With a non-empty ref_branch the two branch outputs are concatenated on the
/// channel axis before the trunk.
struct Topology {
  std::size_t input_size = kPatchSize;
  std::vector<Layer> ref_branch;
  std::vector<Layer> dist_branch;
  std::vector<Layer> trunk;

  bool has_reference() const { return !ref_branch.empty(); }
};

struct QodcnnModel {
  ModelConfig config;
  Topology topology;
  TensorMap tensors;

  bool is_fr() const { return topology.has_reference(); }
  const Tensor& tensor(const std::string& name) const;
  Tensor& tensor(const std::string& name);
  /// Names of tensors that receive gradient updates (everything except BN running statistics).
  std::vector<std::string> trainable_names() const;
  /// Conv kernels and FC weights: the tensors covered by the l2 penalty.
  std::vector<std::string> penalized_names() const;
};

/// Standard topology for a config; weights drawn from N(0, 2/fan_in), biases 0,
/// BN alpha=1, beta=0, running mean 0, running variance 1.
QodcnnModel build_model(const ModelConfig& config, std::uint64_t seed);
/// Arbitrary (e.g. miniature) topology with the same initialization scheme.
QodcnnModel build_custom(const Topology& topology, const ModelConfig& config, std::uint64_t seed);

/// Rounds every stored tensor value to the nearest float32.
void round_to_storage_precision(QodcnnModel& model);

/// Copies tensors whose names and shapes match from src into dst; returns the
/// names that exist in both but could not be copied because their shapes differ.
std::vector<std::string> load_compatible(const QodcnnModel& src, QodcnnModel& dst);

// ---------------------------------------------------------------------------
// Activations and forward/backward

/// Channel-major activation [C][B][H][W]; dense features use H = W = 1.
struct Activation {
  std::size_t channels = 0, batch = 0, height = 0, width = 0;
  std::vector<double> data;

  std::size_t plane() const { return height * width; }
};

struct InputView {
  std::span<const double> pixels;  // batch * input_size^2, sample-major
  std::size_t batch = 0;
};

struct LayerCache {
  Activation input;
  std::vector<double> aux;           // BN: normalized values followed by per-channel inverse std
  std::vector<std::uint32_t> index;  // max-pool: winning input offset per output
};

struct ForwardTrace {
  std::vector<LayerCache> ref, dist, trunk;
  std::size_t dist_channels = 0;  // channels contributed by the distorted branch
};

struct ForwardOutput {
  std::vector<double> scores;
  std::optional<ForwardTrace> trace;  // present after a train-phase forward
};

/// Infer-phase forward. Uses BN running statistics; pure in (weights, input).
ForwardOutput infer(const QodcnnModel& model, InputView dist, std::optional<InputView> ref = std::nullopt);
/// Train-phase forward: batch statistics, running-stat update, cached activations.
ForwardOutput forward_train(QodcnnModel& model, InputView dist, std::optional<InputView> ref = std::nullopt);

ForwardOutput forward(QodcnnModel& model, const PatchBatch& batch, const PatchBatch* ref_batch, Phase phase);

/// Scores every patch in chunks of `chunk` (infer phase).
std::vector<double> predict(const QodcnnModel& model, const PatchBatch& batch, const PatchBatch* ref_batch,
                            std::size_t chunk = 256);

double l1_loss(std::span<const double> pred, std::span<const double> target);
/// l1_loss + (alpha / 2B) * sum of squared penalized weights, B = pred.size().
double objective(const QodcnnModel& model, std::span<const double> pred, std::span<const double> target);

struct GradientResult {
  TensorMap grads;  // same names and shapes as the model; running statistics get zeros
  double objective = 0.0;
};

/// Gradients of `objective` after a train-phase forward that produced `out`.
/// The L1 subgradient at zero residual and the ReLU subgradient at zero are 0;
/// max-pool ties route to the first maximal element in row-major order.
GradientResult backward(const QodcnnModel& model, const ForwardOutput& out, std::span<const double> target);

/// forward_train followed by backward.
GradientResult compute_gradients(QodcnnModel& model, InputView dist, std::optional<InputView> ref,
                                 std::span<const double> target);

// ---------------------------------------------------------------------------
// Standalone batch normalization on a channel-major [C][N] buffer.

struct BnRunningStats {
  std::vector<double> mean;
  std::vector<double> var;
};

/// Train phase: per-channel batch mean/variance over N values,
/// y = alpha * (z - u) / sqrt(var + eps) + beta, running = m * running + (1 - m) * batch.
/// Infer phase: uses the running statistics. Requires N >= 2 in the train phase.
std::vector<double> bn_forward(std::span<const double> z, std::size_t channels, std::span<const double> alpha,
                               std::span<const double> beta, Phase phase, BnRunningStats& stats, double epsilon,
                               double momentum = kBnMomentum);

}  // namespace qodcnn
