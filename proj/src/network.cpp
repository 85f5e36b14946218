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

#include "qodcnn/network.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "qodcnn/kernels.hpp"
#include "qodcnn/random.hpp"

namespace qodcnn {

// ---------------------------------------------------------------------------
// Config and model bookkeeping

std::string_view to_string(Mode m) { return m == Mode::FR ? "FR" : "NR"; }

std::optional<Mode> parse_mode(std::string_view s) {
  if (s == "NR" || s == "nr") return Mode::NR;
  if (s == "FR" || s == "fr") return Mode::FR;
  return std::nullopt;
}

std::vector<std::string> ModelConfig::problems() const {
  std::vector<std::string> out;
  if (conv_channels.size() != 8)
    out.push_back("conv_channels must have exactly 8 entries (got " + std::to_string(conv_channels.size()) + ")");
  for (std::size_t i = 0; i < conv_channels.size(); ++i)
    if (conv_channels[i] < 1) out.push_back("conv_channels[" + std::to_string(i) + "] must be >= 1");
  if (fc_width < 1) out.push_back("fc_width must be >= 1");
  if (!(bn_epsilon > 0.0)) out.push_back("bn_epsilon must be > 0");
  if (!(weight_decay >= 0.0)) out.push_back("weight_decay must be >= 0");
  return out;
}

void ModelConfig::validate() const {
  auto p = problems();
  if (p.empty()) return;
  std::string msg = "invalid ModelConfig:";
  for (const auto& s : p) msg += " " + s + ";";
  throw std::invalid_argument(msg);
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  const auto n = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  return Tensor{std::move(shape), std::vector<double>(n, 0.0)};
}

const Tensor& QodcnnModel::tensor(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw std::out_of_range("model has no tensor '" + name + "'");
  return it->second;
}

Tensor& QodcnnModel::tensor(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw std::out_of_range("model has no tensor '" + name + "'");
  return it->second;
}

namespace {

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

bool is_running_stat(const std::string& name) {
  return ends_with(name, ".running_mean") || ends_with(name, ".running_var");
}

}  // namespace

std::vector<std::string> QodcnnModel::trainable_names() const {
  std::vector<std::string> out;
  for (const auto& [name, t] : tensors)
    if (!is_running_stat(name)) out.push_back(name);
  return out;
}

std::vector<std::string> QodcnnModel::penalized_names() const {
  std::vector<std::string> out;
  for (const auto& [name, t] : tensors)
    if (ends_with(name, ".kernel") || ends_with(name, ".weight")) out.push_back(name);
  return out;
}

namespace {

void conv_bn_relu(std::vector<Layer>& layers, const std::string& conv, const std::string& bn, std::size_t in_c,
                  std::size_t out_c) {
  layers.emplace_back(ConvLayer{conv, in_c, out_c});
  layers.emplace_back(BatchNormLayer{bn, out_c});
  layers.emplace_back(ReluLayer{});
}

Topology standard_topology(const ModelConfig& c) {
  const auto& ch = c.conv_channels;
  Topology t;
  t.input_size = kPatchSize;
  conv_bn_relu(t.dist_branch, "conv1", "bn1", 1, ch[0]);
  conv_bn_relu(t.dist_branch, "conv2", "bn2", ch[0], ch[1]);
  std::size_t trunk_in = ch[1];
  if (c.mode == Mode::FR) {
    conv_bn_relu(t.ref_branch, "ref_conv1", "ref_bn1", 1, ch[0]);
    conv_bn_relu(t.ref_branch, "ref_conv2", "ref_bn2", ch[0], ch[1]);
    trunk_in = 2 * ch[1];
  }
  t.trunk.emplace_back(MaxPoolLayer{});
  std::size_t prev = trunk_in;
  for (int stage = 1; stage < 4; ++stage) {
    const auto a = std::to_string(2 * stage + 1), b = std::to_string(2 * stage + 2);
    conv_bn_relu(t.trunk, "conv" + a, "bn" + a, prev, ch[2 * stage]);
    conv_bn_relu(t.trunk, "conv" + b, "bn" + b, ch[2 * stage], ch[2 * stage + 1]);
    t.trunk.emplace_back(MaxPoolLayer{});
    prev = ch[2 * stage + 1];
  }
  const std::size_t spatial = kPatchSize / 16;
  t.trunk.emplace_back(FlattenLayer{});
  t.trunk.emplace_back(DenseLayer{"fc1", prev * spatial * spatial, c.fc_width});
  t.trunk.emplace_back(ReluLayer{});
  t.trunk.emplace_back(DenseLayer{"fc2", c.fc_width, 1});
  return t;
}

float to_storage(double v) { return static_cast<float>(v); }

void init_layers(const std::vector<Layer>& layers, TensorMap& tensors, Rng& rng) {
  for (const auto& layer : layers) {
    if (auto* conv = std::get_if<ConvLayer>(&layer)) {
      auto t = Tensor::zeros({conv->out_channels, conv->in_channels, 3, 3});
      std::normal_distribution<double> d(0.0, std::sqrt(2.0 / (9.0 * static_cast<double>(conv->in_channels))));
      for (double& v : t.data) v = to_storage(d(rng));
      tensors[conv->name + ".kernel"] = std::move(t);
    } else if (auto* bn = std::get_if<BatchNormLayer>(&layer)) {
      auto ones = Tensor::zeros({bn->channels});
      std::fill(ones.data.begin(), ones.data.end(), 1.0);
      tensors[bn->name + ".alpha"] = ones;
      tensors[bn->name + ".beta"] = Tensor::zeros({bn->channels});
      tensors[bn->name + ".running_mean"] = Tensor::zeros({bn->channels});
      tensors[bn->name + ".running_var"] = ones;
    } else if (auto* fc = std::get_if<DenseLayer>(&layer)) {
      auto w = Tensor::zeros({fc->out_features, fc->in_features});
      std::normal_distribution<double> d(0.0, std::sqrt(2.0 / static_cast<double>(fc->in_features)));
      for (double& v : w.data) v = to_storage(d(rng));
      tensors[fc->name + ".weight"] = std::move(w);
      tensors[fc->name + ".bias"] = Tensor::zeros({fc->out_features});
    }
  }
}

// Walks the layer list to check channel counts; returns the output channel count.
std::size_t check_chain(const std::vector<Layer>& layers, std::size_t channels, std::size_t& spatial,
                        bool& flat) {
  for (const auto& layer : layers) {
    if (auto* conv = std::get_if<ConvLayer>(&layer)) {
      if (flat || conv->in_channels != channels)
        throw std::invalid_argument("layer " + conv->name + ": expects " + std::to_string(conv->in_channels) +
                                    " input channels, gets " + std::to_string(channels));
      channels = conv->out_channels;
    } else if (auto* bn = std::get_if<BatchNormLayer>(&layer)) {
      if (bn->channels != channels) throw std::invalid_argument("layer " + bn->name + ": channel mismatch");
    } else if (std::holds_alternative<MaxPoolLayer>(layer)) {
      if (flat || spatial < 2) throw std::invalid_argument("max-pool on a map smaller than 2x2");
      spatial /= 2;
    } else if (std::holds_alternative<FlattenLayer>(layer)) {
      channels *= spatial * spatial;
      spatial = 1;
      flat = true;
    } else if (auto* fc = std::get_if<DenseLayer>(&layer)) {
      if (!flat || fc->in_features != channels)
        throw std::invalid_argument("layer " + fc->name + ": expects " + std::to_string(fc->in_features) +
                                    " features, gets " + std::to_string(channels));
      channels = fc->out_features;
    }
  }
  return channels;
}

void check_topology(const Topology& t) {
  std::size_t spatial = t.input_size;
  bool flat = false;
  std::size_t ch = check_chain(t.dist_branch, 1, spatial, flat);
  if (t.has_reference()) {
    std::size_t rs = t.input_size;
    bool rflat = false;
    const std::size_t rch = check_chain(t.ref_branch, 1, rs, rflat);
    if (rs != spatial || rflat != flat) throw std::invalid_argument("reference branch output shape mismatch");
    ch += rch;
  }
  if (check_chain(t.trunk, ch, spatial, flat) != 1 || !flat)
    throw std::invalid_argument("topology must end in a single scalar output");
}

}  // namespace

QodcnnModel build_custom(const Topology& topology, const ModelConfig& config, std::uint64_t seed) {
  check_topology(topology);
  QodcnnModel m{config, topology, {}};
  Rng rng(mix_seed(seed));
  init_layers(topology.dist_branch, m.tensors, rng);
  init_layers(topology.ref_branch, m.tensors, rng);
  init_layers(topology.trunk, m.tensors, rng);
  return m;
}

QodcnnModel build_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  return build_custom(standard_topology(config), config, seed);
}

void round_to_storage_precision(QodcnnModel& model) {
  for (auto& [name, t] : model.tensors)
    for (double& v : t.data) v = static_cast<double>(static_cast<float>(v));
}

std::vector<std::string> load_compatible(const QodcnnModel& src, QodcnnModel& dst) {
  std::vector<std::string> skipped;
  for (const auto& [name, t] : src.tensors) {
    auto it = dst.tensors.find(name);
    if (it == dst.tensors.end()) continue;
    if (it->second.shape != t.shape) {
      skipped.push_back(name);
      continue;
    }
    it->second = t;
  }
  return skipped;
}

// ---------------------------------------------------------------------------
// Layer kernels

namespace {

struct Runner {
  const TensorMap& tensors;
  TensorMap* mutable_tensors;  // non-null in the train phase
  double eps;

  const std::vector<double>& data(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::out_of_range("model has no tensor '" + name + "'");
    return it->second.data;
  }

  Activation conv(const ConvLayer& l, const Activation& x) const {
    if (x.channels != l.in_channels) throw std::invalid_argument(l.name + ": channel mismatch");
    Activation y{l.out_channels, x.batch, x.height, x.width, {}};
    y.data.resize(y.channels * y.batch * y.plane());
    kernels::conv3x3_forward({x.channels, l.out_channels, x.batch, x.height, x.width}, x.data.data(),
                             data(l.name + ".kernel").data(), y.data.data());
    return y;
  }

  Activation batch_norm(const BatchNormLayer& l, const Activation& x, LayerCache* cache) const {
    const std::size_t n = x.batch * x.plane();
    const auto& alpha = data(l.name + ".alpha");
    const auto& beta = data(l.name + ".beta");
    Activation y{x.channels, x.batch, x.height, x.width, std::vector<double>(x.data.size())};
    if (!mutable_tensors) {
      const auto& rm = data(l.name + ".running_mean");
      const auto& rv = data(l.name + ".running_var");
      for (std::size_t c = 0; c < x.channels; ++c) {
        const double scale = alpha[c] / std::sqrt(rv[c] + eps);
        const double* src = x.data.data() + c * n;
        double* dst = y.data.data() + c * n;
        for (std::size_t i = 0; i < n; ++i) dst[i] = scale * (src[i] - rm[c]) + beta[c];
      }
      return y;
    }
    if (n < 2) throw std::invalid_argument(l.name + ": train-phase batch norm needs at least 2 values per channel");
    auto& rm = mutable_tensors->at(l.name + ".running_mean").data;
    auto& rv = mutable_tensors->at(l.name + ".running_var").data;
    cache->aux.resize(x.data.size() + x.channels);
    double* xhat = cache->aux.data();
    double* inv_std = cache->aux.data() + x.data.size();
    for (std::size_t c = 0; c < x.channels; ++c) {
      const double* src = x.data.data() + c * n;
      double mean = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += src[i];
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t i = 0; i < n; ++i) var += (src[i] - mean) * (src[i] - mean);
      var /= static_cast<double>(n);
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[c] = is;
      double* xh = xhat + c * n;
      double* dst = y.data.data() + c * n;
      for (std::size_t i = 0; i < n; ++i) {
        xh[i] = (src[i] - mean) * is;
        dst[i] = alpha[c] * xh[i] + beta[c];
      }
      rm[c] = kBnMomentum * rm[c] + (1.0 - kBnMomentum) * mean;
      rv[c] = kBnMomentum * rv[c] + (1.0 - kBnMomentum) * var;
    }
    return y;
  }

  static Activation relu(const Activation& x) {
    Activation y = x;
    for (double& v : y.data) v = v > 0.0 ? v : 0.0;
    return y;
  }

  static Activation max_pool(const Activation& x, LayerCache* cache) {
    const std::size_t oh = x.height / 2, ow = x.width / 2;
    Activation y{x.channels, x.batch, oh, ow, std::vector<double>(x.channels * x.batch * oh * ow)};
    if (cache) cache->index.resize(y.data.size());
    for (std::size_t cb = 0; cb < x.channels * x.batch; ++cb) {
      const std::size_t in_base = cb * x.plane();
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          std::size_t best = in_base + 2 * oy * x.width + 2 * ox;
          // Row-major scan with strict comparison: ties keep the first element.
          const std::size_t cand[3] = {best + 1, best + x.width, best + x.width + 1};
          for (std::size_t c : cand)
            if (x.data[c] > x.data[best]) best = c;
          const std::size_t o = cb * oh * ow + oy * ow + ox;
          y.data[o] = x.data[best];
          if (cache) cache->index[o] = static_cast<std::uint32_t>(best);
        }
    }
    return y;
  }

  static Activation flatten(const Activation& x) {
    const std::size_t hw = x.plane();
    Activation y{x.channels * hw, x.batch, 1, 1, std::vector<double>(x.data.size())};
    for (std::size_t c = 0; c < x.channels; ++c)
      for (std::size_t b = 0; b < x.batch; ++b)
        for (std::size_t p = 0; p < hw; ++p) y.data[(c * hw + p) * x.batch + b] = x.data[(c * x.batch + b) * hw + p];
    return y;
  }

  Activation dense(const DenseLayer& l, const Activation& x) const {
    if (x.channels != l.in_features || x.plane() != 1) throw std::invalid_argument(l.name + ": feature mismatch");
    Activation y{l.out_features, x.batch, 1, 1, std::vector<double>(l.out_features * x.batch)};
    kernels::dense_forward(l.in_features, l.out_features, x.batch, x.data.data(), data(l.name + ".weight").data(),
                           data(l.name + ".bias").data(), y.data.data());
    return y;
  }

  Activation run(const std::vector<Layer>& layers, Activation x, std::vector<LayerCache>* caches) const {
    if (caches) caches->resize(layers.size());
    for (std::size_t i = 0; i < layers.size(); ++i) {
      LayerCache* cache = caches ? &(*caches)[i] : nullptr;
      Activation y = std::visit(
          [&](const auto& l) -> Activation {
            using L = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<L, ConvLayer>) return conv(l, x);
            else if constexpr (std::is_same_v<L, BatchNormLayer>) return batch_norm(l, x, cache);
            else if constexpr (std::is_same_v<L, ReluLayer>) return relu(x);
            else if constexpr (std::is_same_v<L, MaxPoolLayer>) return max_pool(x, cache);
            else if constexpr (std::is_same_v<L, FlattenLayer>) return flatten(x);
            else return dense(l, x);
          },
          layers[i]);
      if (cache) cache->input = std::move(x);
      x = std::move(y);
    }
    return x;
  }
};

Activation to_activation(InputView v, std::size_t size) {
  if (v.batch == 0) throw std::invalid_argument("forward: empty batch");
  if (v.pixels.size() != v.batch * size * size)
    throw std::invalid_argument("forward: expected " + std::to_string(v.batch) + " inputs of " +
                                std::to_string(size) + "x" + std::to_string(size));
  return Activation{1, v.batch, size, size, std::vector<double>(v.pixels.begin(), v.pixels.end())};
}

ForwardOutput run_forward(const QodcnnModel& model, TensorMap* mutable_tensors, InputView dist,
                          std::optional<InputView> ref) {
  if (model.is_fr() && !ref) throw std::invalid_argument("forward: FR model requires reference patches");
  if (!model.is_fr() && ref) throw std::invalid_argument("forward: NR model does not take reference patches");
  if (ref && ref->batch != dist.batch) throw std::invalid_argument("forward: reference batch size mismatch");

  const Runner runner{model.tensors, mutable_tensors, model.config.bn_epsilon};
  const bool train = mutable_tensors != nullptr;
  ForwardOutput out;
  ForwardTrace trace;
  Activation h = runner.run(model.topology.dist_branch, to_activation(dist, model.topology.input_size),
                            train ? &trace.dist : nullptr);
  trace.dist_channels = h.channels;
  if (ref) {
    Activation r = runner.run(model.topology.ref_branch, to_activation(*ref, model.topology.input_size),
                              train ? &trace.ref : nullptr);
    if (r.batch != h.batch || r.plane() != h.plane())
      throw std::invalid_argument("forward: branch outputs cannot be concatenated");
    h.data.insert(h.data.end(), r.data.begin(), r.data.end());
    h.channels += r.channels;
  }
  Activation y = runner.run(model.topology.trunk, std::move(h), train ? &trace.trunk : nullptr);
  out.scores = std::move(y.data);
  if (train) out.trace = std::move(trace);
  return out;
}

}  // namespace

ForwardOutput infer(const QodcnnModel& model, InputView dist, std::optional<InputView> ref) {
  return run_forward(model, nullptr, dist, ref);
}

ForwardOutput forward_train(QodcnnModel& model, InputView dist, std::optional<InputView> ref) {
  return run_forward(model, &model.tensors, dist, ref);
}

ForwardOutput forward(QodcnnModel& model, const PatchBatch& batch, const PatchBatch* ref_batch, Phase phase) {
  batch.check_consistent();
  if (model.topology.input_size != kPatchSize) throw std::invalid_argument("forward: model input is not 32x32");
  InputView dist{batch.patches, batch.size()};
  std::optional<InputView> ref;
  if (ref_batch) {
    ref_batch->check_consistent();
    ref = InputView{ref_batch->patches, ref_batch->size()};
  }
  return phase == Phase::Train ? forward_train(model, dist, ref) : infer(model, dist, ref);
}

std::vector<double> predict(const QodcnnModel& model, const PatchBatch& batch, const PatchBatch* ref_batch,
                            std::size_t chunk) {
  batch.check_consistent();
  if (ref_batch && ref_batch->size() != batch.size())
    throw std::invalid_argument("predict: reference batch size mismatch");
  chunk = std::max<std::size_t>(1, chunk);
  std::vector<double> scores;
  scores.reserve(batch.size());
  for (std::size_t b0 = 0; b0 < batch.size(); b0 += chunk) {
    const std::size_t n = std::min(chunk, batch.size() - b0);
    InputView dist{std::span<const double>(batch.patches).subspan(b0 * kPatchPixels, n * kPatchPixels), n};
    std::optional<InputView> ref;
    if (ref_batch)
      ref = InputView{std::span<const double>(ref_batch->patches).subspan(b0 * kPatchPixels, n * kPatchPixels), n};
    auto out = infer(model, dist, ref);
    scores.insert(scores.end(), out.scores.begin(), out.scores.end());
  }
  return scores;
}

// ---------------------------------------------------------------------------
// Objective and gradients

double l1_loss(std::span<const double> pred, std::span<const double> target) {
  if (pred.empty()) throw std::invalid_argument("l1_loss: empty batch");
  if (pred.size() != target.size()) throw std::invalid_argument("l1_loss: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - target[i]);
  return s / static_cast<double>(pred.size());
}

double objective(const QodcnnModel& model, std::span<const double> pred, std::span<const double> target) {
  const double loss = l1_loss(pred, target);
  const double alpha = model.config.weight_decay;
  if (alpha == 0.0) return loss;
  double sq = 0.0;
  for (const auto& name : model.penalized_names())
    for (double w : model.tensor(name).data) sq += w * w;
  return loss + alpha / (2.0 * static_cast<double>(pred.size())) * sq;
}

namespace {

struct BackRunner {
  const QodcnnModel& model;
  TensorMap& grads;

  const std::vector<double>& data(const std::string& name) const { return model.tensor(name).data; }

  // Returns the gradient with respect to the layer input; skipped (empty) when need_input is false.
  Activation back(const Layer& layer, const LayerCache& cache, const Activation& dy, bool need_input) {
    const Activation& x = cache.input;
    Activation dx{x.channels, x.batch, x.height, x.width, {}};
    if (auto* conv = std::get_if<ConvLayer>(&layer)) {
      if (need_input) dx.data.resize(x.data.size());
      kernels::conv3x3_backward({x.channels, conv->out_channels, x.batch, x.height, x.width}, x.data.data(),
                                data(conv->name + ".kernel").data(), dy.data.data(),
                                grads.at(conv->name + ".kernel").data.data(), need_input ? dx.data.data() : nullptr);
    } else if (auto* bn = std::get_if<BatchNormLayer>(&layer)) {
      const std::size_t n = x.batch * x.plane();
      const auto& alpha = data(bn->name + ".alpha");
      auto& galpha = grads.at(bn->name + ".alpha").data;
      auto& gbeta = grads.at(bn->name + ".beta").data;
      const double* xhat = cache.aux.data();
      const double* inv_std = cache.aux.data() + x.data.size();
      dx.data.resize(x.data.size());
      for (std::size_t c = 0; c < x.channels; ++c) {
        const double* g = dy.data.data() + c * n;
        const double* xh = xhat + c * n;
        double sum_g = 0.0, sum_gx = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          sum_g += g[i];
          sum_gx += g[i] * xh[i];
        }
        galpha[c] = sum_gx;
        gbeta[c] = sum_g;
        const double k = alpha[c] * inv_std[c] / static_cast<double>(n);
        double* d = dx.data.data() + c * n;
        for (std::size_t i = 0; i < n; ++i)
          d[i] = k * (static_cast<double>(n) * g[i] - sum_g - xh[i] * sum_gx);
      }
    } else if (std::holds_alternative<ReluLayer>(layer)) {
      dx.data.resize(x.data.size());
      for (std::size_t i = 0; i < x.data.size(); ++i) dx.data[i] = x.data[i] > 0.0 ? dy.data[i] : 0.0;
    } else if (std::holds_alternative<MaxPoolLayer>(layer)) {
      dx.data.assign(x.data.size(), 0.0);
      for (std::size_t o = 0; o < dy.data.size(); ++o) dx.data[cache.index[o]] += dy.data[o];
    } else if (std::holds_alternative<FlattenLayer>(layer)) {
      const std::size_t hw = x.plane();
      dx.data.resize(x.data.size());
      for (std::size_t c = 0; c < x.channels; ++c)
        for (std::size_t b = 0; b < x.batch; ++b)
          for (std::size_t p = 0; p < hw; ++p)
            dx.data[(c * x.batch + b) * hw + p] = dy.data[(c * hw + p) * x.batch + b];
    } else if (auto* fc = std::get_if<DenseLayer>(&layer)) {
      if (need_input) dx.data.resize(x.data.size());
      kernels::dense_backward(fc->in_features, fc->out_features, x.batch, x.data.data(),
                              data(fc->name + ".weight").data(), dy.data.data(),
                              grads.at(fc->name + ".weight").data.data(), grads.at(fc->name + ".bias").data.data(),
                              need_input ? dx.data.data() : nullptr);
    }
    return dx;
  }

  Activation run(const std::vector<Layer>& layers, const std::vector<LayerCache>& caches, Activation dy,
                 bool need_input) {
    for (std::size_t i = layers.size(); i-- > 0;) dy = back(layers[i], caches[i], dy, need_input || i > 0);
    return dy;
  }
};

}  // namespace

GradientResult backward(const QodcnnModel& model, const ForwardOutput& out, std::span<const double> target) {
  if (!out.trace) throw std::logic_error("backward: requires a train-phase forward");
  const auto& pred = out.scores;
  for (double p : pred)
    if (!std::isfinite(p)) throw std::domain_error("backward: non-finite network output");
  // max-pool and ReLU can mask a NaN upstream, so the output alone is not enough.
  for (const auto* caches : {&out.trace->ref, &out.trace->dist, &out.trace->trunk})
    for (const auto& c : *caches)
      for (double v : c.input.data)
        if (!std::isfinite(v)) throw std::domain_error("backward: non-finite activation");

  GradientResult res;
  res.objective = objective(model, pred, target);
  for (const auto& [name, t] : model.tensors) res.grads[name] = Tensor::zeros(t.shape);

  const std::size_t batch = pred.size();
  const double inv_b = 1.0 / static_cast<double>(batch);
  Activation dy{1, batch, 1, 1, std::vector<double>(batch)};
  for (std::size_t i = 0; i < batch; ++i) {
    const double r = pred[i] - target[i];
    dy.data[i] = r > 0.0 ? inv_b : (r < 0.0 ? -inv_b : 0.0);
  }

  BackRunner br{model, res.grads};
  const auto& trace = *out.trace;
  Activation dh = br.run(model.topology.trunk, trace.trunk, std::move(dy), true);

  Activation d_dist = dh;
  if (model.is_fr()) {
    const std::size_t n = dh.batch * dh.plane();
    const std::size_t split = trace.dist_channels * n;
    d_dist.channels = trace.dist_channels;
    d_dist.data.assign(dh.data.begin(), dh.data.begin() + static_cast<std::ptrdiff_t>(split));
    Activation d_ref{dh.channels - trace.dist_channels, dh.batch, dh.height, dh.width,
                     std::vector<double>(dh.data.begin() + static_cast<std::ptrdiff_t>(split), dh.data.end())};
    br.run(model.topology.ref_branch, trace.ref, std::move(d_ref), false);
  }
  br.run(model.topology.dist_branch, trace.dist, std::move(d_dist), false);

  const double alpha = model.config.weight_decay;
  if (alpha != 0.0) {
    for (const auto& name : model.penalized_names()) {
      const auto& w = model.tensor(name).data;
      auto& g = res.grads.at(name).data;
      for (std::size_t i = 0; i < w.size(); ++i) g[i] += alpha * inv_b * w[i];
    }
  }
  return res;
}

GradientResult compute_gradients(QodcnnModel& model, InputView dist, std::optional<InputView> ref,
                                 std::span<const double> target) {
  if (target.size() != dist.batch) throw std::invalid_argument("compute_gradients: target length mismatch");
  auto out = forward_train(model, dist, ref);
  return backward(model, out, target);
}

// ---------------------------------------------------------------------------

std::vector<double> bn_forward(std::span<const double> z, std::size_t channels, std::span<const double> alpha,
                               std::span<const double> beta, Phase phase, BnRunningStats& stats, double epsilon,
                               double momentum) {
  if (channels == 0 || z.empty()) throw std::invalid_argument("bn_forward: zero-size batch");
  if (z.size() % channels != 0) throw std::invalid_argument("bn_forward: size is not a multiple of channels");
  if (alpha.size() != channels || beta.size() != channels)
    throw std::invalid_argument("bn_forward: alpha/beta length mismatch");
  for (double v : z)
    if (!std::isfinite(v)) throw std::domain_error("bn_forward: non-finite input");
  if (stats.mean.empty()) stats.mean.assign(channels, 0.0);
  if (stats.var.empty()) stats.var.assign(channels, 1.0);

  BatchNormLayer layer{"bn", channels};
  TensorMap t;
  t["bn.alpha"] = Tensor{{channels}, {alpha.begin(), alpha.end()}};
  t["bn.beta"] = Tensor{{channels}, {beta.begin(), beta.end()}};
  t["bn.running_mean"] = Tensor{{channels}, stats.mean};
  t["bn.running_var"] = Tensor{{channels}, stats.var};
  const std::size_t n = z.size() / channels;
  Activation x{channels, n, 1, 1, {z.begin(), z.end()}};

  if (phase == Phase::Infer) {
    const Runner r{t, nullptr, epsilon};
    return r.batch_norm(layer, x, nullptr).data;
  }
  if (n < 2) throw std::invalid_argument("bn_forward: train phase needs at least 2 values per channel");
  // Runner applies the fixed module momentum; recompute the running update here for a caller-supplied one.
  LayerCache cache;
  const Runner r{t, &t, epsilon};
  auto y = r.batch_norm(layer, x, &cache).data;
  for (std::size_t c = 0; c < channels; ++c) {
    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += z[c * n + i];
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) var += (z[c * n + i] - mean) * (z[c * n + i] - mean);
    var /= static_cast<double>(n);
    stats.mean[c] = momentum * stats.mean[c] + (1.0 - momentum) * mean;
    stats.var[c] = momentum * stats.var[c] + (1.0 - momentum) * var;
  }
  return y;
}

}  // namespace qodcnn
