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

// Optimized kernels against their serial references. Arg(0) = optimized,
// Arg(1) = reference. Use OMP_NUM_THREADS to vary the parallel side.

#include <benchmark/benchmark.h>

#include <vector>

#include "qodcnn/kernels.hpp"
#include "qodcnn/pooling.hpp"
#include "test_support.hpp"

using namespace qodcnn;

namespace {

// One mid-network layer shape: 32 -> 32 channels at 16x16, batch 64.
kernels::ConvShape layer_shape() { return {32, 32, 64, 16, 16}; }

void BM_Conv3x3Forward(benchmark::State& state) {
  const auto s = layer_shape();
  const auto in = testing::random_values(s.in_size(), 1), k = testing::random_values(s.kernel_size(), 2);
  std::vector<double> out(s.out_size());
  const bool ref = state.range(0) != 0;
  for (auto _ : state) {
    if (ref)
      kernels::reference::conv3x3_forward(s, in.data(), k.data(), out.data());
    else
      kernels::conv3x3_forward(s, in.data(), k.data(), out.data());
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(s.batch));
}

void BM_Conv3x3Backward(benchmark::State& state) {
  const auto s = layer_shape();
  const auto in = testing::random_values(s.in_size(), 3), k = testing::random_values(s.kernel_size(), 4);
  const auto dout = testing::random_values(s.out_size(), 5);
  std::vector<double> dk(s.kernel_size()), din(s.in_size());
  const bool ref = state.range(0) != 0;
  for (auto _ : state) {
    if (ref)
      kernels::reference::conv3x3_backward(s, in.data(), k.data(), dout.data(), dk.data(), din.data());
    else
      kernels::conv3x3_backward(s, in.data(), k.data(), dout.data(), dk.data(), din.data());
    benchmark::DoNotOptimize(din.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(s.batch));
}

void BM_LsdMap(benchmark::State& state) {
  const auto img = testing::random_image(256, 256, 6);
  const bool ref = state.range(0) != 0;
  for (auto _ : state) {
    auto m = ref ? reference::lsd_map(img) : lsd_map(img);
    benchmark::DoNotOptimize(m.values.data());
  }
  state.SetItemsProcessed(state.iterations() * 256 * 256);
}

}  // namespace

BENCHMARK(BM_Conv3x3Forward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Conv3x3Backward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_LsdMap)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
