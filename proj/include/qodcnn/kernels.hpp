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

// Dense numeric kernels used by the network layers.
//
// Activations use a channel-major layout [C][B][H][W]: every channel is one
// contiguous row spanning the whole batch, which turns convolution into a
// single wide matrix product per chunk of samples.
//
// The top-level namespace holds the OpenMP-parallel kernels. `reference`
// holds straightforward serial loops with the same contracts; they are kept
// for tests and the benchmark. Parallel kernels partition work so that every
// output element is produced by exactly one thread in a fixed order, so the
// results do not depend on the thread count.

#pragma once

#include <cstddef>

namespace qodcnn::kernels {

struct ConvShape {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t batch = 1;
  std::size_t height = 1;
  std::size_t width = 1;

  std::size_t plane() const { return height * width; }
  std::size_t in_size() const { return in_channels * batch * plane(); }
  std::size_t out_size() const { return out_channels * batch * plane(); }
  std::size_t kernel_size() const { return out_channels * in_channels * 9; }
};

/// C[M][N] = A[M][K] * B[K][N] (row-major, explicit leading dimensions). Serial.
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
             std::size_t ldb, double* c, std::size_t ldc);

/// dst[cols][rows] = src[rows][cols]^T.
void transpose(std::size_t rows, std::size_t cols, const double* src, std::size_t lds, double* dst,
               std::size_t ldd);

/// 3x3 convolution, stride 1, zero padding 1, no bias.
/// in: [Cin][B][H][W], kernel: [Cout][Cin][3][3], out: [Cout][B][H][W].
void conv3x3_forward(const ConvShape& s, const double* in, const double* kernel, double* out);

/// Gradients of conv3x3_forward. dkernel and din are overwritten; din may be null.
void conv3x3_backward(const ConvShape& s, const double* in, const double* kernel, const double* dout,
                      double* dkernel, double* din);

/// out[O][B] = W[O][I] * x[I][B] + bias[O].
void dense_forward(std::size_t in_features, std::size_t out_features, std::size_t batch, const double* x,
                   const double* weight, const double* bias, double* out);

/// Overwrites dweight, dbias and (when non-null) dx.
void dense_backward(std::size_t in_features, std::size_t out_features, std::size_t batch, const double* x,
                    const double* weight, const double* dout, double* dweight, double* dbias, double* dx);

namespace reference {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
             std::size_t ldb, double* c, std::size_t ldc);
void conv3x3_forward(const ConvShape& s, const double* in, const double* kernel, double* out);
void conv3x3_backward(const ConvShape& s, const double* in, const double* kernel, const double* dout,
                      double* dkernel, double* din);
void dense_forward(std::size_t in_features, std::size_t out_features, std::size_t batch, const double* x,
                   const double* weight, const double* bias, double* out);
void dense_backward(std::size_t in_features, std::size_t out_features, std::size_t batch, const double* x,
                    const double* weight, const double* dout, double* dweight, double* dbias, double* dx);

}  // namespace reference

}  // namespace qodcnn::kernels
