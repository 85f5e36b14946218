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

// Serial reference kernels: direct loops written straight from the definitions.

#include <algorithm>

#include "qodcnn/kernels.hpp"

namespace qodcnn::kernels::reference {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
             std::size_t ldb, double* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * lda + p] * b[p * ldb + j];
      c[i * ldc + j] = acc;
    }
}

void conv3x3_forward(const ConvShape& s, const double* in, const double* kernel, double* out) {
  const auto h = static_cast<std::ptrdiff_t>(s.height), w = static_cast<std::ptrdiff_t>(s.width);
  for (std::size_t co = 0; co < s.out_channels; ++co)
    for (std::size_t b = 0; b < s.batch; ++b)
      for (std::ptrdiff_t y = 0; y < h; ++y)
        for (std::ptrdiff_t x = 0; x < w; ++x) {
          double acc = 0.0;
          for (std::size_t ci = 0; ci < s.in_channels; ++ci)
            for (std::ptrdiff_t ky = 0; ky < 3; ++ky)
              for (std::ptrdiff_t kx = 0; kx < 3; ++kx) {
                const std::ptrdiff_t sy = y + ky - 1, sx = x + kx - 1;
                if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
                acc += kernel[((co * s.in_channels + ci) * 3 + ky) * 3 + kx] *
                       in[((ci * s.batch + b) * s.height + sy) * s.width + sx];
              }
          out[((co * s.batch + b) * s.height + y) * s.width + x] = acc;
        }
}

void conv3x3_backward(const ConvShape& s, const double* in, const double* kernel, const double* dout,
                      double* dkernel, double* din) {
  std::fill(dkernel, dkernel + s.kernel_size(), 0.0);
  if (din) std::fill(din, din + s.in_size(), 0.0);
  const auto h = static_cast<std::ptrdiff_t>(s.height), w = static_cast<std::ptrdiff_t>(s.width);
  for (std::size_t co = 0; co < s.out_channels; ++co)
    for (std::size_t b = 0; b < s.batch; ++b)
      for (std::ptrdiff_t y = 0; y < h; ++y)
        for (std::ptrdiff_t x = 0; x < w; ++x) {
          const double g = dout[((co * s.batch + b) * s.height + y) * s.width + x];
          for (std::size_t ci = 0; ci < s.in_channels; ++ci)
            for (std::ptrdiff_t ky = 0; ky < 3; ++ky)
              for (std::ptrdiff_t kx = 0; kx < 3; ++kx) {
                const std::ptrdiff_t sy = y + ky - 1, sx = x + kx - 1;
                if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
                const std::size_t ki = ((co * s.in_channels + ci) * 3 + ky) * 3 + kx;
                const std::size_t xi = ((ci * s.batch + b) * s.height + sy) * s.width + sx;
                dkernel[ki] += g * in[xi];
                if (din) din[xi] += g * kernel[ki];
              }
        }
}

void dense_forward(std::size_t in_features, std::size_t out_features, std::size_t batch, const double* x,
                   const double* weight, const double* bias, double* out) {
  for (std::size_t o = 0; o < out_features; ++o)
    for (std::size_t b = 0; b < batch; ++b) {
      double acc = bias[o];
      for (std::size_t i = 0; i < in_features; ++i) acc += weight[o * in_features + i] * x[i * batch + b];
      out[o * batch + b] = acc;
    }
}

void dense_backward(std::size_t in_features, std::size_t out_features, std::size_t batch, const double* x,
                    const double* weight, const double* dout, double* dweight, double* dbias, double* dx) {
  for (std::size_t o = 0; o < out_features; ++o) {
    double gb = 0.0;
    for (std::size_t b = 0; b < batch; ++b) gb += dout[o * batch + b];
    dbias[o] = gb;
    for (std::size_t i = 0; i < in_features; ++i) {
      double gw = 0.0;
      for (std::size_t b = 0; b < batch; ++b) gw += dout[o * batch + b] * x[i * batch + b];
      dweight[o * in_features + i] = gw;
    }
  }
  if (dx)
    for (std::size_t i = 0; i < in_features; ++i)
      for (std::size_t b = 0; b < batch; ++b) {
        double acc = 0.0;
        for (std::size_t o = 0; o < out_features; ++o) acc += weight[o * in_features + i] * dout[o * batch + b];
        dx[i * batch + b] = acc;
      }
}

}  // namespace qodcnn::kernels::reference
