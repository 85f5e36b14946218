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

#include "qodcnn/kernels.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

namespace qodcnn::kernels {

namespace {

constexpr std::size_t kMr = 4;
constexpr std::size_t kNr = 32;
// Target number of im2col columns per chunk of samples.
constexpr std::size_t kChunkColumns = 2048;

template <std::size_t MR, std::size_t NR>
inline void micro_tile(std::size_t k, const double* a, std::size_t lda, const double* b, std::size_t ldb,
                       double* c, std::size_t ldc) {
  double acc[MR][NR] = {};
  for (std::size_t p = 0; p < k; ++p) {
    const double* bp = b + p * ldb;
    for (std::size_t i = 0; i < MR; ++i) {
      const double ai = a[i * lda + p];
#pragma omp simd
      for (std::size_t j = 0; j < NR; ++j) acc[i][j] += ai * bp[j];
    }
  }
  for (std::size_t i = 0; i < MR; ++i) std::memcpy(c + i * ldc, acc[i], NR * sizeof(double));
}

inline void edge_tile(std::size_t mr, std::size_t nr, std::size_t k, const double* a, std::size_t lda,
                      const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  for (std::size_t i = 0; i < mr; ++i) {
    double* ci = c + i * ldc;
    std::fill(ci, ci + nr, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double ai = a[i * lda + p];
      const double* bp = b + p * ldb;
#pragma omp simd
      for (std::size_t j = 0; j < nr; ++j) ci[j] += ai * bp[j];
    }
  }
}

std::size_t samples_per_chunk(const ConvShape& s) {
  return std::clamp<std::size_t>(kChunkColumns / std::max<std::size_t>(1, s.plane()), 1, s.batch);
}

// col[(ci*9 + ky*3 + kx)][(b-b0)*HW + y*W + x] = in[ci][b][y+ky-1][x+kx-1], zero outside.
void im2col(const ConvShape& s, const double* in, std::size_t b0, std::size_t b1, double* col) {
  const std::size_t h = s.height, w = s.width, hw = s.plane();
  const std::size_t nc = (b1 - b0) * hw;
  for (std::size_t ci = 0; ci < s.in_channels; ++ci) {
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        double* row = col + (ci * 9 + ky * 3 + kx) * nc;
        for (std::size_t b = b0; b < b1; ++b) {
          const double* src = in + (ci * s.batch + b) * hw;
          double* dst = row + (b - b0) * hw;
          for (std::size_t y = 0; y < h; ++y) {
            const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
            double* d = dst + y * w;
            if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) {
              std::fill(d, d + w, 0.0);
              continue;
            }
            const double* srow = src + static_cast<std::size_t>(sy) * w;
            // x + kx - 1 ranges over [-1, w]; the out-of-range column is zero.
            if (kx == 0) {
              d[0] = 0.0;
              std::copy(srow, srow + w - 1, d + 1);
            } else if (kx == 1) {
              std::copy(srow, srow + w, d);
            } else {
              std::copy(srow + 1, srow + w, d);
              d[w - 1] = 0.0;
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates into din (which the caller zeroes).
void col2im(const ConvShape& s, const double* col, std::size_t b0, std::size_t b1, double* din) {
  const std::size_t h = s.height, w = s.width, hw = s.plane();
  const std::size_t nc = (b1 - b0) * hw;
  for (std::size_t ci = 0; ci < s.in_channels; ++ci) {
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        const double* row = col + (ci * 9 + ky * 3 + kx) * nc;
        for (std::size_t b = b0; b < b1; ++b) {
          double* dst = din + (ci * s.batch + b) * hw;
          const double* src = row + (b - b0) * hw;
          for (std::size_t y = 0; y < h; ++y) {
            const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
            if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
            double* drow = dst + static_cast<std::size_t>(sy) * w;
            const double* c = src + y * w;
            if (kx == 0) {
              for (std::size_t x = 1; x < w; ++x) drow[x - 1] += c[x];
            } else if (kx == 1) {
              for (std::size_t x = 0; x < w; ++x) drow[x] += c[x];
            } else {
              for (std::size_t x = 0; x + 1 < w; ++x) drow[x + 1] += c[x];
            }
          }
        }
      }
    }
  }
}

}  // namespace

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
             std::size_t ldb, double* c, std::size_t ldc) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    for (std::size_t i = 0; i < m; ++i) std::fill(c + i * ldc, c + i * ldc + n, 0.0);
    return;
  }
  const std::size_t n_full = n - n % kNr;
  const std::size_t m_full = m - m % kMr;
  for (std::size_t j = 0; j < n_full; j += kNr) {
    std::size_t i = 0;
    for (; i < m_full; i += kMr) micro_tile<kMr, kNr>(k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc);
    for (; i < m; ++i) micro_tile<1, kNr>(k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc);
  }
  if (n_full < n) edge_tile(m, n - n_full, k, a, lda, b + n_full, ldb, c + n_full, ldc);
}

void transpose(std::size_t rows, std::size_t cols, const double* src, std::size_t lds, double* dst,
               std::size_t ldd) {
  constexpr std::size_t kBlock = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += kBlock)
    for (std::size_t c0 = 0; c0 < cols; c0 += kBlock)
      for (std::size_t r = r0; r < std::min(rows, r0 + kBlock); ++r)
        for (std::size_t c = c0; c < std::min(cols, c0 + kBlock); ++c) dst[c * ldd + r] = src[r * lds + c];
}

void conv3x3_forward(const ConvShape& s, const double* in, const double* kernel, double* out) {
  const std::size_t spc = samples_per_chunk(s);
  const auto n_chunks = static_cast<std::ptrdiff_t>((s.batch + spc - 1) / spc);
  const std::size_t kdim = s.in_channels * 9;
  const std::size_t ld = s.batch * s.plane();
#pragma omp parallel
  {
    std::vector<double> col(kdim * spc * s.plane());
#pragma omp for schedule(static)
    for (std::ptrdiff_t ch = 0; ch < n_chunks; ++ch) {
      const std::size_t b0 = static_cast<std::size_t>(ch) * spc;
      const std::size_t b1 = std::min(s.batch, b0 + spc);
      const std::size_t nc = (b1 - b0) * s.plane();
      im2col(s, in, b0, b1, col.data());
      gemm_nn(s.out_channels, nc, kdim, kernel, kdim, col.data(), nc, out + b0 * s.plane(), ld);
    }
  }
}

void conv3x3_backward(const ConvShape& s, const double* in, const double* kernel, const double* dout,
                      double* dkernel, double* din) {
  const std::size_t spc = samples_per_chunk(s);
  const std::size_t n_chunks = (s.batch + spc - 1) / spc;
  const std::size_t kdim = s.in_channels * 9;
  const std::size_t ld = s.batch * s.plane();
  const std::size_t ksize = s.kernel_size();

  std::vector<double> kernel_t(kdim * s.out_channels);
  transpose(s.out_channels, kdim, kernel, kdim, kernel_t.data(), s.out_channels);
  std::vector<double> partial(n_chunks * ksize);
  if (din) std::fill(din, din + s.in_size(), 0.0);

#pragma omp parallel
  {
    std::vector<double> col(kdim * spc * s.plane());
    std::vector<double> col_t(col.size());
    std::vector<double> dcol(din ? col.size() : 0);
#pragma omp for schedule(static)
    for (std::ptrdiff_t ch = 0; ch < static_cast<std::ptrdiff_t>(n_chunks); ++ch) {
      const std::size_t b0 = static_cast<std::size_t>(ch) * spc;
      const std::size_t b1 = std::min(s.batch, b0 + spc);
      const std::size_t nc = (b1 - b0) * s.plane();
      const double* dout_chunk = dout + b0 * s.plane();
      im2col(s, in, b0, b1, col.data());
      transpose(kdim, nc, col.data(), nc, col_t.data(), kdim);
      gemm_nn(s.out_channels, kdim, nc, dout_chunk, ld, col_t.data(), kdim,
              partial.data() + static_cast<std::size_t>(ch) * ksize, kdim);
      if (din) {
        gemm_nn(kdim, nc, s.out_channels, kernel_t.data(), s.out_channels, dout_chunk, ld, dcol.data(), nc);
        col2im(s, dcol.data(), b0, b1, din);
      }
    }
  }
  // Fixed-order reduction over chunks keeps the result independent of the thread count.
  std::copy(partial.begin(), partial.begin() + static_cast<std::ptrdiff_t>(ksize), dkernel);
  for (std::size_t ch = 1; ch < n_chunks; ++ch) {
    const double* p = partial.data() + ch * ksize;
    for (std::size_t i = 0; i < ksize; ++i) dkernel[i] += p[i];
  }
}

void dense_forward(std::size_t in_features, std::size_t out_features, std::size_t batch, const double* x,
                   const double* weight, const double* bias, double* out) {
  constexpr std::size_t kRows = 16;
  const auto blocks = static_cast<std::ptrdiff_t>((out_features + kRows - 1) / kRows);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t blk = 0; blk < blocks; ++blk) {
    const std::size_t o0 = static_cast<std::size_t>(blk) * kRows;
    const std::size_t rows = std::min(kRows, out_features - o0);
    gemm_nn(rows, batch, in_features, weight + o0 * in_features, in_features, x, batch, out + o0 * batch, batch);
    for (std::size_t o = o0; o < o0 + rows; ++o)
      for (std::size_t b = 0; b < batch; ++b) out[o * batch + b] += bias[o];
  }
}

void dense_backward(std::size_t in_features, std::size_t out_features, std::size_t batch, const double* x,
                    const double* weight, const double* dout, double* dweight, double* dbias, double* dx) {
  std::vector<double> x_t(batch * in_features);
  transpose(in_features, batch, x, batch, x_t.data(), in_features);
  gemm_nn(out_features, in_features, batch, dout, batch, x_t.data(), in_features, dweight, in_features);
  for (std::size_t o = 0; o < out_features; ++o) {
    double acc = 0.0;
    for (std::size_t b = 0; b < batch; ++b) acc += dout[o * batch + b];
    dbias[o] = acc;
  }
  if (dx) {
    std::vector<double> w_t(in_features * out_features);
    transpose(out_features, in_features, weight, in_features, w_t.data(), out_features);
    gemm_nn(in_features, batch, out_features, w_t.data(), out_features, dout, batch, dx, batch);
  }
}

}  // namespace qodcnn::kernels
