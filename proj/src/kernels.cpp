#include "kernels.hpp"

#include <algorithm>

namespace adn::kern {

namespace {

// One output row: c[N] += sum_k a[k] * B[k,N]
inline void row_axpy(int64_t N, int64_t K, const float* a, const float* B, float* c) {
  for (int64_t k = 0; k < K; ++k) {
    const float aik = a[k];
    const float* b = B + k * N;
#pragma omp simd
    for (int64_t j = 0; j < N; ++j) c[j] += aik * b[j];
  }
}

// Four output rows at once; better for narrow N where a single row cannot
// fill the FMA pipes.
inline void row4_axpy(int64_t N, int64_t K, const float* a0, const float* a1, const float* a2,
                      const float* a3, const float* B, float* c0, float* c1, float* c2,
                      float* c3) {
  for (int64_t k = 0; k < K; ++k) {
    const float v0 = a0[k], v1 = a1[k], v2 = a2[k], v3 = a3[k];
    const float* b = B + k * N;
#pragma omp simd
    for (int64_t j = 0; j < N; ++j) {
      const float bj = b[j];
      c0[j] += v0 * bj;
      c1[j] += v1 * bj;
      c2[j] += v2 * bj;
      c3[j] += v3 * bj;
    }
  }
}

inline void gemm_nn_rows(int64_t i0, int64_t i1, int64_t N, int64_t K, const float* A,
                         const float* B, float* C) {
  int64_t i = i0;
  if (N < 256) {
    for (; i + 4 <= i1; i += 4)
      row4_axpy(N, K, A + i * K, A + (i + 1) * K, A + (i + 2) * K, A + (i + 3) * K, B, C + i * N,
                C + (i + 1) * N, C + (i + 2) * N, C + (i + 3) * N);
  }
  for (; i < i1; ++i) row_axpy(N, K, A + i * K, B, C + i * N);
}

}  // namespace

void gemm_nn(int64_t M, int64_t N, int64_t K, const float* A, const float* B, float* C,
             bool parallel) {
  if (parallel && M >= 2 && M * N * K >= (int64_t)1 << 16) {
#pragma omp parallel for schedule(static)
    for (int64_t i0 = 0; i0 < M; i0 += 8) gemm_nn_rows(i0, std::min(M, i0 + 8), N, K, A, B, C);
  } else {
    gemm_nn_rows(0, M, N, K, A, B, C);
  }
}

namespace {

inline void gemm_nt_rows(int64_t i0, int64_t i1, int64_t N, int64_t K, const float* A,
                         const float* B, float* C) {
  for (int64_t i = i0; i < i1; ++i) {
    const float* a = A + i * K;
    float* c = C + i * N;
    for (int64_t j = 0; j < N; ++j) {
      const float* b = B + j * K;
      float acc = 0.0f;
#pragma omp simd reduction(+ : acc)
      for (int64_t k = 0; k < K; ++k) acc += a[k] * b[k];
      c[j] += acc;
    }
  }
}

inline void gemm_tn_rows(int64_t i0, int64_t i1, int64_t M, int64_t N, int64_t K, const float* A,
                         const float* B, float* C) {
  for (int64_t i = i0; i < i1; ++i) {
    float* c = C + i * N;
    for (int64_t k = 0; k < K; ++k) {
      const float aki = A[k * M + i];
      const float* b = B + k * N;
#pragma omp simd
      for (int64_t j = 0; j < N; ++j) c[j] += aki * b[j];
    }
  }
}

}  // namespace

void gemm_nt(int64_t M, int64_t N, int64_t K, const float* A, const float* B, float* C,
             bool parallel) {
  if (parallel && M >= 2 && M * N * K >= (int64_t)1 << 16) {
#pragma omp parallel for schedule(static)
    for (int64_t i0 = 0; i0 < M; i0 += 8) gemm_nt_rows(i0, std::min(M, i0 + 8), N, K, A, B, C);
  } else {
    gemm_nt_rows(0, M, N, K, A, B, C);
  }
}

void gemm_tn(int64_t M, int64_t N, int64_t K, const float* A, const float* B, float* C,
             bool parallel) {
  if (parallel && M >= 2 && M * N * K >= (int64_t)1 << 16) {
#pragma omp parallel for schedule(static)
    for (int64_t i0 = 0; i0 < M; i0 += 8) gemm_tn_rows(i0, std::min(M, i0 + 8), M, N, K, A, B, C);
  } else {
    gemm_tn_rows(0, M, M, N, K, A, B, C);
  }
}

void im2col(const float* x, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw,
            int64_t stride, int64_t pad, int64_t OH, int64_t OW, float* col, int64_t ld) {
  const int64_t P = ld < 0 ? OH * OW : ld;
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t ki = 0; ki < kh; ++ki) {
      for (int64_t kj = 0; kj < kw; ++kj) {
        float* dst = col + ((c * kh + ki) * kw + kj) * P;
        const float* src = x + c * H * W;
        for (int64_t oh = 0; oh < OH; ++oh) {
          const int64_t ih = oh * stride - pad + ki;
          float* drow = dst + oh * OW;
          if (ih < 0 || ih >= H) {
            std::fill(drow, drow + OW, 0.0f);
            continue;
          }
          const float* srow = src + ih * W;
          const int64_t iw0 = -pad + kj;  // input col for ow = 0
          // valid ow range: 0 <= iw0 + ow*stride < W
          int64_t ow_lo = iw0 < 0 ? (-iw0 + stride - 1) / stride : 0;
          int64_t ow_hi = iw0 >= W ? 0 : (W - 1 - iw0) / stride + 1;
          ow_hi = std::min(ow_hi, OW);
          ow_lo = std::min(ow_lo, OW);
          std::fill(drow, drow + ow_lo, 0.0f);
          if (stride == 1) {
            std::copy(srow + iw0 + ow_lo, srow + iw0 + ow_hi, drow + ow_lo);
          } else {
            for (int64_t ow = ow_lo; ow < ow_hi; ++ow) drow[ow] = srow[iw0 + ow * stride];
          }
          std::fill(drow + ow_hi, drow + OW, 0.0f);
        }
      }
    }
  }
}

void col2im_add(const float* col, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw,
                int64_t stride, int64_t pad, int64_t OH, int64_t OW, float* gx, int64_t ld) {
  const int64_t P = ld < 0 ? OH * OW : ld;
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t ki = 0; ki < kh; ++ki) {
      for (int64_t kj = 0; kj < kw; ++kj) {
        const float* src = col + ((c * kh + ki) * kw + kj) * P;
        float* dst = gx + c * H * W;
        for (int64_t oh = 0; oh < OH; ++oh) {
          const int64_t ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= H) continue;
          const float* srow = src + oh * OW;
          float* drow = dst + ih * W;
          const int64_t iw0 = -pad + kj;
          int64_t ow_lo = iw0 < 0 ? (-iw0 + stride - 1) / stride : 0;
          int64_t ow_hi = iw0 >= W ? 0 : (W - 1 - iw0) / stride + 1;
          ow_hi = std::min(ow_hi, OW);
          ow_lo = std::min(ow_lo, OW);
          for (int64_t ow = ow_lo; ow < ow_hi; ++ow) drow[iw0 + ow * stride] += srow[ow];
        }
      }
    }
  }
}

}  // namespace adn::kern
