#pragma once

// Raw f32 kernels behind the tensor ops. All routines accumulate into the
// output and are deterministic for any thread count: parallelism is only over
// independent output rows/samples, reductions stay sequential.

#include <cstdint>

namespace adn::kern {

// C[M,N] += A[M,K] * B[K,N]
void gemm_nn(int64_t M, int64_t N, int64_t K, const float* A, const float* B, float* C,
             bool parallel = true);

// C[M,N] += A[M,K] * B[N,K]^T
void gemm_nt(int64_t M, int64_t N, int64_t K, const float* A, const float* B, float* C,
             bool parallel = true);

// C[M,N] += A[K,M]^T * B[K,N]
void gemm_tn(int64_t M, int64_t N, int64_t K, const float* A, const float* B, float* C,
             bool parallel = true);

// x[C,H,W] -> col[C*kh*kw, OH*OW], zero-padded borders. ld is the stride
// between col rows (>= OH*OW), so several samples can share one packed
// matrix.
void im2col(const float* x, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw,
            int64_t stride, int64_t pad, int64_t OH, int64_t OW, float* col,
            int64_t ld = -1);

// col[C*kh*kw, OH*OW] (row stride ld) scatter-added back into gx[C,H,W].
void col2im_add(const float* col, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw,
                int64_t stride, int64_t pad, int64_t OH, int64_t OW, float* gx,
                int64_t ld = -1);

}  // namespace adn::kern
