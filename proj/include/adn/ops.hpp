#pragma once

#include <optional>
#include <vector>

#include "adn/tensor.hpp"

namespace adn {

// Elementwise, broadcasting on trailing dims (numpy alignment rules).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, float s);
Tensor mul_scalar(const Tensor& a, float s);

// [m,k] x [k,n] -> [m,n]. Adjoints: dA = dC B^T, dB = A^T dC.
Tensor matmul(const Tensor& a, const Tensor& b);
// Batched [B,m,k] x [B,k,n] (or [B,n,k] with transpose_b) -> [B,m,n].
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);

// Cross-correlation convention. x[N,C,H,W], w[K,C,kh,kw] -> [N,K,OH,OW] with
// OH = (H + 2*pad - kh) / stride + 1.
Tensor conv2d(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias, int stride,
              int padding);

// x[..., in] * w[in, out] + bias[out]; leading dims are batch.
Tensor linear(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias);

Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);  // exact erf form

Tensor avgpool2d(const Tensor& x, int kernel, int stride);
Tensor global_avgpool(const Tensor& x);  // [N,C,H,W] -> [N,C]
Tensor flatten(const Tensor& x);         // [N,...] -> [N, prod]

// One dim may be -1 (inferred).
Tensor reshape(const Tensor& x, Shape new_shape);
Tensor permute(const Tensor& x, const std::vector<int>& axes);
Tensor slice(const Tensor& x, int axis, int64_t start, int64_t length);
Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor broadcast_to(const Tensor& x, const Shape& target);

Tensor softmax(const Tensor& x, int axis);
// Stabilized by max subtraction; rows satisfy logsumexp == 0.
Tensor log_softmax(const Tensor& x, int axis);

Tensor sum(const Tensor& x);  // -> scalar

// Mean over the batch of -log_softmax(logits)[label]. logits[N,C].
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// T^2 * mean_batch sum_c p_c (ln p_c - ln q_c), p = softmax(teacher/T),
// q = softmax(student/T). The teacher side is a constant: no gradient flows
// into teacher_logits.
Tensor kl_divergence(const Tensor& teacher_logits, const Tensor& student_logits,
                     float temperature);

// x[N,C,H,W] normalized per channel. In training mode, batch statistics are
// used and running stats are updated in place with
// new = (1-momentum)*old + momentum*batch_stat (biased variance); in eval
// mode the running stats are used.
Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                    Tensor& running_mean, Tensor& running_var, float momentum, float eps,
                    bool training);

// Normalizes over the last axis. gamma/beta shaped [last_dim].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps);

}  // namespace adn
