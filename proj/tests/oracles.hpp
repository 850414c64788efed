#pragma once

// Brute-force reference computations used as independent oracles by the test
// suites. Everything here is computed in f64 and must stay independent of the
// library's own forward/backward paths.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace oracle {

// softmax -> negative log likelihood, averaged over the batch
inline double cross_entropy_ref(const std::vector<float>& logits, int64_t n, int64_t c,
                                const std::vector<int>& labels) {
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    double mx = -1e300;
    for (int64_t j = 0; j < c; ++j) mx = std::max(mx, (double)logits[i * c + j]);
    double denom = 0.0;
    for (int64_t j = 0; j < c; ++j) denom += std::exp((double)logits[i * c + j] - mx);
    const double logp = (double)logits[i * c + labels[i]] - mx - std::log(denom);
    total -= logp;
  }
  return total / (double)n;
}

// T^2-scaled KL between tempered softmaxes, averaged over the batch
inline double kl_ref(const std::vector<float>& teacher, const std::vector<float>& student,
                     int64_t n, int64_t c, double T) {
  auto dist = [&](const std::vector<float>& v, int64_t i, std::vector<double>& out) {
    double mx = -1e300;
    for (int64_t j = 0; j < c; ++j) mx = std::max(mx, (double)v[i * c + j] / T);
    double denom = 0.0;
    for (int64_t j = 0; j < c; ++j) denom += std::exp((double)v[i * c + j] / T - mx);
    for (int64_t j = 0; j < c; ++j) out[j] = std::exp((double)v[i * c + j] / T - mx) / denom;
  };
  std::vector<double> p(c), q(c);
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    dist(teacher, i, p);
    dist(student, i, q);
    for (int64_t j = 0; j < c; ++j) total += p[j] * (std::log(p[j]) - std::log(q[j]));
  }
  return T * T * total / (double)n;
}

// direct convolution, cross-correlation convention
inline std::vector<float> conv2d_ref(const std::vector<float>& x, int64_t N, int64_t C, int64_t H,
                                     int64_t W, const std::vector<float>& w, int64_t K, int64_t kh,
                                     int64_t kw, int stride, int pad) {
  const int64_t OH = (H + 2 * pad - kh) / stride + 1;
  const int64_t OW = (W + 2 * pad - kw) / stride + 1;
  std::vector<float> out(N * K * OH * OW, 0.0f);
  for (int64_t n = 0; n < N; ++n)
    for (int64_t k = 0; k < K; ++k)
      for (int64_t oh = 0; oh < OH; ++oh)
        for (int64_t ow = 0; ow < OW; ++ow) {
          double acc = 0.0;
          for (int64_t c = 0; c < C; ++c)
            for (int64_t i = 0; i < kh; ++i)
              for (int64_t j = 0; j < kw; ++j) {
                const int64_t ih = oh * stride - pad + i;
                const int64_t iw = ow * stride - pad + j;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                acc += (double)x[((n * C + c) * H + ih) * W + iw] *
                       (double)w[((k * C + c) * kh + i) * kw + j];
              }
          out[((n * K + k) * OH + oh) * OW + ow] = (float)acc;
        }
  return out;
}

inline std::vector<float> random_vec(size_t n, uint32_t seed, float lo = -1.0f, float hi = 1.0f) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> d(lo, hi);
  std::vector<float> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

}  // namespace oracle
