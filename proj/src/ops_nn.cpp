// Matrix products, convolution, activations, pooling, losses, normalization.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "adn/ops.hpp"
#include "kernels.hpp"

namespace adn {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

template <class F>
void flat_apply(int64_t n, F&& f) {
  if (n >= (1 << 15)) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) f(i);
  } else {
    for (int64_t i = 0; i < n; ++i) f(i);
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul: expected rank-2 operands, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  const int64_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw ShapeError("matmul: inner dims differ, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  Tensor out = Tensor::zeros({m, n});
  kern::gemm_nn(m, n, k, a.data(), b.data(), out.data());
  auto& tape = Tape::active();
  if (tape.recording() && (Tape::tracked(a) || Tape::tracked(b))) {
    const int ia = tape.input_node(a);
    const int ib = tape.input_node(b);
    auto as = a.storage();
    auto bs = b.storage();
    tape.record(out, {ia, ib}, [=](Tape& t, const float* g) {
      if (ia >= 0) kern::gemm_nt(m, k, n, g, bs->data(), t.grad_of(ia));
      if (ib >= 0) kern::gemm_tn(k, n, m, as->data(), g, t.grad_of(ib));
    });
  }
  return out;
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
  if (a.rank() != 3 || b.rank() != 3)
    throw ShapeError("bmm: expected rank-3 operands, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  const int64_t B = a.dim(0), m = a.dim(1), k = a.dim(2);
  const int64_t kb = transpose_b ? b.dim(2) : b.dim(1);
  const int64_t n = transpose_b ? b.dim(1) : b.dim(2);
  if (b.dim(0) != B || kb != k)
    throw ShapeError("bmm: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  Tensor out = Tensor::zeros({B, m, n});
  const float* pa = a.data();
  const float* pb = b.data();
  float* po = out.data();
  const int64_t bstep_b = transpose_b ? n * k : k * n;
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < B; ++i) {
    if (transpose_b)
      kern::gemm_nt(m, n, k, pa + i * m * k, pb + i * bstep_b, po + i * m * n, false);
    else
      kern::gemm_nn(m, n, k, pa + i * m * k, pb + i * bstep_b, po + i * m * n, false);
  }
  auto& tape = Tape::active();
  if (tape.recording() && (Tape::tracked(a) || Tape::tracked(b))) {
    const int ia = tape.input_node(a);
    const int ib = tape.input_node(b);
    auto as = a.storage();
    auto bs = b.storage();
    tape.record(out, {ia, ib}, [=](Tape& t, const float* g) {
      float* ga = ia >= 0 ? t.grad_of(ia) : nullptr;
      float* gb = ib >= 0 ? t.grad_of(ib) : nullptr;
      const float* va = as->data();
      const float* vb = bs->data();
#pragma omp parallel for schedule(static)
      for (int64_t i = 0; i < B; ++i) {
        const float* gi = g + i * m * n;
        if (ga) {
          if (transpose_b)
            kern::gemm_nn(m, k, n, gi, vb + i * bstep_b, ga + i * m * k, false);
          else
            kern::gemm_nt(m, k, n, gi, vb + i * bstep_b, ga + i * m * k, false);
        }
        if (gb) {
          if (transpose_b)
            kern::gemm_tn(n, k, m, gi, va + i * m * k, gb + i * bstep_b, false);
          else
            kern::gemm_tn(k, n, m, va + i * m * k, gi, gb + i * bstep_b, false);
        }
      }
    });
  }
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias, int stride,
              int padding) {
  if (x.rank() != 4 || w.rank() != 4)
    throw ShapeError("conv2d: expected x[N,C,H,W] and w[K,C,kh,kw], got " +
                     shape_str(x.shape()) + " and " + shape_str(w.shape()));
  if (stride < 1) throw ValueError("conv2d: stride must be >= 1");
  if (padding < 0) throw ValueError("conv2d: padding must be >= 0");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t K = w.dim(0), Cw = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  if (C != Cw)
    throw ShapeError("conv2d: input channels " + std::to_string(C) + " do not match kernel " +
                     shape_str(w.shape()));
  const int64_t OH = (H + 2 * padding - kh) / stride + 1;
  const int64_t OW = (W + 2 * padding - kw) / stride + 1;
  if (kh > H + 2 * padding || kw > W + 2 * padding || OH < 1 || OW < 1)
    throw ShapeError("conv2d: non-positive output dims for input " + shape_str(x.shape()) +
                     " kernel " + shape_str(w.shape()));
  if (bias && (bias->rank() != 1 || bias->dim(0) != K))
    throw ShapeError("conv2d: bias shape " + shape_str(bias->shape()) + " does not match K=" +
                     std::to_string(K));
  const int64_t R = C * kh * kw, P = OH * OW;
  Tensor out = Tensor::zeros({N, K, OH, OW});
  const float* px = x.data();
  const float* pw = w.data();
  float* po = out.data();
  const float* pbias = bias ? bias->data() : nullptr;
#pragma omp parallel
  {
    std::vector<float> col(static_cast<size_t>(R * P));
#pragma omp for schedule(static)
    for (int64_t n = 0; n < N; ++n) {
      kern::im2col(px + n * C * H * W, C, H, W, kh, kw, stride, padding, OH, OW, col.data());
      float* on = po + n * K * P;
      kern::gemm_nn(K, P, R, pw, col.data(), on, false);
      if (pbias) {
        for (int64_t k = 0; k < K; ++k) {
          const float bv = pbias[k];
          float* row = on + k * P;
          for (int64_t p = 0; p < P; ++p) row[p] += bv;
        }
      }
    }
  }
  auto& tape = Tape::active();
  const bool track_bias = bias && Tape::tracked(*bias);
  if (tape.recording() && (Tape::tracked(x) || Tape::tracked(w) || track_bias)) {
    const int ix = tape.input_node(x);
    const int iw = tape.input_node(w);
    const int ib = bias ? tape.input_node(*bias) : -1;
    auto xs = x.storage();
    auto ws = w.storage();
    tape.record(out, {ix, iw, ib}, [=](Tape& t, const float* g) {
      // samples are packed into chunks so the GEMMs see a long inner dim;
      // chunks run sequentially, keeping accumulation order fixed for any
      // thread count
      const int64_t chunk = std::clamp<int64_t>((4096 + P - 1) / P, 1, N);
      float* gx = ix >= 0 ? t.grad_of(ix) : nullptr;
      float* gw = iw >= 0 ? t.grad_of(iw) : nullptr;
      if (gx || gw) {
        const float* vw = ws->data();
        const float* vx = xs->data();
        std::vector<float> gpack(static_cast<size_t>(K * chunk * P));
        std::vector<float> col(static_cast<size_t>(R * chunk * P));
        std::vector<float> gcol(gx ? static_cast<size_t>(R * chunk * P) : 0);
        for (int64_t c0 = 0; c0 < N; c0 += chunk) {
          const int64_t cn = std::min(chunk, N - c0);
          const int64_t width = cn * P;
#pragma omp parallel for schedule(static)
          for (int64_t k = 0; k < K; ++k)
            for (int64_t i = 0; i < cn; ++i)
              std::memcpy(gpack.data() + k * width + i * P, g + ((c0 + i) * K + k) * P,
                          static_cast<size_t>(P) * sizeof(float));
          if (gw) {
#pragma omp parallel for schedule(static)
            for (int64_t i = 0; i < cn; ++i)
              kern::im2col(vx + (c0 + i) * C * H * W, C, H, W, kh, kw, stride, padding, OH, OW,
                           col.data() + i * P, width);
            kern::gemm_nt(K, R, width, gpack.data(), col.data(), gw);
          }
          if (gx) {
            std::fill(gcol.begin(), gcol.begin() + R * width, 0.0f);
            kern::gemm_tn(R, width, K, vw, gpack.data(), gcol.data());
#pragma omp parallel for schedule(static)
            for (int64_t i = 0; i < cn; ++i)
              kern::col2im_add(gcol.data() + i * P, C, H, W, kh, kw, stride, padding, OH, OW,
                               gx + (c0 + i) * C * H * W, width);
          }
        }
      }
      if (ib >= 0) {
        float* gb = t.grad_of(ib);
#pragma omp parallel for schedule(static)
        for (int64_t k = 0; k < K; ++k) {
          double acc = 0.0;
          for (int64_t n = 0; n < N; ++n) {
            const float* row = g + (n * K + k) * P;
            for (int64_t p = 0; p < P; ++p) acc += row[p];
          }
          gb[k] += static_cast<float>(acc);
        }
      }
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias) {
  if (w.rank() != 2) throw ShapeError("linear: weight must be [in,out], got " + shape_str(w.shape()));
  const int64_t in = w.dim(0);
  if (x.rank() < 1 || x.shape().back() != in)
    throw ShapeError("linear: input " + shape_str(x.shape()) + " does not end in " +
                     std::to_string(in));
  Shape out_shape = x.shape();
  out_shape.back() = w.dim(1);
  Tensor x2 = x.rank() == 2 ? x : reshape(x, {-1, in});
  Tensor y = matmul(x2, w);
  if (bias) y = add(y, *bias);
  return x.rank() == 2 ? y : reshape(y, out_shape);
}

Tensor relu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const float* px = x.data();
  float* po = out.data();
  const int64_t n = x.numel();
  flat_apply(n, [&](int64_t i) { po[i] = px[i] > 0.0f ? px[i] : 0.0f; });
  auto& tape = Tape::active();
  if (tape.recording() && Tape::tracked(x)) {
    const int ix = tape.input_node(x);
    auto xs = x.storage();
    tape.record(out, {ix}, [=](Tape& t, const float* g) {
      float* gx = t.grad_of(ix);
      const float* vx = xs->data();
      flat_apply(n, [&](int64_t i) { gx[i] += vx[i] > 0.0f ? g[i] : 0.0f; });
    });
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const float* px = x.data();
  float* po = out.data();
  const int64_t n = x.numel();
  flat_apply(n, [&](int64_t i) {
    const double v = px[i];
    po[i] = static_cast<float>(0.5 * v * (1.0 + std::erf(v * kInvSqrt2)));
  });
  auto& tape = Tape::active();
  if (tape.recording() && Tape::tracked(x)) {
    const int ix = tape.input_node(x);
    auto xs = x.storage();
    tape.record(out, {ix}, [=](Tape& t, const float* g) {
      float* gx = t.grad_of(ix);
      const float* vx = xs->data();
      flat_apply(n, [&](int64_t i) {
        const double v = vx[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        gx[i] += g[i] * static_cast<float>(cdf + v * pdf);
      });
    });
  }
  return out;
}

Tensor avgpool2d(const Tensor& x, int kernel, int stride) {
  if (x.rank() != 4) throw ShapeError("avgpool2d: expected [N,C,H,W], got " + shape_str(x.shape()));
  if (kernel < 1 || stride < 1) throw ValueError("avgpool2d: kernel and stride must be >= 1");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t OH = (H - kernel) / stride + 1;
  const int64_t OW = (W - kernel) / stride + 1;
  if (kernel > H || kernel > W)
    throw ShapeError("avgpool2d: kernel " + std::to_string(kernel) + " exceeds input " +
                     shape_str(x.shape()));
  Tensor out = Tensor::zeros({N, C, OH, OW});
  const float* px = x.data();
  float* po = out.data();
  const float inv = 1.0f / static_cast<float>(kernel * kernel);
#pragma omp parallel for schedule(static)
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const float* plane = px + nc * H * W;
    float* oplane = po + nc * OH * OW;
    for (int64_t oh = 0; oh < OH; ++oh)
      for (int64_t ow = 0; ow < OW; ++ow) {
        float acc = 0.0f;
        for (int64_t i = 0; i < kernel; ++i)
          for (int64_t j = 0; j < kernel; ++j)
            acc += plane[(oh * stride + i) * W + ow * stride + j];
        oplane[oh * OW + ow] = acc * inv;
      }
  }
  auto& tape = Tape::active();
  if (tape.recording() && Tape::tracked(x)) {
    const int ix = tape.input_node(x);
    tape.record(out, {ix}, [=](Tape& t, const float* g) {
      float* gx = t.grad_of(ix);
#pragma omp parallel for schedule(static)
      for (int64_t nc = 0; nc < N * C; ++nc) {
        float* gplane = gx + nc * H * W;
        const float* goplane = g + nc * OH * OW;
        for (int64_t oh = 0; oh < OH; ++oh)
          for (int64_t ow = 0; ow < OW; ++ow) {
            const float gv = goplane[oh * OW + ow] * inv;
            for (int64_t i = 0; i < kernel; ++i)
              for (int64_t j = 0; j < kernel; ++j)
                gplane[(oh * stride + i) * W + ow * stride + j] += gv;
          }
      }
    });
  }
  return out;
}

Tensor global_avgpool(const Tensor& x) {
  if (x.rank() != 4)
    throw ShapeError("global_avgpool: expected [N,C,H,W], got " + shape_str(x.shape()));
  const int64_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor out = Tensor::zeros({N, C});
  const float* px = x.data();
  float* po = out.data();
  const float inv = 1.0f / static_cast<float>(HW);
#pragma omp parallel for schedule(static)
  for (int64_t nc = 0; nc < N * C; ++nc) {
    double acc = 0.0;
    const float* plane = px + nc * HW;
    for (int64_t i = 0; i < HW; ++i) acc += plane[i];
    po[nc] = static_cast<float>(acc) * inv;
  }
  auto& tape = Tape::active();
  if (tape.recording() && Tape::tracked(x)) {
    const int ix = tape.input_node(x);
    tape.record(out, {ix}, [=](Tape& t, const float* g) {
      float* gx = t.grad_of(ix);
#pragma omp parallel for schedule(static)
      for (int64_t nc = 0; nc < N * C; ++nc) {
        const float gv = g[nc] * inv;
        float* plane = gx + nc * HW;
        for (int64_t i = 0; i < HW; ++i) plane[i] += gv;
      }
    });
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2)
    throw ShapeError("cross_entropy: logits must be [N,C], got " + shape_str(logits.shape()));
  const int64_t N = logits.dim(0), C = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != N)
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                     std::to_string(N));
  for (int64_t i = 0; i < N; ++i)
    if (labels[static_cast<size_t>(i)] < 0 || labels[static_cast<size_t>(i)] >= C)
      throw ValueError("cross_entropy: label " + std::to_string(labels[static_cast<size_t>(i)]) +
                       " out of range [0," + std::to_string(C) + ")");
  const float* px = logits.data();
  std::vector<float> lse(static_cast<size_t>(N));
  double total = 0.0;
  for (int64_t i = 0; i < N; ++i) {
    const float* row = px + i * C;
    float mx = -std::numeric_limits<float>::infinity();
    for (int64_t c = 0; c < C; ++c) mx = std::max(mx, row[c]);
    double denom = 0.0;
    for (int64_t c = 0; c < C; ++c) denom += std::exp(static_cast<double>(row[c] - mx));
    lse[static_cast<size_t>(i)] = mx + static_cast<float>(std::log(denom));
    total += static_cast<double>(lse[static_cast<size_t>(i)]) - row[labels[static_cast<size_t>(i)]];
  }
  Tensor out = Tensor::scalar(static_cast<float>(total / static_cast<double>(N)));
  auto& tape = Tape::active();
  if (tape.recording() && Tape::tracked(logits)) {
    const int ix = tape.input_node(logits);
    auto xs = logits.storage();
    auto labs = labels;
    tape.record(out, {ix}, [=](Tape& t, const float* g) {
      float* gx = t.grad_of(ix);
      const float* vx = xs->data();
      const float scale = g[0] / static_cast<float>(N);
      for (int64_t i = 0; i < N; ++i) {
        const float* row = vx + i * C;
        float* grow = gx + i * C;
        const float l = lse[static_cast<size_t>(i)];
        for (int64_t c = 0; c < C; ++c) {
          float p = std::exp(row[c] - l);
          if (c == labs[static_cast<size_t>(i)]) p -= 1.0f;
          grow[c] += scale * p;
        }
      }
    });
  }
  return out;
}

Tensor kl_divergence(const Tensor& teacher_logits, const Tensor& student_logits,
                     float temperature) {
  if (temperature <= 0.0f)
    throw ValueError("kl_divergence: temperature must be > 0, got " + std::to_string(temperature));
  if (teacher_logits.rank() != 2 || student_logits.rank() != 2 ||
      teacher_logits.shape() != student_logits.shape())
    throw ShapeError("kl_divergence: shapes differ, " + shape_str(teacher_logits.shape()) +
                     " vs " + shape_str(student_logits.shape()));
  const int64_t N = teacher_logits.dim(0), C = teacher_logits.dim(1);
  const float* pt = teacher_logits.data();
  const float* ps = student_logits.data();
  const double T = temperature;

  auto row_lse = [C, T](const float* row) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t c = 0; c < C; ++c) mx = std::max(mx, static_cast<double>(row[c]) / T);
    double denom = 0.0;
    for (int64_t c = 0; c < C; ++c) denom += std::exp(static_cast<double>(row[c]) / T - mx);
    return mx + std::log(denom);
  };

  double total = 0.0;
  for (int64_t i = 0; i < N; ++i) {
    const float* trow = pt + i * C;
    const float* srow = ps + i * C;
    const double lt = row_lse(trow), ls = row_lse(srow);
    double kl = 0.0;
    for (int64_t c = 0; c < C; ++c) {
      const double lp = static_cast<double>(trow[c]) / T - lt;
      const double lq = static_cast<double>(srow[c]) / T - ls;
      kl += std::exp(lp) * (lp - lq);
    }
    total += kl;
  }
  Tensor out =
      Tensor::scalar(static_cast<float>(T * T * total / static_cast<double>(N)));
  // gradient flows to the student only; the teacher distribution is constant
  auto& tape = Tape::active();
  if (tape.recording() && Tape::tracked(student_logits)) {
    const int is = tape.input_node(student_logits);
    auto ts = teacher_logits.storage();
    auto ss = student_logits.storage();
    tape.record(out, {is}, [=](Tape& t, const float* g) {
      float* gs = t.grad_of(is);
      const float* vt = ts->data();
      const float* vs = ss->data();
      const float scale = g[0] * static_cast<float>(T) / static_cast<float>(N);
      for (int64_t i = 0; i < N; ++i) {
        const float* trow = vt + i * C;
        const float* srow = vs + i * C;
        const double lt = row_lse(trow), ls = row_lse(srow);
        float* grow = gs + i * C;
        for (int64_t c = 0; c < C; ++c) {
          const float p = static_cast<float>(std::exp(static_cast<double>(trow[c]) / T - lt));
          const float q = static_cast<float>(std::exp(static_cast<double>(srow[c]) / T - ls));
          grow[c] += scale * (q - p);
        }
      }
    });
  }
  return out;
}

Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                    Tensor& running_mean, Tensor& running_var, float momentum, float eps,
                    bool training) {
  if (x.rank() != 4)
    throw ShapeError("batch_norm2d: expected [N,C,H,W], got " + shape_str(x.shape()));
  const int64_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (gamma.numel() != C || beta.numel() != C || running_mean.numel() != C ||
      running_var.numel() != C)
    throw ShapeError("batch_norm2d: feature count mismatch, x has " + std::to_string(C) +
                     " channels but params have " + std::to_string(gamma.numel()));
  const int64_t m = N * HW;
  Tensor out = Tensor::zeros(x.shape());
  const float* px = x.data();
  float* po = out.data();
  const float* pg = gamma.data();
  const float* pb = beta.data();

  auto mean_keep = std::make_shared<std::vector<float>>(static_cast<size_t>(C));
  auto invstd_keep = std::make_shared<std::vector<float>>(static_cast<size_t>(C));
  float* pmean = mean_keep->data();
  float* pinv = invstd_keep->data();

  if (training) {
    float* prm = running_mean.data();
    float* prv = running_var.data();
#pragma omp parallel for schedule(static)
    for (int64_t c = 0; c < C; ++c) {
      double s = 0.0, s2 = 0.0;
      for (int64_t n = 0; n < N; ++n) {
        const float* plane = px + (n * C + c) * HW;
        for (int64_t i = 0; i < HW; ++i) {
          const double v = plane[i];
          s += v;
          s2 += v * v;
        }
      }
      const double mean = s / static_cast<double>(m);
      const double var = std::max(0.0, s2 / static_cast<double>(m) - mean * mean);
      pmean[c] = static_cast<float>(mean);
      pinv[c] = static_cast<float>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      prm[c] = (1.0f - momentum) * prm[c] + momentum * static_cast<float>(mean);
      prv[c] = (1.0f - momentum) * prv[c] + momentum * static_cast<float>(var);
    }
  } else {
    const float* prm = running_mean.data();
    const float* prv = running_var.data();
    for (int64_t c = 0; c < C; ++c) {
      pmean[c] = prm[c];
      pinv[c] = 1.0f / std::sqrt(prv[c] + eps);
    }
  }

#pragma omp parallel for schedule(static)
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const int64_t c = nc % C;
    const float a = pg[c] * pinv[c];
    const float b = pb[c] - pmean[c] * a;
    const float* plane = px + nc * HW;
    float* oplane = po + nc * HW;
#pragma omp simd
    for (int64_t i = 0; i < HW; ++i) oplane[i] = plane[i] * a + b;
  }

  auto& tape = Tape::active();
  if (tape.recording() && (Tape::tracked(x) || Tape::tracked(gamma) || Tape::tracked(beta))) {
    const int ix = tape.input_node(x);
    const int ig = tape.input_node(gamma);
    const int ib = tape.input_node(beta);
    auto xs = x.storage();
    auto gs = gamma.storage();
    tape.record(out, {ix, ig, ib}, [=](Tape& t, const float* g) {
      float* gx = ix >= 0 ? t.grad_of(ix) : nullptr;
      float* gg = ig >= 0 ? t.grad_of(ig) : nullptr;
      float* gb = ib >= 0 ? t.grad_of(ib) : nullptr;
      const float* vx = xs->data();
      const float* vg = gs->data();
      const float* kmean = mean_keep->data();
      const float* kinv = invstd_keep->data();
#pragma omp parallel for schedule(static)
      for (int64_t c = 0; c < C; ++c) {
        const float mu = kmean[c];
        const float inv = kinv[c];
        double s1 = 0.0, s2 = 0.0;
        for (int64_t n = 0; n < N; ++n) {
          const int64_t base = (n * C + c) * HW;
          for (int64_t i = 0; i < HW; ++i) {
            const float gv = g[base + i];
            s1 += gv;
            s2 += static_cast<double>(gv) * ((vx[base + i] - mu) * inv);
          }
        }
        if (gg) gg[c] += static_cast<float>(s2);
        if (gb) gb[c] += static_cast<float>(s1);
        if (gx) {
          if (training) {
            const float k1 = static_cast<float>(s1 / static_cast<double>(m));
            const float k2 = static_cast<float>(s2 / static_cast<double>(m));
            const float coef = vg[c] * inv;
            for (int64_t n = 0; n < N; ++n) {
              const int64_t base = (n * C + c) * HW;
              for (int64_t i = 0; i < HW; ++i) {
                const float xhat = (vx[base + i] - mu) * inv;
                gx[base + i] += coef * (g[base + i] - k1 - xhat * k2);
              }
            }
          } else {
            const float coef = vg[c] * inv;
            for (int64_t n = 0; n < N; ++n) {
              const int64_t base = (n * C + c) * HW;
              for (int64_t i = 0; i < HW; ++i) gx[base + i] += coef * g[base + i];
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  if (x.rank() < 1) throw ShapeError("layer_norm: rank must be >= 1");
  const int64_t D = x.shape().back();
  if (gamma.numel() != D || beta.numel() != D)
    throw ShapeError("layer_norm: feature count mismatch, x last dim " + std::to_string(D) +
                     " vs params " + std::to_string(gamma.numel()));
  const int64_t rows = x.numel() / D;
  Tensor out = Tensor::zeros(x.shape());
  const float* px = x.data();
  float* po = out.data();
  const float* pg = gamma.data();
  const float* pb = beta.data();
  auto mean_keep = std::make_shared<std::vector<float>>(static_cast<size_t>(rows));
  auto inv_keep = std::make_shared<std::vector<float>>(static_cast<size_t>(rows));
  float* pmean = mean_keep->data();
  float* pinv = inv_keep->data();
#pragma omp parallel for schedule(static)
  for (int64_t r = 0; r < rows; ++r) {
    const float* row = px + r * D;
    double s = 0.0, s2 = 0.0;
    for (int64_t i = 0; i < D; ++i) {
      s += row[i];
      s2 += static_cast<double>(row[i]) * row[i];
    }
    const double mean = s / static_cast<double>(D);
    const double var = std::max(0.0, s2 / static_cast<double>(D) - mean * mean);
    pmean[r] = static_cast<float>(mean);
    pinv[r] = static_cast<float>(1.0 / std::sqrt(var + static_cast<double>(eps)));
    float* orow = po + r * D;
    for (int64_t i = 0; i < D; ++i)
      orow[i] = (row[i] - pmean[r]) * pinv[r] * pg[i] + pb[i];
  }
  auto& tape = Tape::active();
  if (tape.recording() && (Tape::tracked(x) || Tape::tracked(gamma) || Tape::tracked(beta))) {
    const int ix = tape.input_node(x);
    const int ig = tape.input_node(gamma);
    const int ib = tape.input_node(beta);
    auto xs = x.storage();
    auto gs = gamma.storage();
    tape.record(out, {ix, ig, ib}, [=](Tape& t, const float* g) {
      float* gx = ix >= 0 ? t.grad_of(ix) : nullptr;
      float* gg = ig >= 0 ? t.grad_of(ig) : nullptr;
      float* gb = ib >= 0 ? t.grad_of(ib) : nullptr;
      const float* vx = xs->data();
      const float* vg = gs->data();
      const float* kmean = mean_keep->data();
      const float* kinv = inv_keep->data();
      if (gg || gb) {
        for (int64_t r = 0; r < rows; ++r) {
          const float* row = vx + r * D;
          const float* grow = g + r * D;
          for (int64_t i = 0; i < D; ++i) {
            const float xhat = (row[i] - kmean[r]) * kinv[r];
            if (gg) gg[i] += grow[i] * xhat;
            if (gb) gb[i] += grow[i];
          }
        }
      }
      if (gx) {
#pragma omp parallel for schedule(static)
        for (int64_t r = 0; r < rows; ++r) {
          const float* row = vx + r * D;
          const float* grow = g + r * D;
          float* gxrow = gx + r * D;
          double s1 = 0.0, s2 = 0.0;
          for (int64_t i = 0; i < D; ++i) {
            const float a = grow[i] * vg[i];
            const float xhat = (row[i] - kmean[r]) * kinv[r];
            s1 += a;
            s2 += static_cast<double>(a) * xhat;
          }
          const float k1 = static_cast<float>(s1 / static_cast<double>(D));
          const float k2 = static_cast<float>(s2 / static_cast<double>(D));
          for (int64_t i = 0; i < D; ++i) {
            const float a = grow[i] * vg[i];
            const float xhat = (row[i] - kmean[r]) * kinv[r];
            gxrow[i] += kinv[r] * (a - k1 - xhat * k2);
          }
        }
      }
    });
  }
  return out;
}

}  // namespace adn
