// Elementwise arithmetic, shape manipulation, softmax family, sum.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "adn/ops.hpp"

namespace adn {

namespace {

struct BcastPlan {
  Shape out;
  std::vector<int64_t> sa, sb;  // strides aligned to out dims; 0 where broadcast
  int rank = 0;
  int64_t n = 0;
  bool same = false;  // a and b already have the output shape
};

std::vector<int64_t> aligned_strides(const Shape& shape, const Shape& out, const char* op,
                                     const Shape& other) {
  const int r = static_cast<int>(out.size());
  const int ra = static_cast<int>(shape.size());
  std::vector<int64_t> nat(static_cast<size_t>(ra));
  int64_t s = 1;
  for (int d = ra - 1; d >= 0; --d) {
    nat[static_cast<size_t>(d)] = s;
    s *= shape[static_cast<size_t>(d)];
  }
  std::vector<int64_t> st(static_cast<size_t>(r), 0);
  for (int d = 0; d < ra; ++d) {
    const int od = r - ra + d;
    const int64_t dim = shape[static_cast<size_t>(d)];
    if (dim == out[static_cast<size_t>(od)]) {
      st[static_cast<size_t>(od)] = nat[static_cast<size_t>(d)];
    } else if (dim == 1) {
      st[static_cast<size_t>(od)] = 0;
    } else {
      throw ShapeError(std::string(op) + ": shapes " + shape_str(shape) + " and " +
                       shape_str(other) + " are not broadcast-compatible");
    }
  }
  return st;
}

BcastPlan make_plan(const Shape& a, const Shape& b, const char* op) {
  BcastPlan p;
  p.rank = static_cast<int>(std::max(a.size(), b.size()));
  p.out.resize(static_cast<size_t>(p.rank));
  for (int d = 0; d < p.rank; ++d) {
    const int da = d - (p.rank - static_cast<int>(a.size()));
    const int db = d - (p.rank - static_cast<int>(b.size()));
    const int64_t va = da >= 0 ? a[static_cast<size_t>(da)] : 1;
    const int64_t vb = db >= 0 ? b[static_cast<size_t>(db)] : 1;
    if (va != vb && va != 1 && vb != 1)
      throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                       " are not broadcast-compatible");
    p.out[static_cast<size_t>(d)] = std::max(va, vb);
  }
  p.sa = aligned_strides(a, p.out, op, b);
  p.sb = aligned_strides(b, p.out, op, a);
  p.n = shape_numel(p.out);
  p.same = (a == p.out && b == p.out);
  return p;
}

// Calls body(out_offset, a_offset, b_offset, inner_len, a_step, b_step) for
// every contiguous run along the innermost output dim.
template <class F>
void bcast_loop(const BcastPlan& p, F&& body) {
  if (p.rank == 0) {
    body(0, 0, 0, 1, 0, 0);
    return;
  }
  const int R = p.rank;
  const int64_t inner = p.out[static_cast<size_t>(R - 1)];
  const int64_t sa_last = p.sa[static_cast<size_t>(R - 1)];
  const int64_t sb_last = p.sb[static_cast<size_t>(R - 1)];
  const int64_t outer = p.n / inner;
  std::vector<int64_t> idx(static_cast<size_t>(R), 0);
  int64_t oa = 0, ob = 0, oo = 0;
  for (int64_t u = 0; u < outer; ++u) {
    body(oo, oa, ob, inner, sa_last, sb_last);
    oo += inner;
    for (int d = R - 2; d >= 0; --d) {
      auto ud = static_cast<size_t>(d);
      ++idx[ud];
      oa += p.sa[ud];
      ob += p.sb[ud];
      if (idx[ud] < p.out[ud]) break;
      oa -= p.sa[ud] * p.out[ud];
      ob -= p.sb[ud] * p.out[ud];
      idx[ud] = 0;
    }
  }
}

constexpr int64_t kParMin = 1 << 15;

template <class F>
void flat_apply(int64_t n, F&& f) {
  if (n >= kParMin) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) f(i);
  } else {
    for (int64_t i = 0; i < n; ++i) f(i);
  }
}

enum class BinOp { add, sub, mul };

Tensor binary_op(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
  BcastPlan p = make_plan(a.shape(), b.shape(), name);
  Tensor out = Tensor::zeros(p.out);
  const float* pa = a.data();
  const float* pb = b.data();
  float* po = out.data();
  if (p.same) {
    switch (op) {
      case BinOp::add: flat_apply(p.n, [&](int64_t i) { po[i] = pa[i] + pb[i]; }); break;
      case BinOp::sub: flat_apply(p.n, [&](int64_t i) { po[i] = pa[i] - pb[i]; }); break;
      case BinOp::mul: flat_apply(p.n, [&](int64_t i) { po[i] = pa[i] * pb[i]; }); break;
    }
  } else {
    bcast_loop(p, [&](int64_t oo, int64_t oa, int64_t ob, int64_t len, int64_t sa, int64_t sb) {
      switch (op) {
        case BinOp::add:
          for (int64_t j = 0; j < len; ++j) po[oo + j] = pa[oa + j * sa] + pb[ob + j * sb];
          break;
        case BinOp::sub:
          for (int64_t j = 0; j < len; ++j) po[oo + j] = pa[oa + j * sa] - pb[ob + j * sb];
          break;
        case BinOp::mul:
          for (int64_t j = 0; j < len; ++j) po[oo + j] = pa[oa + j * sa] * pb[ob + j * sb];
          break;
      }
    });
  }

  auto& tape = Tape::active();
  if (tape.recording() && (Tape::tracked(a) || Tape::tracked(b))) {
    const int ia = tape.input_node(a);
    const int ib = tape.input_node(b);
    auto sa_keep = a.storage();
    auto sb_keep = b.storage();
    tape.record(out, {ia, ib}, [=](Tape& t, const float* g) {
      float* ga = ia >= 0 ? t.grad_of(ia) : nullptr;
      float* gb = ib >= 0 ? t.grad_of(ib) : nullptr;
      if (p.same) {
        switch (op) {
          case BinOp::add:
            if (ga) flat_apply(p.n, [&](int64_t i) { ga[i] += g[i]; });
            if (gb) flat_apply(p.n, [&](int64_t i) { gb[i] += g[i]; });
            break;
          case BinOp::sub:
            if (ga) flat_apply(p.n, [&](int64_t i) { ga[i] += g[i]; });
            if (gb) flat_apply(p.n, [&](int64_t i) { gb[i] -= g[i]; });
            break;
          case BinOp::mul: {
            const float* va = sa_keep->data();
            const float* vb = sb_keep->data();
            if (ga) flat_apply(p.n, [&](int64_t i) { ga[i] += g[i] * vb[i]; });
            if (gb) flat_apply(p.n, [&](int64_t i) { gb[i] += g[i] * va[i]; });
            break;
          }
        }
        return;
      }
      const float* va = sa_keep->data();
      const float* vb = sb_keep->data();
      bcast_loop(p, [&](int64_t oo, int64_t oa, int64_t ob, int64_t len, int64_t ssa,
                        int64_t ssb) {
        for (int64_t j = 0; j < len; ++j) {
          const float gv = g[oo + j];
          switch (op) {
            case BinOp::add:
              if (ga) ga[oa + j * ssa] += gv;
              if (gb) gb[ob + j * ssb] += gv;
              break;
            case BinOp::sub:
              if (ga) ga[oa + j * ssa] += gv;
              if (gb) gb[ob + j * ssb] -= gv;
              break;
            case BinOp::mul:
              if (ga) ga[oa + j * ssa] += gv * vb[ob + j * ssb];
              if (gb) gb[ob + j * ssb] += gv * va[oa + j * ssa];
              break;
          }
        }
      });
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::mul, "mul"); }

Tensor add_scalar(const Tensor& a, float s) {
  Tensor out = Tensor::zeros(a.shape());
  const float* pa = a.data();
  float* po = out.data();
  const int64_t n = a.numel();
  flat_apply(n, [&](int64_t i) { po[i] = pa[i] + s; });
  auto& tape = Tape::active();
  if (tape.recording() && Tape::tracked(a)) {
    const int ia = tape.input_node(a);
    tape.record(out, {ia}, [=](Tape& t, const float* g) {
      float* ga = t.grad_of(ia);
      flat_apply(n, [&](int64_t i) { ga[i] += g[i]; });
    });
  }
  return out;
}

Tensor mul_scalar(const Tensor& a, float s) {
  Tensor out = Tensor::zeros(a.shape());
  const float* pa = a.data();
  float* po = out.data();
  const int64_t n = a.numel();
  flat_apply(n, [&](int64_t i) { po[i] = pa[i] * s; });
  auto& tape = Tape::active();
  if (tape.recording() && Tape::tracked(a)) {
    const int ia = tape.input_node(a);
    tape.record(out, {ia}, [=](Tape& t, const float* g) {
      float* ga = t.grad_of(ia);
      flat_apply(n, [&](int64_t i) { ga[i] += g[i] * s; });
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape new_shape) {
  int64_t known = 1;
  int infer = -1;
  for (size_t d = 0; d < new_shape.size(); ++d) {
    if (new_shape[d] == -1) {
      if (infer >= 0) throw ShapeError("reshape: more than one -1 dim");
      infer = static_cast<int>(d);
    } else {
      known *= new_shape[d];
    }
  }
  if (infer >= 0) {
    if (known == 0 || x.numel() % known != 0)
      throw ShapeError("reshape: cannot infer dim for " + shape_str(x.shape()));
    new_shape[static_cast<size_t>(infer)] = x.numel() / known;
  }
  Tensor out = x.view_as(new_shape);
  auto& tape = Tape::active();
  if (tape.recording() && Tape::tracked(x)) {
    const int ix = tape.input_node(x);
    const int64_t n = x.numel();
    tape.record(out, {ix}, [=](Tape& t, const float* g) {
      float* gx = t.grad_of(ix);
      flat_apply(n, [&](int64_t i) { gx[i] += g[i]; });
    });
  }
  return out;
}

Tensor flatten(const Tensor& x) {
  if (x.rank() < 1) throw ShapeError("flatten: rank must be >= 1");
  const int64_t n0 = x.shape()[0];
  return reshape(x, {n0, x.numel() / n0});
}

Tensor permute(const Tensor& x, const std::vector<int>& axes) {
  const int r = x.rank();
  if (static_cast<int>(axes.size()) != r)
    throw ShapeError("permute: axes size mismatch for " + shape_str(x.shape()));
  std::vector<bool> seen(static_cast<size_t>(r), false);
  for (int a : axes) {
    if (a < 0 || a >= r || seen[static_cast<size_t>(a)])
      throw ShapeError("permute: invalid axes for " + shape_str(x.shape()));
    seen[static_cast<size_t>(a)] = true;
  }
  std::vector<int64_t> nat(static_cast<size_t>(r));
  int64_t s = 1;
  for (int d = r - 1; d >= 0; --d) {
    nat[static_cast<size_t>(d)] = s;
    s *= x.shape()[static_cast<size_t>(d)];
  }
  Shape out_shape(static_cast<size_t>(r));
  std::vector<int64_t> src_stride(static_cast<size_t>(r));
  for (int d = 0; d < r; ++d) {
    out_shape[static_cast<size_t>(d)] = x.shape()[static_cast<size_t>(axes[static_cast<size_t>(d)])];
    src_stride[static_cast<size_t>(d)] = nat[static_cast<size_t>(axes[static_cast<size_t>(d)])];
  }
  Tensor out = Tensor::zeros(out_shape);
  const float* px = x.data();
  float* po = out.data();
  const int64_t n = x.numel();
  // odometer over the output index space; captures its tables by value so the
  // backward closure stays valid after this frame returns
  auto run = [r, n, out_shape, src_stride](auto&& emit) {
    std::vector<int64_t> idx(static_cast<size_t>(r), 0);
    int64_t src = 0;
    for (int64_t i = 0; i < n; ++i) {
      emit(i, src);
      for (int d = r - 1; d >= 0; --d) {
        auto ud = static_cast<size_t>(d);
        ++idx[ud];
        src += src_stride[ud];
        if (idx[ud] < out_shape[ud]) break;
        src -= src_stride[ud] * out_shape[ud];
        idx[ud] = 0;
      }
    }
  };
  run([&](int64_t i, int64_t src) { po[i] = px[src]; });
  auto& tape = Tape::active();
  if (tape.recording() && Tape::tracked(x)) {
    const int ix = tape.input_node(x);
    tape.record(out, {ix}, [=](Tape& t, const float* g) {
      float* gx = t.grad_of(ix);
      run([&](int64_t i, int64_t src) { gx[src] += g[i]; });
    });
  }
  return out;
}

Tensor slice(const Tensor& x, int axis, int64_t start, int64_t length) {
  const int r = x.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError("slice: invalid axis for " + shape_str(x.shape()));
  const int64_t D = x.shape()[static_cast<size_t>(axis)];
  if (start < 0 || length < 1 || start + length > D)
    throw ShapeError("slice: range [" + std::to_string(start) + "," +
                     std::to_string(start + length) + ") out of bounds for " +
                     shape_str(x.shape()));
  Shape out_shape = x.shape();
  out_shape[static_cast<size_t>(axis)] = length;
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= x.shape()[static_cast<size_t>(d)];
  for (int d = axis + 1; d < r; ++d) inner *= x.shape()[static_cast<size_t>(d)];
  Tensor out = Tensor::zeros(out_shape);
  const float* px = x.data();
  float* po = out.data();
  for (int64_t o = 0; o < outer; ++o)
    std::memcpy(po + o * length * inner, px + (o * D + start) * inner,
                static_cast<size_t>(length * inner) * sizeof(float));
  auto& tape = Tape::active();
  if (tape.recording() && Tape::tracked(x)) {
    const int ix = tape.input_node(x);
    tape.record(out, {ix}, [=](Tape& t, const float* g) {
      float* gx = t.grad_of(ix);
      for (int64_t o = 0; o < outer; ++o) {
        float* dst = gx + (o * D + start) * inner;
        const float* src = g + o * length * inner;
        for (int64_t i = 0; i < length * inner; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  const int r = xs[0].rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError("concat: invalid axis");
  Shape out_shape = xs[0].shape();
  int64_t total = 0;
  for (const auto& x : xs) {
    if (x.rank() != r) throw ShapeError("concat: rank mismatch");
    for (int d = 0; d < r; ++d) {
      if (d != axis && x.shape()[static_cast<size_t>(d)] != out_shape[static_cast<size_t>(d)])
        throw ShapeError("concat: shape mismatch " + shape_str(x.shape()) + " vs " +
                         shape_str(out_shape));
    }
    total += x.shape()[static_cast<size_t>(axis)];
  }
  out_shape[static_cast<size_t>(axis)] = total;
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= out_shape[static_cast<size_t>(d)];
  for (int d = axis + 1; d < r; ++d) inner *= out_shape[static_cast<size_t>(d)];
  Tensor out = Tensor::zeros(out_shape);
  float* po = out.data();
  int64_t off = 0;
  std::vector<int64_t> offsets;
  std::vector<int64_t> lens;
  for (const auto& x : xs) {
    const int64_t len = x.shape()[static_cast<size_t>(axis)];
    offsets.push_back(off);
    lens.push_back(len);
    const float* px = x.data();
    for (int64_t o = 0; o < outer; ++o)
      std::memcpy(po + (o * total + off) * inner, px + o * len * inner,
                  static_cast<size_t>(len * inner) * sizeof(float));
    off += len;
  }
  auto& tape = Tape::active();
  bool any = false;
  for (const auto& x : xs) any = any || Tape::tracked(x);
  if (tape.recording() && any) {
    std::vector<int> ids;
    ids.reserve(xs.size());
    for (const auto& x : xs) ids.push_back(tape.input_node(x));
    tape.record(out, ids, [=](Tape& t, const float* g) {
      for (size_t p = 0; p < ids.size(); ++p) {
        if (ids[p] < 0) continue;
        float* gx = t.grad_of(ids[p]);
        for (int64_t o = 0; o < outer; ++o) {
          const float* src = g + (o * total + offsets[p]) * inner;
          float* dst = gx + o * lens[p] * inner;
          for (int64_t i = 0; i < lens[p] * inner; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return out;
}

Tensor broadcast_to(const Tensor& x, const Shape& target) {
  BcastPlan p = make_plan(x.shape(), target, "broadcast_to");
  if (p.out != target)
    throw ShapeError("broadcast_to: " + shape_str(x.shape()) + " does not broadcast to " +
                     shape_str(target));
  Tensor out = Tensor::zeros(target);
  const float* px = x.data();
  float* po = out.data();
  bcast_loop(p, [&](int64_t oo, int64_t oa, int64_t, int64_t len, int64_t sa, int64_t) {
    for (int64_t j = 0; j < len; ++j) po[oo + j] = px[oa + j * sa];
  });
  auto& tape = Tape::active();
  if (tape.recording() && Tape::tracked(x)) {
    const int ix = tape.input_node(x);
    tape.record(out, {ix}, [=](Tape& t, const float* g) {
      float* gx = t.grad_of(ix);
      bcast_loop(p, [&](int64_t oo, int64_t oa, int64_t, int64_t len, int64_t sa, int64_t) {
        for (int64_t j = 0; j < len; ++j) gx[oa + j * sa] += g[oo + j];
      });
    });
  }
  return out;
}

namespace {

struct AxisSpec {
  int64_t outer, len, inner;
};

AxisSpec axis_spec(const Tensor& x, int axis, const char* op) {
  const int r = x.rank();
  int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r)
    throw ShapeError(std::string(op) + ": invalid axis " + std::to_string(axis) + " for " +
                     shape_str(x.shape()));
  AxisSpec s{1, x.shape()[static_cast<size_t>(a)], 1};
  for (int d = 0; d < a; ++d) s.outer *= x.shape()[static_cast<size_t>(d)];
  for (int d = a + 1; d < r; ++d) s.inner *= x.shape()[static_cast<size_t>(d)];
  return s;
}

template <class F>
void for_slices(const AxisSpec& s, F&& f) {
  const int64_t slices = s.outer * s.inner;
  if (slices >= 64) {
#pragma omp parallel for schedule(static)
    for (int64_t t = 0; t < slices; ++t) f(t / s.inner, t % s.inner);
  } else {
    for (int64_t o = 0; o < s.outer; ++o)
      for (int64_t i = 0; i < s.inner; ++i) f(o, i);
  }
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
  AxisSpec s = axis_spec(x, axis, "softmax");
  Tensor out = Tensor::zeros(x.shape());
  const float* px = x.data();
  float* po = out.data();
  for_slices(s, [&](int64_t o, int64_t i) {
    const int64_t base = o * s.len * s.inner + i;
    float mx = -std::numeric_limits<float>::infinity();
    for (int64_t j = 0; j < s.len; ++j) mx = std::max(mx, px[base + j * s.inner]);
    double denom = 0.0;
    for (int64_t j = 0; j < s.len; ++j) denom += std::exp(static_cast<double>(px[base + j * s.inner] - mx));
    const float inv = static_cast<float>(1.0 / denom);
    for (int64_t j = 0; j < s.len; ++j)
      po[base + j * s.inner] = std::exp(px[base + j * s.inner] - mx) * inv;
  });
  auto& tape = Tape::active();
  if (tape.recording() && Tape::tracked(x)) {
    const int ix = tape.input_node(x);
    auto ystore = out.storage();
    tape.record(out, {ix}, [=](Tape& t, const float* g) {
      float* gx = t.grad_of(ix);
      const float* y = ystore->data();
      for_slices(s, [&](int64_t o, int64_t i) {
        const int64_t base = o * s.len * s.inner + i;
        double dot = 0.0;
        for (int64_t j = 0; j < s.len; ++j) {
          const int64_t k = base + j * s.inner;
          dot += static_cast<double>(g[k]) * y[k];
        }
        for (int64_t j = 0; j < s.len; ++j) {
          const int64_t k = base + j * s.inner;
          gx[k] += y[k] * (g[k] - static_cast<float>(dot));
        }
      });
    });
  }
  return out;
}

Tensor log_softmax(const Tensor& x, int axis) {
  AxisSpec s = axis_spec(x, axis, "log_softmax");
  Tensor out = Tensor::zeros(x.shape());
  const float* px = x.data();
  float* po = out.data();
  for_slices(s, [&](int64_t o, int64_t i) {
    const int64_t base = o * s.len * s.inner + i;
    float mx = -std::numeric_limits<float>::infinity();
    for (int64_t j = 0; j < s.len; ++j) mx = std::max(mx, px[base + j * s.inner]);
    double denom = 0.0;
    for (int64_t j = 0; j < s.len; ++j) denom += std::exp(static_cast<double>(px[base + j * s.inner] - mx));
    const float lse = mx + static_cast<float>(std::log(denom));
    for (int64_t j = 0; j < s.len; ++j)
      po[base + j * s.inner] = px[base + j * s.inner] - lse;
  });
  auto& tape = Tape::active();
  if (tape.recording() && Tape::tracked(x)) {
    const int ix = tape.input_node(x);
    auto ystore = out.storage();
    tape.record(out, {ix}, [=](Tape& t, const float* g) {
      float* gx = t.grad_of(ix);
      const float* y = ystore->data();
      for_slices(s, [&](int64_t o, int64_t i) {
        const int64_t base = o * s.len * s.inner + i;
        double gs = 0.0;
        for (int64_t j = 0; j < s.len; ++j) gs += g[base + j * s.inner];
        for (int64_t j = 0; j < s.len; ++j) {
          const int64_t k = base + j * s.inner;
          gx[k] += g[k] - std::exp(y[k]) * static_cast<float>(gs);
        }
      });
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  const float* px = x.data();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) acc += px[i];
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  auto& tape = Tape::active();
  if (tape.recording() && Tape::tracked(x)) {
    const int ix = tape.input_node(x);
    tape.record(out, {ix}, [=](Tape& t, const float* g) {
      float* gx = t.grad_of(ix);
      const float gv = g[0];
      flat_apply(n, [&](int64_t i) { gx[i] += gv; });
    });
  }
  return out;
}

}  // namespace adn
