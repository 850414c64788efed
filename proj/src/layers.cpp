#include "adn/layers.hpp"

#include <cmath>

namespace adn {

namespace {

void fill_normal(Tensor& t, std::mt19937& rng, float stddev) {
  std::normal_distribution<float> d(0.0f, stddev);
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = d(rng);
}

void fill_uniform(Tensor& t, std::mt19937& rng, float bound) {
  std::uniform_real_distribution<float> d(-bound, bound);
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = d(rng);
}

// Mean of per-sample ||f||_2 / ||h||_2 over non-batch elements, accumulated
// on raw data so probing never touches the tape.
void accumulate_ratio(BlockRatioStats* stats, const Tensor& f, const Tensor& h) {
  const int64_t n = h.dim(0);
  const int64_t fe = f.numel() / n;
  const int64_t he = h.numel() / n;
  const float* pf = f.data();
  const float* ph = h.data();
  for (int64_t i = 0; i < n; ++i) {
    double nf = 0.0, nh = 0.0;
    for (int64_t j = 0; j < fe; ++j) nf += static_cast<double>(pf[i * fe + j]) * pf[i * fe + j];
    for (int64_t j = 0; j < he; ++j) nh += static_cast<double>(ph[i * he + j]) * ph[i * he + j];
    nh = std::sqrt(nh);
    if (nh < 1e-12) {
      ++stats->skipped_small;
      continue;
    }
    stats->ratio_sum += std::sqrt(nf) / nh;
    ++stats->count;
  }
}

}  // namespace

Conv2d Conv2d::make(int in_ch, int out_ch, int kernel, int stride, int padding, bool with_bias,
                    std::mt19937& rng, std::optional<float> init_std) {
  Conv2d c;
  c.stride = stride;
  c.padding = padding;
  c.weight = Tensor::zeros({out_ch, in_ch, kernel, kernel}, true);
  const float std =
      init_std ? *init_std : std::sqrt(2.0f / static_cast<float>(in_ch * kernel * kernel));
  fill_normal(c.weight, rng, std);
  if (with_bias) c.bias = Tensor::zeros({out_ch}, true);
  return c;
}

uint64_t Conv2d::macs(int64_t oh, int64_t ow) const {
  return static_cast<uint64_t>(weight.numel()) * static_cast<uint64_t>(oh * ow);
}

void Conv2d::collect(const ParamCollector& c) const {
  c.add("weight", weight, true, false);
  if (bias) c.add("bias", *bias, true, true);
}

Linear Linear::make(int in, int out, bool with_bias, std::mt19937& rng, Init init) {
  Linear l;
  l.weight = Tensor::zeros({in, out}, true);
  if (init == Init::he_uniform)
    fill_uniform(l.weight, rng, 1.0f / std::sqrt(static_cast<float>(in)));
  else
    fill_normal(l.weight, rng, 0.02f);
  if (with_bias) l.bias = Tensor::zeros({out}, true);
  return l;
}

uint64_t Linear::macs() const {
  return static_cast<uint64_t>(weight.dim(0)) * static_cast<uint64_t>(weight.dim(1));
}

void Linear::collect(const ParamCollector& c) const {
  c.add("weight", weight, true, false);
  if (bias) c.add("bias", *bias, true, true);
}

BatchNorm2d BatchNorm2d::make(int features) {
  BatchNorm2d bn;
  bn.gamma = Tensor::full({features}, 1.0f, true);
  bn.beta = Tensor::zeros({features}, true);
  bn.running_mean = Tensor::zeros({features});
  bn.running_var = Tensor::full({features}, 1.0f);
  return bn;
}

void BatchNorm2d::collect(const ParamCollector& c, int norm_set) const {
  c.add("gamma", gamma, true, true, norm_set);
  c.add("beta", beta, true, true, norm_set);
  c.add("running_mean", running_mean, false, true, norm_set);
  c.add("running_var", running_var, false, true, norm_set);
}

LayerNorm LayerNorm::make(int features) {
  LayerNorm ln;
  ln.gamma = Tensor::full({features}, 1.0f, true);
  ln.beta = Tensor::zeros({features}, true);
  return ln;
}

void LayerNorm::collect(const ParamCollector& c, int norm_set) const {
  c.add("gamma", gamma, true, true, norm_set);
  c.add("beta", beta, true, true, norm_set);
}

SwitchableNorm SwitchableNorm::batchnorm(int features) {
  SwitchableNorm n;
  n.kind_ = Kind::batchnorm2d;
  n.features_ = features;
  n.bn_.push_back(BatchNorm2d::make(features));
  n.bn_.push_back(BatchNorm2d::make(features));
  return n;
}

SwitchableNorm SwitchableNorm::layernorm(int features) {
  SwitchableNorm n;
  n.kind_ = Kind::layernorm;
  n.features_ = features;
  n.ln_.push_back(LayerNorm::make(features));
  n.ln_.push_back(LayerNorm::make(features));
  return n;
}

Tensor SwitchableNorm::forward(const Tensor& x, int mode, bool training) {
  if (mode != 0 && mode != 1)
    throw ValueError("switchable norm: mode must be 0 or 1, got " + std::to_string(mode));
  if (kind_ == Kind::batchnorm2d) return bn_[static_cast<size_t>(mode)].forward(x, training);
  return ln_[static_cast<size_t>(mode)].forward(x);
}

BatchNorm2d& SwitchableNorm::bn_set(int mode) { return bn_.at(static_cast<size_t>(mode)); }
LayerNorm& SwitchableNorm::ln_set(int mode) { return ln_.at(static_cast<size_t>(mode)); }

void SwitchableNorm::collect(const ParamCollector& c) const {
  if (kind_ == Kind::batchnorm2d) {
    bn_[0].collect(c.scoped("set0"), 0);
    bn_[1].collect(c.scoped("set1"), 1);
  } else {
    ln_[0].collect(c.scoped("set0"), 0);
    ln_[1].collect(c.scoped("set1"), 1);
  }
}

NormLayer NormLayer::plain_bn(int features) {
  NormLayer n;
  n.impl_ = BatchNorm2d::make(features);
  return n;
}

NormLayer NormLayer::plain_ln(int features) {
  NormLayer n;
  n.impl_ = LayerNorm::make(features);
  return n;
}

NormLayer NormLayer::switchable_bn(int features) {
  NormLayer n;
  n.impl_ = SwitchableNorm::batchnorm(features);
  return n;
}

NormLayer NormLayer::switchable_ln(int features) {
  NormLayer n;
  n.impl_ = SwitchableNorm::layernorm(features);
  return n;
}

Tensor NormLayer::forward(const Tensor& x, int mode, bool training) {
  if (auto* bn = std::get_if<BatchNorm2d>(&impl_)) return bn->forward(x, training);
  if (auto* ln = std::get_if<LayerNorm>(&impl_)) return ln->forward(x);
  return std::get<SwitchableNorm>(impl_).forward(x, mode, training);
}

bool NormLayer::switchable() const { return std::holds_alternative<SwitchableNorm>(impl_); }

void NormLayer::collect(const ParamCollector& c) const {
  if (auto* bn = std::get_if<BatchNorm2d>(&impl_)) {
    bn->collect(c);
  } else if (auto* ln = std::get_if<LayerNorm>(&impl_)) {
    ln->collect(c);
  } else {
    std::get<SwitchableNorm>(impl_).collect(c);
  }
}

SwitchableNorm* NormLayer::as_switchable() { return std::get_if<SwitchableNorm>(&impl_); }
BatchNorm2d* NormLayer::as_plain_bn() { return std::get_if<BatchNorm2d>(&impl_); }
LayerNorm* NormLayer::as_plain_ln() { return std::get_if<LayerNorm>(&impl_); }

MultiHeadAttention MultiHeadAttention::make(int dim, int heads, std::mt19937& rng) {
  if (heads < 1 || dim % heads != 0)
    throw ShapeError("attention: embed dim " + std::to_string(dim) + " not divisible by " +
                     std::to_string(heads) + " heads");
  MultiHeadAttention m;
  m.num_heads = heads;
  m.head_dim = dim / heads;
  m.q = Linear::make(dim, dim, true, rng, Linear::Init::normal02);
  m.k = Linear::make(dim, dim, true, rng, Linear::Init::normal02);
  m.v = Linear::make(dim, dim, true, rng, Linear::Init::normal02);
  m.out = Linear::make(dim, dim, true, rng, Linear::Init::normal02);
  return m;
}

Tensor MultiHeadAttention::forward(const Tensor& tokens, Tensor* attn_out) const {
  if (tokens.rank() != 3)
    throw ShapeError("attention: expected [N,T,D], got " + shape_str(tokens.shape()));
  const int64_t N = tokens.dim(0), T = tokens.dim(1), D = tokens.dim(2);
  if (D != static_cast<int64_t>(num_heads) * head_dim)
    throw ShapeError("attention: embed dim " + std::to_string(D) + " != heads*head_dim " +
                     std::to_string(num_heads * head_dim));
  auto split = [&](const Tensor& t) {
    Tensor r = reshape(t, {N, T, num_heads, head_dim});
    r = permute(r, {0, 2, 1, 3});
    return reshape(r, {N * num_heads, T, head_dim});
  };
  Tensor qh = split(q.forward(tokens));
  Tensor kh = split(k.forward(tokens));
  Tensor vh = split(v.forward(tokens));
  Tensor scores = mul_scalar(bmm(qh, kh, true), 1.0f / std::sqrt(static_cast<float>(head_dim)));
  Tensor attn = softmax(scores, -1);
  if (attn_out) *attn_out = attn.detach();
  Tensor ctx = bmm(attn, vh);
  ctx = reshape(ctx, {N, num_heads, T, head_dim});
  ctx = permute(ctx, {0, 2, 1, 3});
  ctx = reshape(ctx, {N, T, D});
  return out.forward(ctx);
}

uint64_t MultiHeadAttention::macs(int64_t tokens) const {
  const uint64_t d = static_cast<uint64_t>(num_heads) * static_cast<uint64_t>(head_dim);
  const uint64_t t = static_cast<uint64_t>(tokens);
  return 4 * t * d * d + 2 * t * t * d;  // q,k,v,out projections + scores + context
}

void MultiHeadAttention::collect(const ParamCollector& c) const {
  q.collect(c.scoped("q"));
  k.collect(c.scoped("k"));
  v.collect(c.scoped("v"));
  out.collect(c.scoped("out"));
}

ResidualBlockCNN::ResidualBlockCNN(int in_ch, int out_ch, int stride, bool switchable,
                                   std::mt19937& rng)
    : conv1(Conv2d::make(in_ch, out_ch, 3, stride, 1, false, rng)),
      conv2(Conv2d::make(out_ch, out_ch, 3, 1, 1, false, rng)),
      n1(switchable ? NormLayer::switchable_bn(out_ch) : NormLayer::plain_bn(out_ch)),
      n2(switchable ? NormLayer::switchable_bn(out_ch) : NormLayer::plain_bn(out_ch)) {
  uses_switchable_norm = switchable;
  downsampling = (stride != 1 || in_ch != out_ch);
  if (downsampling) {
    proj = Conv2d::make(in_ch, out_ch, 1, stride, 0, false, rng);
    proj_norm = switchable ? NormLayer::switchable_bn(out_ch) : NormLayer::plain_bn(out_ch);
  }
}

Tensor ResidualBlockCNN::forward(const Tensor& h, int norm_mode, bool training,
                                 BlockRatioStats* probe) {
  Tensor f = conv1.forward(h);
  f = n1.forward(f, norm_mode, training);
  f = relu(f);
  f = conv2.forward(f);
  f = n2.forward(f, norm_mode, training);
  Tensor shortcut = h;
  if (proj) {
    shortcut = proj->forward(h);
    shortcut = proj_norm->forward(shortcut, norm_mode, training);
  }
  if (probe) accumulate_ratio(probe, f, h);
  return add(shortcut, f);
}

void ResidualBlockCNN::collect(const ParamCollector& c) const {
  conv1.collect(c.scoped("conv1"));
  n1.collect(c.scoped("n1"));
  conv2.collect(c.scoped("conv2"));
  n2.collect(c.scoped("n2"));
  if (proj) {
    proj->collect(c.scoped("proj"));
    proj_norm->collect(c.scoped("proj_norm"));
  }
}

ResidualBlockViT::ResidualBlockViT(int dim, int heads, int mlp_hidden, bool switchable,
                                   std::mt19937& rng)
    : norm1(switchable ? NormLayer::switchable_ln(dim) : NormLayer::plain_ln(dim)),
      norm2(switchable ? NormLayer::switchable_ln(dim) : NormLayer::plain_ln(dim)),
      attn(MultiHeadAttention::make(dim, heads, rng)),
      fc1(Linear::make(dim, mlp_hidden, true, rng, Linear::Init::normal02)),
      fc2(Linear::make(mlp_hidden, dim, true, rng, Linear::Init::normal02)) {
  uses_switchable_norm = switchable;
}

Tensor ResidualBlockViT::forward(const Tensor& h, int norm_mode, bool training,
                                 BlockRatioStats* probe) {
  Tensor a = norm1.forward(h, norm_mode, training);
  a = attn.forward(a);
  Tensor h1 = add(h, a);
  Tensor m = norm2.forward(h1, norm_mode, training);
  m = fc2.forward(gelu(fc1.forward(m)));
  Tensor out = add(h1, m);
  if (probe) {
    // aggregate residual of the whole encoder block: F(h) = out - h
    Tensor f = Tensor::zeros(out.shape());
    const float* po = out.data();
    const float* ph = h.data();
    for (int64_t i = 0; i < f.numel(); ++i) f.data()[i] = po[i] - ph[i];
    accumulate_ratio(probe, f, h);
  }
  return out;
}

void ResidualBlockViT::collect(const ParamCollector& c) const {
  norm1.collect(c.scoped("norm1"));
  attn.collect(c.scoped("attn"));
  norm2.collect(c.scoped("norm2"));
  fc1.collect(c.scoped("fc1"));
  fc2.collect(c.scoped("fc2"));
}

}  // namespace adn
