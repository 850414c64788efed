#pragma once

#include <memory>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "adn/ops.hpp"

namespace adn {

/// One entry of a network's parameter/buffer registry. Tensors are shared
/// handles into the layer storage; mutating them mutates the network.
struct ParamInfo {
  std::string name;
  Tensor tensor;
  bool trainable = true;
  bool no_decay = false;   // norm parameters and biases are excluded from weight decay
  int stage = -1;          // -1: stem/head (shared by every sub-network)
  bool in_skippable = false;
  int norm_set = -1;       // 0/1 for switchable-norm parameter sets
};

/// Collects registry entries with structural tags threaded down from the
/// network level.
struct ParamCollector {
  std::vector<ParamInfo>* sink = nullptr;
  std::string prefix;
  int stage = -1;
  bool in_skippable = false;

  ParamCollector scoped(const std::string& name) const {
    ParamCollector c = *this;
    c.prefix = prefix.empty() ? name : prefix + "." + name;
    return c;
  }
  void add(const std::string& name, const Tensor& t, bool trainable, bool no_decay,
           int norm_set = -1) const {
    sink->push_back(ParamInfo{prefix.empty() ? name : prefix + "." + name, t, trainable, no_decay,
                              stage, in_skippable, norm_set});
  }
};

struct Conv2d {
  Tensor weight;  // [out, in, k, k]
  std::optional<Tensor> bias;
  int stride = 1;
  int padding = 1;

  // He-normal weights by default, or a fixed stddev when init_std is given.
  static Conv2d make(int in_ch, int out_ch, int kernel, int stride, int padding, bool with_bias,
                     std::mt19937& rng, std::optional<float> init_std = std::nullopt);
  Tensor forward(const Tensor& x) const { return conv2d(x, weight, bias, stride, padding); }
  uint64_t macs(int64_t oh, int64_t ow) const;
  void collect(const ParamCollector& c) const;
};

struct Linear {
  Tensor weight;  // [in, out]
  std::optional<Tensor> bias;

  enum class Init { he_uniform, normal02 };
  static Linear make(int in, int out, bool with_bias, std::mt19937& rng,
                     Init init = Init::he_uniform);
  Tensor forward(const Tensor& x) const { return linear(x, weight, bias); }
  uint64_t macs() const;  // one application: in * out
  void collect(const ParamCollector& c) const;
};

struct BatchNorm2d {
  Tensor gamma, beta, running_mean, running_var;
  float momentum = 0.1f;
  float eps = 1e-5f;

  static BatchNorm2d make(int features);
  Tensor forward(const Tensor& x, bool training) {
    return batch_norm2d(x, gamma, beta, running_mean, running_var, momentum, eps, training);
  }
  void collect(const ParamCollector& c, int norm_set = -1) const;
};

struct LayerNorm {
  Tensor gamma, beta;
  float eps = 1e-6f;

  static LayerNorm make(int features);
  Tensor forward(const Tensor& x) const { return layer_norm(x, gamma, beta, eps); }
  void collect(const ParamCollector& c, int norm_set = -1) const;
};

/// Skip-aware normalization: exactly two parameter (and, for batch norm,
/// statistic) sets, switched by the owning stage's skip flag. Mode 0 means
/// the stage's skippable sub-path runs, mode 1 means it is skipped. Both
/// sets start identical; forwarding in one mode never touches the other
/// set's parameters or statistics.
class SwitchableNorm {
 public:
  enum class Kind { batchnorm2d, layernorm };

  static SwitchableNorm batchnorm(int features);
  static SwitchableNorm layernorm(int features);

  Tensor forward(const Tensor& x, int mode, bool training);
  Kind kind() const { return kind_; }
  int num_features() const { return features_; }
  void collect(const ParamCollector& c) const;

  BatchNorm2d& bn_set(int mode);
  LayerNorm& ln_set(int mode);

 private:
  Kind kind_ = Kind::batchnorm2d;
  int features_ = 0;
  std::vector<BatchNorm2d> bn_;  // size 2 when kind == batchnorm2d
  std::vector<LayerNorm> ln_;   // size 2 when kind == layernorm
};

/// Norm slot inside a residual block: plain (single set, ignores the mode)
/// or switchable.
class NormLayer {
 public:
  static NormLayer plain_bn(int features);
  static NormLayer plain_ln(int features);
  static NormLayer switchable_bn(int features);
  static NormLayer switchable_ln(int features);

  Tensor forward(const Tensor& x, int mode, bool training);
  bool switchable() const;
  void collect(const ParamCollector& c) const;

  SwitchableNorm* as_switchable();
  BatchNorm2d* as_plain_bn();
  LayerNorm* as_plain_ln();

 private:
  std::variant<BatchNorm2d, LayerNorm, SwitchableNorm> impl_;
};

struct MultiHeadAttention {
  int num_heads = 0;
  int head_dim = 0;
  Linear q, k, v, out;

  static MultiHeadAttention make(int dim, int heads, std::mt19937& rng);
  // tokens [N,T,D]; attn_out, when given, receives the [N*heads,T,T]
  // attention weights (detached).
  Tensor forward(const Tensor& tokens, Tensor* attn_out = nullptr) const;
  uint64_t macs(int64_t tokens) const;
  void collect(const ParamCollector& c) const;
};

/// Per-block accumulator for the residual magnitude ratio ||F(h)||_2/||h||_2,
/// averaged over evaluation samples.
struct BlockRatioStats {
  int stage = 0;
  int block = 0;
  bool skippable = false;
  double ratio_sum = 0.0;
  int64_t count = 0;
  int64_t skipped_small = 0;  // samples with ||h||_2 < 1e-12, excluded from the mean

  double mean() const { return count > 0 ? ratio_sum / static_cast<double>(count) : 0.0; }
};

class ResidualBlock {
 public:
  virtual ~ResidualBlock() = default;
  // norm_mode reaches every switchable norm in the block; plain norms ignore
  // it. probe, when set, accumulates the residual magnitude ratio.
  virtual Tensor forward(const Tensor& h, int norm_mode, bool training,
                         BlockRatioStats* probe) = 0;
  virtual void collect(const ParamCollector& c) const = 0;

  bool uses_switchable_norm = false;
  bool downsampling = false;
  uint64_t macs = 0;  // per-sample multiply-accumulates, fixed by the builder
};

/// Basic two-conv residual block: out = shortcut(h) + F(h) with
/// F = n2(conv2(relu(n1(conv1(h))))). Downsampling blocks project the
/// shortcut with a strided 1x1 conv + norm.
class ResidualBlockCNN : public ResidualBlock {
 public:
  ResidualBlockCNN(int in_ch, int out_ch, int stride, bool switchable, std::mt19937& rng);
  Tensor forward(const Tensor& h, int norm_mode, bool training, BlockRatioStats* probe) override;
  void collect(const ParamCollector& c) const override;

  Conv2d conv1, conv2;
  NormLayer n1, n2;
  std::optional<Conv2d> proj;
  std::optional<NormLayer> proj_norm;
};

/// Pre-norm transformer encoder block: x + MHA(LN1(x)), then + MLP(LN2(.)).
class ResidualBlockViT : public ResidualBlock {
 public:
  ResidualBlockViT(int dim, int heads, int mlp_hidden, bool switchable, std::mt19937& rng);
  Tensor forward(const Tensor& h, int norm_mode, bool training, BlockRatioStats* probe) override;
  void collect(const ParamCollector& c) const override;

  NormLayer norm1, norm2;
  MultiHeadAttention attn;
  Linear fc1, fc2;
};

}  // namespace adn
