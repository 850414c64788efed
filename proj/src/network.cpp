#include "adn/network.hpp"

#include <algorithm>

#include "adn/rng.hpp"

namespace adn {

SkipConfig SkipConfig::parse(const std::string& tf) {
  SkipConfig c;
  c.flags.reserve(tf.size());
  for (char ch : tf) {
    if (ch == 'T')
      c.flags.push_back(true);
    else if (ch == 'F')
      c.flags.push_back(false);
    else
      throw ValueError("skip string must use only 'T'/'F', got \"" + tf + "\"");
  }
  if (c.flags.empty()) throw ValueError("skip string is empty");
  return c;
}

int SkipConfig::num_skips() const {
  int n = 0;
  for (bool f : flags) n += f ? 1 : 0;
  return n;
}

std::string SkipConfig::str() const {
  std::string s;
  s.reserve(flags.size());
  for (bool f : flags) s.push_back(f ? 'T' : 'F');
  return s;
}

std::vector<SkipConfig> enumerate_subnets(int n_r) {
  if (n_r < 1) throw ValueError("enumerate_subnets: n_r must be >= 1");
  std::vector<SkipConfig> all;
  all.reserve(static_cast<size_t>(1) << n_r);
  for (uint64_t mask = 0; mask < (static_cast<uint64_t>(1) << n_r); ++mask) {
    SkipConfig c;
    c.flags.resize(static_cast<size_t>(n_r));
    for (int s = 0; s < n_r; ++s) c.flags[static_cast<size_t>(s)] = (mask >> s) & 1;
    all.push_back(std::move(c));
  }
  // groups of ascending skip count; within a group, skips in earlier stages
  // first ("TFFF" before "FTFF"), i.e. descending string order since T > F
  std::sort(all.begin(), all.end(), [](const SkipConfig& a, const SkipConfig& b) {
    const int na = a.num_skips(), nb = b.num_skips();
    if (na != nb) return na < nb;
    return a.str() > b.str();
  });
  return all;
}

MandatoryRatio parse_ratio(const std::string& s) {
  if (s == "default") return MandatoryRatio::standard;
  if (s == "more_skippable") return MandatoryRatio::more_skippable;
  if (s == "more_mandatory") return MandatoryRatio::more_mandatory;
  throw ValueError("unknown ratio \"" + s + "\" (default|more_skippable|more_mandatory)");
}

std::string ratio_str(MandatoryRatio r) {
  switch (r) {
    case MandatoryRatio::standard: return "default";
    case MandatoryRatio::more_skippable: return "more_skippable";
    case MandatoryRatio::more_mandatory: return "more_mandatory";
  }
  return "default";
}

std::pair<int, int> split_stage(int total, MandatoryRatio ratio) {
  if (total < 1) throw ValueError("split_stage: stage must have at least one block");
  int mandatory = 0;
  switch (ratio) {
    case MandatoryRatio::standard: mandatory = (total + 1) / 2; break;
    case MandatoryRatio::more_skippable: mandatory = std::max(1, total / 3); break;
    case MandatoryRatio::more_mandatory: mandatory = total - total / 3; break;
  }
  if (mandatory < 1) throw ValueError("split_stage: stage with 0 mandatory blocks");
  return {mandatory, total - mandatory};
}

void AdaptiveDepthNetwork::check_skip(const SkipConfig& skip) const {
  if (skip.size() != num_stages())
    throw ShapeError("skip config length " + std::to_string(skip.size()) + " != " +
                     std::to_string(num_stages()) + " stages");
}

namespace {

BlockRatioStats* probe_row(ForwardProbe* probe, int stage, int block, bool skippable) {
  if (!probe) return nullptr;
  for (auto& r : probe->blocks)
    if (r.stage == stage && r.block == block && r.skippable == skippable) return &r;
  probe->blocks.push_back(BlockRatioStats{stage, block, skippable, 0.0, 0, 0});
  return &probe->blocks.back();
}

}  // namespace

AdaptiveDepthNetwork::ForwardResult AdaptiveDepthNetwork::forward(const Tensor& x,
                                                                  const SkipConfig& skip,
                                                                  bool training,
                                                                  ForwardProbe* probe) {
  check_skip(skip);
  ++forward_calls_;
  Tensor h;
  if (kind_ == Kind::cnn) {
    h = cnn_stem_->conv.forward(x);
    h = cnn_stem_->norm.forward(h, 0, training);
    h = relu(h);
  } else {
    Tensor p = vit_stem_->patch.forward(x);  // [N, D, Hp, Wp]
    const int64_t N = p.dim(0), D = p.dim(1), T = p.dim(2) * p.dim(3);
    p = reshape(p, {N, D, T});
    p = permute(p, {0, 2, 1});  // [N, T, D]
    Tensor cls = broadcast_to(vit_stem_->cls_token, {N, 1, D});
    h = concat({cls, p}, 1);
    h = add(h, vit_stem_->pos_embed);
  }
  ForwardResult res;
  res.stage_features.reserve(stages_.size());
  for (int s = 0; s < num_stages(); ++s) {
    auto& stage = stages_[static_cast<size_t>(s)];
    const int mode = skip[s] ? 1 : 0;
    int b = 0;
    for (auto& block : stage.mandatory) {
      h = block->forward(h, mode, training, probe_row(probe, s, b, false));
      ++b;
    }
    if (!skip[s]) {
      for (auto& block : stage.skippable) {
        h = block->forward(h, mode, training, probe_row(probe, s, b, true));
        ++b;
      }
    }
    res.stage_features.push_back(h);
  }
  if (kind_ == Kind::cnn) {
    Tensor pooled = global_avgpool(h);
    res.logits = cnn_head_->fc.forward(pooled);
  } else {
    Tensor cls = slice(h, 1, 0, 1);  // [N,1,D]
    cls = reshape(cls, {cls.dim(0), cls.dim(2)});
    cls = vit_head_->norm.forward(cls);
    res.logits = vit_head_->fc.forward(cls);
  }
  return res;
}

std::vector<ParamInfo>& AdaptiveDepthNetwork::params() {
  if (!registry_built_) rebuild_registry();
  return registry_;
}

void AdaptiveDepthNetwork::rebuild_registry() {
  registry_.clear();
  ParamCollector root;
  root.sink = &registry_;
  if (kind_ == Kind::cnn) {
    cnn_stem_->conv.collect(root.scoped("stem.conv"));
    cnn_stem_->norm.collect(root.scoped("stem.norm"));
  } else {
    vit_stem_->patch.collect(root.scoped("stem.patch"));
    root.scoped("stem").add("cls_token", vit_stem_->cls_token, true, true);
    root.scoped("stem").add("pos_embed", vit_stem_->pos_embed, true, true);
  }
  for (int s = 0; s < num_stages(); ++s) {
    ParamCollector cs = root.scoped("stages." + std::to_string(s));
    cs.stage = s;
    auto& stage = stages_[static_cast<size_t>(s)];
    for (size_t b = 0; b < stage.mandatory.size(); ++b)
      stage.mandatory[b]->collect(cs.scoped("mandatory." + std::to_string(b)));
    ParamCollector ck = cs;
    ck.in_skippable = true;
    for (size_t b = 0; b < stage.skippable.size(); ++b)
      stage.skippable[b]->collect(ck.scoped("skippable." + std::to_string(b)));
  }
  if (kind_ == Kind::cnn) {
    cnn_head_->fc.collect(root.scoped("head.fc"));
  } else {
    vit_head_->norm.collect(root.scoped("head.norm"));
    vit_head_->fc.collect(root.scoped("head.fc"));
  }
  registry_built_ = true;
}

uint64_t AdaptiveDepthNetwork::flops(const SkipConfig& skip) const {
  check_skip(skip);
  uint64_t total = stem_macs_ + head_macs_;
  for (int s = 0; s < num_stages(); ++s) {
    for (const auto& b : stages_[static_cast<size_t>(s)].mandatory) total += b->macs;
    if (!skip[s])
      for (const auto& b : stages_[static_cast<size_t>(s)].skippable) total += b->macs;
  }
  return total;
}

uint64_t AdaptiveDepthNetwork::param_count() {
  uint64_t total = 0;
  for (const auto& p : params())
    if (p.trainable) total += static_cast<uint64_t>(p.tensor.numel());
  return total;
}

uint64_t AdaptiveDepthNetwork::param_count(const SkipConfig& skip) {
  check_skip(skip);
  uint64_t total = 0;
  for (const auto& p : params()) {
    if (!p.trainable) continue;
    if (p.stage >= 0) {
      if (p.in_skippable && skip[p.stage]) continue;
      const int mode = skip[p.stage] ? 1 : 0;
      if (p.norm_set >= 0 && p.norm_set != mode) continue;
    }
    total += static_cast<uint64_t>(p.tensor.numel());
  }
  return total;
}

std::map<std::string, Tensor> AdaptiveDepthNetwork::state_dict() {
  std::map<std::string, Tensor> sd;
  for (const auto& p : params()) {
    if (!sd.emplace(p.name, p.tensor).second)
      throw ValueError("duplicate parameter name " + p.name);
  }
  return sd;
}

void AdaptiveDepthNetwork::load_state_dict(const std::map<std::string, Tensor>& sd) {
  for (auto& p : params()) {
    auto it = sd.find(p.name);
    if (it == sd.end()) throw IoError("state dict is missing tensor \"" + p.name + "\"");
    if (it->second.numel() != p.tensor.numel())
      throw IoError("state dict tensor \"" + p.name + "\" has " +
                    std::to_string(it->second.numel()) + " values, expected " +
                    std::to_string(p.tensor.numel()));
    std::copy(it->second.data(), it->second.data() + p.tensor.numel(), p.tensor.data());
  }
}

AdaptiveDepthNetwork build_resnet_tiny(const ResnetTinyConfig& cfg) {
  if (cfg.stage_blocks.empty() || cfg.stage_blocks.size() != cfg.widths.size())
    throw ValueError("resnet builder: stage_blocks and widths must be non-empty and equal-sized");
  if (cfg.num_classes < 2) throw ValueError("resnet builder: need at least 2 classes");
  std::mt19937 rng = make_rng(cfg.seed, 0x6e65);
  AdaptiveDepthNetwork net;
  net.kind_ = AdaptiveDepthNetwork::Kind::cnn;
  net.skip_aware_ = cfg.skip_aware_norms;
  net.num_classes_ = cfg.num_classes;
  net.in_channels_ = cfg.in_channels;
  net.image_hw_ = cfg.image_hw;

  const int w0 = cfg.widths[0];
  net.cnn_stem_ = std::make_unique<AdaptiveDepthNetwork::CnnStem>(AdaptiveDepthNetwork::CnnStem{
      Conv2d::make(cfg.in_channels, w0, 3, 1, 1, false, rng), NormLayer::plain_bn(w0)});
  int64_t hw = cfg.image_hw;
  net.stem_macs_ = net.cnn_stem_->conv.macs(hw, hw);

  int ch = w0;
  for (size_t s = 0; s < cfg.stage_blocks.size(); ++s) {
    const int out_ch = cfg.widths[s];
    const int stride = s == 0 ? 1 : 2;
    const auto [n_mand, n_skip] = split_stage(cfg.stage_blocks[s], cfg.ratio);
    if (stride != 1) hw = (hw + 2 - 3) / stride + 1;
    ResidualStage stage;
    for (int b = 0; b < n_mand; ++b) {
      const int in_ch = b == 0 ? ch : out_ch;
      const int st = b == 0 ? stride : 1;
      auto block = std::make_unique<ResidualBlockCNN>(in_ch, out_ch, st, cfg.skip_aware_norms, rng);
      block->macs = block->conv1.macs(hw, hw) + block->conv2.macs(hw, hw) +
                    (block->proj ? block->proj->macs(hw, hw) : 0);
      stage.mandatory.push_back(std::move(block));
    }
    for (int b = 0; b < n_skip; ++b) {
      auto block = std::make_unique<ResidualBlockCNN>(out_ch, out_ch, 1, false, rng);
      block->macs = block->conv1.macs(hw, hw) + block->conv2.macs(hw, hw);
      stage.skippable.push_back(std::move(block));
    }
    net.stages_.push_back(std::move(stage));
    ch = out_ch;
  }
  net.cnn_head_ = std::make_unique<AdaptiveDepthNetwork::CnnHead>(
      AdaptiveDepthNetwork::CnnHead{Linear::make(ch, cfg.num_classes, true, rng)});
  net.head_macs_ = net.cnn_head_->fc.macs();
  return net;
}

AdaptiveDepthNetwork build_vit_tiny(const VitTinyConfig& cfg) {
  if (cfg.groups < 1 || cfg.depth % cfg.groups != 0)
    throw ValueError("vit builder: depth " + std::to_string(cfg.depth) +
                     " is not divisible into " + std::to_string(cfg.groups) + " groups");
  if (cfg.image_hw % cfg.patch != 0)
    throw ValueError("vit builder: image size " + std::to_string(cfg.image_hw) +
                     " is not a multiple of patch " + std::to_string(cfg.patch));
  if (cfg.dim % cfg.heads != 0)
    throw ValueError("vit builder: dim not divisible by heads");
  const int group_len = cfg.depth / cfg.groups;
  const int n_skip = cfg.last_two_skippable ? 2 : 1;
  if (group_len - n_skip < 1) throw ValueError("vit builder: stage with 0 mandatory blocks");

  std::mt19937 rng = make_rng(cfg.seed, 0x7669);
  AdaptiveDepthNetwork net;
  net.kind_ = AdaptiveDepthNetwork::Kind::vit;
  net.skip_aware_ = cfg.skip_aware_norms;
  net.num_classes_ = cfg.num_classes;
  net.in_channels_ = cfg.in_channels;
  net.image_hw_ = cfg.image_hw;

  const int side = cfg.image_hw / cfg.patch;
  const int64_t T = static_cast<int64_t>(side) * side;
  AdaptiveDepthNetwork::VitStem stem{
      Conv2d::make(cfg.in_channels, cfg.dim, cfg.patch, cfg.patch, 0, true, rng, 0.02f),
      Tensor::zeros({1, 1, cfg.dim}, true), Tensor::zeros({1, T + 1, cfg.dim}, true)};
  {
    std::normal_distribution<float> d(0.0f, 0.02f);
    for (int64_t i = 0; i < stem.cls_token.numel(); ++i) stem.cls_token.data()[i] = d(rng);
    for (int64_t i = 0; i < stem.pos_embed.numel(); ++i) stem.pos_embed.data()[i] = d(rng);
  }
  net.vit_stem_ = std::make_unique<AdaptiveDepthNetwork::VitStem>(std::move(stem));
  net.stem_macs_ = net.vit_stem_->patch.macs(side, side);

  const int mlp_hidden = 4 * cfg.dim;
  for (int g = 0; g < cfg.groups; ++g) {
    ResidualStage stage;
    for (int b = 0; b < group_len - n_skip; ++b) {
      auto block = std::make_unique<ResidualBlockViT>(cfg.dim, cfg.heads, mlp_hidden,
                                                      cfg.skip_aware_norms, rng);
      block->macs = block->attn.macs(T + 1) +
                    2 * static_cast<uint64_t>(T + 1) * cfg.dim * mlp_hidden;
      stage.mandatory.push_back(std::move(block));
    }
    for (int b = 0; b < n_skip; ++b) {
      auto block = std::make_unique<ResidualBlockViT>(cfg.dim, cfg.heads, mlp_hidden, false, rng);
      block->macs = block->attn.macs(T + 1) +
                    2 * static_cast<uint64_t>(T + 1) * cfg.dim * mlp_hidden;
      stage.skippable.push_back(std::move(block));
    }
    net.stages_.push_back(std::move(stage));
  }
  net.vit_head_ = std::make_unique<AdaptiveDepthNetwork::VitHead>(AdaptiveDepthNetwork::VitHead{
      LayerNorm::make(cfg.dim), Linear::make(cfg.dim, cfg.num_classes, true, rng)});
  net.head_macs_ = net.vit_head_->fc.macs();
  return net;
}

}  // namespace adn
