#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "adn/layers.hpp"

namespace adn {

/// Per-stage skip selector. flags[s] == true means stage s's skippable
/// sub-path is bypassed. String form uses the paper-style notation:
/// 'T' = skip, 'F' = keep, so "TTTT" is the base-net and "FFFF" the super-net.
struct SkipConfig {
  std::vector<bool> flags;

  static SkipConfig none(int n_r) { return SkipConfig{std::vector<bool>(n_r, false)}; }
  static SkipConfig all(int n_r) { return SkipConfig{std::vector<bool>(n_r, true)}; }
  static SkipConfig parse(const std::string& tf);

  int size() const { return static_cast<int>(flags.size()); }
  bool operator[](int s) const { return flags[static_cast<size_t>(s)]; }
  int num_skips() const;
  std::string str() const;
  bool operator==(const SkipConfig& o) const = default;
};

/// All 2^n_r configs, grouped by ascending number of skips; within a group,
/// earlier-stage skips come first (the appendix table ordering: TFFF, FTFF,
/// FFTF, FFFT, ...).
std::vector<SkipConfig> enumerate_subnets(int n_r);

/// Mandatory/skippable length split applied by the CNN builder.
enum class MandatoryRatio { standard, more_skippable, more_mandatory };
MandatoryRatio parse_ratio(const std::string& s);
std::string ratio_str(MandatoryRatio r);
// (mandatory, skippable) block counts for a stage of length total
std::pair<int, int> split_stage(int total, MandatoryRatio ratio);

struct ResidualStage {
  std::vector<std::unique_ptr<ResidualBlock>> mandatory;  // >= 1
  std::vector<std::unique_ptr<ResidualBlock>> skippable;  // may be empty
};

/// Accumulates per-block residual magnitude ratios across forward passes
/// (rows appear in traversal order; repeated forwards with the same config
/// keep accumulating).
struct ForwardProbe {
  std::vector<BlockRatioStats> blocks;
};

class AdaptiveDepthNetwork {
 public:
  enum class Kind { cnn, vit };

  struct ForwardResult {
    Tensor logits;
    std::vector<Tensor> stage_features;  // h^s actually produced under the skip config
  };

  /// Runs the stem, each stage's mandatory blocks (norm mode = skip[s] ? 1:0),
  /// the skippable blocks when not skipped, and the head. When a stage is
  /// skipped, its mandatory output feeds the next stage directly.
  ForwardResult forward(const Tensor& x, const SkipConfig& skip, bool training,
                        ForwardProbe* probe = nullptr);

  int num_stages() const { return static_cast<int>(stages_.size()); }
  int num_classes() const { return num_classes_; }
  Kind kind() const { return kind_; }
  bool skip_aware() const { return skip_aware_; }
  int in_channels() const { return in_channels_; }
  int image_hw() const { return image_hw_; }
  uint64_t forward_calls() const { return forward_calls_; }

  /// Parameter/buffer registry; entries share storage with the layers.
  std::vector<ParamInfo>& params();

  /// Analytic multiply-accumulate count per sample for one skip config.
  uint64_t flops(const SkipConfig& skip) const;
  /// Whole-model parameter count (both switchable norm sets included).
  uint64_t param_count();
  /// Executed parameters only: shared parts, executed blocks, and just the
  /// selected norm set inside mandatory blocks.
  uint64_t param_count(const SkipConfig& skip);

  std::map<std::string, Tensor> state_dict();
  /// Copies values into the existing storages; the name sets must match.
  void load_state_dict(const std::map<std::string, Tensor>& sd);

  const std::vector<ResidualStage>& stages() const { return stages_; }
  std::vector<ResidualStage>& stages() { return stages_; }

  // ---- construction (used by the builders) ----
  struct CnnStem {
    Conv2d conv;
    NormLayer norm;
  };
  struct VitStem {
    Conv2d patch;        // [D, C, p, p], stride p
    Tensor cls_token;    // [1, 1, D]
    Tensor pos_embed;    // [1, T+1, D]
  };
  struct CnnHead {
    Linear fc;
  };
  struct VitHead {
    LayerNorm norm;
    Linear fc;
  };

  friend AdaptiveDepthNetwork build_resnet_tiny(const struct ResnetTinyConfig&);
  friend AdaptiveDepthNetwork build_vit_tiny(const struct VitTinyConfig&);

 private:
  void check_skip(const SkipConfig& skip) const;
  void rebuild_registry();

  Kind kind_ = Kind::cnn;
  bool skip_aware_ = true;
  int num_classes_ = 0;
  int in_channels_ = 0;
  int image_hw_ = 0;
  std::unique_ptr<CnnStem> cnn_stem_;
  std::unique_ptr<VitStem> vit_stem_;
  std::vector<ResidualStage> stages_;
  std::unique_ptr<CnnHead> cnn_head_;
  std::unique_ptr<VitHead> vit_head_;
  uint64_t stem_macs_ = 0;
  uint64_t head_macs_ = 0;
  uint64_t forward_calls_ = 0;
  std::vector<ParamInfo> registry_;
  bool registry_built_ = false;
};

/// Desk-scale ResNet with basic two-conv blocks. Stage s halves the spatial
/// dims (stride-2 downsampling block, always mandatory) for s >= 1.
struct ResnetTinyConfig {
  int num_classes = 10;
  std::vector<int> stage_blocks{3, 4, 6, 3};
  std::vector<int> widths{16, 32, 64, 128};
  MandatoryRatio ratio = MandatoryRatio::standard;
  int in_channels = 3;
  int image_hw = 32;
  bool skip_aware_norms = true;  // false: plain single-set norms everywhere
  uint64_t seed = 1;
};
AdaptiveDepthNetwork build_resnet_tiny(const ResnetTinyConfig& cfg);

/// Desk-scale ViT: patch embedding, class token, learned positions, `depth`
/// pre-norm encoder blocks divided into `groups` stages. By default the last
/// block of each group is the skippable sub-path; last_two_skippable marks
/// the last two.
struct VitTinyConfig {
  int num_classes = 10;
  int depth = 8;
  int dim = 64;
  int heads = 4;
  int patch = 7;
  int groups = 4;
  int in_channels = 1;
  int image_hw = 28;
  bool last_two_skippable = false;
  bool skip_aware_norms = true;
  uint64_t seed = 1;
};
AdaptiveDepthNetwork build_vit_tiny(const VitTinyConfig& cfg);

}  // namespace adn
