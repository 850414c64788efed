#pragma once

#include <filesystem>
#include <random>
#include <vector>

#include "adn/data.hpp"
#include "adn/network.hpp"

namespace adn {

enum class OptimizerKind { sgd_momentum, adamw };
enum class LrSchedule { cosine, step };

/// Teacher/student selection per iteration:
///   ours           FFFF teacher, TTTT student, KL student loss
///   teacher_random random teacher, TTTT student
///   student_random FFFF teacher, random student
///   both_random    random teacher and student
///   none           FFFF/TTTT but the student trains on plain CE (no
///                  self-distillation)
///   vanilla        conventional single-pass CE training of the full network
///                  (used for non-adaptive baseline twins)
enum class DistillStrategy { ours, teacher_random, student_random, both_random, none, vanilla };

DistillStrategy parse_strategy(const std::string& s);
std::string strategy_str(DistillStrategy s);

struct TrainRecipe {
  int epochs = 20;
  int batch_size = 128;
  OptimizerKind optimizer = OptimizerKind::sgd_momentum;
  float lr = 0.1f;
  float momentum = 0.9f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float adam_eps = 1e-8f;
  float weight_decay = 5e-4f;
  LrSchedule lr_schedule = LrSchedule::cosine;
  int warmup_epochs = 5;
  float kl_temperature = 1.0f;
  bool feature_kl = false;
  DistillStrategy distill_strategy = DistillStrategy::ours;
  uint64_t seed = 0;

  void validate() const;
};

struct StepReport {
  float loss_super = 0.0f;
  float loss_base = 0.0f;
  float grad_norm = 0.0f;
  float lr = 0.0f;
  double teacher_ms = 0.0;
  double student_ms = 0.0;
};

/// Linear warmup to base_lr over warmup_steps, then cosine decay to 0 at
/// total_steps.
float cosine_lr(int64_t step, int64_t total_steps, float base_lr, int64_t warmup_steps);
/// Linear warmup, then x0.1 at 50% and 75% of total_steps.
float step_decay_lr(int64_t step, int64_t total_steps, float base_lr, int64_t warmup_steps);

/// v <- momentum*v + grad + weight_decay*param; param <- param - lr*v.
/// Entries flagged no_decay (norm parameters, biases) skip the decay term;
/// entries without a gradient buffer are left untouched.
void sgd_momentum_step(std::vector<ParamInfo>& params, std::vector<std::vector<float>>& velocity,
                       float lr, float momentum, float weight_decay);

class Optimizer {
 public:
  Optimizer(const TrainRecipe& recipe, std::vector<ParamInfo>& params);
  void zero_grad(std::vector<ParamInfo>& params);
  void step(std::vector<ParamInfo>& params, float lr);

 private:
  OptimizerKind kind_;
  float momentum_, beta1_, beta2_, eps_, weight_decay_;
  int64_t t_ = 0;
  std::vector<std::vector<float>> velocity_;  // sgd
  std::vector<std::vector<float>> m_, v_;     // adamw
};

/// Sum over stages of KL between flattened per-sample feature distributions
/// (teacher detached), mean over the batch.
Tensor feature_kl_loss(const std::vector<Tensor>& teacher_feats,
                       const std::vector<Tensor>& student_feats, float temperature);

/// Teacher/student configs for one iteration of the given strategy.
std::pair<SkipConfig, SkipConfig> sample_strategy_configs(DistillStrategy strategy, int n_r,
                                                          std::mt19937& rng);

/// One optimizer step with explicit teacher/student configs: teacher forward
/// + CE + backward, student forward + distillation loss + backward
/// (gradients accumulate), single optimizer step. Throws ValueError on
/// non-finite losses.
StepReport train_step_with_configs(AdaptiveDepthNetwork& net, const Tensor& x,
                                   const std::vector<int>& labels, const TrainRecipe& recipe,
                                   Optimizer& opt, float lr, const SkipConfig& teacher_cfg,
                                   const SkipConfig& student_cfg);

/// Samples the strategy's configs and runs train_step_with_configs.
StepReport train_step(AdaptiveDepthNetwork& net, const Tensor& x, const std::vector<int>& labels,
                      const TrainRecipe& recipe, Optimizer& opt, float lr,
                      std::mt19937& strategy_rng);

struct EpochStats {
  int epoch = 0;
  double loss_super = 0.0;
  double loss_base = 0.0;
  double acc_super = 0.0;
  double acc_base = 0.0;
  double wall_ms = 0.0;
};

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: keep everything in memory
  int log_every = 50;
  int64_t eval_subset = 2000;  // validation subset per epoch; 0 = full split
  int crop_pad = 2;
  float hflip_prob = 0.0f;
  int eval_batch = 256;
};

struct TrainResult {
  std::vector<EpochStats> epochs;
  bool aborted_nan = false;
  std::filesystem::path checkpoint_path;
  std::filesystem::path log_path;
  data::Normalization norm;
};

/// Full training loop: seeded shuffling and augmentation, schedule, per-epoch
/// super-net/base-net validation accuracy, CSV log, checkpoint after each
/// epoch. Deterministic given the recipe seed. A non-finite loss aborts,
/// keeping the last epoch's checkpoint.
TrainResult train(AdaptiveDepthNetwork& net, const data::LabeledImageSet& train_set,
                  const data::LabeledImageSet& val_set, const TrainRecipe& recipe,
                  const TrainOptions& opts);

}  // namespace adn
