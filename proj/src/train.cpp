#include "adn/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "adn/checkpoint.hpp"
#include "adn/evaluate.hpp"
#include "adn/ops.hpp"
#include "adn/rng.hpp"

namespace adn {

DistillStrategy parse_strategy(const std::string& s) {
  if (s == "ours") return DistillStrategy::ours;
  if (s == "teacher_random") return DistillStrategy::teacher_random;
  if (s == "student_random") return DistillStrategy::student_random;
  if (s == "both_random") return DistillStrategy::both_random;
  if (s == "none") return DistillStrategy::none;
  if (s == "vanilla") return DistillStrategy::vanilla;
  throw ValueError("unknown distill strategy \"" + s +
                   "\" (ours|teacher_random|student_random|both_random|none|vanilla)");
}

std::string strategy_str(DistillStrategy s) {
  switch (s) {
    case DistillStrategy::ours: return "ours";
    case DistillStrategy::teacher_random: return "teacher_random";
    case DistillStrategy::student_random: return "student_random";
    case DistillStrategy::both_random: return "both_random";
    case DistillStrategy::none: return "none";
    case DistillStrategy::vanilla: return "vanilla";
  }
  return "ours";
}

void TrainRecipe::validate() const {
  if (lr <= 0.0f) throw ValueError("recipe: lr must be > 0");
  if (kl_temperature <= 0.0f) throw ValueError("recipe: kl_temperature must be > 0");
  if (epochs < 1) throw ValueError("recipe: epochs must be >= 1");
  if (batch_size < 1) throw ValueError("recipe: batch_size must be >= 1");
  if (warmup_epochs < 0) throw ValueError("recipe: warmup_epochs must be >= 0");
}

float cosine_lr(int64_t step, int64_t total_steps, float base_lr, int64_t warmup_steps) {
  if (step < 0 || step > total_steps) throw ValueError("cosine_lr: step out of range");
  if (warmup_steps > 0 && step < warmup_steps)
    return base_lr * static_cast<float>(step) / static_cast<float>(warmup_steps);
  const double progress =
      total_steps == warmup_steps
          ? 1.0
          : static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return static_cast<float>(0.5 * base_lr * (1.0 + std::cos(3.14159265358979323846 * progress)));
}

float step_decay_lr(int64_t step, int64_t total_steps, float base_lr, int64_t warmup_steps) {
  if (step < 0 || step > total_steps) throw ValueError("step_decay_lr: step out of range");
  if (warmup_steps > 0 && step < warmup_steps)
    return base_lr * static_cast<float>(step) / static_cast<float>(warmup_steps);
  float lr = base_lr;
  if (step >= total_steps / 2) lr *= 0.1f;
  if (step >= total_steps * 3 / 4) lr *= 0.1f;
  return lr;
}

void sgd_momentum_step(std::vector<ParamInfo>& params, std::vector<std::vector<float>>& velocity,
                       float lr, float momentum, float weight_decay) {
  if (velocity.size() != params.size()) velocity.resize(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.trainable || !p.tensor.has_grad()) continue;
    auto& v = velocity[i];
    if (v.empty()) v.assign(static_cast<size_t>(p.tensor.numel()), 0.0f);
    else if (static_cast<int64_t>(v.size()) != p.tensor.numel())
      throw ShapeError("sgd state size mismatch for " + p.name);
    const float wd = p.no_decay ? 0.0f : weight_decay;
    const std::vector<float>& g = p.tensor.grad();
    float* w = p.tensor.data();
    for (size_t j = 0; j < v.size(); ++j) {
      v[j] = momentum * v[j] + g[j] + wd * w[j];
      w[j] -= lr * v[j];
    }
  }
}

Optimizer::Optimizer(const TrainRecipe& recipe, std::vector<ParamInfo>& params)
    : kind_(recipe.optimizer),
      momentum_(recipe.momentum),
      beta1_(recipe.beta1),
      beta2_(recipe.beta2),
      eps_(recipe.adam_eps),
      weight_decay_(recipe.weight_decay) {
  velocity_.resize(params.size());
  m_.resize(params.size());
  v_.resize(params.size());
}

void Optimizer::zero_grad(std::vector<ParamInfo>& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

void Optimizer::step(std::vector<ParamInfo>& params, float lr) {
  if (kind_ == OptimizerKind::sgd_momentum) {
    sgd_momentum_step(params, velocity_, lr, momentum_, weight_decay_);
    return;
  }
  ++t_;
  const float bc1 = 1.0f - std::pow(beta1_, static_cast<float>(t_));
  const float bc2 = 1.0f - std::pow(beta2_, static_cast<float>(t_));
  if (m_.size() != params.size()) {
    m_.resize(params.size());
    v_.resize(params.size());
  }
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.trainable || !p.tensor.has_grad()) continue;
    auto& m = m_[i];
    auto& v = v_[i];
    if (m.empty()) {
      m.assign(static_cast<size_t>(p.tensor.numel()), 0.0f);
      v.assign(static_cast<size_t>(p.tensor.numel()), 0.0f);
    }
    const float wd = p.no_decay ? 0.0f : weight_decay_;
    const std::vector<float>& g = p.tensor.grad();
    float* w = p.tensor.data();
    for (size_t j = 0; j < m.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0f - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0f - beta2_) * g[j] * g[j];
      const float mhat = m[j] / bc1;
      const float vhat = v[j] / bc2;
      w[j] -= lr * (mhat / (std::sqrt(vhat) + eps_) + wd * w[j]);
    }
  }
}

Tensor feature_kl_loss(const std::vector<Tensor>& teacher_feats,
                       const std::vector<Tensor>& student_feats, float temperature) {
  if (teacher_feats.size() != student_feats.size())
    throw ShapeError("feature_kl: stage count mismatch, " +
                     std::to_string(teacher_feats.size()) + " vs " +
                     std::to_string(student_feats.size()));
  Tensor total;
  for (size_t s = 0; s < teacher_feats.size(); ++s) {
    if (teacher_feats[s].shape() != student_feats[s].shape())
      throw ShapeError("feature_kl: stage " + std::to_string(s) + " shapes differ, " +
                       shape_str(teacher_feats[s].shape()) + " vs " +
                       shape_str(student_feats[s].shape()));
    Tensor kl =
        kl_divergence(flatten(teacher_feats[s]), flatten(student_feats[s]), temperature);
    total = total.defined() ? add(total, kl) : kl;
  }
  return total;
}

std::pair<SkipConfig, SkipConfig> sample_strategy_configs(DistillStrategy strategy, int n_r,
                                                          std::mt19937& rng) {
  auto random_cfg = [&]() {
    std::uniform_int_distribution<uint64_t> d(0, (static_cast<uint64_t>(1) << n_r) - 1);
    const uint64_t mask = d(rng);
    SkipConfig c;
    c.flags.resize(static_cast<size_t>(n_r));
    for (int s = 0; s < n_r; ++s) c.flags[static_cast<size_t>(s)] = (mask >> s) & 1;
    return c;
  };
  switch (strategy) {
    case DistillStrategy::teacher_random: return {random_cfg(), SkipConfig::all(n_r)};
    case DistillStrategy::student_random: return {SkipConfig::none(n_r), random_cfg()};
    case DistillStrategy::both_random: {
      SkipConfig t = random_cfg();
      SkipConfig s = random_cfg();
      return {t, s};
    }
    default: return {SkipConfig::none(n_r), SkipConfig::all(n_r)};
  }
}

namespace {

double now_ms() {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

float global_grad_norm(std::vector<ParamInfo>& params) {
  double total = 0.0;
  for (auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (float g : p.tensor.grad()) total += static_cast<double>(g) * g;
  }
  return static_cast<float>(std::sqrt(total));
}

void check_finite(float v, const char* which, const SkipConfig& teacher,
                  const SkipConfig& student) {
  if (std::isfinite(v)) return;
  throw ValueError(std::string("non-finite ") + which + " (teacher " + teacher.str() +
                   ", student " + student.str() + "): " + std::to_string(v));
}

}  // namespace

StepReport train_step_with_configs(AdaptiveDepthNetwork& net, const Tensor& x,
                                   const std::vector<int>& labels, const TrainRecipe& recipe,
                                   Optimizer& opt, float lr, const SkipConfig& teacher_cfg,
                                   const SkipConfig& student_cfg) {
  if (x.dim(0) < 1 || labels.empty()) throw ValueError("train_step: empty batch");
  auto& tape = Tape::active();
  tape.reset();
  auto& params = net.params();
  opt.zero_grad(params);
  StepReport rep;
  rep.lr = lr;

  const double t0 = now_ms();
  if (recipe.distill_strategy == DistillStrategy::vanilla) {
    auto res = net.forward(x, SkipConfig::none(net.num_stages()), true);
    Tensor loss = cross_entropy(res.logits, labels);
    rep.loss_super = loss.item();
    check_finite(rep.loss_super, "loss", teacher_cfg, student_cfg);
    tape.backward(loss);
    rep.teacher_ms = now_ms() - t0;
    rep.grad_norm = global_grad_norm(params);
    opt.step(params, lr);
    tape.reset();
    return rep;
  }

  auto teacher = net.forward(x, teacher_cfg, true);
  Tensor loss_super = cross_entropy(teacher.logits, labels);
  rep.loss_super = loss_super.item();
  check_finite(rep.loss_super, "loss_super", teacher_cfg, student_cfg);
  tape.backward(loss_super);
  rep.teacher_ms = now_ms() - t0;

  const double t1 = now_ms();
  auto student = net.forward(x, student_cfg, true);
  Tensor loss_base;
  if (recipe.distill_strategy == DistillStrategy::none) {
    loss_base = cross_entropy(student.logits, labels);
  } else {
    loss_base = kl_divergence(teacher.logits, student.logits, recipe.kl_temperature);
    if (recipe.feature_kl)
      loss_base = add(feature_kl_loss(teacher.stage_features, student.stage_features,
                                      recipe.kl_temperature),
                      loss_base);
  }
  rep.loss_base = loss_base.item();
  check_finite(rep.loss_base, "loss_base", teacher_cfg, student_cfg);
  tape.backward(loss_base);  // gradients accumulate on top of the teacher pass
  rep.student_ms = now_ms() - t1;

  rep.grad_norm = global_grad_norm(params);
  opt.step(params, lr);
  tape.reset();
  return rep;
}

StepReport train_step(AdaptiveDepthNetwork& net, const Tensor& x, const std::vector<int>& labels,
                      const TrainRecipe& recipe, Optimizer& opt, float lr,
                      std::mt19937& strategy_rng) {
  auto [teacher_cfg, student_cfg] =
      sample_strategy_configs(recipe.distill_strategy, net.num_stages(), strategy_rng);
  return train_step_with_configs(net, x, labels, recipe, opt, lr, teacher_cfg, student_cfg);
}

TrainResult train(AdaptiveDepthNetwork& net, const data::LabeledImageSet& train_set,
                  const data::LabeledImageSet& val_set, const TrainRecipe& recipe,
                  const TrainOptions& opts) {
  recipe.validate();
  if (train_set.n == 0) throw ValueError("train: empty dataset");
  TrainResult result;
  result.norm = data::compute_channel_stats(train_set);

  const int64_t steps_per_epoch =
      (train_set.n + recipe.batch_size - 1) / recipe.batch_size;
  const int64_t total_steps = steps_per_epoch * recipe.epochs;
  const int64_t warmup_steps =
      std::min<int64_t>(steps_per_epoch * recipe.warmup_epochs, total_steps);

  auto& params = net.params();
  Optimizer opt(recipe, params);
  std::mt19937 strategy_rng = make_rng(recipe.seed, 0x57a7);

  const data::LabeledImageSet val_subset =
      (opts.eval_subset > 0 && opts.eval_subset < val_set.n)
          ? data::take_subset(val_set, opts.eval_subset, recipe.seed + 0xe7a1)
          : val_set;

  std::ofstream log;
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir);
    result.log_path = opts.out_dir / "train_log.csv";
    result.checkpoint_path = opts.out_dir / "checkpoint.adnw";
    log.open(result.log_path, std::ios::trunc);
    if (!log) throw IoError("cannot open " + result.log_path.string());
    log << "epoch,step,loss_super,loss_base,lr,acc_supernet,acc_basenet,wall_ms\n";
  }

  auto save_checkpoint = [&]() {
    if (opts.out_dir.empty()) return;
    auto sd = net.state_dict();
    sd.emplace("data.mean",
               Tensor::from_data({static_cast<int64_t>(result.norm.mean.size())},
                                 std::vector<float>(result.norm.mean)));
    sd.emplace("data.std",
               Tensor::from_data({static_cast<int64_t>(result.norm.std.size())},
                                 std::vector<float>(result.norm.std)));
    write_checkpoint(result.checkpoint_path, sd);
  };

  std::vector<int64_t> order(static_cast<size_t>(train_set.n));
  double acc_super = -1.0, acc_base = -1.0;
  int64_t global_step = 0;
  char line[256];
  const double t_start = now_ms();

  for (int epoch = 0; epoch < recipe.epochs; ++epoch) {
    const double t_epoch = now_ms();
    std::iota(order.begin(), order.end(), 0);
    std::mt19937 shuffle_rng = make_rng(recipe.seed, 0x50000 + static_cast<uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    std::mt19937 aug_rng = make_rng(recipe.seed, 0x60000 + static_cast<uint64_t>(epoch));

    double sum_super = 0.0, sum_base = 0.0;
    int64_t steps = 0;
    float last_lr = 0.0f;
    bool aborted = false;
    for (int64_t start = 0; start < train_set.n; start += recipe.batch_size) {
      const int64_t b = std::min<int64_t>(recipe.batch_size, train_set.n - start);
      std::vector<int64_t> idx(order.begin() + start, order.begin() + start + b);
      std::vector<int> labels;
      Tensor raw = data::gather_batch(train_set, idx, &labels);
      Tensor x = data::normalize(data::augment(raw, opts.crop_pad, opts.hflip_prob, aug_rng),
                                 result.norm);
      const float lr = recipe.lr_schedule == LrSchedule::cosine
                           ? cosine_lr(global_step, total_steps, recipe.lr, warmup_steps)
                           : step_decay_lr(global_step, total_steps, recipe.lr, warmup_steps);
      StepReport rep;
      try {
        rep = train_step(net, x, labels, recipe, opt, lr, strategy_rng);
      } catch (const ValueError&) {
        result.aborted_nan = true;  // last-good checkpoint stays on disk
        aborted = true;
        break;
      }
      sum_super += rep.loss_super;
      sum_base += rep.loss_base;
      last_lr = rep.lr;
      ++steps;
      ++global_step;
      if (log && opts.log_every > 0 && global_step % opts.log_every == 0) {
        std::snprintf(line, sizeof line, "%d,%lld,%.6f,%.6f,%.6g,%.6f,%.6f,%.1f\n", epoch,
                      static_cast<long long>(global_step), rep.loss_super, rep.loss_base,
                      static_cast<double>(rep.lr), acc_super, acc_base, now_ms() - t_start);
        log << line;
      }
    }
    if (aborted) break;

    acc_super = evaluate(net, SkipConfig::none(net.num_stages()), val_subset, result.norm,
                         opts.eval_batch);
    acc_base =
        evaluate(net, SkipConfig::all(net.num_stages()), val_subset, result.norm, opts.eval_batch);

    EpochStats es;
    es.epoch = epoch;
    es.loss_super = steps ? sum_super / static_cast<double>(steps) : 0.0;
    es.loss_base = steps ? sum_base / static_cast<double>(steps) : 0.0;
    es.acc_super = acc_super;
    es.acc_base = acc_base;
    es.wall_ms = now_ms() - t_epoch;
    result.epochs.push_back(es);
    if (log) {
      std::snprintf(line, sizeof line, "%d,%lld,%.6f,%.6f,%.6g,%.6f,%.6f,%.1f\n", epoch,
                    static_cast<long long>(global_step), es.loss_super, es.loss_base,
                    static_cast<double>(last_lr), acc_super, acc_base, now_ms() - t_start);
      log << line;
    }
    save_checkpoint();
  }
  return result;
}

}  // namespace adn
