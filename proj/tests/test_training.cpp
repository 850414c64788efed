#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <map>
#include <random>

#include "adn/checkpoint.hpp"
#include "adn/evaluate.hpp"
#include "adn/ops.hpp"
#include "adn/rng.hpp"
#include "adn/train.hpp"
#include "oracles.hpp"

using namespace adn;

namespace {

ResnetTinyConfig toy_cfg() {
  ResnetTinyConfig cfg;
  cfg.stage_blocks = {2, 2};
  cfg.widths = {4, 8};
  cfg.in_channels = 1;
  cfg.image_hw = 8;
  cfg.num_classes = 3;
  cfg.seed = 21;
  return cfg;
}

ResnetTinyConfig micro_cfg() {
  ResnetTinyConfig cfg;
  cfg.stage_blocks = {2, 2, 2, 2};
  cfg.widths = {8, 16, 32, 64};
  cfg.in_channels = 1;
  cfg.image_hw = 28;
  cfg.num_classes = 4;
  cfg.seed = 5;
  return cfg;
}

Tensor randn(Shape shape, uint32_t seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> d(0.0f, 1.0f);
  Tensor t = Tensor::zeros(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = d(rng);
  return t;
}

using StateSnap = std::map<std::string, std::vector<float>>;

StateSnap snapshot_state(AdaptiveDepthNetwork& net) {
  StateSnap snap;
  for (auto& p : net.params())
    snap[p.name] = std::vector<float>(p.tensor.data(), p.tensor.data() + p.tensor.numel());
  return snap;
}

void restore_state(AdaptiveDepthNetwork& net, const StateSnap& snap) {
  for (auto& p : net.params()) {
    const auto& src = snap.at(p.name);
    std::copy(src.begin(), src.end(), p.tensor.data());
  }
}

StateSnap snapshot_grads(AdaptiveDepthNetwork& net) {
  StateSnap snap;
  for (auto& p : net.params())
    if (p.tensor.has_grad()) snap[p.name] = p.tensor.grad();
  return snap;
}

std::string strip_wall_ms(const std::filesystem::path& csv) {
  std::ifstream in(csv);
  std::string out, line;
  while (std::getline(in, line)) {
    const auto cut = line.rfind(',');
    out += line.substr(0, cut);
    out += '\n';
  }
  return out;
}

std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

struct TapeReset {
  TapeReset() { Tape::active().reset(); }
};

}  // namespace

TEST_CASE("cosine_lr: warmup endpoint, terminal zero, cosine midpoint") {
  CHECK(cosine_lr(100, 1000, 0.4f, 100) == doctest::Approx(0.4f));
  CHECK(std::abs(cosine_lr(1000, 1000, 0.4f, 100)) < 1e-9);
  CHECK(cosine_lr(550, 1000, 0.4f, 100) == doctest::Approx(0.2).epsilon(1e-6));
  CHECK(cosine_lr(0, 1000, 0.4f, 100) == 0.0f);
  CHECK(cosine_lr(0, 1000, 0.4f, 0) == doctest::Approx(0.4));  // no warmup
  CHECK_THROWS_AS(cosine_lr(-1, 10, 0.1f, 0), ValueError);
  CHECK_THROWS_AS(cosine_lr(11, 10, 0.1f, 0), ValueError);
}

TEST_CASE("step_decay_lr: tenth at half, hundredth at three quarters") {
  CHECK(step_decay_lr(100, 1000, 1.0f, 0) == doctest::Approx(1.0));
  CHECK(step_decay_lr(600, 1000, 1.0f, 0) == doctest::Approx(0.1));
  CHECK(step_decay_lr(800, 1000, 1.0f, 0) == doctest::Approx(0.01));
}

TEST_CASE("sgd_momentum_step: plain descent, two-step unroll, decay-only shrink") {
  TapeReset tr;
  // momentum 0, wd 0: param' = param - lr*grad
  std::vector<ParamInfo> params;
  Tensor w = Tensor::from_data({3}, {1.0f, -2.0f, 0.5f}, true);
  w.grad() = {0.1f, 0.2f, -0.3f};
  params.push_back(ParamInfo{"w", w, true, false, -1, false, -1});
  std::vector<std::vector<float>> vel;
  sgd_momentum_step(params, vel, 0.5f, 0.0f, 0.0f);
  CHECK(w.data()[0] == doctest::Approx(1.0 - 0.5 * 0.1));
  CHECK(w.data()[1] == doctest::Approx(-2.0 - 0.5 * 0.2));
  CHECK(w.data()[2] == doctest::Approx(0.5 + 0.5 * 0.3));

  // two steps with momentum 0.9 and constant grad g: unrolling the recursion
  // gives v1 = g, v2 = 1.9 g, total update lr*g*(1 + 1.9) = 2.9 lr g
  Tensor u = Tensor::from_data({1}, {0.0f}, true);
  std::vector<ParamInfo> params2{ParamInfo{"u", u, true, false, -1, false, -1}};
  std::vector<std::vector<float>> vel2;
  const float g = 2.0f, lr = 0.1f;
  for (int i = 0; i < 2; ++i) {
    u.grad() = {g};
    sgd_momentum_step(params2, vel2, lr, 0.9f, 0.0f);
  }
  CHECK(u.data()[0] == doctest::Approx(-2.9 * lr * g).epsilon(1e-6));

  // weight decay with zero grad shrinks toward zero; no_decay entries do not
  Tensor a = Tensor::from_data({1}, {4.0f}, true);
  Tensor b = Tensor::from_data({1}, {4.0f}, true);
  a.grad() = {0.0f};
  b.grad() = {0.0f};
  std::vector<ParamInfo> params3{ParamInfo{"a", a, true, false, -1, false, -1},
                                 ParamInfo{"b", b, true, true, -1, false, -1}};
  std::vector<std::vector<float>> vel3;
  sgd_momentum_step(params3, vel3, 0.1f, 0.0f, 0.01f);
  CHECK(a.data()[0] < 4.0f);
  CHECK(b.data()[0] == 4.0f);
}

TEST_CASE("adamw: steps reduce a quadratic") {
  TapeReset tr;
  TrainRecipe recipe;
  recipe.optimizer = OptimizerKind::adamw;
  recipe.weight_decay = 0.0f;
  Tensor w = Tensor::from_data({2}, {3.0f, -2.0f}, true);
  std::vector<ParamInfo> params{ParamInfo{"w", w, true, false, -1, false, -1}};
  Optimizer opt(recipe, params);
  for (int i = 0; i < 200; ++i) {
    w.zero_grad();
    auto& gr = w.grad();
    gr[0] = 2.0f * w.data()[0];
    gr[1] = 2.0f * w.data()[1];
    opt.step(params, 0.05f);
  }
  CHECK(std::abs(w.data()[0]) < 0.05f);
  CHECK(std::abs(w.data()[1]) < 0.05f);
}

TEST_CASE("feature_kl_loss: zero on identical features, oracle on a 2-stage toy") {
  TapeReset tr;
  std::vector<Tensor> t{randn({3, 4, 2, 2}, 1), randn({3, 8}, 2)};
  CHECK(feature_kl_loss(t, t, 1.0f).item() == 0.0f);

  std::vector<Tensor> s{randn({3, 4, 2, 2}, 3), randn({3, 8}, 4)};
  const float got = feature_kl_loss(t, s, 2.0f).item();
  CHECK(got >= 0.0f);
  const double want =
      oracle::kl_ref(std::vector<float>(t[0].data(), t[0].data() + t[0].numel()),
                     std::vector<float>(s[0].data(), s[0].data() + s[0].numel()), 3, 16, 2.0) +
      oracle::kl_ref(std::vector<float>(t[1].data(), t[1].data() + t[1].numel()),
                     std::vector<float>(s[1].data(), s[1].data() + s[1].numel()), 3, 8, 2.0);
  CHECK(got == doctest::Approx(want).epsilon(1e-4));

  std::vector<Tensor> bad{randn({3, 4, 2, 2}, 5)};
  CHECK_THROWS_AS(feature_kl_loss(t, bad, 1.0f), ShapeError);
  std::vector<Tensor> bad2{randn({3, 4, 2, 2}, 6), randn({3, 9}, 7)};
  CHECK_THROWS_AS(feature_kl_loss(t, bad2, 1.0f), ShapeError);
}

TEST_CASE("sample_strategy_configs: fixed and random roles") {
  std::mt19937 rng(9);
  auto [t1, s1] = sample_strategy_configs(DistillStrategy::ours, 4, rng);
  CHECK(t1.str() == "FFFF");
  CHECK(s1.str() == "TTTT");
  auto [t2, s2] = sample_strategy_configs(DistillStrategy::none, 4, rng);
  CHECK(t2.str() == "FFFF");
  CHECK(s2.str() == "TTTT");

  bool teacher_varies = false, student_fixed = true;
  for (int i = 0; i < 32; ++i) {
    auto [t, s] = sample_strategy_configs(DistillStrategy::teacher_random, 4, rng);
    teacher_varies = teacher_varies || t.str() != "FFFF";
    student_fixed = student_fixed && s.str() == "TTTT";
  }
  CHECK(teacher_varies);
  CHECK(student_fixed);

  bool student_varies = false;
  for (int i = 0; i < 32; ++i) {
    auto [t, s] = sample_strategy_configs(DistillStrategy::both_random, 4, rng);
    student_varies = student_varies || s.str() != "TTTT";
  }
  CHECK(student_varies);
}

TEST_CASE("train_step matches a manually scripted Algorithm-1 iteration bitwise") {
  TapeReset tr;
  TrainRecipe recipe;
  recipe.seed = 3;
  recipe.kl_temperature = 1.0f;
  auto a = build_resnet_tiny(toy_cfg());
  auto b = build_resnet_tiny(toy_cfg());  // identical init (same seed)
  Tensor x = randn({4, 1, 8, 8}, 11);
  std::vector<int> y{0, 2, 1, 1};
  const float lr = 0.05f;

  Optimizer opt_a(recipe, a.params());
  StepReport rep = train_step_with_configs(a, x, y, recipe, opt_a, lr, SkipConfig::none(2),
                                           SkipConfig::all(2));

  // scripted route on the twin
  auto& tape = Tape::active();
  tape.reset();
  for (auto& p : b.params()) p.tensor.zero_grad();
  auto teacher = b.forward(x, SkipConfig::none(2), true);
  Tensor loss_super = cross_entropy(teacher.logits, y);
  tape.backward(loss_super);
  auto student = b.forward(x, SkipConfig::all(2), true);
  Tensor loss_base = kl_divergence(teacher.logits, student.logits, 1.0f);
  tape.backward(loss_base);
  std::vector<std::vector<float>> vel;
  auto params_b = b.params();
  sgd_momentum_step(params_b, vel, lr, recipe.momentum, recipe.weight_decay);
  tape.reset();

  CHECK(rep.loss_super == loss_super.item());
  CHECK(rep.loss_base == loss_base.item());  // a single KL term
  auto sa = snapshot_state(a);
  auto sb = snapshot_state(b);
  REQUIRE(sa.size() == sb.size());
  for (const auto& [name, va] : sa) {
    const auto& vb = sb.at(name);
    REQUIRE(va.size() == vb.size());
    for (size_t i = 0; i < va.size(); ++i) REQUIRE(va[i] == vb[i]);
  }
}

TEST_CASE("two-pass accumulation equals the sum of isolated passes") {
  TapeReset tr;
  auto net = build_resnet_tiny(toy_cfg());
  Tensor x = randn({4, 1, 8, 8}, 13);
  std::vector<int> y{2, 0, 1, 0};
  auto& tape = Tape::active();
  const auto init = snapshot_state(net);

  // combined: teacher backward, then student backward accumulating
  tape.reset();
  for (auto& p : net.params()) p.tensor.zero_grad();
  auto teacher = net.forward(x, SkipConfig::none(2), true);
  Tensor ls = cross_entropy(teacher.logits, y);
  tape.backward(ls);
  const auto g_teacher = snapshot_grads(net);
  auto student = net.forward(x, SkipConfig::all(2), true);
  tape.backward(kl_divergence(teacher.logits, student.logits, 1.0f));
  const auto g_full = snapshot_grads(net);

  // isolated student pass from the same starting point
  restore_state(net, init);
  tape.reset();
  for (auto& p : net.params()) p.tensor.zero_grad();
  auto teacher2 = net.forward(x, SkipConfig::none(2), true);
  Tensor ls2 = cross_entropy(teacher2.logits, y);
  tape.backward(ls2);
  for (auto& p : net.params()) p.tensor.zero_grad();
  auto student2 = net.forward(x, SkipConfig::all(2), true);
  tape.backward(kl_divergence(teacher2.logits, student2.logits, 1.0f));
  const auto g_student = snapshot_grads(net);
  tape.reset();

  for (const auto& [name, gf] : g_full) {
    const auto t_it = g_teacher.find(name);
    const auto s_it = g_student.find(name);
    for (size_t i = 0; i < gf.size(); ++i) {
      const float t = t_it != g_teacher.end() ? t_it->second[i] : 0.0f;
      const float s = s_it != g_student.end() ? s_it->second[i] : 0.0f;
      REQUIRE(std::abs(gf[i] - (t + s)) <= 1e-6f);
    }
  }
}

TEST_CASE("student-pass gradients ignore the teacher graph entirely") {
  TapeReset tr;
  auto net = build_resnet_tiny(toy_cfg());
  Tensor x = randn({4, 1, 8, 8}, 17);
  std::vector<int> y{1, 1, 0, 2};
  auto& tape = Tape::active();
  const auto init = snapshot_state(net);

  auto run = [&](bool detach_teacher) {
    restore_state(net, init);
    tape.reset();
    for (auto& p : net.params()) p.tensor.zero_grad();
    auto teacher = net.forward(x, SkipConfig::none(2), true);
    tape.backward(cross_entropy(teacher.logits, y));
    for (auto& p : net.params()) p.tensor.zero_grad();  // isolate the student delta
    auto student = net.forward(x, SkipConfig::all(2), true);
    Tensor t_logits = detach_teacher ? teacher.logits.detach() : teacher.logits;
    tape.backward(kl_divergence(t_logits, student.logits, 1.0f));
    auto g = snapshot_grads(net);
    tape.reset();
    return g;
  };
  const auto g_live = run(false);
  const auto g_detached = run(true);
  REQUIRE(g_live.size() == g_detached.size());
  for (const auto& [name, gl] : g_live) {
    const auto& gd = g_detached.at(name);
    for (size_t i = 0; i < gl.size(); ++i) REQUIRE(gl[i] == gd[i]);
  }
}

TEST_CASE("identical teacher and student configs give zero distillation loss") {
  TapeReset tr;
  TrainRecipe recipe;
  recipe.distill_strategy = DistillStrategy::both_random;
  auto net = build_resnet_tiny(toy_cfg());
  Tensor x = randn({4, 1, 8, 8}, 19);
  std::vector<int> y{0, 1, 2, 0};
  Optimizer opt(recipe, net.params());
  auto cfg = SkipConfig::parse("TF");
  StepReport rep = train_step_with_configs(net, x, y, recipe, opt, 0.01f, cfg, cfg);
  CHECK(rep.loss_base == 0.0f);
}

TEST_CASE("norm statistics route to the pass's own mode only") {
  TapeReset tr;
  auto net = build_resnet_tiny(toy_cfg());

  auto collect_stats = [&](int set) {
    StateSnap snap;
    for (auto& p : net.params()) {
      if (p.norm_set == set && !p.trainable)
        snap[p.name] = std::vector<float>(p.tensor.data(), p.tensor.data() + p.tensor.numel());
    }
    return snap;
  };
  auto skippable_stats = [&]() {
    StateSnap snap;
    for (auto& p : net.params())
      if (p.in_skippable && !p.trainable)
        snap[p.name] = std::vector<float>(p.tensor.data(), p.tensor.data() + p.tensor.numel());
    return snap;
  };
  auto equal = [](const StateSnap& a, const StateSnap& b) {
    for (const auto& [k, v] : a)
      if (b.at(k) != v) return false;
    return true;
  };

  Tensor x = randn({4, 1, 8, 8}, 23);
  const auto set0_before = collect_stats(0);
  const auto set1_before = collect_stats(1);

  net.forward(x, SkipConfig::none(2), true);  // teacher pass: mode 0
  CHECK(!equal(collect_stats(0), set0_before));
  CHECK(equal(collect_stats(1), set1_before));  // bitwise untouched

  const auto set0_mid = collect_stats(0);
  const auto skip_mid = skippable_stats();
  net.forward(x, SkipConfig::all(2), true);  // student pass: mode 1
  CHECK(equal(collect_stats(0), set0_mid));
  CHECK(!equal(collect_stats(1), set1_before));
  CHECK(equal(skippable_stats(), skip_mid));  // skipped blocks never ran
}

TEST_CASE("composite step gradient matches finite differences on a 2-stage toy") {
  TapeReset tr;
  auto net = build_resnet_tiny(toy_cfg());
  Tensor x = randn({2, 1, 8, 8}, 29);
  std::vector<int> y{1, 2};
  auto& tape = Tape::active();

  Tensor stem_w;
  for (auto& p : net.params())
    if (p.name == "stem.conv.weight") stem_w = p.tensor;
  REQUIRE(stem_w.defined());

  // the KL teacher is a constant of the step, so the finite-difference
  // composite must hold it at the base-point values
  Tensor teacher_frozen;
  {
    NoGradGuard ng;
    teacher_frozen = net.forward(x, SkipConfig::none(2), true).logits.clone();
  }
  auto loss_value = [&]() {
    auto teacher = net.forward(x, SkipConfig::none(2), true);
    Tensor ls = cross_entropy(teacher.logits, y);
    auto student = net.forward(x, SkipConfig::all(2), true);
    Tensor lb = kl_divergence(teacher_frozen, student.logits, 1.0f);
    return static_cast<double>(ls.item()) + static_cast<double>(lb.item());
  };

  // analytic gradient via the two-backward path of Algorithm 1
  tape.reset();
  for (auto& p : net.params()) p.tensor.zero_grad();
  auto teacher = net.forward(x, SkipConfig::none(2), true);
  tape.backward(cross_entropy(teacher.logits, y));
  auto student = net.forward(x, SkipConfig::all(2), true);
  tape.backward(kl_divergence(teacher.logits, student.logits, 1.0f));
  const std::vector<float> analytic = stem_w.grad();
  tape.reset();

  NoGradGuard ng;
  // eps balances the f32 noise floor (~1/eps) against local curvature of the
  // batch-norm composite (~eps); 3e-4 sits in the valley for this toy
  const float eps = 3e-4f;
  double max_err = 0.0;
  for (int64_t i = 0; i < stem_w.numel(); ++i) {
    const float keep = stem_w.data()[i];
    stem_w.data()[i] = keep + eps;
    const double fp = loss_value();
    stem_w.data()[i] = keep - eps;
    const double fm = loss_value();
    stem_w.data()[i] = keep;
    const double fd = (fp - fm) / (2.0 * eps);
    const double an = analytic[static_cast<size_t>(i)];
    max_err = std::max(max_err,
                       std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)}));
  }
  CHECK(max_err < 1e-3);
}

TEST_CASE("train_step runs exactly two forwards and two backwards") {
  TapeReset tr;
  TrainRecipe recipe;
  auto net = build_resnet_tiny(toy_cfg());
  Optimizer opt(recipe, net.params());
  Tensor x = randn({4, 1, 8, 8}, 31);
  std::vector<int> y{0, 1, 2, 1};
  std::mt19937 rng(1);

  const uint64_t f0 = net.forward_calls();
  const uint64_t b0 = Tape::active().backward_calls();
  for (int i = 0; i < 3; ++i) train_step(net, x, y, recipe, opt, 0.01f, rng);
  CHECK(net.forward_calls() - f0 == 6);             // 2 per step
  CHECK(Tape::active().backward_calls() - b0 == 6);  // 2 per step

  TrainRecipe vanilla = recipe;
  vanilla.distill_strategy = DistillStrategy::vanilla;
  auto plain_cfg = toy_cfg();
  plain_cfg.skip_aware_norms = false;
  auto twin = build_resnet_tiny(plain_cfg);
  Optimizer opt2(vanilla, twin.params());
  const uint64_t f1 = twin.forward_calls();
  const uint64_t b1 = Tape::active().backward_calls();
  train_step(twin, x, y, vanilla, opt2, 0.01f, rng);
  CHECK(twin.forward_calls() - f1 == 1);
  CHECK(Tape::active().backward_calls() - b1 == 1);

  CHECK_THROWS_AS(train_step(net, x, {}, recipe, opt, 0.01f, rng), ValueError);
}

TEST_CASE("train: identical seeds produce bit-identical checkpoints and logs") {
  TapeReset tr;
  auto data = data::synthetic_shapes(96, 4, 16, 77);
  auto [train_set, val_set] = data::split_train_val(data, 1);

  auto run = [&](const std::filesystem::path& dir) {
    ResnetTinyConfig cfg;
    cfg.stage_blocks = {2, 2};
    cfg.widths = {4, 8};
    cfg.in_channels = 1;
    cfg.image_hw = 16;
    cfg.num_classes = 4;
    cfg.seed = 40;
    auto net = build_resnet_tiny(cfg);
    TrainRecipe recipe;
    recipe.epochs = 2;
    recipe.batch_size = 16;
    recipe.seed = 40;
    recipe.warmup_epochs = 1;
    TrainOptions opts;
    opts.out_dir = dir;
    opts.log_every = 2;
    opts.eval_subset = 0;
    return train(net, train_set, val_set, recipe, opts);
  };
  const auto base = std::filesystem::temp_directory_path() / "adn_det_test";
  std::filesystem::remove_all(base);
  auto r1 = run(base / "one");
  auto r2 = run(base / "two");
  REQUIRE(!r1.aborted_nan);
  REQUIRE(r1.epochs.size() == 2);
  CHECK(file_bytes(r1.checkpoint_path) == file_bytes(r2.checkpoint_path));
  // CSVs equal except the wall-clock column
  CHECK(strip_wall_ms(r1.log_path) == strip_wall_ms(r2.log_path));
  CHECK(r1.epochs.back().acc_super == r2.epochs.back().acc_super);
}

TEST_CASE("train: super-net loss decreases on separable synthetic data") {
  TapeReset tr;
  auto data = data::synthetic_shapes(256, 4, 28, 99, 12.0f);
  auto net = build_resnet_tiny(micro_cfg());
  TrainRecipe recipe;
  recipe.batch_size = 16;
  recipe.seed = 7;
  recipe.lr = 0.05f;
  recipe.epochs = 13;  // ~200 steps of 16 on 256 samples
  recipe.warmup_epochs = 1;
  Optimizer opt(recipe, net.params());
  std::mt19937 strat = make_rng(7, 1);
  std::mt19937 order_rng = make_rng(7, 2);
  auto norm = data::compute_channel_stats(data);
  std::vector<int64_t> idx(static_cast<size_t>(data.n));
  std::iota(idx.begin(), idx.end(), 0);

  double first = 0.0, last = 0.0;
  int step = 0;
  const int total_steps = 200;
  for (int epoch = 0; step < total_steps; ++epoch) {
    std::shuffle(idx.begin(), idx.end(), order_rng);
    for (int64_t start = 0; start + 16 <= data.n && step < total_steps; start += 16) {
      std::vector<int64_t> batch_idx(idx.begin() + start, idx.begin() + start + 16);
      std::vector<int> y;
      Tensor x = data::normalize(data::gather_batch(data, batch_idx, &y), norm);
      const float lr = cosine_lr(step, total_steps, recipe.lr, 20);
      auto rep = train_step(net, x, y, recipe, opt, lr, strat);
      if (step < 20) first += rep.loss_super / 20.0;
      if (step >= total_steps - 20) last += rep.loss_super / 20.0;
      ++step;
    }
  }
  CHECK(last < first);
  CHECK(last < 0.5 * first);
}

TEST_CASE("tiny resnet reaches >95% on a 2-class low-noise synthetic set within 300 steps") {
  TapeReset tr;
  auto data = data::synthetic_shapes(320, 2, 28, 123, 8.0f);
  auto [train_set, val_set] = data::split_train_val(data, 5);
  auto cfg = micro_cfg();
  cfg.num_classes = 2;
  auto net = build_resnet_tiny(cfg);
  TrainRecipe recipe;
  recipe.batch_size = 16;
  recipe.seed = 11;
  recipe.lr = 0.05f;
  Optimizer opt(recipe, net.params());
  std::mt19937 strat = make_rng(11, 1);
  std::mt19937 order_rng = make_rng(11, 2);
  auto norm = data::compute_channel_stats(train_set);
  std::vector<int64_t> idx(static_cast<size_t>(train_set.n));
  std::iota(idx.begin(), idx.end(), 0);
  int step = 0;
  for (int epoch = 0; step < 300; ++epoch) {
    std::shuffle(idx.begin(), idx.end(), order_rng);
    for (int64_t start = 0; start + 16 <= train_set.n && step < 300; start += 16) {
      std::vector<int64_t> batch_idx(idx.begin() + start, idx.begin() + start + 16);
      std::vector<int> y;
      Tensor x = data::normalize(data::gather_batch(train_set, batch_idx, &y), norm);
      train_step(net, x, y, recipe, opt, cosine_lr(step, 300, recipe.lr, 20), strat);
      ++step;
    }
  }
  const double acc = evaluate(net, SkipConfig::none(4), val_set, norm);
  CHECK(acc > 0.95);
}

TEST_CASE("train: a non-finite loss aborts and keeps the last checkpoint") {
  TapeReset tr;
  auto data = data::synthetic_shapes(64, 4, 16, 55);
  auto [train_set, val_set] = data::split_train_val(data, 2);
  ResnetTinyConfig cfg;
  cfg.stage_blocks = {2, 2};
  cfg.widths = {4, 8};
  cfg.in_channels = 1;
  cfg.image_hw = 16;
  cfg.num_classes = 4;
  auto net = build_resnet_tiny(cfg);
  TrainRecipe recipe;
  recipe.epochs = 3;
  recipe.batch_size = 16;
  recipe.lr = 1e15f;  // guaranteed blow-up
  recipe.warmup_epochs = 0;
  TrainOptions opts;
  opts.out_dir = std::filesystem::temp_directory_path() / "adn_nan_test";
  opts.eval_subset = 0;
  auto result = train(net, train_set, val_set, recipe, opts);
  CHECK(result.aborted_nan);
}

TEST_CASE("vit: a few training steps reduce the loss") {
  TapeReset tr;
  auto data = data::synthetic_shapes(128, 4, 28, 31, 12.0f);
  VitTinyConfig cfg;
  cfg.num_classes = 4;
  auto net = build_vit_tiny(cfg);
  TrainRecipe recipe;
  recipe.optimizer = OptimizerKind::adamw;
  recipe.lr = 1e-3f;
  recipe.weight_decay = 0.01f;
  recipe.batch_size = 16;
  Optimizer opt(recipe, net.params());
  std::mt19937 strat = make_rng(3, 1);
  auto norm = data::compute_channel_stats(data);
  double first = 0.0, last = 0.0;
  for (int step = 0; step < 60; ++step) {
    std::vector<int64_t> batch_idx;
    for (int64_t i = 0; i < 16; ++i) batch_idx.push_back((step * 16 + i) % data.n);
    std::vector<int> y;
    Tensor x = data::normalize(data::gather_batch(data, batch_idx, &y), norm);
    auto rep = train_step(net, x, y, recipe, opt, recipe.lr, strat);
    if (step < 10) first += rep.loss_super / 10.0;
    if (step >= 50) last += rep.loss_super / 10.0;
  }
  CHECK(last < first);
}
