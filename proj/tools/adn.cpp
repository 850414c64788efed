// adn: adaptive depth networks at desk scale.
//
// Verbs: train, eval, profile, ablate, gradcheck. All randomness flows from
// --seed; reruns with the same effective config land in the same run-id
// directory and reproduce identical outputs (modulo wall-clock columns).

#include <CLI11.hpp>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "adn/checkpoint.hpp"
#include "adn/evaluate.hpp"
#include "adn/gradcheck.hpp"
#include "adn/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace adn;

namespace {

constexpr const char* kVersion = "0.1.0";

struct RunConfig {
  std::string model = "resnet_tiny";
  std::string dataset = "synthetic";
  std::string data_dir = "data";
  std::string out_dir = "runs";
  std::string ratio = "default";
  int epochs = -1;  // -1: dataset default (60 for cifar10, 20 otherwise)
  int batch_size = 128;
  std::string optimizer = "sgd_momentum";
  double lr = -1.0;  // -1: model default (0.1 sgd resnet, 1e-3 adamw vit)
  double momentum = 0.9;
  double weight_decay = -1.0;  // -1: model default
  std::string schedule = "cosine";
  int warmup_epochs = 5;
  double kl_temperature = 1.0;
  bool feature_kl = false;
  std::string distill_strategy = "ours";
  uint64_t seed = 0;
  int64_t synth_n = 4000;
  double synth_noise = 24.0;
  int synth_classes = 10;
  int log_every = 50;
  int64_t eval_subset = 2000;

  void resolve_defaults() {
    if (epochs < 0) epochs = dataset == "cifar10" ? 60 : 20;
    const bool is_vit = model == "vit_tiny";
    if (is_vit && optimizer == "sgd_momentum" && lr < 0) {
      optimizer = "adamw";
    }
    if (lr < 0) lr = optimizer == "adamw" ? 1e-3 : 0.1;
    if (weight_decay < 0) weight_decay = optimizer == "adamw" ? 0.05 : 5e-4;
  }

  int image_hw() const { return dataset == "cifar10" ? 32 : 28; }
  int in_channels() const { return dataset == "cifar10" ? 3 : 1; }
  int num_classes() const { return dataset == "synthetic" ? synth_classes : 10; }
  int crop_pad() const { return dataset == "cifar10" ? 4 : 2; }
  float hflip_prob() const { return dataset == "cifar10" ? 0.5f : 0.0f; }
};

TrainRecipe make_recipe(const RunConfig& cfg) {
  TrainRecipe r;
  r.epochs = cfg.epochs;
  r.batch_size = cfg.batch_size;
  r.optimizer = cfg.optimizer == "adamw" ? OptimizerKind::adamw : OptimizerKind::sgd_momentum;
  r.lr = static_cast<float>(cfg.lr);
  r.momentum = static_cast<float>(cfg.momentum);
  r.weight_decay = static_cast<float>(cfg.weight_decay);
  r.lr_schedule = cfg.schedule == "step" ? LrSchedule::step : LrSchedule::cosine;
  r.warmup_epochs = cfg.warmup_epochs;
  r.kl_temperature = static_cast<float>(cfg.kl_temperature);
  r.feature_kl = cfg.feature_kl;
  r.distill_strategy = parse_strategy(cfg.distill_strategy);
  r.seed = cfg.seed;
  return r;
}

AdaptiveDepthNetwork build_model(const std::string& model, const std::string& ratio,
                                 bool skip_aware, uint64_t seed, int num_classes,
                                 int in_channels, int image_hw) {
  if (model == "resnet_tiny") {
    ResnetTinyConfig cfg;
    cfg.num_classes = num_classes;
    cfg.in_channels = in_channels;
    cfg.image_hw = image_hw;
    cfg.ratio = parse_ratio(ratio);
    cfg.skip_aware_norms = skip_aware;
    cfg.seed = seed;
    return build_resnet_tiny(cfg);
  }
  if (model == "vit_tiny") {
    VitTinyConfig cfg;
    cfg.num_classes = num_classes;
    cfg.in_channels = in_channels;
    cfg.image_hw = image_hw;
    cfg.patch = image_hw % 7 == 0 ? 7 : 8;
    if (ratio == "more_skippable") {
      cfg.depth = 12;
      cfg.groups = 4;
      cfg.last_two_skippable = true;
    } else if (ratio == "more_mandatory") {
      throw ValueError("vit_tiny has no more_mandatory variant (default|more_skippable)");
    }
    cfg.skip_aware_norms = skip_aware;
    cfg.seed = seed;
    return build_vit_tiny(cfg);
  }
  throw ValueError("unknown model \"" + model + "\" (resnet_tiny|vit_tiny)");
}

struct DataPair {
  data::LabeledImageSet train;
  data::LabeledImageSet test;
};

DataPair load_dataset(const RunConfig& cfg) {
  DataPair d;
  if (cfg.dataset == "mnist") {
    const fs::path dir = cfg.data_dir;
    d.train = data::load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
    d.test = data::load_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte");
  } else if (cfg.dataset == "cifar10") {
    const fs::path dir = cfg.data_dir;
    std::vector<fs::path> batches;
    for (int i = 1; i <= 5; ++i) batches.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
    d.train = data::load_cifar10_binary(batches);
    d.test = data::load_cifar10_binary({dir / "test_batch.bin"});
  } else if (cfg.dataset == "synthetic") {
    auto all = data::synthetic_shapes(cfg.synth_n, cfg.synth_classes, cfg.image_hw(), cfg.seed,
                                      static_cast<float>(cfg.synth_noise));
    auto [tr, va] = data::split_train_val(all, cfg.seed);
    d.train = std::move(tr);
    d.test = std::move(va);
  } else {
    throw ValueError("unknown dataset \"" + cfg.dataset + "\" (mnist|cifar10|synthetic)");
  }
  d.train.split = "train";
  d.test.split = "test";
  return d;
}

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<uint8_t>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

json config_json(const RunConfig& cfg) {
  json j;
  j["model"] = cfg.model;
  j["dataset"] = cfg.dataset;
  j["data_dir"] = cfg.data_dir;
  j["ratio"] = cfg.ratio;
  j["num_classes"] = cfg.num_classes();
  j["in_channels"] = cfg.in_channels();
  j["image_hw"] = cfg.image_hw();
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["optimizer"] = cfg.optimizer;
  j["lr"] = cfg.lr;
  j["momentum"] = cfg.momentum;
  j["weight_decay"] = cfg.weight_decay;
  j["schedule"] = cfg.schedule;
  j["warmup_epochs"] = cfg.warmup_epochs;
  j["kl_temperature"] = cfg.kl_temperature;
  j["feature_kl"] = cfg.feature_kl;
  j["distill_strategy"] = cfg.distill_strategy;
  j["seed"] = cfg.seed;
  j["synth_n"] = cfg.synth_n;
  j["synth_noise"] = cfg.synth_noise;
  j["synth_classes"] = cfg.synth_classes;
  j["skip_aware_norms"] = cfg.distill_strategy != "vanilla";
  return j;
}

fs::path run_dir_for(const RunConfig& cfg, const std::string& command) {
  const std::string key = command + config_json(cfg).dump();
  char buf[32];
  std::snprintf(buf, sizeof buf, "run-%016" PRIx64, fnv1a(key));
  return fs::path(cfg.out_dir) / buf;
}

void write_manifest(const fs::path& dir, const RunConfig& cfg, const std::string& command,
                    const std::string& status) {
  json j;
  j["version"] = kVersion;
  j["command"] = command;
  j["status"] = status;
  j["config"] = config_json(cfg);
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  out << j.dump(2) << "\n";
}

int cmd_train(RunConfig cfg) {
  cfg.resolve_defaults();
  auto dataset = load_dataset(cfg);
  const bool skip_aware = cfg.distill_strategy != "vanilla";
  auto net = build_model(cfg.model, cfg.ratio, skip_aware, cfg.seed, cfg.num_classes(),
                         cfg.in_channels(), cfg.image_hw());
  const fs::path dir = run_dir_for(cfg, "train");
  fs::create_directories(dir);
  write_manifest(dir, cfg, "train", "running");

  TrainRecipe recipe = make_recipe(cfg);
  TrainOptions opts;
  opts.out_dir = dir;
  opts.log_every = cfg.log_every;
  opts.eval_subset = cfg.eval_subset;
  opts.crop_pad = cfg.crop_pad();
  opts.hflip_prob = cfg.hflip_prob();

  std::printf("training %s on %s (%lld train / %lld test), %d epochs, strategy %s\n",
              cfg.model.c_str(), cfg.dataset.c_str(), static_cast<long long>(dataset.train.n),
              static_cast<long long>(dataset.test.n), cfg.epochs, cfg.distill_strategy.c_str());
  auto result = train(net, dataset.train, dataset.test, recipe, opts);
  for (const auto& e : result.epochs)
    std::printf("epoch %3d  loss_super %.4f  loss_base %.4f  acc_super %.4f  acc_base %.4f\n",
                e.epoch, e.loss_super, e.loss_base, e.acc_super, e.acc_base);
  write_manifest(dir, cfg, "train", result.aborted_nan ? "aborted_nan" : "ok");
  std::printf("run dir: %s\n", dir.string().c_str());
  if (result.aborted_nan) {
    std::fprintf(stderr, "error: non-finite loss, training aborted (last checkpoint kept)\n");
    return 1;
  }
  return 0;
}

RunConfig config_from_manifest(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open manifest " + manifest_path.string());
  json j = json::parse(in);
  const auto& c = j.at("config");
  RunConfig cfg;
  cfg.model = c.at("model");
  cfg.dataset = c.at("dataset");
  cfg.data_dir = c.at("data_dir");
  cfg.ratio = c.at("ratio");
  cfg.epochs = c.at("epochs");
  cfg.batch_size = c.at("batch_size");
  cfg.optimizer = c.at("optimizer");
  cfg.lr = c.at("lr");
  cfg.momentum = c.at("momentum");
  cfg.weight_decay = c.at("weight_decay");
  cfg.schedule = c.at("schedule");
  cfg.warmup_epochs = c.at("warmup_epochs");
  cfg.kl_temperature = c.at("kl_temperature");
  cfg.feature_kl = c.at("feature_kl");
  cfg.distill_strategy = c.at("distill_strategy");
  cfg.seed = c.at("seed");
  cfg.synth_n = c.at("synth_n");
  cfg.synth_noise = c.at("synth_noise");
  cfg.synth_classes = c.at("synth_classes");
  return cfg;
}

struct LoadedModel {
  AdaptiveDepthNetwork net;
  data::Normalization norm;
  RunConfig cfg;
};

LoadedModel load_model(const fs::path& checkpoint, const std::string& data_dir_override) {
  const fs::path manifest = checkpoint.parent_path() / "manifest.json";
  RunConfig cfg = config_from_manifest(manifest);
  if (!data_dir_override.empty()) cfg.data_dir = data_dir_override;
  const bool skip_aware = cfg.distill_strategy != "vanilla";
  LoadedModel lm{build_model(cfg.model, cfg.ratio, skip_aware, cfg.seed, cfg.num_classes(),
                             cfg.in_channels(), cfg.image_hw()),
                 {}, cfg};
  auto sd = read_checkpoint(checkpoint);
  lm.net.load_state_dict(sd);
  const auto& mean = sd.at("data.mean");
  const auto& stdv = sd.at("data.std");
  lm.norm.mean.assign(mean.data(), mean.data() + mean.numel());
  lm.norm.std.assign(stdv.data(), stdv.data() + stdv.numel());
  return lm;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir, const std::string& skip,
             bool all) {
  auto lm = load_model(checkpoint, data_dir);
  auto dataset = load_dataset(lm.cfg);
  if (all) {
    auto records = pareto_report(evaluate_all(lm.net, dataset.test, lm.norm));
    const fs::path out = fs::path(checkpoint).parent_path() / "subnets.csv";
    write_subnets_csv(out, records);
    std::printf("%-8s %14s %12s %8s %s\n", "skip", "flops", "params", "top1", "pareto");
    for (const auto& r : records)
      std::printf("%-8s %14llu %12llu %8.4f %s\n", r.skip.c_str(),
                  static_cast<unsigned long long>(r.flops),
                  static_cast<unsigned long long>(r.params), r.top1, r.pareto ? "*" : "");
    std::printf("wrote %s\n", out.string().c_str());
    return 0;
  }
  SkipConfig cfg = SkipConfig::parse(skip);
  if (cfg.size() != lm.net.num_stages())
    throw ValueError("skip string \"" + skip + "\" has length " + std::to_string(cfg.size()) +
                     ", model has " + std::to_string(lm.net.num_stages()) + " stages");
  SubnetRecord r;
  r.skip = cfg.str();
  r.flops = lm.net.flops(cfg);
  r.params = lm.net.param_count(cfg);
  r.top1 = evaluate(lm.net, cfg, dataset.test, lm.norm);
  std::printf("%-8s %14llu %12llu %8.4f\n", r.skip.c_str(),
              static_cast<unsigned long long>(r.flops),
              static_cast<unsigned long long>(r.params), r.top1);
  return 0;
}

int cmd_profile(const std::string& checkpoint, const std::string& data_dir, int max_batches) {
  auto lm = load_model(checkpoint, data_dir);
  auto dataset = load_dataset(lm.cfg);
  auto rows = residual_profile(lm.net, SkipConfig::none(lm.net.num_stages()), dataset.test,
                               lm.norm, max_batches);
  const fs::path out = fs::path(checkpoint).parent_path() / "profile.csv";
  write_profile_csv(out, rows);
  double mand = 0.0, skip = 0.0;
  int nm = 0, ns = 0;
  std::printf("%-6s %-6s %-10s %s\n", "stage", "block", "skippable", "ratio");
  for (const auto& r : rows) {
    std::printf("%-6d %-6d %-10s %.4f\n", r.stage, r.block, r.skippable ? "yes" : "no", r.ratio);
    if (r.skippable) {
      skip += r.ratio;
      ++ns;
    } else {
      mand += r.ratio;
      ++nm;
    }
  }
  mand /= std::max(1, nm);
  skip /= std::max(1, ns);
  std::printf("mandatory_mean=%.4f skippable_mean=%.4f ratio=%.4f verdict=%s\n", mand, skip,
              skip / std::max(1e-12, mand), skip < mand ? "PASS" : "FAIL");
  std::printf("wrote %s\n", out.string().c_str());
  return 0;
}

int cmd_ablate(RunConfig cfg, const std::string& grid) {
  cfg.resolve_defaults();
  if (grid != "table3" && grid != "table4")
    throw ValueError("--grid must be table3 or table4");
  auto dataset = load_dataset(cfg);
  const fs::path dir = run_dir_for(cfg, "ablate-" + grid);
  fs::create_directories(dir);
  write_manifest(dir, cfg, "ablate-" + grid, "running");

  struct Row {
    std::string label;
    std::vector<double> accs;
  };
  std::vector<Row> rows;
  auto eval_configs = [&](AdaptiveDepthNetwork& net, const data::Normalization& norm,
                          const std::vector<std::string>& cfgs) {
    std::vector<double> out;
    for (const auto& s : cfgs)
      out.push_back(evaluate(net, SkipConfig::parse(s), dataset.test, norm));
    return out;
  };

  if (grid == "table3") {
    // {self-distillation off/on} x {skip-aware norms off/on}
    for (const bool distill : {false, true}) {
      for (const bool norms : {false, true}) {
        RunConfig rc = cfg;
        rc.distill_strategy = distill ? "ours" : "none";
        auto net = build_model(rc.model, rc.ratio, norms, rc.seed, rc.num_classes(),
                               rc.in_channels(), rc.image_hw());
        TrainRecipe recipe = make_recipe(rc);
        TrainOptions opts;
        opts.crop_pad = rc.crop_pad();
        opts.hflip_prob = rc.hflip_prob();
        opts.eval_subset = rc.eval_subset;
        auto result = train(net, dataset.train, dataset.test, recipe, opts);
        if (result.aborted_nan) throw ValueError("ablation run diverged");
        Row row;
        row.label = std::string(distill ? "distill" : "nodistill") + "+" +
                    (norms ? "skipaware" : "sharednorm");
        row.accs = eval_configs(net, result.norm, {"FFFF", "TTTT"});
        rows.push_back(std::move(row));
        std::printf("%-24s FFFF %.4f  TTTT %.4f\n", rows.back().label.c_str(),
                    rows.back().accs[0], rows.back().accs[1]);
      }
    }
    std::ofstream out(dir / "ablate_table3.csv", std::ios::trunc);
    out << "config,acc_ffff,acc_tttt\n";
    for (const auto& r : rows) {
      char line[128];
      std::snprintf(line, sizeof line, "%s,%.6f,%.6f\n", r.label.c_str(), r.accs[0], r.accs[1]);
      out << line;
    }
  } else {
    const std::vector<std::pair<std::string, std::string>> strategies = {
        {"FFFF/TTTT", "ours"},
        {"FFFF/Random", "student_random"},
        {"Random/TTTT", "teacher_random"},
        {"Random/Random", "both_random"}};
    const std::vector<std::string> nested = {"FFFF", "TFFF", "TTFF", "TTTF", "TTTT"};
    for (const auto& [label, strat] : strategies) {
      RunConfig rc = cfg;
      rc.distill_strategy = strat;
      auto net = build_model(rc.model, rc.ratio, true, rc.seed, rc.num_classes(),
                             rc.in_channels(), rc.image_hw());
      TrainRecipe recipe = make_recipe(rc);
      TrainOptions opts;
      opts.crop_pad = rc.crop_pad();
      opts.hflip_prob = rc.hflip_prob();
      opts.eval_subset = rc.eval_subset;
      auto result = train(net, dataset.train, dataset.test, recipe, opts);
      if (result.aborted_nan) throw ValueError("ablation run diverged");
      Row row;
      row.label = label;
      row.accs = eval_configs(net, result.norm, nested);
      rows.push_back(std::move(row));
      std::printf("%-16s", label.c_str());
      for (double a : rows.back().accs) std::printf("  %.4f", a);
      std::printf("\n");
    }
    std::ofstream out(dir / "ablate_table4.csv", std::ios::trunc);
    out << "teacher_student,acc_ffff,acc_tfff,acc_ttff,acc_tttf,acc_tttt\n";
    for (const auto& r : rows) {
      char line[192];
      std::snprintf(line, sizeof line, "%s,%.6f,%.6f,%.6f,%.6f,%.6f\n", r.label.c_str(),
                    r.accs[0], r.accs[1], r.accs[2], r.accs[3], r.accs[4]);
      out << line;
    }
  }
  write_manifest(dir, cfg, "ablate-" + grid, "ok");
  std::printf("run dir: %s\n", dir.string().c_str());
  return 0;
}

int cmd_gradcheck(const std::string& fault_op) {
  auto report = run_gradcheck_suite(fault_op);
  for (const auto& c : report.cases)
    std::printf("%-22s max_rel_err %.3e  %s\n", c.name.c_str(), c.max_rel_err,
                c.pass ? "ok" : "FAIL");
  if (!report.all_pass) {
    for (const auto& c : report.cases)
      if (!c.pass) std::fprintf(stderr, "gradcheck failed: %s\n", c.name.c_str());
    return 1;
  }
  std::printf("all %zu cases below %.0e\n", report.cases.size(), report.threshold);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adaptive depth networks: two-pass self-distillation over skippable sub-paths"};
  app.set_version_flag("--version", kVersion);
  app.set_config("--config", "", "flat key=value config file; flags override file values");
  app.require_subcommand(1);

  RunConfig cfg;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--model", cfg.model)->check(CLI::IsMember({"resnet_tiny", "vit_tiny"}));
    sub->add_option("--dataset", cfg.dataset)
        ->check(CLI::IsMember({"mnist", "cifar10", "synthetic"}));
    sub->add_option("--data-dir", cfg.data_dir);
    sub->add_option("--out-dir", cfg.out_dir);
    sub->add_option("--epochs", cfg.epochs);
    sub->add_option("--batch-size", cfg.batch_size);
    sub->add_option("--lr", cfg.lr);
    sub->add_option("--momentum", cfg.momentum);
    sub->add_option("--weight-decay", cfg.weight_decay);
    sub->add_option("--optimizer", cfg.optimizer)
        ->check(CLI::IsMember({"sgd_momentum", "adamw"}));
    sub->add_option("--schedule", cfg.schedule)->check(CLI::IsMember({"cosine", "step"}));
    sub->add_option("--warmup-epochs", cfg.warmup_epochs);
    sub->add_option("--seed", cfg.seed);
    sub->add_option("--distill-strategy", cfg.distill_strategy)
        ->check(CLI::IsMember(
            {"ours", "teacher_random", "student_random", "both_random", "none", "vanilla"}));
    sub->add_flag("--feature-kl", cfg.feature_kl);
    sub->add_option("--kl-temperature", cfg.kl_temperature);
    sub->add_option("--ratio", cfg.ratio)
        ->check(CLI::IsMember({"default", "more_skippable", "more_mandatory"}));
    sub->add_option("--synth-n", cfg.synth_n);
    sub->add_option("--synth-noise", cfg.synth_noise);
    sub->add_option("--synth-classes", cfg.synth_classes);
    sub->add_option("--log-every", cfg.log_every);
    sub->add_option("--eval-subset", cfg.eval_subset);
  };

  auto* train_cmd = app.add_subcommand("train", "train a model (Algorithm-1 style by default)");
  add_common(train_cmd);

  auto* eval_cmd = app.add_subcommand("eval", "evaluate sub-networks of a checkpoint");
  std::string checkpoint, skip_str, eval_data_dir;
  bool eval_all = false;
  eval_cmd->add_option("--checkpoint", checkpoint)->required();
  eval_cmd->add_option("--skip", skip_str, "skip string, e.g. TFFF");
  eval_cmd->add_flag("--all", eval_all, "evaluate all 2^N_r sub-networks");
  eval_cmd->add_option("--data-dir", eval_data_dir);

  auto* profile_cmd = app.add_subcommand("profile", "residual magnitude profile (||F(h)||/||h||)");
  int max_batches = 8;
  profile_cmd->add_option("--checkpoint", checkpoint)->required();
  profile_cmd->add_option("--data-dir", eval_data_dir);
  profile_cmd->add_option("--max-batches", max_batches);

  auto* ablate_cmd = app.add_subcommand("ablate", "component / strategy ablation grids");
  std::string grid;
  ablate_cmd->add_option("--grid", grid, "table3 (components) or table4 (strategies)")
      ->required()
      ->check(CLI::IsMember({"table3", "table4"}));
  add_common(ablate_cmd);

  auto* gradcheck_cmd =
      app.add_subcommand("gradcheck", "finite-difference check of every primitive");
  std::string fault_op;
  gradcheck_cmd->add_option("--self-test-fault", fault_op)->group("");  // hidden

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(cfg);
    if (eval_cmd->parsed()) {
      if (!eval_all && skip_str.empty()) {
        std::fprintf(stderr, "eval: pass --skip STR or --all\n");
        return 2;
      }
      return cmd_eval(checkpoint, eval_data_dir, skip_str, eval_all);
    }
    if (profile_cmd->parsed()) return cmd_profile(checkpoint, eval_data_dir, max_batches);
    if (ablate_cmd->parsed()) return cmd_ablate(cfg, grid);
    if (gradcheck_cmd->parsed()) return cmd_gradcheck(fault_op);
  } catch (const ValueError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
