#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <set>

#include "adn/checkpoint.hpp"
#include "adn/network.hpp"

using namespace adn;

namespace {

Tensor randn(Shape shape, uint32_t seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> d(0.0f, 1.0f);
  Tensor t = Tensor::zeros(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = d(rng);
  return t;
}

ResnetTinyConfig micro_cfg() {
  ResnetTinyConfig cfg;
  cfg.stage_blocks = {2, 2, 2, 2};
  cfg.widths = {8, 16, 32, 64};
  cfg.in_channels = 1;
  cfg.image_hw = 16;
  cfg.num_classes = 4;
  cfg.seed = 5;
  return cfg;
}

struct TapeReset {
  TapeReset() { Tape::active().reset(); }
};

}  // namespace

TEST_CASE("skip config: parse, format, validation") {
  SkipConfig c = SkipConfig::parse("TFFT");
  CHECK(c.size() == 4);
  CHECK(c[0]);
  CHECK(!c[1]);
  CHECK(c.str() == "TFFT");
  CHECK(c.num_skips() == 2);
  CHECK_THROWS_AS(SkipConfig::parse("TFX"), ValueError);
  CHECK_THROWS_AS(SkipConfig::parse(""), ValueError);
}

TEST_CASE("enumerate_subnets: ordering matches the sub-network table") {
  auto one = enumerate_subnets(1);
  REQUIRE(one.size() == 2);
  CHECK(one[0].str() == "F");
  CHECK(one[1].str() == "T");

  auto all = enumerate_subnets(4);
  REQUIRE(all.size() == 16);
  CHECK(all.front().str() == "FFFF");
  CHECK(all.back().str() == "TTTT");
  // frozen expected order: groups of ascending skip count, earlier-stage
  // skips first within each group
  const std::vector<std::string> expected = {
      "FFFF", "TFFF", "FTFF", "FFTF", "FFFT", "TTFF", "TFTF", "TFFT",
      "FTTF", "FTFT", "FFTT", "TTTF", "TTFT", "TFTT", "FTTT", "TTTT"};
  for (size_t i = 0; i < expected.size(); ++i) CHECK(all[i].str() == expected[i]);

  // every config exactly once (set equality against the power set)
  std::set<std::string> seen;
  for (const auto& cfg : all) seen.insert(cfg.str());
  CHECK(seen.size() == 16);
  CHECK_THROWS_AS(enumerate_subnets(0), ValueError);
}

TEST_CASE("split_stage: ratio variants reproduce the reference tables") {
  using P = std::pair<int, int>;
  // default: ceil for mandatory
  CHECK(split_stage(3, MandatoryRatio::standard) == P{2, 1});
  CHECK(split_stage(4, MandatoryRatio::standard) == P{2, 2});
  CHECK(split_stage(6, MandatoryRatio::standard) == P{3, 3});
  CHECK(split_stage(2, MandatoryRatio::standard) == P{1, 1});
  // shorter mandatory sub-paths
  CHECK(split_stage(3, MandatoryRatio::more_skippable) == P{1, 2});
  CHECK(split_stage(4, MandatoryRatio::more_skippable) == P{1, 3});
  CHECK(split_stage(6, MandatoryRatio::more_skippable) == P{2, 4});
  // longer mandatory sub-paths
  CHECK(split_stage(3, MandatoryRatio::more_mandatory) == P{2, 1});
  CHECK(split_stage(4, MandatoryRatio::more_mandatory) == P{3, 1});
  CHECK(split_stage(6, MandatoryRatio::more_mandatory) == P{4, 2});
  CHECK_THROWS_AS(split_stage(0, MandatoryRatio::standard), ValueError);
}

TEST_CASE("resnet builder: reference splits and structure") {
  TapeReset tr;
  ResnetTinyConfig cfg;  // defaults: [3,4,6,3] at [16,32,64,128]
  auto net = build_resnet_tiny(cfg);
  REQUIRE(net.num_stages() == 4);
  const std::vector<std::pair<size_t, size_t>> expect = {{2, 1}, {2, 2}, {3, 3}, {2, 1}};
  for (int s = 0; s < 4; ++s) {
    CHECK(net.stages()[s].mandatory.size() == expect[s].first);
    CHECK(net.stages()[s].skippable.size() == expect[s].second);
    for (const auto& b : net.stages()[s].mandatory) CHECK(b->uses_switchable_norm);
    for (const auto& b : net.stages()[s].skippable) CHECK(!b->uses_switchable_norm);
    // downsampling blocks sit in the mandatory prefix
    if (s > 0) CHECK(net.stages()[s].mandatory[0]->downsampling);
    for (const auto& b : net.stages()[s].skippable) CHECK(!b->downsampling);
  }

  ResnetTinyConfig more_skip = cfg;
  more_skip.ratio = MandatoryRatio::more_skippable;
  auto net2 = build_resnet_tiny(more_skip);
  const std::vector<std::pair<size_t, size_t>> expect2 = {{1, 2}, {1, 3}, {2, 4}, {1, 2}};
  for (int s = 0; s < 4; ++s) {
    CHECK(net2.stages()[s].mandatory.size() == expect2[s].first);
    CHECK(net2.stages()[s].skippable.size() == expect2[s].second);
  }
}

TEST_CASE("vit builder: group splits and validation") {
  TapeReset tr;
  VitTinyConfig cfg;
  cfg.depth = 12;
  cfg.groups = 4;
  auto net = build_vit_tiny(cfg);
  REQUIRE(net.num_stages() == 4);
  for (int s = 0; s < 4; ++s) {
    CHECK(net.stages()[s].mandatory.size() == 2);
    CHECK(net.stages()[s].skippable.size() == 1);
  }

  VitTinyConfig two = cfg;
  two.last_two_skippable = true;
  auto net2 = build_vit_tiny(two);
  for (int s = 0; s < 4; ++s) {
    CHECK(net2.stages()[s].mandatory.size() == 1);
    CHECK(net2.stages()[s].skippable.size() == 2);
  }

  VitTinyConfig even;  // depth 8, groups 4
  auto net3 = build_vit_tiny(even);
  for (int s = 0; s < 4; ++s) {
    CHECK(net3.stages()[s].mandatory.size() == 1);
    CHECK(net3.stages()[s].skippable.size() == 1);
  }

  VitTinyConfig bad = even;
  bad.last_two_skippable = true;  // would leave 0 mandatory blocks
  CHECK_THROWS_AS(build_vit_tiny(bad), ValueError);
  bad = even;
  bad.depth = 10;
  CHECK_THROWS_AS(build_vit_tiny(bad), ValueError);
  bad = even;
  bad.patch = 5;  // 28 % 5 != 0
  CHECK_THROWS_AS(build_vit_tiny(bad), ValueError);
}

TEST_CASE("forward: every config produces fixed-shape logits and N_r features") {
  TapeReset tr;
  NoGradGuard ng;
  auto net = build_resnet_tiny(micro_cfg());
  Tensor x = randn({3, 1, 16, 16}, 1);
  for (const auto& cfg : enumerate_subnets(4)) {
    auto res = net.forward(x, cfg, false);
    CHECK(res.logits.shape() == Shape{3, 4});
    CHECK(res.stage_features.size() == 4);
  }
  CHECK_THROWS_AS(net.forward(x, SkipConfig::parse("TTF"), false), ShapeError);

  auto vit = build_vit_tiny(VitTinyConfig{});
  Tensor xi = randn({2, 1, 28, 28}, 2);
  for (const auto& cfg : enumerate_subnets(4)) {
    auto res = vit.forward(xi, cfg, false);
    CHECK(res.logits.shape() == Shape{2, 10});
    CHECK(res.stage_features.size() == 4);
  }
}

TEST_CASE("skip locality: earlier stage features are bit-identical") {
  TapeReset tr;
  NoGradGuard ng;
  auto net = build_resnet_tiny(micro_cfg());
  Tensor x = randn({2, 1, 16, 16}, 3);
  auto base = net.forward(x, SkipConfig::parse("FFFF"), false);
  auto flipped = net.forward(x, SkipConfig::parse("FFTF"), false);
  for (int s = 0; s < 2; ++s) {
    const Tensor& a = base.stage_features[s];
    const Tensor& b = flipped.stage_features[s];
    REQUIRE(a.shape() == b.shape());
    for (int64_t i = 0; i < a.numel(); ++i) REQUIRE(a.data()[i] == b.data()[i]);
  }
  // stage 2 onward differs
  bool differs = false;
  const Tensor& a2 = base.stage_features[2];
  const Tensor& b2 = flipped.stage_features[2];
  for (int64_t i = 0; i < a2.numel(); ++i) differs = differs || a2.data()[i] != b2.data()[i];
  CHECK(differs);
}

TEST_CASE("param sharing: one weight mutation reaches every config") {
  TapeReset tr;
  NoGradGuard ng;
  auto net = build_resnet_tiny(micro_cfg());
  Tensor x = randn({2, 1, 16, 16}, 4);
  auto before_f = net.forward(x, SkipConfig::none(4), false).logits;
  auto before_t = net.forward(x, SkipConfig::all(4), false).logits;
  // poke the stem through the registry
  for (auto& p : net.params())
    if (p.name == "stem.conv.weight") p.tensor.data()[0] += 0.5f;
  auto after_f = net.forward(x, SkipConfig::none(4), false).logits;
  auto after_t = net.forward(x, SkipConfig::all(4), false).logits;
  bool fc = false, tc = false;
  for (int64_t i = 0; i < before_f.numel(); ++i)
    fc = fc || before_f.data()[i] != after_f.data()[i];
  for (int64_t i = 0; i < before_t.numel(); ++i)
    tc = tc || before_t.data()[i] != after_t.data()[i];
  CHECK(fc);
  CHECK(tc);
}

TEST_CASE("structural identity: zeroed skippable branches + tied norm sets") {
  TapeReset tr;
  NoGradGuard ng;
  auto net = build_resnet_tiny(micro_cfg());
  // zero every skippable block's final norm scale/shift, so F_skippable == 0
  for (auto& stage : net.stages()) {
    for (auto& b : stage.skippable) {
      auto* blk = dynamic_cast<ResidualBlockCNN*>(b.get());
      REQUIRE(blk != nullptr);
      auto* bn2 = blk->n2.as_plain_bn();
      REQUIRE(bn2 != nullptr);
      std::fill(bn2->gamma.data(), bn2->gamma.data() + bn2->gamma.numel(), 0.0f);
      std::fill(bn2->beta.data(), bn2->beta.data() + bn2->beta.numel(), 0.0f);
    }
    // force both switchable sets identical (they start identical; mutate one
    // pair to prove the copy direction matters)
    for (auto& b : stage.mandatory) {
      auto* blk = dynamic_cast<ResidualBlockCNN*>(b.get());
      for (NormLayer* nl : {&blk->n1, &blk->n2}) {
        auto* sw = nl->as_switchable();
        REQUIRE(sw != nullptr);
        auto& src = sw->bn_set(0);
        auto& dst = sw->bn_set(1);
        std::copy(src.gamma.data(), src.gamma.data() + src.gamma.numel(), dst.gamma.data());
        std::copy(src.beta.data(), src.beta.data() + src.beta.numel(), dst.beta.data());
        std::copy(src.running_mean.data(), src.running_mean.data() + src.running_mean.numel(),
                  dst.running_mean.data());
        std::copy(src.running_var.data(), src.running_var.data() + src.running_var.numel(),
                  dst.running_var.data());
      }
      if (blk->proj_norm) {
        auto* sw = blk->proj_norm->as_switchable();
        auto& src = sw->bn_set(0);
        auto& dst = sw->bn_set(1);
        std::copy(src.gamma.data(), src.gamma.data() + src.gamma.numel(), dst.gamma.data());
        std::copy(src.beta.data(), src.beta.data() + src.beta.numel(), dst.beta.data());
        std::copy(src.running_mean.data(), src.running_mean.data() + src.running_mean.numel(),
                  dst.running_mean.data());
        std::copy(src.running_var.data(), src.running_var.data() + src.running_var.numel(),
                  dst.running_var.data());
      }
    }
  }
  Tensor x = randn({2, 1, 16, 16}, 6);
  auto super = net.forward(x, SkipConfig::none(4), false).logits;
  auto base = net.forward(x, SkipConfig::all(4), false).logits;
  for (int64_t i = 0; i < super.numel(); ++i) CHECK(super.data()[i] == base.data()[i]);
}

TEST_CASE("flops: subset monotonicity and exact additivity against the layer oracle") {
  TapeReset tr;
  ResnetTinyConfig cfg;  // reference model at 32x32
  auto net = build_resnet_tiny(cfg);

  // oracle: per-conv MACs out_ch*in_ch*9*spatial; each skippable block has
  // two out_ch->out_ch convs
  const int64_t spatial[4] = {32 * 32, 16 * 16, 8 * 8, 4 * 4};
  const int64_t widths[4] = {16, 32, 64, 128};
  const int64_t skippable_blocks[4] = {1, 2, 3, 1};
  uint64_t skip_cost[4];
  for (int s = 0; s < 4; ++s)
    skip_cost[s] = static_cast<uint64_t>(skippable_blocks[s]) * 2ull *
                   static_cast<uint64_t>(widths[s] * widths[s] * 9 * spatial[s]);

  const uint64_t full = net.flops(SkipConfig::none(4));
  CHECK(net.flops(SkipConfig::all(4)) < full);
  CHECK(full - net.flops(SkipConfig::parse("TFFF")) == skip_cost[0]);

  for (const auto& c : enumerate_subnets(4)) {
    uint64_t expect = full;
    for (int s = 0; s < 4; ++s)
      if (c[s]) expect -= skip_cost[s];
    CHECK(net.flops(c) == expect);  // zero tolerance
  }

  // non-increasing along the nested chain FFFF -> TFFF -> TTFF -> TTTF -> TTTT
  uint64_t prev = full;
  for (const auto& str : {"TFFF", "TTFF", "TTTF", "TTTT"}) {
    const uint64_t f = net.flops(SkipConfig::parse(str));
    CHECK(f < prev);
    prev = f;
  }
}

TEST_CASE("param_count: whole model dominates configs; norm overhead < 1%") {
  TapeReset tr;
  ResnetTinyConfig cfg;
  auto net = build_resnet_tiny(cfg);
  const uint64_t whole = net.param_count();
  for (const auto& c : enumerate_subnets(4)) CHECK(net.param_count(c) <= whole);

  uint64_t second_set = 0;
  for (const auto& p : net.params())
    if (p.trainable && p.norm_set == 1) second_set += static_cast<uint64_t>(p.tensor.numel());
  CHECK(second_set > 0);
  CHECK(static_cast<double>(second_set) / static_cast<double>(whole) < 0.01);
}

TEST_CASE("checkpoint: byte-deterministic round trip through a fresh network") {
  TapeReset tr;
  NoGradGuard ng;
  auto cfg = micro_cfg();
  auto net = build_resnet_tiny(cfg);
  Tensor x = randn({2, 1, 16, 16}, 7);
  auto logits = net.forward(x, SkipConfig::none(4), false).logits;

  const auto dir = std::filesystem::temp_directory_path() / "adn_ckpt_test";
  std::filesystem::create_directories(dir);
  const auto p1 = dir / "a.adnw";
  const auto p2 = dir / "b.adnw";
  write_checkpoint(p1, net.state_dict());
  write_checkpoint(p2, net.state_dict());
  // identical bytes across writes
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
  CHECK(b1.substr(0, 4) == "ADNW");

  auto other_cfg = cfg;
  other_cfg.seed = 999;  // different init, same architecture
  auto twin = build_resnet_tiny(other_cfg);
  twin.load_state_dict(read_checkpoint(p1));
  auto twin_logits = twin.forward(x, SkipConfig::none(4), false).logits;
  for (int64_t i = 0; i < logits.numel(); ++i)
    CHECK(twin_logits.data()[i] == logits.data()[i]);

  // registry names are unique and every one survives the round trip
  auto sd = read_checkpoint(p1);
  CHECK(sd.size() == net.state_dict().size());
}

TEST_CASE("checkpoint: malformed inputs are typed errors") {
  const auto dir = std::filesystem::temp_directory_path() / "adn_ckpt_test";
  std::filesystem::create_directories(dir);
  const auto bad = dir / "bad.adnw";
  {
    std::ofstream out(bad, std::ios::binary);
    out << "NOPE";
  }
  CHECK_THROWS_AS(read_checkpoint(bad), IoError);
  {
    std::ofstream out(bad, std::ios::binary);
    out << "ADNW";  // truncated after magic
  }
  CHECK_THROWS_AS(read_checkpoint(bad), IoError);
  CHECK_THROWS_AS(read_checkpoint(dir / "missing.adnw"), IoError);

  // load_state_dict with a missing tensor
  TapeReset tr;
  auto net = build_resnet_tiny(micro_cfg());
  std::map<std::string, Tensor> empty;
  CHECK_THROWS_AS(net.load_state_dict(empty), IoError);
}
