#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "faults.hpp"
#include "lct/accounting.hpp"
#include "lct/analysis.hpp"
#include "lct/cli.hpp"

using namespace lct;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result lct_run(const std::vector<std::string>& args, const cli::Hooks& hooks = {}) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err, hooks);
  return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / "lct_cli" / name;
  fs::remove_all(d);
  fs::create_directories(d.parent_path());
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path write_config(const std::string& name, const std::string& text) {
  const auto p = fs::temp_directory_path() / "lct_cli" / name;
  fs::create_directories(p.parent_path());
  std::ofstream(p) << text;
  return p;
}

// A few images and one epoch: enough to exercise the plumbing.
const char* kQuickTrain =
    "# quick run\n"
    "data.synth_n = 20\n"
    "data.synth_val_n = 10\n"
    "train.epochs = 2\n"
    "train.batch_size = 10   # trailing comment\n";

}  // namespace

TEST_CASE("config parsing") {
  const auto s = cli::parse_config("net.preset = resnet50\n\n# c\nattention.kind=lct\n", "t");
  CHECK(s.at("net.preset") == "resnet50");
  CHECK(s.at("attention.kind") == "lct");
  CHECK_THROWS_WITH_AS(cli::parse_config("train.lr = 1\n", "t"), doctest::Contains("t:1: unknown key 'train.lr'"),
                       ConfigError);
  CHECK_THROWS_AS(cli::parse_config("seed = 1\nseed = 2\n", "t"), ConfigError);
  CHECK_THROWS_AS(cli::parse_config("seed 1\n", "t"), ConfigError);

  const auto c = cli::resolve(cli::parse_config(
      "net.stages = 1x8:basic:1, 2x16:bottleneck:2\ntrain.schedule = 3:0.1, 4:0.01\nseed = 9\n", "t"));
  REQUIRE(c.spec.stages.size() == 2);
  CHECK(c.spec.stages[1].kind == BlockKind::bottleneck);
  CHECK(c.spec.stages[1].blocks == 2);
  CHECK(c.train.schedule.size() == 2);
  CHECK(c.synth_seed == 9);
  CHECK(c.train.seed == 9);
  CHECK_THROWS_AS(cli::resolve({{"attention.groups", "-3"}}), ConfigError);
  CHECK_THROWS_AS(cli::resolve({{"train.batch_size", "0"}}), ConfigError);
  CHECK_THROWS_AS(cli::resolve({{"net.preset", "vgg"}}), ConfigError);
}

TEST_CASE("flags: help lists every flag, unknown flags fail") {
  const auto help = lct_run({"train", "--help"});
  CHECK(help.code == 0);
  for (const char* f : {"--config", "--preset", "--attention", "--groups", "--reduction", "--init", "--skip-normalize",
                        "--skip-transform", "--seed", "--out", "--checkpoint", "--data", "--scope"}) {
    CHECK_MESSAGE(help.out.find(f) != std::string::npos, f);
  }
  CHECK(lct_run({"count", "--frobnicate"}).code == cli::kConfig);
  CHECK(lct_run({"count", "--attention", "cbam"}).code == cli::kConfig);
  CHECK(lct_run({}).code == cli::kConfig);
  const auto bad = write_config("bad.cfg", "attention.kind = lct\nmystery = 1\n");
  const auto r = lct_run({"count", "--config", bad.string()});
  CHECK(r.code == cli::kConfig);
  CHECK(r.err.find("mystery") != std::string::npos);
}

TEST_CASE("count presets") {
  const auto base = lct_run({"count", "--preset", "resnet50", "--attention", "none"});
  CHECK(base.code == 0);
  CHECK(base.out.find("total                             25557032") != std::string::npos);
  CHECK(base.out.find("params 25.557M") != std::string::npos);
  const auto r101 = lct_run({"count", "--preset", "resnet101", "--attention", "lct"});
  CHECK(r101.out.find("attention delta: +65024 params") != std::string::npos);
  CHECK(lct_run({"count", "--preset", "resnet-mini", "--attention", "lct", "--groups", "3"}).code == cli::kConfig);

  const auto dir = fresh_dir("count");
  CHECK(lct_run({"count", "--preset", "resnet50", "--attention", "se", "--out", dir.string()}).code == 0);
  CHECK(slurp(dir / "cost.csv").rfind("name,params,macs\n", 0) == 0);
}

TEST_CASE("count of a toy spec matches the instantiated registry") {
  const auto cfg = write_config("toy.cfg",
                                "net.stem.channels = 8\nnet.stages = 1x8:basic:1, 1x16:bottleneck:2\n"
                                "net.num_classes = 5\nnet.input = 3x16x16\nattention.kind = se+\n"
                                "attention.groups = 2\nattention.reduction = 4\n");
  const auto r = lct_run({"count", "--config", cfg.string()});
  REQUIRE(r.code == 0);
  const auto c = cli::resolve(cli::load_config(cfg.string()));
  Rng rng(1);
  Network<float> net(c.spec, rng);
  const std::string total = std::to_string(net.registry().total_params());
  CHECK(r.out.find("total ") != std::string::npos);
  CHECK(r.out.find(" " + total + " ") != std::string::npos);
  CHECK(count_params(c.spec) == net.registry().total_params());
}

TEST_CASE("train: missing data, clamp warning, determinism, eval") {
  const auto missing = lct_run({"train", "--data", "/nonexistent/cifar.bin"});
  CHECK(missing.code == cli::kData);
  CHECK(missing.err.find("/nonexistent/cifar.bin") != std::string::npos);

  const auto cfg = write_config("quick.cfg", kQuickTrain);
  const auto a = fresh_dir("train_a"), b = fresh_dir("train_b");
  const auto ra = lct_run({"train", "--config", cfg.string(), "--attention", "lct", "--groups", "64", "--out", a.string()});
  REQUIRE(ra.code == 0);
  CHECK(ra.err.find("clamping G_eff to 16") != std::string::npos);
  const auto rb = lct_run({"train", "--config", cfg.string(), "--attention", "lct", "--groups", "64", "--out", b.string()});
  REQUIRE(rb.code == 0);
  CHECK(slurp(a / "train_log.csv") == slurp(b / "train_log.csv"));
  CHECK(slurp(a / "final.ckpt") == slurp(b / "final.ckpt"));
  CHECK(fs::exists(a / "best.ckpt"));
  CHECK(slurp(a / "train_log.csv").rfind("epoch,lr,train_loss,train_top1,val_top1,val_top5\n", 0) == 0);

  // Rerunning into the same directory rewrites identical bytes.
  const std::string before = slurp(a / "final.ckpt");
  REQUIRE(lct_run({"train", "--config", cfg.string(), "--attention", "lct", "--groups", "64", "--out", a.string()}).code == 0);
  CHECK(slurp(a / "final.ckpt") == before);

  const auto ev = lct_run({"eval", "--config", cfg.string(), "--attention", "lct", "--groups", "64", "--checkpoint",
                           (a / "final.ckpt").string()});
  CHECK(ev.code == 0);
  CHECK(ev.out.find("samples=10 top1=") != std::string::npos);

  const auto wrong = lct_run({"eval", "--config", cfg.string(), "--attention", "se", "--checkpoint",
                              (a / "final.ckpt").string()});
  CHECK(wrong.code == cli::kConfig);
  CHECK(wrong.err.find("first mismatching tensor") != std::string::npos);
  CHECK(lct_run({"eval", "--config", cfg.string()}).code == cli::kConfig);
}

TEST_CASE("train: divergence exits 4") {
  const auto cfg = write_config("hot.cfg", std::string(kQuickTrain) + "train.lr0 = 1e6\n");
  const auto r = lct_run({"train", "--config", cfg.string(), "--attention", "none", "--out", fresh_dir("hot").string()});
  CHECK(r.code == cli::kDiverged);
  CHECK(r.err.find("diverged") != std::string::npos);
}

TEST_CASE("analyze: fresh lct, none, selector, mismatch") {
  const auto cfg = write_config("an.cfg", "data.synth_n = 20\ndata.synth_val_n = 12\n");
  const auto dir = fresh_dir("an_lct");
  const auto r = lct_run({"analyze", "--config", cfg.string(), "--attention", "lct", "--out", dir.string()});
  REQUIRE(r.code == 0);
  std::size_t csvs = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() != ".csv") continue;
    ++csvs;
    const BlockStats s = parse_stats_csv(e.path());
    for (double a : s.attention) CHECK(std::abs(a - 0.731058579) < 1e-6);
  }
  CHECK(csvs == 3);

  const auto none = lct_run({"analyze", "--config", cfg.string(), "--attention", "none", "--out", fresh_dir("an_none").string()});
  CHECK(none.code == 0);
  CHECK(none.out.find("no attention blocks") != std::string::npos);

  // SE checkpoint analysed as LCT.
  const auto tcfg = write_config("an_train.cfg", kQuickTrain);
  const auto tdir = fresh_dir("an_train");
  REQUIRE(lct_run({"train", "--config", tcfg.string(), "--attention", "se", "--reduction", "4", "--out", tdir.string()}).code == 0);
  const auto bad = lct_run({"analyze", "--config", cfg.string(), "--attention", "lct", "--checkpoint",
                            (tdir / "final.ckpt").string(), "--out", fresh_dir("an_bad").string()});
  CHECK(bad.code == cli::kConfig);
  CHECK(bad.err.find("stage1.block1.attn") != std::string::npos);
  const auto ok = lct_run({"analyze", "--config", cfg.string(), "--attention", "se", "--reduction", "4", "--checkpoint",
                           (tdir / "final.ckpt").string(), "--out", fresh_dir("an_se").string()});
  CHECK(ok.code == 0);
  CHECK(lct_run({"analyze", "--checkpoint", "/nonexistent.ckpt"}).code == cli::kConfig);
}

TEST_CASE("gradcheck through the cli") {
  const auto layers = lct_run({"gradcheck", "--scope", "layers"});
  CHECK(layers.code == 0);
  const auto blocks = lct_run({"gradcheck", "--scope", "blocks"});
  CHECK(blocks.code == 0);
  std::size_t lines = 0;
  for (const char* u : {"se_block", "lct_block", "lct_block_skip_normalize", "lct_block_skip_transform",
                        "lct_block_skip_both", "se_plus_block"}) {
    lines += blocks.out.find(std::string(u) + " ") != std::string::npos;
  }
  CHECK(lines == 6);

  cli::Hooks hooks;
  hooks.gradcheck.layer_overrides["sigmoid"] = [] { return std::make_unique<faults::BrokenSigmoid>(); };
  const auto broken = lct_run({"gradcheck", "--scope", "layers"}, hooks);
  CHECK(broken.code == cli::kGradcheck);
  CHECK(broken.err.find("unit sigmoid") != std::string::npos);
  CHECK(lct_run({"gradcheck", "--scope", "everything"}).code == cli::kConfig);
}

TEST_CASE("LCT_THREADS is validated") {
  setenv("LCT_THREADS", "0", 1);
  CHECK(lct_run({"count"}).code == cli::kConfig);
  setenv("LCT_THREADS", "1", 1);
  CHECK(lct_run({"count"}).code == 0);
  unsetenv("LCT_THREADS");
}
