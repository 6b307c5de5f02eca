#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "lct/analysis.hpp"
#include "oracles.hpp"

using namespace lct;
namespace fs = std::filesystem;

namespace {

NetworkSpec small(AttentionKind kind) {
  NetworkSpec s;
  s.stem = {8, 3, 2, 0, 0};
  s.stages = {{2, 8, BlockKind::basic, 1}, {1, 16, BlockKind::basic, 2}};
  s.attention.kind = kind;
  s.attention.groups = 4;
  s.attention.reduction = 4;
  s.num_classes = 10;
  return s;
}

const double kSigma1 = 1 / (1 + std::exp(-1.0));

fs::path outdir(const std::string& name) {
  const auto d = fs::temp_directory_path() / "lct_unit" / name;
  fs::remove_all(d);
  return d;
}

}  // namespace

TEST_CASE("spearman examples and ties") {
  CHECK(*spearman({1, 2, 3}, {1, 2, 3}) == doctest::Approx(1));
  CHECK(*spearman({1, 2, 3}, {3, 2, 1}) == doctest::Approx(-1));
  CHECK(!spearman({1, 1, 1}, {1, 2, 3}).has_value());
  CHECK(!spearman({1, 2, 3}, {5, 5, 5}).has_value());
  CHECK_THROWS_AS(spearman({1, 2}, {1, 2}), ShapeError);
  // Ties take the average rank.
  CHECK(*spearman({1, 2, 2, 3}, {1, 2, 3, 4}) == doctest::Approx(oracle::spearman({1, 2, 2, 3}, {1, 2, 3, 4})));
}

TEST_CASE("spearman against rank-then-pearson on random vectors") {
  Rng rng(21);
  double worst = 0;
  for (int t = 0; t < 120; ++t) {
    std::vector<double> x(50), y(50);
    for (std::size_t i = 0; i < 50; ++i) {
      // Coarse values so that ties occur.
      x[i] = t % 2 ? std::round(rng.uniform(0, 10)) : rng.normal();
      y[i] = 0.3 * x[i] + rng.normal();
    }
    worst = std::max(worst, std::abs(*spearman(x, y) - oracle::spearman(x, y)));
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("selector parsing") {
  CHECK(BlockSelector::parse("all").mode == BlockSelector::Mode::all);
  CHECK(BlockSelector::parse("first-of-each-stage").matches(3, 1));
  CHECK(!BlockSelector::parse("first-of-each-stage").matches(3, 2));
  const auto one = BlockSelector::parse("stage2.block1");
  CHECK(one.matches(2, 1));
  CHECK(!one.matches(1, 1));
  CHECK(BlockSelector::parse("1.2").matches(1, 2));
  CHECK_THROWS_AS(BlockSelector::parse("first"), ConfigError);
}

TEST_CASE("one sample: means are that sample's values") {
  Rng init(1);
  Network<double> net(small(AttentionKind::se), init);
  const Dataset d = synth_dataset(1, 10, 10);
  Dataset one = d;
  one.images = TensorF(Shape{1, 3, 32, 32}, {d.images.values().begin(), d.images.values().begin() + 3072});
  one.labels = {d.labels[0]};
  const auto stats = collect(net, one, BlockSelector::parse("2.1"));
  REQUIRE(stats.size() == 1);
  // collect switches recording off again; replay the sample by hand.
  auto* blk = net.attention_points()[2].block_ptr;
  blk->set_recording(true);
  net.forward(one.images.cast<double>(), Mode::infer);
  const auto& r = *blk->record();
  for (std::size_t k = 0; k < 16; ++k) {
    CHECK(stats[0].ctx_before[k] == r.ctx_before[k]);
    CHECK(stats[0].attention[k] == r.attention[k]);
    CHECK(stats[0].ctx_after[k] == r.ctx_after[k]);
  }
}

TEST_CASE("two samples against a two-pass mean") {
  Rng init(2);
  Network<double> net(small(AttentionKind::lct), init);
  const Dataset d = synth_dataset(3, 10, 10);
  Dataset two = d;
  two.images = TensorF(Shape{2, 3, 32, 32}, {d.images.values().begin(), d.images.values().begin() + 2 * 3072});
  two.labels = {d.labels[0], d.labels[1]};
  const auto stats = collect(net, two, BlockSelector::parse("all"), 1);
  REQUIRE(stats.size() == 3);
  for (auto& p : net.attention_points()) p.block_ptr->set_recording(true);
  net.forward(two.images.cast<double>(), Mode::infer);
  double worst = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& r = *net.attention_points()[i].block_ptr->record();
    const std::size_t c = stats[i].channels();
    for (std::size_t k = 0; k < c; ++k) {
      double sum = 0;
      for (std::size_t n = 0; n < 2; ++n) sum += r.ctx_before[n * c + k];
      worst = std::max(worst, std::abs(stats[i].ctx_before[k] - sum / 2));
      sum = 0;
      for (std::size_t n = 0; n < 2; ++n) sum += r.ctx_after[n * c + k];
      worst = std::max(worst, std::abs(stats[i].ctx_after[k] - sum / 2));
    }
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("fresh lct: constant gate and closed-form delta") {
  Rng init(3);
  Network<double> net(small(AttentionKind::lct), init);
  const auto stats = collect(net, synth_dataset(4, 20, 10), BlockSelector::parse("all"));
  for (const auto& s : stats) {
    for (std::size_t k = 0; k < s.channels(); ++k) {
      CHECK(s.attention[k] == doctest::Approx(kSigma1).epsilon(1e-12));
      CHECK(std::abs(s.ctx_after[k] - kSigma1 * s.ctx_before[k]) < 1e-12);
      CHECK(std::abs(s.delta[k] - (1 - kSigma1) * std::abs(s.ctx_before[k])) < 1e-12);
    }
    // Constant attention has no rank correlation.
    CHECK(!s.spearman_rho.has_value());
  }
}

TEST_CASE("attention none is instrumented with the unit sentinel") {
  Rng init(4);
  Network<float> net(small(AttentionKind::none), init);
  const auto stats = collect(net, synth_dataset(4, 12, 10), BlockSelector::parse("first-of-each-stage"));
  REQUIRE(stats.size() == 2);
  for (const auto& s : stats) {
    CHECK(s.kind == AttentionKind::none);
    for (std::size_t k = 0; k < s.channels(); ++k) {
      CHECK(s.attention[k] == 1.0);
      CHECK(s.ctx_after[k] == s.ctx_before[k]);
      CHECK(s.delta[k] == 0.0);
    }
  }
  CHECK_THROWS_AS(collect(net, synth_dataset(4, 12, 10), BlockSelector::parse("3.1")), ConfigError);
}

TEST_CASE("export, contracts and round trip") {
  BlockStats s;
  s.stage = 2;
  s.block = 1;
  s.kind = AttentionKind::se;
  s.ctx_before = {0.5, -1.25, 3.0, 0.125};
  s.ctx_after = {0.25, -0.5, 1.0 / 3, 0.1};
  s.attention = {0.5, 0.4, 0.111111111111, 0.8};
  finalize_stats(s);
  CHECK(s.sort_order == std::vector<std::size_t>{1, 3, 0, 2});

  const auto dir = outdir("export");
  const auto paths = export_stats({s}, dir);
  REQUIRE(paths.size() == 1);
  CHECK(paths[0].filename() == "stage2_block1_se.csv");
  std::ifstream in(paths[0]);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  REQUIRE(lines.size() == 6);
  CHECK(lines[0] == "channel,ctx_before,ctx_after,attention,delta");
  CHECK(lines[5].rfind("# spearman_rho=", 0) == 0);

  const BlockStats back = parse_stats_csv(paths[0]);
  CHECK(back.stage == 2);
  CHECK(back.kind == AttentionKind::se);
  CHECK(back.sort_order == s.sort_order);
  // Half a unit in the ninth significant digit: under 1e-9 for |b| < 2.
  auto close = [](double a, double b) {
    const double ulp9 = b == 0 ? 0 : std::pow(10.0, std::floor(std::log10(std::abs(b))) - 8);
    return std::abs(a - b) <= 0.5 * ulp9 * (1 + 1e-6);
  };
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(close(back.ctx_before[k], s.ctx_before[k]));
    CHECK(close(back.ctx_after[k], s.ctx_after[k]));
    CHECK(close(back.attention[k], s.attention[k]));
    CHECK(close(back.delta[k], s.delta[k]));
  }
  REQUIRE(back.spearman_rho.has_value());
  CHECK(close(*back.spearman_rho, *s.spearman_rho));
  for (std::size_t i = 1; i < 4; ++i) CHECK(back.ctx_before[back.sort_order[i - 1]] <= back.ctx_before[back.sort_order[i]]);

  CHECK_THROWS_AS(export_stats({s}, "/proc/nope/x"), IoError);
}

TEST_CASE("summary lists blocks or says there are none") {
  CHECK(format_stats_summary({}) == "no attention blocks\n");
  BlockStats s;
  s.stage = 1;
  s.block = 1;
  s.kind = AttentionKind::lct;
  s.ctx_before = s.ctx_after = {1, 2, 3};
  s.attention = {0.5, 0.5, 0.5};
  finalize_stats(s);
  CHECK(format_stats_summary({s}).find("undefined") != std::string::npos);
}
