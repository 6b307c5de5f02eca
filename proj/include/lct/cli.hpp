#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lct/backbone.hpp"
#include "lct/gradcheck.hpp"
#include "lct/train.hpp"

namespace lct::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfig = 2,  // bad flag, config key or spec; checkpoint/spec mismatch
  kData = 3,    // missing or malformed dataset
  kDiverged = 4,
  kGradcheck = 5,
};

// Flat "key = value" settings. Later sources override earlier ones.
using Settings = std::map<std::string, std::string>;

// Every accepted config key.
const std::vector<std::string>& known_keys();
// Parses config text; `source` prefixes error messages. Throws ConfigError
// on a malformed line, an unknown key or a repeated key.
Settings parse_config(const std::string& text, const std::string& source);
Settings load_config(const std::string& path);

struct RunConfig {
  NetworkSpec spec;
  TrainConfig train;
  std::uint64_t seed = 1;
  std::string data_source = "synth";  // synth | cifar10
  std::string data_train, data_val;
  std::size_t synth_n = 2000, synth_val_n = 400;
  int synth_classes = 10;
  std::uint64_t synth_seed = 1;
  std::optional<std::string> out;
  std::string checkpoint;
  std::string select = "first-of-each-stage";
  std::size_t analysis_samples = 500;
  std::string scope = "all";
  bool pooling_counts_adds = false;
};

// Resolves the preset, then applies every other key. Throws ConfigError.
RunConfig resolve(const Settings& settings);

// Test seams.
struct Hooks {
  GradcheckOptions gradcheck;
};

// Entry point behind the `lct` binary. args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const Hooks& hooks = {});

}  // namespace lct::cli
