#include "lct/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include "lct/accounting.hpp"
#include "lct/analysis.hpp"
#include "lct/log.hpp"
#include "lct/parallel.hpp"

namespace lct::cli {

namespace fs = std::filesystem;

const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> keys = {
      "net.preset",          "net.num_classes",     "net.input",          "net.stages",
      "net.stem.channels",   "net.stem.kernel",     "net.stem.stride",    "net.stem.pool_kernel",
      "net.stem.pool_stride", "attention.kind",     "attention.groups",   "attention.reduction",
      "attention.init",      "attention.epsilon",   "attention.skip_normalize", "attention.skip_transform",
      "train.lr0",           "train.momentum",      "train.weight_decay", "train.decay",
      "train.schedule",      "train.epochs",        "train.batch_size",   "train.hflip",
      "train.pad_crop",      "data.source",         "data.train",         "data.val",
      "data.synth_n",        "data.synth_val_n",    "data.synth_classes", "data.synth_seed",
      "analysis.select",     "analysis.samples",    "gradcheck.scope",    "count.pooling_counts_adds",
      "seed",                "out",                 "checkpoint",
  };
  return keys;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool is_known(const std::string& key) {
  const auto& k = known_keys();
  return std::find(k.begin(), k.end(), key) != k.end();
}

}  // namespace

Settings parse_config(const std::string& text, const std::string& source) {
  Settings out;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string where = source + ":" + std::to_string(number) + ": ";
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (!is_known(key)) throw ConfigError(where + "unknown key '" + key + "'");
    if (value.empty()) throw ConfigError(where + "empty value for '" + key + "'");
    if (!out.emplace(key, value).second) throw ConfigError(where + "repeated key '" + key + "'");
  }
  return out;
}

Settings load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

namespace {

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  unsigned long long x = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    x = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return x;
}

std::size_t to_size(const std::string& key, const std::string& v) { return std::size_t(to_u64(key, v)); }

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return x;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) parts.push_back(trim(cur));
  return parts;
}

// "3x16:basic:1, 3x32:basic:2"
std::vector<StageSpec> parse_stages(const std::string& key, const std::string& v) {
  std::vector<StageSpec> stages;
  for (const auto& item : split(v, ',')) {
    const auto f = split(item, ':');
    const auto x = f.empty() ? std::string::npos : f[0].find('x');
    if (f.size() != 3 || x == std::string::npos) {
      throw ConfigError(key + ": expected BLOCKSxCHANNELS:KIND:STRIDE, got '" + item + "'");
    }
    StageSpec st;
    st.blocks = to_size(key, f[0].substr(0, x));
    st.out_channels = to_size(key, f[0].substr(x + 1));
    st.kind = parse_block_kind(f[1]);
    st.stride = to_size(key, f[2]);
    stages.push_back(st);
  }
  return stages;
}

std::vector<std::pair<std::size_t, double>> parse_schedule(const std::string& key, const std::string& v) {
  std::vector<std::pair<std::size_t, double>> s;
  for (const auto& item : split(v, ',')) {
    const auto f = split(item, ':');
    if (f.size() != 2) throw ConfigError(key + ": expected EPOCH:MULTIPLIER, got '" + item + "'");
    s.emplace_back(to_size(key, f[0]), to_double(key, f[1]));
  }
  return s;
}

}  // namespace

RunConfig resolve(const Settings& settings) {
  RunConfig c;
  const auto preset = settings.find("net.preset");
  c.spec = preset_spec(preset == settings.end() ? "resnet-mini" : preset->second);
  bool synth_seed_set = false, synth_val_set = false;

  for (const auto& [k, v] : settings) {
    if (k == "net.preset") {
    } else if (k == "net.num_classes") {
      c.spec.num_classes = to_size(k, v);
    } else if (k == "net.input") {
      const auto f = split(v, 'x');
      if (f.size() != 3) throw ConfigError(k + ": expected CxHxW, got '" + v + "'");
      c.spec.input = {to_size(k, f[0]), to_size(k, f[1]), to_size(k, f[2])};
    } else if (k == "net.stages") {
      c.spec.stages = parse_stages(k, v);
    } else if (k == "net.stem.channels") {
      c.spec.stem.channels = to_size(k, v);
    } else if (k == "net.stem.kernel") {
      c.spec.stem.kernel = to_size(k, v);
    } else if (k == "net.stem.stride") {
      c.spec.stem.stride = to_size(k, v);
    } else if (k == "net.stem.pool_kernel") {
      c.spec.stem.pool_kernel = to_size(k, v);
    } else if (k == "net.stem.pool_stride") {
      c.spec.stem.pool_stride = to_size(k, v);
    } else if (k == "attention.kind") {
      c.spec.attention.kind = parse_attention_kind(v);
    } else if (k == "attention.groups") {
      c.spec.attention.groups = to_size(k, v);
    } else if (k == "attention.reduction") {
      c.spec.attention.reduction = to_size(k, v);
    } else if (k == "attention.init") {
      c.spec.attention.init = parse_init_mode(v);
    } else if (k == "attention.epsilon") {
      c.spec.attention.epsilon = to_double(k, v);
    } else if (k == "attention.skip_normalize") {
      c.spec.attention.skip_normalize = to_bool(k, v);
    } else if (k == "attention.skip_transform") {
      c.spec.attention.skip_transform = to_bool(k, v);
    } else if (k == "train.lr0") {
      c.train.lr0 = to_double(k, v);
    } else if (k == "train.momentum") {
      c.train.momentum = to_double(k, v);
    } else if (k == "train.weight_decay") {
      c.train.weight_decay = to_double(k, v);
    } else if (k == "train.decay") {
      if (v == "all") {
        c.train.decay = DecayPolicy::all;
      } else if (v == "weights_only") {
        c.train.decay = DecayPolicy::weights_only;
      } else {
        throw ConfigError(k + ": expected all or weights_only, got '" + v + "'");
      }
    } else if (k == "train.schedule") {
      c.train.schedule = parse_schedule(k, v);
    } else if (k == "train.epochs") {
      c.train.epochs = to_size(k, v);
    } else if (k == "train.batch_size") {
      c.train.batch_size = to_size(k, v);
    } else if (k == "train.hflip") {
      c.train.augment.hflip = to_bool(k, v);
    } else if (k == "train.pad_crop") {
      c.train.augment.pad_crop = to_bool(k, v);
    } else if (k == "data.source") {
      if (v != "synth" && v != "cifar10") throw ConfigError(k + ": expected synth or cifar10, got '" + v + "'");
      c.data_source = v;
    } else if (k == "data.train") {
      c.data_train = v;
    } else if (k == "data.val") {
      c.data_val = v;
    } else if (k == "data.synth_n") {
      c.synth_n = to_size(k, v);
    } else if (k == "data.synth_val_n") {
      c.synth_val_n = to_size(k, v);
      synth_val_set = true;
    } else if (k == "data.synth_classes") {
      c.synth_classes = int(to_size(k, v));
    } else if (k == "data.synth_seed") {
      c.synth_seed = to_u64(k, v);
      synth_seed_set = true;
    } else if (k == "analysis.select") {
      BlockSelector::parse(v);
      c.select = v;
    } else if (k == "analysis.samples") {
      c.analysis_samples = to_size(k, v);
    } else if (k == "gradcheck.scope") {
      gradcheck_units(v);
      c.scope = v;
    } else if (k == "count.pooling_counts_adds") {
      c.pooling_counts_adds = to_bool(k, v);
    } else if (k == "seed") {
      c.seed = to_u64(k, v);
    } else if (k == "out") {
      c.out = v;
    } else if (k == "checkpoint") {
      c.checkpoint = v;
    } else {
      throw ConfigError("unknown key '" + k + "'");
    }
  }
  if (!synth_seed_set) c.synth_seed = c.seed;
  if (!synth_val_set) c.synth_val_n = std::max<std::size_t>(c.synth_n / 5, std::size_t(c.synth_classes));
  c.train.seed = c.seed;
  try {
    c.spec.validate();
  } catch (const GroupError& e) {
    throw ConfigError(e.what());
  }
  c.train.validate();
  return c;
}

namespace {

struct Context {
  RunConfig cfg;
  std::ostream& out;
  std::ostream& err;
  const Hooks& hooks;
  bool data_flag = false;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw ConfigError(what + " path is not set");
  if (!fs::is_regular_file(path)) throw DataError(what + " not found: '" + path + "'");
}

void require_checkpoint(const std::string& path) {
  if (!fs::is_regular_file(path)) throw ConfigError("checkpoint not found: '" + path + "'");
}

fs::path output_dir(const RunConfig& cfg, const std::string& fallback) {
  const fs::path dir = cfg.out.value_or(fallback);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir.string() + "': " + ec.message());
  return dir;
}

std::unique_ptr<Network<float>> build_network(const RunConfig& cfg) {
  Rng init = Rng(cfg.seed).fork(0);
  return std::make_unique<Network<float>>(cfg.spec, init);
}

Dataset head(const Dataset& d, std::size_t n) {
  if (n == 0 || n >= d.size()) return d;
  Dataset h = d;
  const std::size_t per = d.images.size() / d.size();
  Shape shape = d.images.shape();
  shape[0] = n;
  h.images = TensorF(shape, {d.images.values().begin(), d.images.values().begin() + long(n * per)});
  h.labels.resize(n);
  return h;
}

// The training split, and the held-out split standardized with its stats.
struct Sets {
  Dataset train;
  std::optional<Dataset> val;
};

void check_data_paths(const RunConfig& cfg, bool need_train, bool need_val) {
  if (cfg.data_source != "cifar10") return;
  if (need_train) require_file(cfg.data_train, "training data");
  if (need_val) require_file(cfg.data_val, "evaluation data");
  if (!need_train && !cfg.data_train.empty()) require_file(cfg.data_train, "training data");
  if (!need_val && !cfg.data_val.empty()) require_file(cfg.data_val, "evaluation data");
}

Sets load_train_sets(const RunConfig& cfg) {
  Sets s;
  if (cfg.data_source == "synth") {
    s.train = synth_dataset(cfg.synth_seed, cfg.synth_n, cfg.synth_classes);
    if (cfg.synth_val_n > 0) s.val = synth_dataset(cfg.synth_seed + 1, cfg.synth_val_n, cfg.synth_classes, s.train.stats);
  } else {
    s.train = load_cifar10_binary(cfg.data_train);
    if (!cfg.data_val.empty()) s.val = load_cifar10_binary(cfg.data_val, &s.train.stats);
  }
  return s;
}

// Held-out set only; training statistics are recomputed when available.
Dataset load_eval_set(const RunConfig& cfg) {
  if (cfg.data_source == "synth") {
    const Dataset train = synth_dataset(cfg.synth_seed, cfg.synth_n, cfg.synth_classes);
    return synth_dataset(cfg.synth_seed + 1, cfg.synth_val_n, cfg.synth_classes, train.stats);
  }
  if (cfg.data_train.empty()) {
    log::warn("data.train not set; standardizing '" + cfg.data_val + "' with its own statistics");
    return load_cifar10_binary(cfg.data_val);
  }
  const Dataset raw = read_cifar10_records(cfg.data_train);
  const NormStats stats = channel_stats(raw.images);
  return load_cifar10_binary(cfg.data_val, &stats);
}

int cmd_train(Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  check_data_paths(cfg, true, false);
  if (!cfg.checkpoint.empty()) require_checkpoint(cfg.checkpoint);
  const fs::path dir = output_dir(cfg, "out");

  auto net = build_network(cfg);
  Trainer trainer(*net, cfg.train);
  if (!cfg.checkpoint.empty()) trainer.restore(load_checkpoint(cfg.checkpoint));
  const Sets sets = load_train_sets(cfg);

  double best = -1;
  const auto log = trainer.train(sets.train, sets.val ? &*sets.val : nullptr, std::nullopt, [&](const EpochRow& r) {
    char line[256];
    std::snprintf(line, sizeof line, "epoch %zu lr=%.6g loss=%.6f train_top1=%.4f val_top1=%.4f val_top5=%.4f\n",
                  r.epoch, r.lr, r.train_loss, r.train_top1, r.val_top1, r.val_top5);
    ctx.out << line << std::flush;
    const double metric = sets.val ? r.val_top1 : r.train_top1;
    if (std::isfinite(r.train_loss) && metric > best) {
      best = metric;
      save_checkpoint((dir / "best.ckpt").string(), trainer.snapshot());
    }
  });

  std::ofstream csv(dir / "train_log.csv", std::ios::trunc);
  if (!csv) throw IoError("cannot write '" + (dir / "train_log.csv").string() + "'");
  csv << format_train_log(log);
  if (log.diverged) {
    ctx.err << "lct: training diverged: " << log.reason << "\n";
    return kDiverged;
  }
  save_checkpoint((dir / "final.ckpt").string(), trainer.snapshot());
  ctx.out << "wrote " << (dir / "final.ckpt").string() << ", " << (dir / "best.ckpt").string() << ", "
          << (dir / "train_log.csv").string() << "\n";
  return kOk;
}

void restore_into(Network<float>& net, const std::string& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  restore_model(ckpt, net.registry());
}

int cmd_eval(Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  if (cfg.checkpoint.empty()) throw ConfigError("eval needs --checkpoint");
  require_checkpoint(cfg.checkpoint);
  check_data_paths(cfg, false, true);
  auto net = build_network(cfg);
  restore_into(*net, cfg.checkpoint);
  const Dataset data = load_eval_set(cfg);
  if (int(cfg.spec.num_classes) != data.classes) throw ConfigError("dataset and network class counts differ");
  const EvalResult r = evaluate(*net, data);
  ctx.out << "samples=" << data.size() << " top1=" << fmt("%.4f", r.top1) << " top5=" << fmt("%.4f", r.top5)
          << " loss=" << fmt("%.6f", r.loss) << "\n";
  return kOk;
}

int cmd_count(Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  CountOptions opt;
  opt.pooling_counts_adds = cfg.pooling_counts_adds;
  const CostReport report = count_cost(cfg.spec, opt);
  ctx.out << format_text(report);
  if (cfg.out) {
    const fs::path path = output_dir(cfg, ".") / "cost.csv";
    std::ofstream csv(path, std::ios::trunc);
    if (!csv) throw IoError("cannot write '" + path.string() + "'");
    csv << format_csv(report);
    ctx.out << "wrote " << path.string() << "\n";
  } else {
    ctx.out << "\n" << format_csv(report);
  }
  return kOk;
}

int cmd_analyze(Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  if (!cfg.checkpoint.empty()) require_checkpoint(cfg.checkpoint);
  check_data_paths(cfg, false, cfg.data_source == "cifar10");
  const BlockSelector selector = BlockSelector::parse(cfg.select);
  auto net = build_network(cfg);
  if (!cfg.checkpoint.empty()) restore_into(*net, cfg.checkpoint);
  const fs::path dir = output_dir(cfg, "analysis");

  std::vector<BlockStats> stats;
  if (cfg.spec.attention.kind != AttentionKind::none) {
    const Dataset data = head(load_eval_set(cfg), cfg.analysis_samples);
    stats = collect(*net, data, selector);
    for (const auto& p : export_stats(stats, dir)) ctx.out << "wrote " << p.string() << "\n";
  }
  const std::string summary = format_stats_summary(stats);
  std::ofstream sum(dir / "summary.txt", std::ios::trunc);
  if (!sum) throw IoError("cannot write '" + (dir / "summary.txt").string() + "'");
  sum << summary;
  ctx.out << summary;
  return kOk;
}

int cmd_gradcheck(Context& ctx) {
  const auto results = run_gradcheck(ctx.cfg.scope, ctx.hooks.gradcheck);
  const GradResult* first_fail = nullptr;
  for (const auto& r : results) {
    char line[512];
    std::snprintf(line, sizeof line, "%-4s %-8s %-28s max_rel_err=%.3e checked=%zu\n", r.pass ? "ok" : "FAIL",
                  r.scope.c_str(), r.name.c_str(), r.max_rel_error, r.checked);
    ctx.out << line;
    if (!r.pass && !first_fail) first_fail = &r;
  }
  if (first_fail) {
    ctx.err << "lct: gradcheck failed in unit " << first_fail->name << ": worst " << first_fail->worst << "\n";
    return kGradcheck;
  }
  ctx.out << results.size() << " units passed\n";
  return kOk;
}

struct Flags {
  std::string config, preset, attention, groups, reduction, init, seed, out, checkpoint, data, scope;
  bool skip_normalize = false, skip_transform = false;
};

void add_flags(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "Flat key = value config file")->check(CLI::ExistingFile);
  sub->add_option("--preset", f.preset, "Network preset: resnet-mini, resnet50, resnet101");
  sub->add_option("--attention", f.attention, "Attention kind")
      ->check(CLI::IsMember({"none", "se", "lct", "se+"}));
  sub->add_option("--groups", f.groups, "LCT / SE+ group count G");
  sub->add_option("--reduction", f.reduction, "SE reduction ratio r");
  sub->add_option("--init", f.init, "LCT transform init")->check(CLI::IsMember({"w0_b1", "w0_b0", "w1_b0"}));
  sub->add_flag("--skip-normalize", f.skip_normalize, "Ablation: drop the normalization operator");
  sub->add_flag("--skip-transform", f.skip_transform, "Ablation: drop the transform operator");
  sub->add_option("--seed", f.seed, "Seed for init, shuffling, augmentation and synthetic data");
  sub->add_option("--out", f.out, "Output directory");
  sub->add_option("--checkpoint", f.checkpoint, "Checkpoint to resume from or evaluate");
  sub->add_option("--data", f.data, "CIFAR-10 binary file (training set for train, evaluation set otherwise)");
  sub->add_option("--scope", f.scope, "Gradcheck scope: layers, blocks, end2end, all");
}

// Flags override config-file keys.
Settings merge(const Flags& f, const std::string& command) {
  Settings s = f.config.empty() ? Settings{} : load_config(f.config);
  auto set = [&](const std::string& key, const std::string& v) {
    if (!v.empty()) s[key] = v;
  };
  set("net.preset", f.preset);
  set("attention.kind", f.attention);
  set("attention.groups", f.groups);
  set("attention.reduction", f.reduction);
  set("attention.init", f.init);
  if (f.skip_normalize) s["attention.skip_normalize"] = "true";
  if (f.skip_transform) s["attention.skip_transform"] = "true";
  set("seed", f.seed);
  set("out", f.out);
  set("checkpoint", f.checkpoint);
  set("gradcheck.scope", f.scope);
  if (!f.data.empty()) {
    s["data.source"] = "cifar10";
    s[command == "train" ? "data.train" : "data.val"] = f.data;
  }
  return s;
}

class SinkGuard {
 public:
  explicit SinkGuard(std::ostream& err) {
    log::set_sink([&err](log::Level level, const std::string& msg) {
      err << (level == log::Level::warning ? "warning: " : "") << msg << "\n";
    });
  }
  ~SinkGuard() { log::set_sink({}); }
  SinkGuard(const SinkGuard&) = delete;
  SinkGuard& operator=(const SinkGuard&) = delete;
};

void apply_thread_env() {
  const char* v = std::getenv("LCT_THREADS");
  if (!v || !*v) return;
  const std::size_t n = to_size("LCT_THREADS", v);
  if (n == 0) throw ConfigError("LCT_THREADS: must be at least 1");
  set_max_threads(n);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const Hooks& hooks) {
  SinkGuard guard(err);
  CLI::App app{"Channel attention toolkit: train, evaluate, count, analyze and gradient-check LCT / SE / SE+ networks",
               "lct"};
  app.require_subcommand(1, 1);
  Flags flags;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"train", "Train a network and write final/best checkpoints and a CSV log"},
      {"eval", "Top-1/top-5 accuracy of a checkpoint on the evaluation set"},
      {"count", "Parameter and MAC report"},
      {"analyze", "Context/attention statistics per attention block"},
      {"gradcheck", "Finite-difference gradient checks in double precision"},
  };
  for (const auto& [name, help] : commands) add_flags(app.add_subcommand(name, help), flags);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfig;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    apply_thread_env();
    Context ctx{resolve(merge(flags, command)), out, err, hooks};
    if (command == "train") return cmd_train(ctx);
    if (command == "eval") return cmd_eval(ctx);
    if (command == "count") return cmd_count(ctx);
    if (command == "analyze") return cmd_analyze(ctx);
    return cmd_gradcheck(ctx);
  } catch (const CheckpointMismatch& e) {
    err << "lct: checkpoint does not match the model; first mismatching tensor '" << e.tensor() << "': " << e.what()
        << "\n";
    return kConfig;
  } catch (const CheckpointError& e) {
    err << "lct: " << e.what() << "\n";
    return kConfig;
  } catch (const ConfigError& e) {
    err << "lct: config error: " << e.what() << "\n";
    return kConfig;
  } catch (const GroupError& e) {
    err << "lct: config error: " << e.what() << "\n";
    return kConfig;
  } catch (const DataError& e) {
    err << "lct: data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    err << "lct: " << e.what() << "\n";
    return kFailure;
  }
}

}  // namespace lct::cli
