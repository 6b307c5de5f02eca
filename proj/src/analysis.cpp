#include "lct/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <regex>
#include <sstream>

namespace lct {

BlockSelector BlockSelector::parse(const std::string& text) {
  BlockSelector s;
  if (text == "all") return s;
  if (text == "first-of-each-stage") {
    s.mode = Mode::first_of_each_stage;
    return s;
  }
  static const std::regex re(R"((?:stage)?(\d+)\.(?:block)?(\d+))");
  std::smatch m;
  if (!std::regex_match(text, m, re)) {
    throw ConfigError("analysis.select: expected all, first-of-each-stage or S.B, got '" + text + "'");
  }
  s.mode = Mode::one;
  s.stage = std::stoul(m[1]);
  s.block = std::stoul(m[2]);
  return s;
}

bool BlockSelector::matches(std::size_t st, std::size_t bl) const {
  switch (mode) {
    case Mode::all: return true;
    case Mode::first_of_each_stage: return bl == 1;
    case Mode::one: return st == stage && bl == block;
  }
  return false;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double rank = 0.5 * double(i + j) + 1;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = rank;
    i = j + 1;
  }
  return r;
}

}  // namespace

std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ShapeError("spearman: length mismatch");
  if (x.size() < 3) throw ShapeError("spearman: needs at least 3 entries");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = double(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  // All ranks equal means a constant input.
  if (sxx == 0 || syy == 0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

void finalize_stats(BlockStats& s) {
  const std::size_t c = s.ctx_before.size();
  s.delta.resize(c);
  for (std::size_t k = 0; k < c; ++k) s.delta[k] = std::abs(s.ctx_after[k] - s.ctx_before[k]);
  s.sort_order.resize(c);
  std::iota(s.sort_order.begin(), s.sort_order.end(), 0);
  std::stable_sort(s.sort_order.begin(), s.sort_order.end(),
                   [&](std::size_t a, std::size_t b) { return s.ctx_before[a] < s.ctx_before[b]; });
  s.spearman_rho.reset();
  if (c >= 3) {
    std::vector<double> mag(c);
    for (std::size_t k = 0; k < c; ++k) mag[k] = std::abs(s.ctx_before[k]);
    s.spearman_rho = spearman(mag, s.attention);
  }
}

template <typename T>
std::vector<BlockStats> collect(Network<T>& net, const Dataset& data, const BlockSelector& selector,
                                std::size_t batch_size) {
  std::vector<AttentionPoint<T>> chosen;
  for (const auto& p : net.attention_points())
    if (selector.matches(p.stage, p.block)) chosen.push_back(p);
  if (chosen.empty()) throw ConfigError("analysis: block selector matches no attention block");
  if (data.size() == 0) throw DataError("analysis: dataset is empty");
  if (batch_size == 0) batch_size = 1;

  std::vector<BlockStats> out(chosen.size());
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    const std::size_t c = chosen[i].block_ptr->config().channels;
    out[i].stage = chosen[i].stage;
    out[i].block = chosen[i].block;
    out[i].kind = chosen[i].block_ptr->config().kind;
    out[i].ctx_before.assign(c, 0.0);
    out[i].attention.assign(c, 0.0);
    out[i].ctx_after.assign(c, 0.0);
  }
  for (auto& p : chosen) p.block_ptr->set_recording(true);

  std::size_t seen = 0;
  try {
    for (std::size_t s = 0; s < data.size(); s += batch_size) {
      const std::size_t e = std::min(data.size(), s + batch_size);
      std::vector<std::size_t> idx(e - s);
      std::iota(idx.begin(), idx.end(), s);
      const TensorF batch = make_batch(data, idx, {}, nullptr);
      if constexpr (std::is_same_v<T, float>) {
        net.forward(batch, Mode::infer);
      } else {
        net.forward(batch.template cast<T>(), Mode::infer);
      }
      for (std::size_t n = 0; n < idx.size(); ++n) {
        const double k = double(seen + n + 1);
        for (std::size_t i = 0; i < chosen.size(); ++i) {
          const auto& rec = *chosen[i].block_ptr->record();
          BlockStats& st = out[i];
          const std::size_t c = st.channels();
          // Welford-style running mean: mean += (x - mean) / k.
          for (std::size_t ch = 0; ch < c; ++ch) {
            st.ctx_before[ch] += (double(rec.ctx_before[n * c + ch]) - st.ctx_before[ch]) / k;
            st.attention[ch] += (double(rec.attention[n * c + ch]) - st.attention[ch]) / k;
            st.ctx_after[ch] += (double(rec.ctx_after[n * c + ch]) - st.ctx_after[ch]) / k;
          }
        }
      }
      seen += idx.size();
    }
  } catch (...) {
    for (auto& p : chosen) p.block_ptr->set_recording(false);
    throw;
  }
  for (auto& p : chosen) p.block_ptr->set_recording(false);
  for (auto& s : out) finalize_stats(s);
  return out;
}

template std::vector<BlockStats> collect(Network<float>&, const Dataset&, const BlockSelector&, std::size_t);
template std::vector<BlockStats> collect(Network<double>&, const Dataset&, const BlockSelector&, std::size_t);

std::string stats_filename(const BlockStats& s) {
  return "stage" + std::to_string(s.stage) + "_block" + std::to_string(s.block) + "_" + to_string(s.kind) + ".csv";
}

namespace {

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

std::string format_stats_csv(const BlockStats& s) {
  std::string out = "channel,ctx_before,ctx_after,attention,delta\n";
  for (std::size_t k : s.sort_order) {
    out += std::to_string(k) + "," + num(s.ctx_before[k]) + "," + num(s.ctx_after[k]) + "," + num(s.attention[k]) +
           "," + num(s.delta[k]) + "\n";
  }
  out += "# spearman_rho=" + (s.spearman_rho ? num(*s.spearman_rho) : std::string("undefined")) + "\n";
  return out;
}

std::vector<std::filesystem::path> export_stats(const std::vector<BlockStats>& stats,
                                                const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
  std::vector<std::filesystem::path> paths;
  for (const auto& s : stats) {
    const auto path = dir / stats_filename(s);
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << format_stats_csv(s);
    if (!out) throw IoError("short write to '" + path.string() + "'");
    paths.push_back(path);
  }
  return paths;
}

BlockStats parse_stats_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  const std::string where = path.string() + ": ";

  BlockStats s;
  static const std::regex name_re(R"(stage(\d+)_block(\d+)_(\w+)\.csv)");
  std::smatch m;
  const std::string fname = path.filename().string();
  if (!std::regex_match(fname, m, name_re)) throw DataError(where + "unexpected file name");
  s.stage = std::stoul(m[1]);
  s.block = std::stoul(m[2]);
  s.kind = parse_attention_kind(m[3]);

  std::string line;
  if (!std::getline(in, line) || line != "channel,ctx_before,ctx_after,attention,delta") {
    throw DataError(where + "bad header");
  }
  struct Row {
    std::size_t ch;
    double before, after, att, delta;
  };
  std::vector<Row> rows;
  bool footer = false;
  while (std::getline(in, line)) {
    if (line.rfind("# spearman_rho=", 0) == 0) {
      const std::string v = line.substr(15);
      if (v != "undefined") s.spearman_rho = std::stod(v);
      footer = true;
      continue;
    }
    if (footer) throw DataError(where + "data after footer");
    Row r{};
    char tail = 0;
    if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf,%lf%c", &r.ch, &r.before, &r.after, &r.att, &r.delta, &tail) != 5) {
      throw DataError(where + "malformed row '" + line + "'");
    }
    rows.push_back(r);
  }
  if (!footer) throw DataError(where + "missing spearman footer");
  const std::size_t c = rows.size();
  s.ctx_before.resize(c);
  s.ctx_after.resize(c);
  s.attention.resize(c);
  s.delta.resize(c);
  std::vector<bool> seen(c);
  for (const auto& r : rows) {
    if (r.ch >= c || seen[r.ch]) throw DataError(where + "channel column is not a permutation");
    seen[r.ch] = true;
    s.sort_order.push_back(r.ch);
    s.ctx_before[r.ch] = r.before;
    s.ctx_after[r.ch] = r.after;
    s.attention[r.ch] = r.att;
    s.delta[r.ch] = r.delta;
  }
  return s;
}

std::string format_stats_summary(const std::vector<BlockStats>& stats) {
  if (stats.empty()) return "no attention blocks\n";
  std::string out = "stage block kind     channels spearman_rho\n";
  char line[128];
  for (const auto& s : stats) {
    std::snprintf(line, sizeof line, "%5zu %5zu %-8s %8zu %s\n", s.stage, s.block, to_string(s.kind).c_str(),
                  s.channels(), s.spearman_rho ? num(*s.spearman_rho).c_str() : "undefined");
    out += line;
  }
  return out;
}

}  // namespace lct
