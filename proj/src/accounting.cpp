#include "lct/accounting.hpp"

#include <cstdio>
#include <sstream>

namespace lct {

namespace {

using u64 = std::uint64_t;

struct Counter {
  std::vector<CostEntry> layers;

  void add(std::string name, u64 params, u64 macs) { layers.push_back({std::move(name), params, macs}); }

  // Square-kernel conv with pad k/2; updates h, w to the output extent.
  void conv(const std::string& name, u64 cin, u64 cout, u64 k, u64 stride, std::size_t& h, std::size_t& w) {
    const std::size_t pad = k / 2;
    h = (h + 2 * pad - k) / stride + 1;
    w = (w + 2 * pad - k) / stride + 1;
    add(name, k * k * cin * cout, k * k * cin * cout * h * w);
  }
  void bn(const std::string& name, u64 c) { add(name, 2 * c, 0); }
};

u64 gap_macs(u64 c, u64 h, u64 w, const CountOptions& opt) { return opt.pooling_counts_adds ? c * h * w : c; }

}  // namespace

Cost attention_cost(const AttentionConfig& config, std::size_t height, std::size_t width,
                    const CountOptions& options) {
  const u64 c = config.channels, hw = u64(height) * width;
  switch (config.kind) {
    case AttentionKind::none: return {};
    case AttentionKind::lct: {
      u64 macs = gap_macs(c, height, width, options) + c + c * hw;  // aggregate, sigmoid, fuse
      if (!config.skip_normalize) macs += 4 * c;
      if (!config.skip_transform) macs += c;
      return {2 * c, macs};
    }
    case AttentionKind::se:
    case AttentionKind::se_plus: {
      const u64 h = c / config.reduction;
      u64 macs = gap_macs(c, height, width, options) + 2 * c * h + c + c * hw;
      if (config.kind == AttentionKind::se_plus) macs += 4 * c;
      return {2 * c * h + h + c, macs};
    }
  }
  return {};
}

namespace {

CostReport count_raw(const NetworkSpec& spec, const CountOptions& opt, std::vector<CostEntry>* attn) {
  spec.validate();
  Counter k;
  std::size_t h = spec.input.height, w = spec.input.width;
  k.conv("stem.conv", spec.input.channels, spec.stem.channels, spec.stem.kernel, spec.stem.stride, h, w);
  k.bn("stem.bn", spec.stem.channels);
  if (spec.stem.pool_kernel) {
    h = (h - spec.stem.pool_kernel) / spec.stem.pool_stride + 1;
    w = (w - spec.stem.pool_kernel) / spec.stem.pool_stride + 1;
    k.add("stem.pool", 0, u64(spec.stem.channels) * h * w);
  }
  u64 in = spec.stem.channels;
  for (std::size_t s = 0; s < spec.stages.size(); ++s) {
    const auto& st = spec.stages[s];
    for (std::size_t b = 0; b < st.blocks; ++b) {
      const std::string p = "stage" + std::to_string(s + 1) + ".block" + std::to_string(b + 1) + ".";
      const std::size_t stride = b == 0 ? st.stride : 1;
      const u64 out = st.out_channels;
      std::size_t bh = h, bw = w;
      if (st.kind == BlockKind::basic) {
        k.conv(p + "conv1", in, out, 3, stride, bh, bw);
        k.bn(p + "bn1", out);
        k.conv(p + "conv2", out, out, 3, 1, bh, bw);
        k.bn(p + "bn2", out);
      } else {
        const u64 mid = out / kBottleneckExpansion;
        k.conv(p + "conv1", in, mid, 1, 1, bh, bw);
        k.bn(p + "bn1", mid);
        k.conv(p + "conv2", mid, mid, 3, stride, bh, bw);
        k.bn(p + "bn2", mid);
        k.conv(p + "conv3", mid, out, 1, 1, bh, bw);
        k.bn(p + "bn3", out);
      }
      const Cost a = attention_cost(spec.attention_for(out), bh, bw, opt);
      if (spec.attention.kind != AttentionKind::none) {
        k.add(p + "attn", a.params, a.macs);
        if (attn) attn->push_back({p + "attn", a.params, a.macs});
      }
      if (stride != 1 || in != out) {
        std::size_t sh = h, sw = w;
        k.conv(p + "shortcut.conv", in, out, 1, stride, sh, sw);
        k.bn(p + "shortcut.bn", out);
      }
      h = bh;
      w = bw;
      in = out;
    }
  }
  k.add("gap", 0, gap_macs(in, h, w, opt));
  k.add("fc", in * spec.num_classes + spec.num_classes, in * spec.num_classes);

  CostReport r;
  r.pooling_counts_adds = opt.pooling_counts_adds;
  r.layers = std::move(k.layers);
  for (const auto& e : r.layers) {
    r.total_params += e.params;
    r.total_macs += e.macs;
  }
  return r;
}

}  // namespace

CostReport count_cost(const NetworkSpec& spec, const CountOptions& options) {
  CostReport r = count_raw(spec, options, nullptr);
  NetworkSpec plain = spec;
  plain.attention.kind = AttentionKind::none;
  const CostReport base = count_raw(plain, options, nullptr);
  r.attention_delta = {r.total_params - base.total_params, r.total_macs - base.total_macs};
  return r;
}

std::uint64_t count_params(const NetworkSpec& spec) { return count_raw(spec, {}, nullptr).total_params; }

std::uint64_t count_macs(const NetworkSpec& spec, const CountOptions& options) {
  return count_raw(spec, options, nullptr).total_macs;
}

std::vector<CostEntry> attention_costs(const NetworkSpec& spec, const CountOptions& options) {
  std::vector<CostEntry> out;
  count_raw(spec, options, &out);
  return out;
}

std::string convention_table(const CountOptions& options) {
  std::ostringstream os;
  os << "MAC convention " << kMacConvention << (options.pooling_counts_adds ? " (pooling counts adds)" : "") << "\n"
     << "  conv        k*k*Cin*Cout*H'*W'\n"
     << "  fc          in*out\n"
     << "  batchnorm   0 (folded into the conv at inference)\n"
     << "  relu, add   0\n"
     << "  avg pool    one per output element\n"
     << (options.pooling_counts_adds ? "  global pool C*H*W\n" : "  global pool C (one scale per channel)\n")
     << "  normalize   4*C\n"
     << "  transform   C\n"
     << "  sigmoid     C\n"
     << "  fuse        C*H*W\n";
  return os.str();
}

namespace {

std::string millions(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3fM", double(v) / 1e6);
  return buf;
}

}  // namespace

std::string format_text(const CostReport& r) {
  std::ostringstream os;
  std::size_t width = 5;
  for (const auto& e : r.layers) width = std::max(width, e.name.size());
  char line[256];
  std::snprintf(line, sizeof line, "%-*s %14s %16s\n", int(width), "layer", "params", "macs");
  os << line;
  for (const auto& e : r.layers) {
    std::snprintf(line, sizeof line, "%-*s %14llu %16llu\n", int(width), e.name.c_str(),
                  static_cast<unsigned long long>(e.params), static_cast<unsigned long long>(e.macs));
    os << line;
  }
  std::snprintf(line, sizeof line, "%-*s %14llu %16llu\n", int(width), "total",
                static_cast<unsigned long long>(r.total_params), static_cast<unsigned long long>(r.total_macs));
  os << line << "\n";
  std::snprintf(line, sizeof line, "params %s, macs %.3fG\n", millions(r.total_params).c_str(), double(r.total_macs) / 1e9);
  os << line;
  os << "attention delta: +" << r.attention_delta.params << " params (+" << millions(r.attention_delta.params)
     << "), +" << r.attention_delta.macs << " macs\n\n";
  os << convention_table({r.pooling_counts_adds});
  return os.str();
}

std::string format_csv(const CostReport& r) {
  std::ostringstream os;
  os << "name,params,macs\n";
  for (const auto& e : r.layers) os << e.name << ',' << e.params << ',' << e.macs << '\n';
  os << "total," << r.total_params << ',' << r.total_macs << '\n';
  return os.str();
}

}  // namespace lct
