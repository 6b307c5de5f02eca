#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lct/backbone.hpp"

namespace lct {

inline constexpr const char* kMacConvention = "macs-v1";

struct CountOptions {
  // false (macs-v1): a global average pool costs C, one scale per channel.
  // true: it costs C*H*W, one add per element.
  bool pooling_counts_adds = false;
};

struct CostEntry {
  std::string name;
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
};

struct Cost {
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
  bool operator==(const Cost&) const = default;
};

struct CostReport {
  std::string convention = kMacConvention;
  bool pooling_counts_adds = false;
  std::uint64_t total_params = 0;
  std::uint64_t total_macs = 0;
  std::vector<CostEntry> layers;
  // report(spec) - report(spec with attention none).
  Cost attention_delta;
};

// Cost of one attention block over a C x H x W map, per sample.
Cost attention_cost(const AttentionConfig& config, std::size_t height, std::size_t width,
                    const CountOptions& options = {});

// Structural count for one sample of spec.input; nothing is allocated.
CostReport count_cost(const NetworkSpec& spec, const CountOptions& options = {});
std::uint64_t count_params(const NetworkSpec& spec);
std::uint64_t count_macs(const NetworkSpec& spec, const CountOptions& options = {});

// Per-block attention costs in build order; their sum is the attention delta.
std::vector<CostEntry> attention_costs(const NetworkSpec& spec, const CountOptions& options = {});

std::string convention_table(const CountOptions& options = {});
std::string format_text(const CostReport& report);
// Columns name,params,macs; one row per layer then a "total" row.
std::string format_csv(const CostReport& report);

}  // namespace lct
