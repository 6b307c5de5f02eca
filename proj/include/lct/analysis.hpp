#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lct/backbone.hpp"
#include "lct/data.hpp"

namespace lct {

// Averaged contexts and gates at one attention point. Vectors have C entries.
struct BlockStats {
  std::size_t stage = 0, block = 0;  // 1-based
  AttentionKind kind = AttentionKind::none;
  std::vector<double> ctx_before;  // mean of aggregate(X)
  std::vector<double> attention;   // mean of sigmoid(a); 1 for kind none
  std::vector<double> ctx_after;   // mean of aggregate(Y)
  std::vector<double> delta;       // |ctx_after - ctx_before|
  std::vector<std::size_t> sort_order;  // ascending ctx_before, ties by channel
  // Between |ctx_before| and attention; empty when either side is constant.
  std::optional<double> spearman_rho;

  std::size_t channels() const { return ctx_before.size(); }
};

struct BlockSelector {
  enum class Mode { all, first_of_each_stage, one };
  Mode mode = Mode::all;
  std::size_t stage = 0, block = 0;

  // "all", "first-of-each-stage", or "S.B" / "stage{S}.block{B}". Throws ConfigError.
  static BlockSelector parse(const std::string& text);
  bool matches(std::size_t stage, std::size_t block) const;
};

// Rank correlation with average ranks for ties. Needs at least 3 entries
// (ShapeError). Returns nullopt when either input has zero variance.
std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y);

// Fills delta, sort_order and spearman_rho from the three mean vectors.
void finalize_stats(BlockStats& s);

// Inference-mode pass over `data`, averaging each selected point's records
// with a running mean. Throws ConfigError when the selector matches nothing.
template <typename T>
std::vector<BlockStats> collect(Network<T>& net, const Dataset& data, const BlockSelector& selector,
                                std::size_t batch_size = 100);

// stage{S}_block{B}_{kind}.csv
std::string stats_filename(const BlockStats& s);
std::string format_stats_csv(const BlockStats& s);
// Writes one file per block into `dir` (created if needed); returns the paths.
// Throws IoError naming the path.
std::vector<std::filesystem::path> export_stats(const std::vector<BlockStats>& stats,
                                                const std::filesystem::path& dir);
// Reads a file written by export_stats. Block id and kind come from the name.
// Throws DataError on a malformed file.
BlockStats parse_stats_csv(const std::filesystem::path& path);

// One line per block with its correlation.
std::string format_stats_summary(const std::vector<BlockStats>& stats);

}  // namespace lct
