#pragma once

// Forward-pass latency over a (square image side) x (loop count T) grid.
// Each cell builds a model with loop count T, draws random images, runs
// `warmup` untimed passes, then times `samples_per_cell` passes with a
// monotonic clock. Model construction and image generation happen outside
// the timed region.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cmudrn/config.hpp"
#include "cmudrn/data.hpp"
#include "cmudrn/nets.hpp"

namespace cmudrn::bench {

struct BenchGrid {
  std::vector<std::size_t> sizes;
  std::vector<int> loop_counts;
  std::size_t samples_per_cell = 30;
  std::size_t warmup = 2;

  /// sizes = from, from + step, ..., up to and including `to`.
  static BenchGrid arithmetic(std::size_t from, std::size_t to, std::size_t step, std::vector<int> loop_counts,
                              std::size_t samples_per_cell, std::size_t warmup);
  /// Throws std::invalid_argument unless sizes are strictly increasing and
  /// positive, loop counts are >= 1 and samples_per_cell >= 1.
  void validate() const;
};

struct BenchCell {
  std::size_t size = 0;
  int loops = 0;
  double mean_seconds = 0.0;
  double stddev_seconds = 0.0;
  double fps = 0.0;
  std::string error;  // non-empty when the cell could not run

  bool ok() const { return error.empty(); }
  friend bool operator==(const BenchCell&, const BenchCell&) = default;
};

/// A model prepared for timing: `load` is untimed, `run` is the timed pass.
class Restorer {
 public:
  virtual ~Restorer() = default;
  virtual void load(const data::Image& input) = 0;
  virtual void run() = 0;
};

using ModelFactory = std::function<std::unique_ptr<Restorer>(int loops)>;
/// Monotonic time in seconds.
using Clock = std::function<double()>;
using ImageSource = std::function<data::Image(std::size_t side, std::mt19937_64& rng)>;

double steady_seconds();

/// Pixels drawn from N(0.5, 0.25) and clamped to [0, 1].
data::Image random_normal_image(std::size_t side, std::mt19937_64& rng);

enum class Precision { kFloat, kDouble };

/// Graph-free CMUDRN inference built from `base` with its loop count
/// replaced by the cell's T.
ModelFactory inference_factory(const nets::CmudrnParams& base, Precision precision);

struct RunOptions {
  Clock clock;         // default: steady_seconds
  ImageSource images;  // default: random_normal_image
  std::function<void(const BenchCell&)> on_cell;
};

/// Cells in size-major order (for each size, every T).
std::vector<BenchCell> run_grid(const ModelFactory& factory, const BenchGrid& grid, std::uint64_t seed,
                                const RunOptions& options = {});

/// `size,T,mean_s,stddev_s,fps` with shortest round-trip reals.
std::string format_heatmap_csv(std::span<const BenchCell> cells);
void emit_heatmap_csv(std::span<const BenchCell> cells, const std::filesystem::path& path);
/// Throws ParseError on a malformed header or row.
std::vector<BenchCell> parse_heatmap_csv(std::string_view text);

/// Heatmap with T along x and size along y. Each rectangle is coloured by
/// linear RGB interpolation from #2c7bb6 (fastest cell) to #d7191c
/// (slowest); failed cells are grey.
std::string format_heatmap_svg(std::span<const BenchCell> cells);

// Shape checks on measured cells.

/// Pairs of neighbouring cells (along T at fixed size, and along size at
/// fixed T) where the larger setting is faster by more than
/// `tolerance` x the pooled stddev. Each entry describes one violation.
std::vector<std::string> monotonicity_violations(std::span<const BenchCell> cells, double tolerance = 2.0);

/// Least-squares slope of log(mean_seconds) against log(size^2) at fixed T.
double loglog_slope(std::span<const BenchCell> cells, int loops);

struct BenchConfig {
  std::size_t size_from = 100;
  std::size_t size_to = 500;
  std::size_t size_step = 50;
  std::vector<int> loops = {1, 2, 3, 4, 5, 6, 7};
  std::size_t samples = 30;
  std::size_t warmup = 2;
  std::uint64_t seed = 1;
  std::size_t channels = 16;
  Precision precision = Precision::kFloat;

  /// Throws ConfigError for unknown keys or bad values.
  void set(std::string_view key, std::string_view value);
  void apply(std::span<const ConfigEntry> entries);
  BenchGrid grid() const;
  static std::vector<std::string> keys();
};

}  // namespace cmudrn::bench
