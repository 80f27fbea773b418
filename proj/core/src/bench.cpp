#include "cmudrn/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <new>
#include <thread>

#include "cmudrn/errors.hpp"
#include "random.hpp"

namespace cmudrn::bench {

BenchGrid BenchGrid::arithmetic(std::size_t from, std::size_t to, std::size_t step, std::vector<int> loop_counts,
                                std::size_t samples_per_cell, std::size_t warmup) {
  if (step == 0) throw std::invalid_argument("BenchGrid: size step must be positive");
  BenchGrid g;
  for (std::size_t s = from; s <= to; s += step) g.sizes.push_back(s);
  g.loop_counts = std::move(loop_counts);
  g.samples_per_cell = samples_per_cell;
  g.warmup = warmup;
  g.validate();
  return g;
}

void BenchGrid::validate() const {
  if (sizes.empty() || loop_counts.empty()) throw std::invalid_argument("BenchGrid: empty grid");
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] == 0) throw std::invalid_argument("BenchGrid: sizes must be positive");
    if (i > 0 && sizes[i] <= sizes[i - 1]) throw std::invalid_argument("BenchGrid: sizes must be strictly increasing");
  }
  for (int t : loop_counts)
    if (t < 1) throw std::invalid_argument("BenchGrid: loop counts must be >= 1");
  if (samples_per_cell == 0) throw std::invalid_argument("BenchGrid: samples_per_cell must be >= 1");
}

double steady_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

data::Image random_normal_image(std::size_t side, std::mt19937_64& rng) {
  data::Image img(side, side);
  for (double& v : img.pixels) v = std::clamp(detail::normal(rng, 0.5, 0.25), 0.0, 1.0);
  return img;
}

namespace {

template <class Scalar>
class InferenceRestorer final : public Restorer {
 public:
  explicit InferenceRestorer(const nets::CmudrnParams& params) : model_(params) {}

  void load(const data::Image& input) override {
    shape_ = input.shape();
    input_.assign(input.pixels.begin(), input.pixels.end());
  }

  void run() override {
    output_ = model_.forward(input_, shape_);
  }

 private:
  nets::InferenceModel<Scalar> model_;
  Shape shape_;
  std::vector<Scalar> input_;
  std::vector<Scalar> output_;
};

double mean_of(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double stddev_of(const std::vector<double>& xs, double mean) {
  if (xs.size() < 2) return 0.0;
  double s = 0.0;
  for (double x : xs) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

}  // namespace

ModelFactory inference_factory(const nets::CmudrnParams& base, Precision precision) {
  return [base, precision](int loops) -> std::unique_ptr<Restorer> {
    nets::CmudrnParams p = base;
    nets::set_loops(p, loops);
    if (precision == Precision::kFloat) return std::make_unique<InferenceRestorer<float>>(p);
    return std::make_unique<InferenceRestorer<double>>(p);
  };
}

std::vector<BenchCell> run_grid(const ModelFactory& factory, const BenchGrid& grid, std::uint64_t seed,
                                const RunOptions& options) {
  grid.validate();
  const Clock clock = options.clock ? options.clock : Clock(steady_seconds);
  const ImageSource images = options.images ? options.images : ImageSource(random_normal_image);

  std::vector<BenchCell> cells;
  std::uint64_t stream = 0;
  for (std::size_t size : grid.sizes) {
    for (int loops : grid.loop_counts) {
      BenchCell cell;
      cell.size = size;
      cell.loops = loops;
      std::mt19937_64 rng(detail::mix_seed(seed, stream++));

      // All timed passes of a cell run on one dedicated thread.
      std::thread worker([&] {
        try {
          std::unique_ptr<Restorer> model = factory(loops);
          std::vector<data::Image> inputs;
          inputs.reserve(grid.samples_per_cell);
          for (std::size_t i = 0; i < grid.samples_per_cell; ++i) inputs.push_back(images(size, rng));
          if (grid.warmup > 0) {
            data::Image warm = images(size, rng);
            model->load(warm);
            for (std::size_t i = 0; i < grid.warmup; ++i) model->run();
          }
          std::vector<double> times;
          times.reserve(inputs.size());
          for (const auto& img : inputs) {
            model->load(img);
            const double start = clock();
            model->run();
            const double stop = clock();
            times.push_back(stop - start);
          }
          cell.mean_seconds = mean_of(times);
          cell.stddev_seconds = stddev_of(times, cell.mean_seconds);
          cell.fps = cell.mean_seconds > 0.0 ? 1.0 / cell.mean_seconds : std::numeric_limits<double>::infinity();
        } catch (const std::bad_alloc&) {
          cell.error = "allocation failure";
        }
      });
      worker.join();

      if (!cell.ok()) {
        cell.mean_seconds = cell.stddev_seconds = cell.fps = std::numeric_limits<double>::quiet_NaN();
      }
      if (options.on_cell) options.on_cell(cell);
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

// ---------------------------------------------------------------------------
// CSV / SVG

std::string format_heatmap_csv(std::span<const BenchCell> cells) {
  std::string out = "size,T,mean_s,stddev_s,fps\n";
  for (const auto& c : cells) {
    out += std::to_string(c.size) + "," + std::to_string(c.loops) + "," + format_real(c.mean_seconds) + "," +
           format_real(c.stddev_seconds) + "," + format_real(c.fps) + "\n";
  }
  return out;
}

void emit_heatmap_csv(std::span<const BenchCell> cells, const std::filesystem::path& path) {
  const std::string text = format_heatmap_csv(cells);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

std::vector<BenchCell> parse_heatmap_csv(std::string_view text) {
  std::vector<BenchCell> cells;
  std::size_t pos = 0;
  bool header = true;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(pos, end - pos);
    const std::size_t line_at = pos;
    pos = end + 1;
    if (line.empty()) continue;
    if (header) {
      if (line != "size,T,mean_s,stddev_s,fps") throw ParseError("unexpected heatmap CSV header", line_at);
      header = false;
      continue;
    }
    std::vector<std::string_view> f;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      f.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (f.size() != 5) throw ParseError("heatmap CSV row needs 5 fields", line_at);
    BenchCell c;
    try {
      c.size = static_cast<std::size_t>(parse_integer("size", f[0]));
      c.loops = static_cast<int>(parse_integer("T", f[1]));
      const auto real = [](std::string_view key, std::string_view v) {
        if (v == "nan") return std::numeric_limits<double>::quiet_NaN();
        if (v == "inf") return std::numeric_limits<double>::infinity();
        return parse_real(key, v);
      };
      c.mean_seconds = real("mean_s", f[2]);
      c.stddev_seconds = real("stddev_s", f[3]);
      c.fps = real("fps", f[4]);
    } catch (const ConfigError& e) {
      throw ParseError(e.what(), line_at);
    }
    if (std::isnan(c.mean_seconds)) c.error = "failed";
    cells.push_back(c);
  }
  if (header) throw ParseError("empty heatmap CSV", 0);
  return cells;
}

std::string format_heatmap_svg(std::span<const BenchCell> cells) {
  std::vector<std::size_t> sizes;
  std::vector<int> loops;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& c : cells) {
    if (std::find(sizes.begin(), sizes.end(), c.size) == sizes.end()) sizes.push_back(c.size);
    if (std::find(loops.begin(), loops.end(), c.loops) == loops.end()) loops.push_back(c.loops);
    if (c.ok()) {
      lo = std::min(lo, c.mean_seconds);
      hi = std::max(hi, c.mean_seconds);
    }
  }
  std::sort(sizes.begin(), sizes.end());
  std::sort(loops.begin(), loops.end());

  constexpr int kCell = 40, kMarginLeft = 60, kMarginTop = 30;
  const int width = kMarginLeft + kCell * static_cast<int>(loops.size()) + 10;
  const int height = kMarginTop + kCell * static_cast<int>(sizes.size()) + 30;
  char buf[256];
  std::string svg;
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\" font-family=\"sans-serif\" "
                "font-size=\"10\">\n",
                width, height);
  svg += buf;
  for (const auto& c : cells) {
    const auto col = std::find(loops.begin(), loops.end(), c.loops) - loops.begin();
    const auto row = std::find(sizes.begin(), sizes.end(), c.size) - sizes.begin();
    int r = 160, g = 160, b = 160;
    if (c.ok()) {
      const double t = hi > lo ? (c.mean_seconds - lo) / (hi - lo) : 0.0;
      r = static_cast<int>(std::lround(0x2c + t * (0xd7 - 0x2c)));
      g = static_cast<int>(std::lround(0x7b + t * (0x19 - 0x7b)));
      b = static_cast<int>(std::lround(0xb6 + t * (0x1c - 0xb6)));
    }
    std::snprintf(buf, sizeof buf,
                  "<rect x=\"%d\" y=\"%d\" width=\"%d\" height=\"%d\" fill=\"rgb(%d,%d,%d)\"><title>%zu px, T=%d: "
                  "%s s</title></rect>\n",
                  kMarginLeft + kCell * static_cast<int>(col), kMarginTop + kCell * static_cast<int>(row), kCell,
                  kCell, r, g, b, c.size, c.loops, format_real(c.mean_seconds).c_str());
    svg += buf;
  }
  for (std::size_t i = 0; i < loops.size(); ++i) {
    std::snprintf(buf, sizeof buf, "<text x=\"%d\" y=\"%d\" text-anchor=\"middle\">T=%d</text>\n",
                  kMarginLeft + kCell * static_cast<int>(i) + kCell / 2, kMarginTop - 8, loops[i]);
    svg += buf;
  }
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    std::snprintf(buf, sizeof buf, "<text x=\"%d\" y=\"%d\" text-anchor=\"end\">%zu</text>\n", kMarginLeft - 6,
                  kMarginTop + kCell * static_cast<int>(i) + kCell / 2 + 4, sizes[i]);
    svg += buf;
  }
  svg += "</svg>\n";
  return svg;
}

// ---------------------------------------------------------------------------
// Shape checks

std::vector<std::string> monotonicity_violations(std::span<const BenchCell> cells, double tolerance) {
  std::map<std::pair<std::size_t, int>, const BenchCell*> by_key;
  std::vector<std::size_t> sizes;
  std::vector<int> loops;
  for (const auto& c : cells) {
    if (!c.ok()) continue;
    by_key[{c.size, c.loops}] = &c;
    if (std::find(sizes.begin(), sizes.end(), c.size) == sizes.end()) sizes.push_back(c.size);
    if (std::find(loops.begin(), loops.end(), c.loops) == loops.end()) loops.push_back(c.loops);
  }
  std::sort(sizes.begin(), sizes.end());
  std::sort(loops.begin(), loops.end());

  std::vector<std::string> out;
  const auto check = [&](const BenchCell* smaller, const BenchCell* larger) {
    if (!smaller || !larger) return;
    const double pooled =
        std::sqrt(0.5 * (smaller->stddev_seconds * smaller->stddev_seconds +
                         larger->stddev_seconds * larger->stddev_seconds));
    if (larger->mean_seconds < smaller->mean_seconds - tolerance * pooled) {
      out.push_back("(" + std::to_string(larger->size) + ", T=" + std::to_string(larger->loops) + ") " +
                    format_real(larger->mean_seconds) + " s < (" + std::to_string(smaller->size) +
                    ", T=" + std::to_string(smaller->loops) + ") " + format_real(smaller->mean_seconds) + " s");
    }
  };
  const auto find = [&](std::size_t s, int t) -> const BenchCell* {
    auto it = by_key.find({s, t});
    return it == by_key.end() ? nullptr : it->second;
  };
  for (std::size_t s : sizes)
    for (std::size_t i = 1; i < loops.size(); ++i) check(find(s, loops[i - 1]), find(s, loops[i]));
  for (int t : loops)
    for (std::size_t i = 1; i < sizes.size(); ++i) check(find(sizes[i - 1], t), find(sizes[i], t));
  return out;
}

double loglog_slope(std::span<const BenchCell> cells, int loops) {
  std::vector<double> xs, ys;
  for (const auto& c : cells) {
    if (c.loops != loops || !c.ok() || !(c.mean_seconds > 0.0)) continue;
    const double pixels = static_cast<double>(c.size) * static_cast<double>(c.size);
    xs.push_back(std::log(pixels));
    ys.push_back(std::log(c.mean_seconds));
  }
  if (xs.size() < 2) throw std::invalid_argument("loglog_slope: need at least two sizes at T=" + std::to_string(loops));
  const double mx = mean_of(xs), my = mean_of(ys);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  return sxy / sxx;
}

// ---------------------------------------------------------------------------
// BenchConfig

void BenchConfig::set(std::string_view key, std::string_view value) {
  const auto count = [&](std::string_view k, std::string_view v) {
    const auto n = parse_integer(k, v);
    if (n < 0) throw ConfigError("config key '" + std::string(k) + "' must be non-negative");
    return static_cast<std::size_t>(n);
  };
  if (key == "size_from") {
    size_from = count(key, value);
  } else if (key == "size_to") {
    size_to = count(key, value);
  } else if (key == "size_step") {
    size_step = count(key, value);
  } else if (key == "loops") {
    loops.clear();
    for (auto v : parse_integer_list(key, value)) loops.push_back(static_cast<int>(v));
  } else if (key == "samples") {
    samples = count(key, value);
  } else if (key == "warmup") {
    warmup = count(key, value);
  } else if (key == "seed") {
    seed = count(key, value);
  } else if (key == "channels") {
    channels = count(key, value);
  } else if (key == "precision") {
    if (value == "float")
      precision = Precision::kFloat;
    else if (value == "double")
      precision = Precision::kDouble;
    else
      throw ConfigError("config key 'precision' must be float or double, got '" + std::string(value) + "'");
  } else {
    throw ConfigError("unknown bench config key '" + std::string(key) + "'");
  }
}

void BenchConfig::apply(std::span<const ConfigEntry> entries) {
  for (const auto& e : entries) set(e.key, e.value);
}

BenchGrid BenchConfig::grid() const {
  try {
    return BenchGrid::arithmetic(size_from, size_to, size_step, loops, samples, warmup);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

std::vector<std::string> BenchConfig::keys() {
  return {"size_from", "size_to", "size_step", "loops", "samples", "warmup", "seed", "channels", "precision"};
}

}  // namespace cmudrn::bench
