#include <gtest/gtest.h>

#include <atomic>
#include <cmath>

#include "cmudrn/bench.hpp"
#include "cmudrn/errors.hpp"
#include "support.hpp"

using namespace cmudrn;
using namespace cmudrn::bench;

namespace {

// Counts calls and advances a shared fake clock by fixed amounts on
// construction, image generation and each run.
struct FakeWorld {
  double now = 0.0;
  std::size_t constructed = 0;
  std::size_t loads = 0;
  std::size_t runs = 0;
  double construct_cost = 0.0;
  double image_cost = 0.0;
  double run_cost = 1.0;
};

class FakeRestorer final : public Restorer {
 public:
  explicit FakeRestorer(FakeWorld& w) : w_(w) {}
  void load(const data::Image&) override { ++w_.loads; }
  void run() override {
    ++w_.runs;
    w_.now += w_.run_cost;
  }

 private:
  FakeWorld& w_;
};

RunOptions fake_options(FakeWorld& w) {
  RunOptions o;
  o.clock = [&w] { return w.now; };
  o.images = [&w](std::size_t side, std::mt19937_64&) {
    w.now += w.image_cost;
    return data::Image(side, side, 0.5);
  };
  return o;
}

ModelFactory fake_factory(FakeWorld& w) {
  return [&w](int) -> std::unique_ptr<Restorer> {
    ++w.constructed;
    w.now += w.construct_cost;
    return std::make_unique<FakeRestorer>(w);
  };
}

BenchCell cell(std::size_t size, int loops, double mean, double sd = 0.0) {
  BenchCell c;
  c.size = size;
  c.loops = loops;
  c.mean_seconds = mean;
  c.stddev_seconds = sd;
  c.fps = 1.0 / mean;
  return c;
}

}  // namespace

TEST(BenchGrid, ArithmeticSizes) {
  const auto g = BenchGrid::arithmetic(100, 500, 50, {1, 4, 7}, 3, 1);
  EXPECT_EQ(g.sizes, (std::vector<std::size_t>{100, 150, 200, 250, 300, 350, 400, 450, 500}));
  EXPECT_EQ(g.loop_counts, (std::vector<int>{1, 4, 7}));
}

TEST(BenchGrid, Validation) {
  BenchGrid g{{100, 100}, {1}, 1, 0};
  EXPECT_THROW(g.validate(), std::invalid_argument);
  g = {{100}, {0}, 1, 0};
  EXPECT_THROW(g.validate(), std::invalid_argument);
  g = {{100}, {1}, 0, 0};
  EXPECT_THROW(g.validate(), std::invalid_argument);
  g = {{100}, {1}, 1, 0};
  EXPECT_NO_THROW(g.validate());
  EXPECT_THROW(BenchGrid::arithmetic(100, 200, 0, {1}, 1, 0), std::invalid_argument);
}

TEST(RunGrid, ExactlySamplesTimedPassesAfterWarmup) {
  FakeWorld w;
  const BenchGrid grid{{8}, {1}, 3, 2};
  const auto cells = run_grid(fake_factory(w), grid, 1, fake_options(w));
  ASSERT_EQ(cells.size(), 1u);
  EXPECT_EQ(w.constructed, 1u);
  EXPECT_EQ(w.runs, 3u + 2u);
  // One load for the warmup image, one per timed image.
  EXPECT_EQ(w.loads, 1u + 3u);
}

TEST(RunGrid, NoWarmupMeansOnlyTimedPasses) {
  FakeWorld w;
  const auto cells = run_grid(fake_factory(w), BenchGrid{{8}, {2}, 3, 0}, 1, fake_options(w));
  EXPECT_EQ(w.runs, 3u);
  EXPECT_EQ(w.loads, 3u);
  EXPECT_EQ(cells[0].loops, 2);
}

TEST(RunGrid, ConstantFakeClockGivesThatMean) {
  FakeWorld w;
  w.run_cost = 0.25;
  const auto cells = run_grid(fake_factory(w), BenchGrid{{8, 16}, {1, 3}, 5, 1}, 7, fake_options(w));
  ASSERT_EQ(cells.size(), 4u);
  for (const auto& c : cells) {
    EXPECT_TRUE(c.ok());
    EXPECT_EQ(c.mean_seconds, 0.25);
    EXPECT_EQ(c.stddev_seconds, 0.0);
    EXPECT_EQ(c.fps, 4.0);
  }
}

TEST(RunGrid, TimingExcludesConstructionAndImages) {
  FakeWorld w;
  w.construct_cost = 100.0;
  w.image_cost = 10.0;
  w.run_cost = 1.0;
  const auto cells = run_grid(fake_factory(w), BenchGrid{{8}, {1}, 4, 2}, 3, fake_options(w));
  EXPECT_EQ(cells[0].mean_seconds, 1.0);
  EXPECT_EQ(cells[0].stddev_seconds, 0.0);
}

TEST(RunGrid, SizeMajorOrder) {
  FakeWorld w;
  const auto cells = run_grid(fake_factory(w), BenchGrid{{8, 16, 24}, {1, 2}, 1, 0}, 1, fake_options(w));
  ASSERT_EQ(cells.size(), 6u);
  const std::vector<std::pair<std::size_t, int>> expect{{8, 1}, {8, 2}, {16, 1}, {16, 2}, {24, 1}, {24, 2}};
  for (std::size_t i = 0; i < cells.size(); ++i) {
    EXPECT_EQ(cells[i].size, expect[i].first);
    EXPECT_EQ(cells[i].loops, expect[i].second);
  }
}

TEST(RunGrid, VaryingClockGivesSampleStddev) {
  FakeWorld w;
  std::vector<double> costs{1.0, 2.0, 3.0, 6.0};
  std::size_t k = 0;
  RunOptions o = fake_options(w);
  ModelFactory f = [&](int) -> std::unique_ptr<Restorer> {
    struct R final : Restorer {
      FakeWorld& w;
      std::vector<double>& costs;
      std::size_t& k;
      R(FakeWorld& w_, std::vector<double>& c, std::size_t& k_) : w(w_), costs(c), k(k_) {}
      void load(const data::Image&) override {}
      void run() override { w.now += costs[k++ % costs.size()]; }
    };
    return std::make_unique<R>(w, costs, k);
  };
  const auto cells = run_grid(f, BenchGrid{{8}, {1}, 4, 0}, 1, o);
  EXPECT_DOUBLE_EQ(cells[0].mean_seconds, 3.0);
  // sample variance: (4 + 1 + 0 + 9) / 3
  EXPECT_DOUBLE_EQ(cells[0].stddev_seconds, std::sqrt(14.0 / 3.0));
}

TEST(RunGrid, AllocationFailureMarksCell) {
  FakeWorld w;
  ModelFactory f = [&](int loops) -> std::unique_ptr<Restorer> {
    if (loops == 2) throw std::bad_alloc();
    return std::make_unique<FakeRestorer>(w);
  };
  std::vector<BenchCell> seen;
  RunOptions o = fake_options(w);
  o.on_cell = [&](const BenchCell& c) { seen.push_back(c); };
  const auto cells = run_grid(f, BenchGrid{{8}, {1, 2, 3}, 2, 0}, 1, o);
  ASSERT_EQ(cells.size(), 3u);
  EXPECT_TRUE(cells[0].ok());
  EXPECT_FALSE(cells[1].ok());
  EXPECT_TRUE(std::isnan(cells[1].mean_seconds));
  EXPECT_TRUE(cells[2].ok());
  EXPECT_EQ(seen.size(), 3u);
}

TEST(RunGrid, ImagesAreSeeded) {
  std::vector<double> first, second;
  for (auto* sink : {&first, &second}) {
    FakeWorld w;
    RunOptions o = fake_options(w);
    o.images = [sink](std::size_t side, std::mt19937_64& rng) {
      auto img = random_normal_image(side, rng);
      sink->push_back(img.pixels[0]);
      return img;
    };
    run_grid(fake_factory(w), BenchGrid{{8, 16}, {1, 2}, 2, 1}, 11, o);
  }
  EXPECT_EQ(first, second);
  EXPECT_EQ(first.size(), 12u);
}

TEST(RandomNormalImage, ClampedWithExpectedMoments) {
  std::mt19937_64 rng(3);
  const auto img = random_normal_image(200, rng);
  double sum = 0.0;
  for (double v : img.pixels) {
    ASSERT_GE(v, 0.0);
    ASSERT_LE(v, 1.0);
    sum += v;
  }
  EXPECT_NEAR(sum / static_cast<double>(img.pixels.size()), 0.5, 0.01);
}

TEST(InferenceFactory, RunsRealModel) {
  const auto params = nets::init_params(1, 4, 3);
  const BenchGrid grid{{16}, {1, 2}, 2, 1};
  for (auto p : {Precision::kFloat, Precision::kDouble}) {
    const auto cells = run_grid(inference_factory(params, p), grid, 1);
    ASSERT_EQ(cells.size(), 2u);
    for (const auto& c : cells) {
      EXPECT_TRUE(c.ok());
      EXPECT_GT(c.mean_seconds, 0.0);
      EXPECT_TRUE(std::isfinite(c.fps));
    }
  }
}

TEST(InferenceFactory, LargeSlowerThanSmall) {
  // Far corners of a desk grid: side 256 at T = 7 against side 32 at T = 1.
  const auto params = nets::init_params(1, 16, 3);
  const auto factory = inference_factory(params, Precision::kFloat);
  const auto small = run_grid(factory, BenchGrid{{32}, {1}, 3, 1}, 1);
  const auto large = run_grid(factory, BenchGrid{{256}, {7}, 3, 1}, 1);
  EXPECT_GT(large[0].mean_seconds, small[0].mean_seconds);
}

TEST(HeatmapCsv, TwoByTwoHasFourRowsAndHeader) {
  FakeWorld w;
  const auto cells = run_grid(fake_factory(w), BenchGrid{{8, 16}, {1, 2}, 2, 0}, 1, fake_options(w));
  const std::string csv = format_heatmap_csv(cells);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "size,T,mean_s,stddev_s,fps");
  EXPECT_EQ(csv.substr(csv.find('\n') + 1, csv.find('\n', csv.find('\n') + 1) - csv.find('\n') - 1), "8,1,1,0,1");
}

TEST(HeatmapCsv, RoundTrip) {
  std::vector<BenchCell> cells{cell(100, 1, 0.0123456789012345, 1e-4), cell(100, 2, 0.1 + 0.2, 3e-3),
                               cell(150, 1, 1.0 / 3.0, 0.0)};
  BenchCell failed;
  failed.size = 150;
  failed.loops = 2;
  failed.mean_seconds = failed.stddev_seconds = failed.fps = std::nan("");
  failed.error = "allocation failure";
  cells.push_back(failed);

  const auto back = parse_heatmap_csv(format_heatmap_csv(cells));
  ASSERT_EQ(back.size(), cells.size());
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(back[i], cells[i]);
  EXPECT_FALSE(back[3].ok());
  EXPECT_TRUE(std::isnan(back[3].mean_seconds));
}

TEST(HeatmapCsv, FileOutputDeterministic) {
  cmudrn::testing::TempDir dir("bench");
  std::string texts[2];
  for (auto& t : texts) {
    FakeWorld w;
    const auto cells = run_grid(fake_factory(w), BenchGrid{{8, 16}, {1, 2, 3}, 3, 1}, 5, fake_options(w));
    emit_heatmap_csv(cells, dir / "h.csv");
    t = cmudrn::testing::read_file(dir / "h.csv");
  }
  EXPECT_EQ(texts[0], texts[1]);
  EXPECT_FALSE(texts[0].empty());
}

TEST(HeatmapCsv, Errors) {
  EXPECT_THROW(parse_heatmap_csv(""), ParseError);
  EXPECT_THROW(parse_heatmap_csv("size,T\n"), ParseError);
  EXPECT_THROW(parse_heatmap_csv("size,T,mean_s,stddev_s,fps\n1,2,3\n"), ParseError);
  EXPECT_THROW(parse_heatmap_csv("size,T,mean_s,stddev_s,fps\nx,1,1,1,1\n"), ParseError);
  EXPECT_THROW(emit_heatmap_csv({}, "/nonexistent-dir/h.csv"), IoError);
}

TEST(HeatmapSvg, ColourRampEndpoints) {
  std::vector<BenchCell> cells{cell(100, 1, 1.0), cell(100, 2, 3.0), cell(150, 1, 2.0)};
  BenchCell failed = cell(150, 2, 1.0);
  failed.error = "allocation failure";
  cells.push_back(failed);
  const std::string svg = format_heatmap_svg(cells);
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  EXPECT_NE(svg.find("rgb(44,123,182)"), std::string::npos);   // fastest
  EXPECT_NE(svg.find("rgb(215,25,28)"), std::string::npos);    // slowest
  EXPECT_NE(svg.find("rgb(130,74,105)"), std::string::npos);   // midpoint
  EXPECT_NE(svg.find("rgb(160,160,160)"), std::string::npos);  // failed
  std::size_t rects = 0;
  for (std::size_t p = svg.find("<rect"); p != std::string::npos; p = svg.find("<rect", p + 1)) ++rects;
  EXPECT_EQ(rects, 4u);
}

TEST(Monotonicity, DetectsOnlyViolationsBeyondTolerance) {
  std::vector<BenchCell> ok{cell(100, 1, 1.0, 0.1), cell(100, 2, 2.0, 0.1), cell(200, 1, 4.0, 0.1),
                            cell(200, 2, 8.0, 0.1)};
  EXPECT_TRUE(monotonicity_violations(ok).empty());

  // Slightly faster but within 2 pooled stddev.
  auto noisy = ok;
  noisy[1].mean_seconds = 0.85;
  EXPECT_TRUE(monotonicity_violations(noisy).empty());

  auto bad = ok;
  bad[1].mean_seconds = 0.5;
  const auto v = monotonicity_violations(bad);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_NE(v[0].find("T=2"), std::string::npos);

  // Along the size axis.
  auto bad_size = ok;
  bad_size[3].mean_seconds = 1.0;
  EXPECT_EQ(monotonicity_violations(bad_size).size(), 2u);
}

TEST(LogLogSlope, RecoversPowerLaw) {
  std::vector<BenchCell> cells;
  for (std::size_t s : {100u, 200u, 300u, 400u}) {
    const double px = static_cast<double>(s * s);
    cells.push_back(cell(s, 1, 1e-6 * px));
    cells.push_back(cell(s, 4, 1e-9 * std::pow(px, 1.25)));
  }
  EXPECT_NEAR(loglog_slope(cells, 1), 1.0, 1e-12);
  EXPECT_NEAR(loglog_slope(cells, 4), 1.25, 1e-12);
  EXPECT_THROW(loglog_slope(cells, 7), std::invalid_argument);
}

TEST(BenchConfig, DefaultsMatchDeskGrid) {
  BenchConfig cfg;
  const auto g = cfg.grid();
  EXPECT_EQ(g.sizes.front(), 100u);
  EXPECT_EQ(g.sizes.back(), 500u);
  EXPECT_EQ(g.sizes.size(), 9u);
  EXPECT_EQ(g.loop_counts.size(), 7u);
  EXPECT_EQ(g.samples_per_cell, 30u);
}

TEST(BenchConfig, AppliesEntries) {
  BenchConfig cfg;
  cfg.apply(parse_config("size_from = 8\nsize_to = 24\nsize_step = 8\nloops = 1,4,7\nsamples = 3\n"
                         "warmup = 0\nseed = 9\nchannels = 4\nprecision = double\n"));
  EXPECT_EQ(cfg.grid().sizes, (std::vector<std::size_t>{8, 16, 24}));
  EXPECT_EQ(cfg.loops, (std::vector<int>{1, 4, 7}));
  EXPECT_EQ(cfg.seed, 9u);
  EXPECT_EQ(cfg.channels, 4u);
  EXPECT_EQ(cfg.precision, Precision::kDouble);
  EXPECT_EQ(BenchConfig::keys().size(), 9u);
}

TEST(BenchConfig, Rejections) {
  BenchConfig cfg;
  EXPECT_THROW(cfg.set("nope", "1"), ConfigError);
  EXPECT_THROW(cfg.set("precision", "half"), ConfigError);
  EXPECT_THROW(cfg.set("samples", "-1"), ConfigError);
  cfg.set("samples", "0");
  EXPECT_THROW(cfg.grid(), ConfigError);
}
