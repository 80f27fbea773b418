// cmudrn: data generation, training, evaluation, inference and latency
// benchmarking from the command line.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 missing or
// unwritable file, 4 malformed file or configuration, 5 checkpoint version
// mismatch. Log verbosity comes from CMUDRN_LOG (trace, debug, info, warn,
// error, off; default info).

#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "cmudrn/bench.hpp"
#include "cmudrn/config.hpp"
#include "cmudrn/data.hpp"
#include "cmudrn/errors.hpp"
#include "cmudrn/nets.hpp"
#include "cmudrn/train.hpp"

namespace fs = std::filesystem;
using namespace cmudrn;

namespace {

enum Exit : int {
  kOk = 0,
  kRuntime = 1,
  kUsage = 2,
  kMissingFile = 3,
  kMalformed = 4,
  kVersion = 5,
};

void setup_logging() {
  auto logger = spdlog::stderr_logger_st("cmudrn");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("CMUDRN_LOG")) {
    const std::string name = env;
    const auto level = spdlog::level::from_str(name);
    // from_str maps unknown names to off; only accept that for "off" itself.
    if (level == spdlog::level::off && name != "off")
      spdlog::warn("ignoring unknown CMUDRN_LOG level '{}'", name);
    else
      spdlog::set_level(level);
  }
}

void require_exists(const fs::path& p, const char* what) {
  if (!fs::exists(p)) throw IoError(std::string(what) + " '" + p.string() + "' does not exist");
}

// `key=value` overrides given on the command line.
std::vector<ConfigEntry> parse_overrides(const std::vector<std::string>& sets) {
  std::vector<ConfigEntry> out;
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects KEY=VALUE, got '" + s + "'");
    out.push_back({s.substr(0, eq), s.substr(eq + 1), 0});
  }
  return out;
}

template <class T>
void override_if(std::vector<ConfigEntry>& entries, const char* key, const std::optional<T>& v) {
  if (!v) return;
  if constexpr (std::is_same_v<T, std::string>)
    entries.push_back({key, *v, 0});
  else
    entries.push_back({key, format_real(static_cast<double>(*v)), 0});
}

template <class T>
void override_count(std::vector<ConfigEntry>& entries, const char* key, const std::optional<T>& v) {
  if (v) entries.push_back({key, std::to_string(*v), 0});
}

std::vector<data::WeatherTuple> select_split(const std::vector<data::WeatherTuple>& all, double fraction,
                                             const std::string& which) {
  if (which == "all") return all;
  auto parts = data::split(all, fraction);
  return which == "train" ? parts.train : parts.test;
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string out;
  std::uint64_t seed = 1;
  std::size_t count = 200;
  std::size_t size = 64;
};

int run_gen_data(const GenDataArgs& a) {
  spdlog::info("generating {} scenes of {}x{} (seed {})", a.count, a.size, a.size, a.seed);
  const auto clean = data::gen_clean(a.seed, a.count, a.size);
  const auto tuples = data::make_tuples(clean, a.seed);
  fs::create_directories(a.out);
  data::write_dataset(a.out, tuples);
  spdlog::info("wrote {} pairs to {}", 2 * tuples.size(), a.out);
  return kOk;
}

struct TrainArgs {
  std::string data;
  std::string config;
  std::string out;
  std::string resume;
  std::string log;
  std::vector<std::string> sets;
  std::optional<std::size_t> steps, epochs, batch_size, channels;
  std::optional<std::uint64_t> seed;
  std::optional<int> loops;
  std::optional<double> lr;
  std::optional<std::string> mode;
};

int run_train(const TrainArgs& a) {
  require_exists(a.data, "dataset directory");
  train::TrainConfig cfg;
  std::optional<train::Checkpoint> resume;
  if (!a.resume.empty()) {
    require_exists(a.resume, "checkpoint");
    resume = train::load_checkpoint(a.resume);
    cfg = resume->config;
  }
  if (!a.config.empty()) {
    require_exists(a.config, "config file");
    cfg.apply(read_config(a.config));
  }
  std::vector<ConfigEntry> flags;
  override_count(flags, "max_steps", a.steps);
  override_count(flags, "epochs", a.epochs);
  override_count(flags, "batch_size", a.batch_size);
  override_count(flags, "channels", a.channels);
  override_count(flags, "seed", a.seed);
  override_count(flags, "loops", a.loops);
  override_if(flags, "lr", a.lr);
  override_if(flags, "mode", a.mode);
  for (auto& e : parse_overrides(a.sets)) flags.push_back(std::move(e));
  cfg.apply(flags);
  cfg.validate();

  const auto all = data::read_dataset(a.data);
  const auto tuples = data::split(all, cfg.train_fraction).train;
  if (tuples.empty()) throw ConfigError("training split is empty");

  std::optional<train::Trainer> trainer;
  if (resume) {
    nets::set_loops(resume->model.params, cfg.loops);
    trainer.emplace(cfg, std::move(resume->model), std::move(resume->optimizer));
    spdlog::info("resuming at step {}", trainer->steps());
  } else {
    trainer.emplace(cfg);
  }

  const fs::path log_path = a.log.empty() ? fs::path(a.out + ".log.csv") : fs::path(a.log);
  std::ofstream log(log_path, std::ios::binary | std::ios::trunc);
  if (!log) throw IoError("cannot open log '" + log_path.string() + "' for writing");
  log << train::log_header();

  spdlog::info("training on {} tuples ({} steps per epoch, {} epochs, max_steps {})", tuples.size(),
               trainer->steps_per_epoch(tuples.size()), cfg.epochs, cfg.max_steps);
  const auto last = trainer->fit(tuples, [&](std::uint64_t step, const losses::LossReport& r) {
    log << train::log_row(step, r);
    spdlog::debug("step {} combined {}", step, r.combined);
  });
  log.flush();
  if (!log) throw IoError("write to '" + log_path.string() + "' failed");

  train::save_checkpoint(a.out, {trainer->config(), trainer->model(), trainer->optimizer()});
  spdlog::info("finished at step {}, last epoch mean loss {}; checkpoint {}", trainer->steps(), last.combined,
               a.out);
  return kOk;
}

struct EvalArgs {
  std::string data;
  std::string ckpt;
  std::string split = "test";
};

int run_eval(const EvalArgs& a) {
  require_exists(a.data, "dataset directory");
  require_exists(a.ckpt, "checkpoint");
  const auto ckpt = train::load_checkpoint(a.ckpt);
  const auto tuples = select_split(data::read_dataset(a.data), ckpt.config.train_fraction, a.split);
  if (tuples.empty()) throw ConfigError("the " + a.split + " split is empty");
  spdlog::info("evaluating on {} tuples ({} split)", tuples.size(), a.split);
  const auto report = train::evaluate(ckpt.model, tuples, ckpt.config.ssim());
  std::cout << train::format_eval_table(report);
  return kOk;
}

struct InferArgs {
  std::string ckpt;
  std::string in;
  std::string out;
};

int run_infer(const InferArgs& a) {
  require_exists(a.ckpt, "checkpoint");
  require_exists(a.in, "input image");
  const auto ckpt = train::load_checkpoint(a.ckpt);
  const auto restored = train::restore(ckpt.model, data::read_image(a.in));
  data::write_image(a.out, restored);
  return kOk;
}

struct BenchArgs {
  std::string config;
  std::string out;
  std::string svg;
  std::string ckpt;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> samples, warmup;
  std::optional<std::string> precision;
  std::optional<double> fake_clock;
};

int run_bench(const BenchArgs& a) {
  bench::BenchConfig cfg;
  if (!a.config.empty()) {
    require_exists(a.config, "config file");
    cfg.apply(read_config(a.config));
  }
  std::vector<ConfigEntry> flags;
  override_count(flags, "seed", a.seed);
  override_count(flags, "samples", a.samples);
  override_count(flags, "warmup", a.warmup);
  override_if(flags, "precision", a.precision);
  for (auto& e : parse_overrides(a.sets)) flags.push_back(std::move(e));
  cfg.apply(flags);
  const auto grid = cfg.grid();

  nets::CmudrnParams params;
  if (!a.ckpt.empty()) {
    require_exists(a.ckpt, "checkpoint");
    params = train::load_checkpoint(a.ckpt).model.params;
  } else {
    params = nets::init_params(cfg.seed, cfg.channels, 1);
  }

  bench::RunOptions opts;
  double ticks = 0.0;
  if (a.fake_clock) {
    // Deterministic clock for reproducibility checks: each reading advances
    // by a fixed step.
    const double step = *a.fake_clock;
    opts.clock = [&ticks, step] { return ticks += step; };
  }
  opts.on_cell = [](const bench::BenchCell& c) {
    if (c.ok())
      spdlog::info("size {:4} T={} mean {:.6f} s (sd {:.6f}) {:.2f} fps", c.size, c.loops, c.mean_seconds,
                   c.stddev_seconds, c.fps);
    else
      spdlog::warn("size {:4} T={} skipped: {}", c.size, c.loops, c.error);
  };

  const auto precision = cfg.precision;
  const auto cells = bench::run_grid(bench::inference_factory(params, precision), grid, cfg.seed, opts);
  bench::emit_heatmap_csv(cells, a.out);
  if (!a.svg.empty()) {
    std::ofstream svg(a.svg, std::ios::binary | std::ios::trunc);
    if (!svg) throw IoError("cannot open '" + a.svg + "' for writing");
    svg << bench::format_heatmap_svg(cells);
    if (!svg) throw IoError("write to '" + a.svg + "' failed");
  }
  return kOk;
}

int report(int code, const std::string& what) {
  std::cerr << "cmudrn: error: " << what << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();

  CLI::App app{"Joint rain and snow removal: data, training, evaluation, inference, benchmarking", "cmudrn"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "cmudrn 0.1.0");

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic rain/snow dataset");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--seed", gen.seed, "Random seed")->capture_default_str();
  gen_cmd->add_option("--count", gen.count, "Number of clean scenes")->capture_default_str()->check(
      CLI::PositiveNumber);
  gen_cmd->add_option("--size", gen.size, "Image side in pixels (>= 32)")->capture_default_str()->check(
      CLI::Range(32, 1 << 14));

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint plus a loss log");
  train_cmd->add_option("--data", tr.data, "Dataset directory")->required();
  train_cmd->add_option("--config", tr.config, "key = value training config");
  train_cmd->add_option("--out", tr.out, "Checkpoint to write")->required();
  train_cmd->add_option("--resume", tr.resume, "Checkpoint to continue from");
  train_cmd->add_option("--log", tr.log, "Loss log CSV (default: <out>.log.csv)");
  train_cmd->add_option("--steps", tr.steps, "Stop after this many optimizer steps (max_steps)");
  train_cmd->add_option("--epochs", tr.epochs, "Epoch limit");
  train_cmd->add_option("--batch-size", tr.batch_size, "Tuples per step");
  train_cmd->add_option("--lr", tr.lr, "Adam learning rate");
  train_cmd->add_option("--seed", tr.seed, "Initialization seed");
  train_cmd->add_option("--loops", tr.loops, "Recursion count T");
  train_cmd->add_option("--channels", tr.channels, "Feature channels per branch");
  train_cmd->add_option("--mode", tr.mode, "cmudrn or drn")->check(CLI::IsMember({"cmudrn", "drn"}));
  train_cmd->add_option("--set", tr.sets, "Override any config key: KEY=VALUE (repeatable)");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Print per-label PSNR and SSIM");
  eval_cmd->add_option("--data", ev.data, "Dataset directory")->required();
  eval_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
  eval_cmd->add_option("--split", ev.split, "train, test or all")
      ->capture_default_str()
      ->check(CLI::IsMember({"train", "test", "all"}));

  InferArgs inf;
  auto* infer_cmd = app.add_subcommand("infer", "Restore one PPM image (weather type not needed)");
  infer_cmd->add_option("--ckpt", inf.ckpt, "Checkpoint")->required();
  infer_cmd->add_option("--in", inf.in, "Degraded input (PPM)")->required();
  infer_cmd->add_option("--out", inf.out, "Restored output (PPM)")->required();

  BenchArgs bn;
  auto* bench_cmd = app.add_subcommand("bench", "Time forward passes over a size x T grid");
  bench_cmd->add_option("--config", bn.config, "key = value bench config");
  bench_cmd->add_option("--out", bn.out, "Heatmap CSV to write")->required();
  bench_cmd->add_option("--svg", bn.svg, "Also write an SVG heatmap");
  bench_cmd->add_option("--ckpt", bn.ckpt, "Time these weights instead of a fresh initialization");
  bench_cmd->add_option("--seed", bn.seed, "Seed for weights and images");
  bench_cmd->add_option("--samples", bn.samples, "Timed passes per cell");
  bench_cmd->add_option("--warmup", bn.warmup, "Discarded passes per cell");
  bench_cmd->add_option("--precision", bn.precision, "float or double")->check(CLI::IsMember({"float", "double"}));
  bench_cmd->add_option("--fake-clock", bn.fake_clock,
                        "Replace the clock with one that advances by this many seconds per reading");
  bench_cmd->add_option("--set", bn.sets, "Override any config key: KEY=VALUE (repeatable)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen_cmd) return run_gen_data(gen);
    if (*train_cmd) return run_train(tr);
    if (*eval_cmd) return run_eval(ev);
    if (*infer_cmd) return run_infer(inf);
    if (*bench_cmd) return run_bench(bn);
  } catch (const IoError& e) {
    return report(kMissingFile, e.what());
  } catch (const VersionError& e) {
    return report(kVersion, e.what());
  } catch (const ParseError& e) {
    return report(kMalformed, e.what());
  } catch (const ConfigError& e) {
    return report(kMalformed, e.what());
  } catch (const fs::filesystem_error& e) {
    return report(kMissingFile, e.what());
  } catch (const std::exception& e) {
    return report(kRuntime, e.what());
  }
  return kUsage;
}
