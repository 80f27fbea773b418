#pragma once

// Training: Adam, the two-pass supervision scheme, ablation switches,
// evaluation and checkpoints.
//
// Every clean image yields a (rain, snow) tuple. Each tuple is trained in
// two passes, rain first. In a pass the degraded image feeds both branches;
// the local and recurrence losses supervise only the branch matching the
// pass's weather label, while the global loss supervises the fused output
// in every pass.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cmudrn/config.hpp"
#include "cmudrn/data.hpp"
#include "cmudrn/losses.hpp"
#include "cmudrn/nets.hpp"

namespace cmudrn::train {

enum class ModelMode {
  kCmudrn,  // two stitched branches + fusion head
  kDrn,     // a single DRN branch (the single-task baseline)
};

struct TrainConfig {
  // Optimizer
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  // Schedule
  std::size_t batch_size = 4;
  std::size_t epochs = 50;
  std::size_t max_steps = 0;  // 0: no limit
  double train_fraction = 0.7;
  std::uint64_t seed = 1;

  // Model
  ModelMode mode = ModelMode::kCmudrn;
  data::Weather drn_label = data::Weather::kRain;
  int loops = 3;
  std::size_t channels = 16;
  double alpha_s = 0.5;
  bool stitch_after_f_in = true;
  bool stitch_after_recursive = true;

  // Ablation switches
  bool use_cross_stitch = true;
  bool use_ssim_term = true;
  bool use_frobenius_term = true;
  bool use_local_losses = true;
  bool use_recur_loss = true;
  bool use_global_loss = true;

  double weight_local = 1.0;
  double weight_recur = 1.0;
  double weight_global = 1.0;

  std::size_t ssim_window = 11;
  double ssim_sigma = 1.5;

  /// Sets one key; throws ConfigError for unknown keys or bad values.
  void set(std::string_view key, std::string_view value);
  void apply(std::span<const ConfigEntry> entries);
  /// Throws ConfigError when an invariant is violated.
  void validate() const;
  /// Every key in a fixed order, one `key = value` per line.
  std::string to_text() const;
  static TrainConfig from_text(std::string_view text);
  static std::vector<std::string> keys();

  losses::SsimConfig ssim() const;
  losses::LossTerms terms() const { return {use_ssim_term, use_frobenius_term}; }
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

std::string_view to_string(ModelMode m);

struct Model {
  nets::CmudrnParams params;
  ModelMode mode = ModelMode::kCmudrn;
  data::Weather drn_label = data::Weather::kRain;
};

/// Fresh parameters from the config's seed, channels, loop count and
/// stitch settings.
Model make_model(const TrainConfig& cfg);
/// Tensors updated by the optimizer (one branch only in DRN mode).
std::vector<nets::NamedTensor> trainable(const Model& model);

struct ModelOutput {
  Tensor restored;  // fused output (or the single branch output in DRN mode)
  nets::CmudrnOutput detail;
};

ModelOutput forward(const Model& model, const Tensor& y);
/// No-grad forward of a single image.
data::Image restore(const Model& model, const data::Image& degraded);

struct AdamState {
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
    friend bool operator==(const Moments&, const Moments&) = default;
  };
  std::uint64_t step = 0;
  std::map<std::string, Moments> moments;
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam update of every tensor in `params`. Throws
/// std::invalid_argument naming the first parameter without a gradient.
void adam_step(std::span<const nets::NamedTensor> params, AdamState& state, const AdamConfig& cfg);

class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, std::uint64_t step)
      : std::runtime_error(what + " at step " + std::to_string(step)), step_(step) {}
  std::uint64_t step() const noexcept { return step_; }

 private:
  std::uint64_t step_;
};

/// A batch of same-label pairs.
struct Batch {
  Tensor degraded;
  Tensor clean;
  data::Weather label = data::Weather::kRain;
};

Batch make_batch(std::span<const data::ImagePair* const> pairs);

/// Assembles the per-component losses for one forward pass without
/// updating anything. `combined` is the weighted sum that is minimized.
struct StepLosses {
  losses::LossReport report;
  Tensor combined;
};

StepLosses compute_losses(const Model& model, const Batch& batch, const TrainConfig& cfg);

class Trainer {
 public:
  using StepCallback = std::function<void(std::uint64_t step, const losses::LossReport&)>;

  explicit Trainer(TrainConfig cfg);
  Trainer(TrainConfig cfg, Model model, AdamState state);

  /// Forward, backward and one Adam step. Throws TrainingError on a
  /// non-finite loss.
  losses::LossReport train_step(const Batch& batch);
  losses::LossReport train_step(const data::ImagePair& pair);

  /// One pass over `tuples`: for each group of batch_size tuples, the rain
  /// step then the snow step. Returns the mean step report. Stops early once
  /// max_steps (if set) is reached.
  losses::LossReport train_epoch(std::span<const data::WeatherTuple> tuples, const StepCallback& on_step = {});

  /// Up to cfg.epochs epochs (or until max_steps). Steps already counted by
  /// the optimizer state are treated as done, so a trainer rebuilt from a
  /// checkpoint continues the schedule where it stopped.
  losses::LossReport fit(std::span<const data::WeatherTuple> tuples, const StepCallback& on_step = {});

  /// Optimizer steps in one epoch over `tuple_count` tuples.
  std::size_t steps_per_epoch(std::size_t tuple_count) const;

  const TrainConfig& config() const noexcept { return cfg_; }
  const Model& model() const noexcept { return model_; }
  Model& model() noexcept { return model_; }
  const AdamState& optimizer() const noexcept { return state_; }
  std::uint64_t steps() const noexcept { return state_.step; }
  bool done() const noexcept { return cfg_.max_steps != 0 && state_.step >= cfg_.max_steps; }

 private:
  losses::LossReport run_epoch(std::span<const data::WeatherTuple> tuples, std::size_t skip,
                               const StepCallback& on_step);

  TrainConfig cfg_;
  Model model_;
  AdamState state_;
};

struct LabelMetrics {
  std::size_t count = 0;
  double psnr = 0.0;
  double ssim = 0.0;
  friend bool operator==(const LabelMetrics&, const LabelMetrics&) = default;
};

struct EvalReport {
  LabelMetrics rain;
  LabelMetrics snow;
  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

/// Mean PSNR (dB, +inf if any image is restored exactly) and mean SSIM of
/// the restored output against the clean image, per weather label.
EvalReport evaluate(const Model& model, std::span<const data::WeatherTuple> test, const losses::SsimConfig& ssim = {});

/// Fixed-format table: header `label  psnr_db  ssim`, then one row per label.
std::string format_eval_table(const EvalReport& report);

/// `step,local_rain,local_snow,recur,global,combined` rows.
std::string log_header();
std::string log_row(std::uint64_t step, const losses::LossReport& r);

// Checkpoints: little-endian, versioned header, name-length-prefixed tensor
// records with 8-byte float payloads.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  TrainConfig config;
  Model model;
  AdamState optimizer;
};

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt);
/// Throws ParseError on malformed content and VersionError on a version
/// other than kCheckpointVersion.
Checkpoint deserialize(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cmudrn::train
