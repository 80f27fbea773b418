#include "cmudrn/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "cmudrn/errors.hpp"

namespace cmudrn::train {

// ---------------------------------------------------------------------------
// TrainConfig

namespace {

struct Field {
  const char* key;
  void (*set)(TrainConfig&, std::string_view key, std::string_view value);
  std::string (*get)(const TrainConfig&);
};

std::size_t parse_count(std::string_view key, std::string_view value) {
  const std::int64_t v = parse_integer(key, value);
  if (v < 0) throw ConfigError("config key '" + std::string(key) + "' must be non-negative");
  return static_cast<std::size_t>(v);
}

std::string bool_text(bool b) { return b ? "true" : "false"; }

#define CMUDRN_REAL(name)                                                                              \
  Field {                                                                                              \
    #name, [](TrainConfig& c, std::string_view k, std::string_view v) { c.name = parse_real(k, v); }, \
        [](const TrainConfig& c) { return format_real(c.name); }                                       \
  }
#define CMUDRN_COUNT(name)                                                                              \
  Field {                                                                                               \
    #name, [](TrainConfig& c, std::string_view k, std::string_view v) { c.name = parse_count(k, v); }, \
        [](const TrainConfig& c) { return std::to_string(c.name); }                                     \
  }
#define CMUDRN_BOOL(name)                                                                              \
  Field {                                                                                              \
    #name, [](TrainConfig& c, std::string_view k, std::string_view v) { c.name = parse_bool(k, v); }, \
        [](const TrainConfig& c) { return bool_text(c.name); }                                         \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      CMUDRN_REAL(lr),
      CMUDRN_REAL(beta1),
      CMUDRN_REAL(beta2),
      CMUDRN_REAL(epsilon),
      CMUDRN_COUNT(batch_size),
      CMUDRN_COUNT(epochs),
      CMUDRN_COUNT(max_steps),
      CMUDRN_REAL(train_fraction),
      Field{"seed",
            [](TrainConfig& c, std::string_view k, std::string_view v) {
              c.seed = static_cast<std::uint64_t>(parse_count(k, v));
            },
            [](const TrainConfig& c) { return std::to_string(c.seed); }},
      Field{"mode",
            [](TrainConfig& c, std::string_view, std::string_view v) {
              if (v == "cmudrn")
                c.mode = ModelMode::kCmudrn;
              else if (v == "drn")
                c.mode = ModelMode::kDrn;
              else
                throw ConfigError("config key 'mode' must be cmudrn or drn, got '" + std::string(v) + "'");
            },
            [](const TrainConfig& c) { return std::string(to_string(c.mode)); }},
      Field{"drn_label",
            [](TrainConfig& c, std::string_view, std::string_view v) {
              try {
                c.drn_label = data::parse_weather(v);
              } catch (const std::invalid_argument& e) {
                throw ConfigError(std::string("config key 'drn_label': ") + e.what());
              }
            },
            [](const TrainConfig& c) { return std::string(data::to_string(c.drn_label)); }},
      Field{"loops",
            [](TrainConfig& c, std::string_view k, std::string_view v) {
              c.loops = static_cast<int>(parse_integer(k, v));
            },
            [](const TrainConfig& c) { return std::to_string(c.loops); }},
      CMUDRN_COUNT(channels),
      CMUDRN_REAL(alpha_s),
      CMUDRN_BOOL(stitch_after_f_in),
      CMUDRN_BOOL(stitch_after_recursive),
      CMUDRN_BOOL(use_cross_stitch),
      CMUDRN_BOOL(use_ssim_term),
      CMUDRN_BOOL(use_frobenius_term),
      CMUDRN_BOOL(use_local_losses),
      CMUDRN_BOOL(use_recur_loss),
      CMUDRN_BOOL(use_global_loss),
      CMUDRN_REAL(weight_local),
      CMUDRN_REAL(weight_recur),
      CMUDRN_REAL(weight_global),
      CMUDRN_COUNT(ssim_window),
      CMUDRN_REAL(ssim_sigma),
  };
  return table;
}

#undef CMUDRN_REAL
#undef CMUDRN_COUNT
#undef CMUDRN_BOOL

}  // namespace

void TrainConfig::set(std::string_view key, std::string_view value) {
  for (const Field& f : fields()) {
    if (key == f.key) {
      f.set(*this, key, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void TrainConfig::apply(std::span<const ConfigEntry> entries) {
  for (const auto& e : entries) set(e.key, e.value);
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (loops < 1) throw ConfigError("loops must be >= 1");
  if (channels == 0) throw ConfigError("channels must be >= 1");
  if (!(alpha_s >= 0.0 && alpha_s <= 1.0)) throw ConfigError("alpha_s must lie in [0, 1]");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train_fraction must lie in (0, 1)");
  if (weight_local < 0.0 || weight_recur < 0.0 || weight_global < 0.0)
    throw ConfigError("loss weights must be non-negative");
  if (!use_local_losses && !use_recur_loss && !use_global_loss)
    throw ConfigError("at least one of use_local_losses, use_recur_loss, use_global_loss must be enabled");
  if (mode == ModelMode::kDrn && !use_local_losses && !use_recur_loss)
    throw ConfigError("drn mode needs use_local_losses or use_recur_loss");
  try {
    ssim().validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

std::string TrainConfig::to_text() const {
  std::string out;
  for (const Field& f : fields()) {
    out += f.key;
    out += " = ";
    out += f.get(*this);
    out += '\n';
  }
  return out;
}

TrainConfig TrainConfig::from_text(std::string_view text) {
  TrainConfig cfg;
  const auto entries = parse_config(text);
  cfg.apply(entries);
  return cfg;
}

std::vector<std::string> TrainConfig::keys() {
  std::vector<std::string> out;
  for (const Field& f : fields()) out.emplace_back(f.key);
  return out;
}

losses::SsimConfig TrainConfig::ssim() const {
  losses::SsimConfig s;
  s.window = ssim_window;
  s.sigma = ssim_sigma;
  return s;
}

std::string_view to_string(ModelMode m) { return m == ModelMode::kCmudrn ? "cmudrn" : "drn"; }

// ---------------------------------------------------------------------------
// Model

Model make_model(const TrainConfig& cfg) {
  Model model;
  model.params = nets::init_params(cfg.seed, cfg.channels, cfg.loops);
  model.params.alpha_s = cfg.alpha_s;
  model.params.stitch_enabled = cfg.use_cross_stitch;
  model.params.sites = {cfg.stitch_after_f_in, cfg.stitch_after_recursive};
  model.mode = cfg.mode;
  model.drn_label = cfg.drn_label;
  return model;
}

namespace {

const nets::DrnParams& drn_branch(const Model& model) {
  return model.drn_label == data::Weather::kRain ? model.params.rain : model.params.snow;
}

}  // namespace

std::vector<nets::NamedTensor> trainable(const Model& model) {
  if (model.mode == ModelMode::kDrn)
    return nets::named_parameters(drn_branch(model), std::string(data::to_string(model.drn_label)));
  return nets::named_parameters(model.params);
}

ModelOutput forward(const Model& model, const Tensor& y) {
  ModelOutput out;
  if (model.mode == ModelMode::kDrn) {
    auto drn = nets::drn_forward(drn_branch(model), y);
    out.restored = drn.output;
    if (model.drn_label == data::Weather::kRain) {
      out.detail.rain_out = drn.output;
      out.detail.rain_intermediates = std::move(drn.intermediates);
    } else {
      out.detail.snow_out = drn.output;
      out.detail.snow_intermediates = std::move(drn.intermediates);
    }
    out.detail.fused = out.restored;
    return out;
  }
  out.detail = nets::cmudrn_forward(model.params, y);
  out.restored = out.detail.fused;
  return out;
}

data::Image restore(const Model& model, const data::Image& degraded) {
  NoGradGuard guard;
  return data::image_from(forward(model, data::to_tensor(degraded)).restored);
}

// ---------------------------------------------------------------------------
// Adam

void adam_step(std::span<const nets::NamedTensor> params, AdamState& state, const AdamConfig& cfg) {
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) throw std::invalid_argument("adam_step: parameter '" + p.name + "' has no gradient");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);
  for (const auto& p : params) {
    Tensor tensor = p.tensor;
    const auto g = tensor.grad();
    auto& mom = state.moments[p.name];
    if (mom.m.size() != g.size()) {
      mom.m.assign(g.size(), 0.0);
      mom.v.assign(g.size(), 0.0);
    }
    auto w = tensor.mutable_values();
    for (std::size_t i = 0; i < g.size(); ++i) {
      mom.m[i] = cfg.beta1 * mom.m[i] + (1.0 - cfg.beta1) * g[i];
      mom.v[i] = cfg.beta2 * mom.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = mom.m[i] / correction1;
      const double v_hat = mom.v[i] / correction2;
      w[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }
}

// ---------------------------------------------------------------------------
// Loss assembly and training

Batch make_batch(std::span<const data::ImagePair* const> pairs) {
  if (pairs.empty()) throw std::invalid_argument("make_batch: no pairs");
  std::vector<const data::Image*> degraded, clean;
  for (const auto* p : pairs) {
    if (p->label != pairs[0]->label) throw std::invalid_argument("make_batch: mixed weather labels");
    degraded.push_back(&p->degraded);
    clean.push_back(&p->clean);
  }
  return {data::to_tensor(degraded), data::to_tensor(clean), pairs[0]->label};
}

StepLosses compute_losses(const Model& model, const Batch& batch, const TrainConfig& cfg) {
  const auto ssim_cfg = cfg.ssim();
  const auto terms = cfg.terms();
  const ModelOutput out = forward(model, batch.degraded);
  const bool rain = batch.label == data::Weather::kRain;
  const Tensor& branch_out = rain ? out.detail.rain_out : out.detail.snow_out;
  const auto& intermediates = rain ? out.detail.rain_intermediates : out.detail.snow_intermediates;

  StepLosses result;
  std::vector<Tensor> weighted;
  const bool branch_available = branch_out.defined();

  if (cfg.use_local_losses && branch_available) {
    Tensor l = losses::local_loss(branch_out, batch.clean, ssim_cfg, terms);
    (rain ? result.report.local_rain : result.report.local_snow) = l.item();
    weighted.push_back(scale(l, cfg.weight_local));
  }
  if (cfg.use_recur_loss && branch_available) {
    Tensor r = losses::recur_loss(intermediates, batch.clean, ssim_cfg, terms);
    (rain ? result.report.recur_rain : result.report.recur_snow) = r.item();
    weighted.push_back(scale(r, cfg.weight_recur));
  }
  if (cfg.use_global_loss && model.mode == ModelMode::kCmudrn) {
    Tensor g = losses::global_loss(out.restored, batch.clean, ssim_cfg, terms);
    result.report.global = g.item();
    weighted.push_back(scale(g, cfg.weight_global));
  }

  Tensor combined;
  for (auto& t : weighted) combined = combined.defined() ? add(combined, t) : t;
  result.combined = combined.defined() ? combined : Tensor::scalar(0.0);
  result.report.combined = result.combined.item();
  return result;
}

Trainer::Trainer(TrainConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  model_ = make_model(cfg_);
}

Trainer::Trainer(TrainConfig cfg, Model model, AdamState state)
    : cfg_(std::move(cfg)), model_(std::move(model)), state_(std::move(state)) {
  cfg_.validate();
  nets::validate(model_.params);
}

losses::LossReport Trainer::train_step(const Batch& batch) {
  const std::uint64_t step_index = state_.step + 1;
  StepLosses losses = compute_losses(model_, batch, cfg_);
  if (!std::isfinite(losses.report.combined)) throw TrainingError("non-finite loss", step_index);

  const auto params = trainable(model_);
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
  // Every term can be switched off (e.g. both SSIM and Frobenius summands);
  // the step still counts but has nothing to differentiate.
  if (losses.combined.requires_grad()) backward(losses.combined, /*accumulate=*/true);
  adam_step(params, state_, {cfg_.lr, cfg_.beta1, cfg_.beta2, cfg_.epsilon});
  return losses.report;
}

losses::LossReport Trainer::train_step(const data::ImagePair& pair) {
  const data::ImagePair* p = &pair;
  return train_step(make_batch(std::span<const data::ImagePair* const>(&p, 1)));
}

std::size_t Trainer::steps_per_epoch(std::size_t tuple_count) const {
  const std::size_t batches = (tuple_count + cfg_.batch_size - 1) / cfg_.batch_size;
  return cfg_.mode == ModelMode::kDrn ? batches : 2 * batches;
}

losses::LossReport Trainer::train_epoch(std::span<const data::WeatherTuple> tuples, const StepCallback& on_step) {
  return run_epoch(tuples, 0, on_step);
}

losses::LossReport Trainer::run_epoch(std::span<const data::WeatherTuple> tuples, std::size_t skip,
                                      const StepCallback& on_step) {
  if (tuples.empty()) throw std::invalid_argument("train_epoch: empty dataset");
  losses::LossReport total;
  std::size_t steps = 0;
  std::size_t position = 0;
  std::vector<const data::ImagePair*> rain, snow;
  for (std::size_t start = 0; start < tuples.size() && !done(); start += cfg_.batch_size) {
    const std::size_t end = std::min(start + cfg_.batch_size, tuples.size());
    rain.clear();
    snow.clear();
    for (std::size_t i = start; i < end; ++i) {
      rain.push_back(&tuples[i].rain);
      snow.push_back(&tuples[i].snow);
    }
    for (const auto* group : {&rain, &snow}) {
      if (done()) break;
      if (cfg_.mode == ModelMode::kDrn && (*group)[0]->label != cfg_.drn_label) continue;
      if (position++ < skip) continue;
      const auto report = train_step(make_batch(*group));
      total += report;
      ++steps;
      if (on_step) on_step(state_.step, report);
    }
  }
  if (steps > 0) total /= static_cast<double>(steps);
  return total;
}

losses::LossReport Trainer::fit(std::span<const data::WeatherTuple> tuples, const StepCallback& on_step) {
  if (tuples.empty()) throw std::invalid_argument("fit: empty dataset");
  const std::size_t per_epoch = steps_per_epoch(tuples.size());
  std::size_t epoch = static_cast<std::size_t>(state_.step / per_epoch);
  std::size_t skip = static_cast<std::size_t>(state_.step % per_epoch);
  losses::LossReport last;
  for (; epoch < cfg_.epochs && !done(); ++epoch, skip = 0) last = run_epoch(tuples, skip, on_step);
  return last;
}

// ---------------------------------------------------------------------------
// Evaluation

EvalReport evaluate(const Model& model, std::span<const data::WeatherTuple> test, const losses::SsimConfig& ssim) {
  if (test.empty()) throw std::invalid_argument("evaluate: empty test set");
  NoGradGuard guard;
  EvalReport report;
  for (const auto& t : test) {
    for (const data::ImagePair* p : {&t.rain, &t.snow}) {
      const Tensor clean = data::to_tensor(p->clean);
      const Tensor restored = forward(model, data::to_tensor(p->degraded)).restored;
      LabelMetrics& m = p->label == data::Weather::kRain ? report.rain : report.snow;
      m.psnr += losses::psnr(restored.values(), clean.values());
      m.ssim += losses::ssim(restored, clean, ssim).item();
      ++m.count;
    }
  }
  for (LabelMetrics* m : {&report.rain, &report.snow}) {
    if (m->count == 0) continue;
    m->psnr /= static_cast<double>(m->count);
    m->ssim /= static_cast<double>(m->count);
  }
  return report;
}

std::string format_eval_table(const EvalReport& report) {
  std::string out = "label  psnr_db  ssim\n";
  const auto row = [&](const char* label, const LabelMetrics& m) {
    char buf[128];
    if (std::isinf(m.psnr))
      std::snprintf(buf, sizeof buf, "%s  %s  %.4f\n", label, m.psnr > 0 ? "inf" : "-inf", m.ssim);
    else
      std::snprintf(buf, sizeof buf, "%s  %.4f  %.4f\n", label, m.psnr, m.ssim);
    out += buf;
  };
  row("rain", report.rain);
  row("snow", report.snow);
  return out;
}

std::string log_header() { return "step,local_rain,local_snow,recur,global,combined\n"; }

std::string log_row(std::uint64_t step, const losses::LossReport& r) {
  return std::to_string(step) + "," + format_real(r.local_rain) + "," + format_real(r.local_snow) + "," +
         format_real(r.recur()) + "," + format_real(r.global) + "," + format_real(r.combined) + "\n";
}

}  // namespace cmudrn::train
