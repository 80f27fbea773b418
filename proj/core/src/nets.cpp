#include "cmudrn/nets.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "cmudrn/conv_kernels.hpp"
#include "cmudrn/errors.hpp"

namespace cmudrn::nets {

namespace {

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

ConvLayer make_layer(const ConvSpec& spec, std::mt19937_64& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(spec.fan_in()));
  std::vector<double> w(spec.weight_shape().numel());
  for (double& v : w) v = bound * (2.0 * uniform01(rng) - 1.0);
  return {spec, Tensor::from_values(spec.weight_shape(), std::move(w), true),
          Tensor::zeros(spec.bias_shape(), true)};
}

ConvLayer zero_layer(const ConvSpec& spec) {
  return {spec, Tensor::zeros(spec.weight_shape(), true), Tensor::zeros(spec.bias_shape(), true)};
}

DrnParams make_branch(std::size_t channels, int loops, std::mt19937_64& rng) {
  DrnParams p;
  p.f_in = make_layer(ConvSpec::same(kImageChannels, channels), rng);
  p.res1.first = make_layer(ConvSpec::same(channels, channels), rng);
  p.res1.second = make_layer(ConvSpec::same(channels, channels), rng);
  p.res2.first = make_layer(ConvSpec::same(channels, channels), rng);
  p.res2.second = make_layer(ConvSpec::same(channels, channels), rng);
  p.f_out = make_layer(ConvSpec::same(channels, kImageChannels), rng);
  p.loops = loops;
  return p;
}

void validate_layer(const ConvLayer& layer, const std::string& name) {
  layer.spec.validate();
  const Shape ws = layer.spec.weight_shape();
  if (!layer.weight.defined() || layer.weight.shape() != ws)
    throw ShapeError(name, "weight numel", ws.numel(), layer.weight.defined() ? layer.weight.numel() : 0);
  if (!layer.bias.defined() || layer.bias.numel() != layer.spec.out_channels)
    throw ShapeError(name, "bias numel", layer.spec.out_channels, layer.bias.defined() ? layer.bias.numel() : 0);
}

void validate_branch(const DrnParams& p, const std::string& prefix) {
  if (p.loops < 1) throw std::invalid_argument(prefix + ": loop count T must be >= 1");
  validate_layer(p.f_in, prefix + ".f_in");
  validate_layer(p.res1.first, prefix + ".res1.first");
  validate_layer(p.res1.second, prefix + ".res1.second");
  validate_layer(p.res2.first, prefix + ".res2.first");
  validate_layer(p.res2.second, prefix + ".res2.second");
  validate_layer(p.f_out, prefix + ".f_out");
  if (p.f_in.spec.in_channels != kImageChannels)
    throw ShapeError(prefix + ".f_in", "in_channels", kImageChannels, p.f_in.spec.in_channels);
  if (p.f_out.spec.out_channels != kImageChannels)
    throw ShapeError(prefix + ".f_out", "out_channels", kImageChannels, p.f_out.spec.out_channels);
}

void check_image_input(const Shape& s, const char* op) {
  if (s.c != kImageChannels) throw ShapeError(op, "c (image channels)", kImageChannels, s.c);
}

ConvLayer clone_layer(const ConvLayer& l) { return {l.spec, l.weight.clone(), l.bias.clone()}; }

DrnParams clone_branch(const DrnParams& p) {
  DrnParams out;
  out.f_in = clone_layer(p.f_in);
  out.res1 = {clone_layer(p.res1.first), clone_layer(p.res1.second)};
  out.res2 = {clone_layer(p.res2.first), clone_layer(p.res2.second)};
  out.f_out = clone_layer(p.f_out);
  out.loops = p.loops;
  return out;
}

}  // namespace

Tensor cross_stitch(const Tensor& wa, const Tensor& wb, double alpha_s) {
  if (!(alpha_s >= 0.0 && alpha_s <= 1.0)) throw std::invalid_argument("cross_stitch: alpha_s must lie in [0, 1]");
  return lerp(wa, wb, alpha_s);
}

Tensor apply(const ConvLayer& layer, const Tensor& x) { return conv2d(x, layer.weight, layer.bias, layer.spec); }

Tensor residual_block(const ResidualBlock& block, const Tensor& x) {
  return relu(add(apply(block.second, relu(apply(block.first, x))), x));
}

Tensor recursive_unit(const DrnParams& params, const Tensor& h) {
  Tensor out = h;
  for (int k = 0; k < params.loops; ++k) out = residual_block(params.res2, residual_block(params.res1, out));
  return out;
}

Tensor fuse(const FusionParams& fusion, const Tensor& rain_out, const Tensor& snow_out) {
  const Tensor x = concat_channels(rain_out, snow_out);
  return apply(fusion.conv3, relu(apply(fusion.conv2, relu(apply(fusion.conv1, x)))));
}

DrnOutput drn_forward(const DrnParams& params, const Tensor& y) {
  check_image_input(y.shape(), "drn_forward");
  if (params.loops < 1) throw std::invalid_argument("drn_forward: loop count T must be >= 1");
  DrnOutput result;
  result.intermediates.reserve(static_cast<std::size_t>(params.loops));
  Tensor x = y;
  for (int t = 0; t < params.loops; ++t) {
    const Tensor h = recursive_unit(params, relu(apply(params.f_in, x)));
    x = add(y, apply(params.f_out, h));
    result.intermediates.push_back(x);
  }
  result.output = x;
  return result;
}

CmudrnOutput cmudrn_forward(const CmudrnParams& params, const Tensor& y) {
  check_image_input(y.shape(), "cmudrn_forward");
  if (params.rain.loops < 1 || params.rain.loops != params.snow.loops)
    throw std::invalid_argument("cmudrn_forward: both branches need the same loop count T >= 1");
  if (!(params.alpha_s >= 0.0 && params.alpha_s <= 1.0))
    throw std::invalid_argument("cmudrn_forward: alpha_s must lie in [0, 1]");

  const auto stitch = [&](Tensor& rain_fm, Tensor& snow_fm) {
    Tensor mixed_rain = cross_stitch(rain_fm, snow_fm, params.alpha_s);
    Tensor mixed_snow = cross_stitch(snow_fm, rain_fm, params.alpha_s);
    rain_fm = std::move(mixed_rain);
    snow_fm = std::move(mixed_snow);
  };

  CmudrnOutput out;
  Tensor x_rain = y;
  Tensor x_snow = y;
  for (int t = 0; t < params.rain.loops; ++t) {
    Tensor h_rain = relu(apply(params.rain.f_in, x_rain));
    Tensor h_snow = relu(apply(params.snow.f_in, x_snow));
    if (params.stitch_enabled && params.sites.after_f_in) stitch(h_rain, h_snow);
    h_rain = recursive_unit(params.rain, h_rain);
    h_snow = recursive_unit(params.snow, h_snow);
    if (params.stitch_enabled && params.sites.after_recursive) stitch(h_rain, h_snow);
    x_rain = add(y, apply(params.rain.f_out, h_rain));
    x_snow = add(y, apply(params.snow.f_out, h_snow));
    out.rain_intermediates.push_back(x_rain);
    out.snow_intermediates.push_back(x_snow);
  }
  out.rain_out = x_rain;
  out.snow_out = x_snow;
  out.fused = fuse(params.fusion, x_rain, x_snow);
  return out;
}

CmudrnParams init_params(std::uint64_t seed, std::size_t channels, int loops) {
  if (channels == 0) throw std::invalid_argument("init_params: channels must be positive");
  if (loops < 1) throw std::invalid_argument("init_params: loop count T must be >= 1");
  std::mt19937_64 rng(seed);
  CmudrnParams p;
  p.rain = make_branch(channels, loops, rng);
  p.snow = make_branch(channels, loops, rng);
  p.fusion.conv1 = make_layer(ConvSpec::same(2 * kImageChannels, kFusionWidth), rng);
  p.fusion.conv2 = make_layer(ConvSpec::same(kFusionWidth, kFusionWidth), rng);
  p.fusion.conv3 = make_layer(ConvSpec::same(kFusionWidth, kImageChannels), rng);
  return p;
}

CmudrnParams identity_params(std::size_t channels, int loops) {
  CmudrnParams p = init_params(0, channels, loops);
  p.rain.f_out = zero_layer(p.rain.f_out.spec);
  p.snow.f_out = zero_layer(p.snow.f_out.spec);

  // Centre-tap pass-through of channel k for k < 3 in each fusion conv.
  const auto pass_through = [](const ConvSpec& spec) {
    ConvLayer layer = zero_layer(spec);
    auto w = layer.weight.mutable_values();
    const Shape ws = spec.weight_shape();
    for (std::size_t k = 0; k < kImageChannels; ++k) w[ws.index(k, k, spec.kernel_h / 2, spec.kernel_w / 2)] = 1.0;
    return layer;
  };
  p.fusion.conv1 = pass_through(p.fusion.conv1.spec);
  p.fusion.conv2 = pass_through(p.fusion.conv2.spec);
  p.fusion.conv3 = pass_through(p.fusion.conv3.spec);
  return p;
}

std::vector<NamedTensor> named_parameters(const DrnParams& p, const std::string& prefix) {
  const auto layer = [&](std::vector<NamedTensor>& out, const ConvLayer& l, const std::string& name) {
    out.push_back({prefix + "." + name + ".weight", l.weight});
    out.push_back({prefix + "." + name + ".bias", l.bias});
  };
  std::vector<NamedTensor> out;
  layer(out, p.f_in, "f_in");
  layer(out, p.res1.first, "res1.conv1");
  layer(out, p.res1.second, "res1.conv2");
  layer(out, p.res2.first, "res2.conv1");
  layer(out, p.res2.second, "res2.conv2");
  layer(out, p.f_out, "f_out");
  return out;
}

std::vector<NamedTensor> named_parameters(const CmudrnParams& params) {
  std::vector<NamedTensor> out = named_parameters(params.rain, "rain");
  auto snow = named_parameters(params.snow, "snow");
  out.insert(out.end(), snow.begin(), snow.end());
  const auto layer = [&](const ConvLayer& l, const std::string& name) {
    out.push_back({"fusion." + name + ".weight", l.weight});
    out.push_back({"fusion." + name + ".bias", l.bias});
  };
  layer(params.fusion.conv1, "conv1");
  layer(params.fusion.conv2, "conv2");
  layer(params.fusion.conv3, "conv3");
  return out;
}

CmudrnParams clone(const CmudrnParams& params) {
  CmudrnParams out = params;
  out.rain = clone_branch(params.rain);
  out.snow = clone_branch(params.snow);
  out.fusion = {clone_layer(params.fusion.conv1), clone_layer(params.fusion.conv2), clone_layer(params.fusion.conv3)};
  return out;
}

void set_loops(CmudrnParams& params, int loops) {
  if (loops < 1) throw std::invalid_argument("loop count T must be >= 1");
  params.rain.loops = loops;
  params.snow.loops = loops;
}

void validate(const CmudrnParams& params) {
  validate_branch(params.rain, "rain");
  validate_branch(params.snow, "snow");
  if (params.rain.loops != params.snow.loops)
    throw std::invalid_argument("rain and snow branches must share the loop count T");
  const FusionParams& f = params.fusion;
  validate_layer(f.conv1, "fusion.conv1");
  validate_layer(f.conv2, "fusion.conv2");
  validate_layer(f.conv3, "fusion.conv3");
  if (f.conv1.spec.in_channels != 2 * kImageChannels)
    throw ShapeError("fusion.conv1", "in_channels", 2 * kImageChannels, f.conv1.spec.in_channels);
  if (f.conv1.spec.out_channels != kFusionWidth)
    throw ShapeError("fusion.conv1", "out_channels", kFusionWidth, f.conv1.spec.out_channels);
  if (f.conv2.spec.in_channels != kFusionWidth)
    throw ShapeError("fusion.conv2", "in_channels", kFusionWidth, f.conv2.spec.in_channels);
  if (f.conv2.spec.out_channels != kFusionWidth)
    throw ShapeError("fusion.conv2", "out_channels", kFusionWidth, f.conv2.spec.out_channels);
  if (f.conv3.spec.in_channels != kFusionWidth)
    throw ShapeError("fusion.conv3", "in_channels", kFusionWidth, f.conv3.spec.in_channels);
  if (f.conv3.spec.out_channels != kImageChannels)
    throw ShapeError("fusion.conv3", "out_channels", kImageChannels, f.conv3.spec.out_channels);
  if (!(params.alpha_s >= 0.0 && params.alpha_s <= 1.0)) throw std::invalid_argument("alpha_s must lie in [0, 1]");
}

// ---------------------------------------------------------------------------
// InferenceModel

namespace {

template <class Scalar>
typename InferenceModel<Scalar>::Branch::Layer convert(const ConvLayer& l) {
  typename InferenceModel<Scalar>::Branch::Layer out;
  out.spec = l.spec;
  out.weight.assign(l.weight.values().begin(), l.weight.values().end());
  out.bias.assign(l.bias.values().begin(), l.bias.values().end());
  return out;
}

template <class Scalar>
typename InferenceModel<Scalar>::Branch convert_branch(const DrnParams& p) {
  return {convert<Scalar>(p.f_in),        convert<Scalar>(p.res1.first), convert<Scalar>(p.res1.second),
          convert<Scalar>(p.res2.first),  convert<Scalar>(p.res2.second), convert<Scalar>(p.f_out)};
}

template <class Layer, class Scalar>
std::vector<Scalar> run_conv(const Layer& layer, const std::vector<Scalar>& x, const Shape& in) {
  std::vector<Scalar> out(layer.spec.output_shape(in).numel());
  kernels::conv2d_forward<Scalar>(x, in, layer.weight, layer.bias, layer.spec, out);
  return out;
}

template <class Scalar>
void relu_inplace(std::vector<Scalar>& v) {
  for (Scalar& x : v) x = x > Scalar(0) ? x : Scalar(0);
}

template <class Scalar>
void lerp_pair(std::vector<Scalar>& a, std::vector<Scalar>& b, double alpha) {
  const auto sa = static_cast<Scalar>(alpha);
  const auto sb = static_cast<Scalar>(1.0 - alpha);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Scalar ra = sa * a[i] + sb * b[i];
    const Scalar rb = sa * b[i] + sb * a[i];
    a[i] = ra;
    b[i] = rb;
  }
}

}  // namespace

template <class Scalar>
InferenceModel<Scalar>::InferenceModel(const CmudrnParams& params)
    : rain_(convert_branch<Scalar>(params.rain)),
      snow_(convert_branch<Scalar>(params.snow)),
      fusion1_(convert<Scalar>(params.fusion.conv1)),
      fusion2_(convert<Scalar>(params.fusion.conv2)),
      fusion3_(convert<Scalar>(params.fusion.conv3)),
      alpha_s_(params.alpha_s),
      stitch_(params.stitch_enabled),
      sites_(params.sites),
      loops_(params.rain.loops),
      channels_(params.rain.f_in.spec.out_channels) {
  validate(params);
}

template <class Scalar>
std::vector<Scalar> InferenceModel<Scalar>::forward(std::span<const Scalar> input, const Shape& shape) const {
  check_image_input(shape, "InferenceModel::forward");
  if (input.size() != shape.numel()) throw ShapeError("InferenceModel::forward", "numel", shape.numel(), input.size());
  const std::vector<Scalar> y(input.begin(), input.end());
  const Shape feat{shape.n, channels_, shape.h, shape.w};

  const auto residual = [&](const typename Branch::Layer& a, const typename Branch::Layer& b,
                            const std::vector<Scalar>& x) {
    std::vector<Scalar> t = run_conv(a, x, feat);
    relu_inplace(t);
    std::vector<Scalar> u = run_conv(b, t, feat);
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = u[i] + x[i];
    relu_inplace(u);
    return u;
  };
  const auto recursive = [&](const Branch& br, std::vector<Scalar> h) {
    for (int k = 0; k < loops_; ++k) h = residual(br.r2a, br.r2b, residual(br.r1a, br.r1b, h));
    return h;
  };
  const auto output = [&](const Branch& br, const std::vector<Scalar>& h) {
    std::vector<Scalar> r = run_conv(br.f_out, h, feat);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = y[i] + r[i];
    return r;
  };

  std::vector<Scalar> x_rain = y;
  std::vector<Scalar> x_snow = y;
  for (int t = 0; t < loops_; ++t) {
    std::vector<Scalar> h_rain = run_conv(rain_.f_in, x_rain, shape);
    std::vector<Scalar> h_snow = run_conv(snow_.f_in, x_snow, shape);
    relu_inplace(h_rain);
    relu_inplace(h_snow);
    if (stitch_ && sites_.after_f_in) lerp_pair(h_rain, h_snow, alpha_s_);
    h_rain = recursive(rain_, std::move(h_rain));
    h_snow = recursive(snow_, std::move(h_snow));
    if (stitch_ && sites_.after_recursive) lerp_pair(h_rain, h_snow, alpha_s_);
    x_rain = output(rain_, h_rain);
    x_snow = output(snow_, h_snow);
  }

  // Channel concatenation, rain first.
  const std::size_t block = kImageChannels * shape.plane();
  std::vector<Scalar> cat(2 * block * shape.n);
  for (std::size_t n = 0; n < shape.n; ++n) {
    std::copy_n(x_rain.begin() + static_cast<std::ptrdiff_t>(n * block), block,
                cat.begin() + static_cast<std::ptrdiff_t>(2 * n * block));
    std::copy_n(x_snow.begin() + static_cast<std::ptrdiff_t>(n * block), block,
                cat.begin() + static_cast<std::ptrdiff_t>((2 * n + 1) * block));
  }
  const Shape cat_shape{shape.n, 2 * kImageChannels, shape.h, shape.w};
  const Shape hidden{shape.n, kFusionWidth, shape.h, shape.w};
  std::vector<Scalar> f = run_conv(fusion1_, cat, cat_shape);
  relu_inplace(f);
  f = run_conv(fusion2_, f, hidden);
  relu_inplace(f);
  return run_conv(fusion3_, f, hidden);
}

template class InferenceModel<float>;
template class InferenceModel<double>;

}  // namespace cmudrn::nets
