#pragma once

// Dual Recursive Network (DRN) branches, cross-stitch units, and the
// two-branch CMUDRN composite with its fusion head.
//
// A DRN branch unrolls
//
//   x(t+1) = y + f_out(f_recursive(f_in(x(t)))),   x(1) = y,   t = 1..T
//
// where f_in is conv + ReLU, f_recursive applies a pair of residual blocks T
// times with shared weights, and f_out is a single conv. CMUDRN runs a rain
// branch and a snow branch in lock-step on the same input, mixes their
// feature maps with cross-stitch units, and fuses the two branch outputs with
// conv -> ReLU -> conv -> ReLU -> conv over their channel concatenation.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cmudrn/tensor.hpp"

namespace cmudrn::nets {

struct ConvLayer {
  ConvSpec spec;
  Tensor weight;
  Tensor bias;
};

/// conv(C->C) -> ReLU -> conv(C->C), identity skip, then ReLU.
struct ResidualBlock {
  ConvLayer first;
  ConvLayer second;
};

struct DrnParams {
  ConvLayer f_in;    // 3 -> C, followed by ReLU
  ResidualBlock res1;
  ResidualBlock res2;
  ConvLayer f_out;   // C -> 3
  int loops = 3;     // T: both the outer recurrence and the residual-pair loop
};

struct FusionParams {
  ConvLayer conv1;  // 6 -> 16
  ConvLayer conv2;  // 16 -> 16
  ConvLayer conv3;  // 16 -> 3
};

/// Where cross-stitch pairs sit inside every outer iteration.
struct StitchSites {
  bool after_f_in = true;
  bool after_recursive = true;
};

struct CmudrnParams {
  DrnParams rain;
  DrnParams snow;
  FusionParams fusion;
  double alpha_s = 0.5;
  bool stitch_enabled = true;
  StitchSites sites;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

inline constexpr std::size_t kImageChannels = 3;
inline constexpr std::size_t kFusionWidth = 16;

/// alpha_s * wa + (1 - alpha_s) * wb. Throws std::invalid_argument when
/// alpha_s is outside [0, 1] and ShapeError on mismatched operands.
Tensor cross_stitch(const Tensor& wa, const Tensor& wb, double alpha_s);

Tensor apply(const ConvLayer& layer, const Tensor& x);
Tensor residual_block(const ResidualBlock& block, const Tensor& x);
/// The residual-block pair applied `loops` times.
Tensor recursive_unit(const DrnParams& params, const Tensor& h);
/// g(rain ++ snow) = conv3(relu(conv2(relu(conv1(rain ++ snow))))).
Tensor fuse(const FusionParams& fusion, const Tensor& rain_out, const Tensor& snow_out);

struct DrnOutput {
  Tensor output;
  std::vector<Tensor> intermediates;  // x(2) .. x(T+1); back() is `output`
};

DrnOutput drn_forward(const DrnParams& params, const Tensor& y);

struct CmudrnOutput {
  Tensor fused;
  Tensor rain_out;
  Tensor snow_out;
  std::vector<Tensor> rain_intermediates;
  std::vector<Tensor> snow_intermediates;
};

CmudrnOutput cmudrn_forward(const CmudrnParams& params, const Tensor& y);

/// Uniform(-a, a) weights with a = sqrt(1 / fan_in), zero biases, drawn from
/// a seeded mt19937_64 in a fixed parameter order.
CmudrnParams init_params(std::uint64_t seed, std::size_t channels = 16, int loops = 3);

/// Parameters for which every branch returns its input (f_out == 0) and the
/// fusion head passes the rain-branch channels straight through, so the
/// whole model is the identity on non-negative images.
CmudrnParams identity_params(std::size_t channels = 16, int loops = 3);

/// Stable, ordered list of every trainable tensor: "rain.f_in.weight", ...,
/// "fusion.conv3.bias". Tensors are shared handles into `params`.
std::vector<NamedTensor> named_parameters(const CmudrnParams& params);
std::vector<NamedTensor> named_parameters(const DrnParams& params, const std::string& prefix);

/// Deep copy with independent tensors.
CmudrnParams clone(const CmudrnParams& params);

/// Sets the loop count T on both branches.
void set_loops(CmudrnParams& params, int loops);

/// Throws ShapeError when a layer's tensors disagree with its spec or the
/// fusion chain is not 6 -> 16 -> 16 -> 3, std::invalid_argument for
/// alpha_s outside [0, 1] or T < 1.
void validate(const CmudrnParams& params);

/// Graph-free forward pass over raw NCHW buffers, used for benchmarking and
/// single-precision inference. The arithmetic matches cmudrn_forward.
template <class Scalar>
class InferenceModel {
 public:
  explicit InferenceModel(const CmudrnParams& params);

  int loops() const noexcept { return loops_; }
  std::size_t channels() const noexcept { return channels_; }

  /// Restores a (n, 3, h, w) batch; returns the fused output.
  std::vector<Scalar> forward(std::span<const Scalar> input, const Shape& shape) const;

  struct Branch {
    struct Layer {
      ConvSpec spec;
      std::vector<Scalar> weight;
      std::vector<Scalar> bias;
    };
    Layer f_in, r1a, r1b, r2a, r2b, f_out;
  };

 private:
  Branch rain_;
  Branch snow_;
  typename Branch::Layer fusion1_, fusion2_, fusion3_;
  double alpha_s_;
  bool stitch_;
  StitchSites sites_;
  int loops_;
  std::size_t channels_;
};

extern template class InferenceModel<float>;
extern template class InferenceModel<double>;

}  // namespace cmudrn::nets
