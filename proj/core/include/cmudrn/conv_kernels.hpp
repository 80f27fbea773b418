#pragma once

// Raw NCHW convolution kernels (im2col + GEMM), shared by the autodiff
// conv2d op and the graph-free inference engine. Instantiated for float
// and double.

#include <span>

#include "cmudrn/tensor.hpp"

namespace cmudrn::kernels {

/// out = correlate(input, weight) + bias. `out` must hold
/// spec.output_shape(input_shape).numel() elements and is overwritten.
template <class Scalar>
void conv2d_forward(std::span<const Scalar> input, const Shape& input_shape, std::span<const Scalar> weight,
                    std::span<const Scalar> bias, const ConvSpec& spec, std::span<Scalar> out);

/// Accumulates input/weight/bias gradients. Any of the three gradient spans
/// may be empty to skip that term.
void conv2d_backward(std::span<const double> input, const Shape& input_shape, std::span<const double> weight,
                     const ConvSpec& spec, std::span<const double> grad_out, std::span<double> grad_input,
                     std::span<double> grad_weight, std::span<double> grad_bias);

}  // namespace cmudrn::kernels
