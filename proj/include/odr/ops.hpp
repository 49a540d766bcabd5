#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "odr/tensor.hpp"

namespace odr {

enum class Mode { train, eval };

// Zero padding applied around the spatial axes of a convolution input.
struct Padding {
  Index top = 0;
  Index bottom = 0;
  Index left = 0;
  Index right = 0;

  friend bool operator==(const Padding&, const Padding&) = default;
};

struct Conv2dOptions {
  Index stride = 1;
  Padding padding;
};

// Cross-correlation of an [N,C,H,W] input with [F,C,kh,kw] filters.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias, const Conv2dOptions& options = {});

// param_grads holds "weight" and "bias".
template <typename Scalar>
LayerGrad<Scalar> conv2d_backward(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                                  const Tensor<Scalar>& upstream, const Conv2dOptions& options = {});

// 2x2 window, stride 2. Both spatial extents must be even.
template <typename Scalar>
Tensor<Scalar> max_pool2(const Tensor<Scalar>& input);

// Routes each upstream value to the first maximal element of its window.
template <typename Scalar>
Tensor<Scalar> max_pool2_backward(const Tensor<Scalar>& input, const Tensor<Scalar>& upstream);

// input [N,D] * weight [D,M] + bias [M].
template <typename Scalar>
Tensor<Scalar> affine(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias);

template <typename Scalar>
LayerGrad<Scalar> affine_backward(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                                  const Tensor<Scalar>& upstream);

template <typename Scalar>
Tensor<Scalar> leaky_relu(const Tensor<Scalar>& input, Scalar slope);

template <typename Scalar>
Tensor<Scalar> leaky_relu_backward(const Tensor<Scalar>& input, const Tensor<Scalar>& upstream,
                                   Scalar slope);

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& input);

// Takes the forward *output*, not the input.
template <typename Scalar>
Tensor<Scalar> sigmoid_backward(const Tensor<Scalar>& output, const Tensor<Scalar>& upstream);

// Row-wise softmax over the last axis of an [N,K] tensor.
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& input);

// Takes the forward *output*; applies the transposed softmax Jacobian.
template <typename Scalar>
Tensor<Scalar> softmax_backward(const Tensor<Scalar>& output, const Tensor<Scalar>& upstream);

template <typename Scalar>
Tensor<Scalar> concat(std::span<const Tensor<Scalar>> inputs, Index axis);

// Splits an upstream gradient back into pieces of the given shapes.
template <typename Scalar>
std::vector<Tensor<Scalar>> concat_backward(const Tensor<Scalar>& upstream,
                                            std::span<const Shape> input_shapes, Index axis);

// Contiguous slice [begin, end) along one axis.
template <typename Scalar>
Tensor<Scalar> slice(const Tensor<Scalar>& input, Index axis, Index begin, Index end);

template <typename Scalar>
struct DropoutResult {
  Tensor<Scalar> output;
  // Per-element multiplier: 0 for dropped units, 1/(1-rate) for survivors.
  Tensor<Scalar> mask;
};

// Inverted dropout. The mask is a pure function of (shape, rate, seed).
template <typename Scalar>
DropoutResult<Scalar> dropout(const Tensor<Scalar>& input, double rate, Mode mode,
                              std::uint64_t seed);

template <typename Scalar>
Tensor<Scalar> dropout_backward(const Tensor<Scalar>& mask, const Tensor<Scalar>& upstream);

// Output extent of a convolution along one axis.
inline Index conv_output_extent(Index extent, Index kernel, Index pad_before, Index pad_after,
                                Index stride) {
  const Index padded = extent + pad_before + pad_after - kernel;
  if (padded < 0) return 0;
  return padded / stride + 1;
}

}  // namespace odr
