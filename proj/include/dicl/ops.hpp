#pragma once

// Differentiable operators over NCHW tensors. Every operator validates its
// operand shapes and throws ShapeError with the offending shapes.

#include <cstddef>
#include <vector>

#include "dicl/autograd.hpp"

namespace dicl {

enum class Mode { train, eval };

/// Layer geometry. Weights are (out_channels, in_channels, kernel_h, kernel_w)
/// for both regular and transposed layers; bias is (out_channels).
struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t dilation = 1;
  bool transposed = false;

  Shape weight_shape() const { return {out_channels, in_channels, kernel_h, kernel_w}; }
  Shape bias_shape() const { return {out_channels}; }
  std::size_t weight_count() const { return out_channels * in_channels * kernel_h * kernel_w; }

  /// Output extent along one spatial axis for an input extent `in`.
  std::size_t output_extent(std::size_t in, std::size_t kernel) const;
  void validate() const;
};

/// Square-kernel spec with "same" padding for odd kernels at stride 1.
ConvSpec conv_spec(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                   std::size_t dilation = 1);
/// Transposed spec; padding is chosen so that stride-2, kernel-4 layers double
/// the spatial size.
ConvSpec deconv_spec(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride);

/// Cross-correlation. `bias` may be null.
Var conv2d(const Var& input, const Var& weight, const Var& bias, const ConvSpec& spec);
/// Transposed convolution, the adjoint of conv2d with the same geometry.
Var deconv2d(const Var& input, const Var& weight, const Var& bias, const ConvSpec& spec);

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormState(std::size_t channels = 1)
      : running_mean(Shape{channels}, 0.0), running_var(Shape{channels}, 1.0) {}
};

/// Per-channel normalization over N*H*W. Train mode uses batch statistics
/// and updates `state`; eval mode uses the running statistics.
Var batchnorm2d(const Var& input, const Var& gamma, const Var& beta, BatchNormState& state, Mode mode);

Var relu(const Var& input);

struct WarpResult {
  Var warped;
  Tensor valid;  // N x 1 x H x W in {0, 1}
};

/// Samples `target` (N x C x H x W) at p + flow(p), flow being N x 2 x H x W
/// with channel 0 horizontal. Corners outside the image read as zero; valid is
/// 1 where the sample point lies inside [0, W-1] x [0, H-1].
WarpResult bilinear_warp(const Var& target, const Var& flow);

/// Numerically stable softmax along `axis`.
Var softmax(const Var& input, std::size_t axis);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var square(const Var& a);
/// Sum of all elements, shape (1).
Var sum(const Var& a);
/// Sum of a * weights over all elements, shape (1).
Var inner(const Var& a, const Tensor& weights);

Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice(const Var& input, std::size_t axis, std::size_t start, std::size_t count);
Var reshape(const Var& input, Shape shape);

/// Zero-pads the bottom and right edges of an NCHW tensor.
Var pad_spatial(const Var& input, std::size_t bottom, std::size_t right);
/// Keeps the top-left out_h x out_w window of an NCHW tensor.
Var crop_spatial(const Var& input, std::size_t out_h, std::size_t out_w);

/// Half-pixel-centred bilinear resize with edge clamping.
Var resize_bilinear(const Var& input, std::size_t out_h, std::size_t out_w);

/// Euclidean norm over channels: N x C x H x W -> N x 1 x H x W. The gradient
/// at a zero vector is taken as zero.
Var channel_norm(const Var& input);

/// Mean of `input` over elements where `mask` is nonzero; shapes must match.
/// Returns a zero constant when the mask is empty.
Var masked_mean(const Var& input, const Tensor& mask);

}  // namespace dicl
