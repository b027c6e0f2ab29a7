#pragma once

#include <array>
#include <random>
#include <vector>

#include "dicl/layers.hpp"

namespace dicl {

inline constexpr std::size_t kPyramidLevels = 5;
inline constexpr std::size_t kFeatureChannels = 32;
/// Input height and width must be multiples of this (coarsest level is 1/64).
inline constexpr std::size_t kInputMultiple = 64;

/// Downsampling factor of pyramid level k (level 0 is the finest, 1/4).
constexpr std::size_t level_stride(std::size_t level) { return std::size_t{4} << level; }

/// Per-level feature maps, finest (1/4) first, each N x 32 x (H/s) x (W/s).
struct FeaturePyramid {
  std::array<Var, kPyramidLevels> levels;
};

struct PaddedImage {
  Tensor image;
  std::size_t height = 0;  // original extents
  std::size_t width = 0;
};

/// Zero-pads the bottom/right of a CxHxW or NxCxHxW tensor to the next
/// multiple of `multiple`.
PaddedImage pad_to_multiple(const Tensor& image, std::size_t multiple = kInputMultiple);
/// Keeps the top-left height x width window of a CxHxW or NxCxHxW tensor.
Tensor crop_to(const Tensor& t, std::size_t height, std::size_t width);

/// Shared (siamese) extractor. Each stage is conv(stride 2)-BN-ReLU then
/// conv(stride 1)-BN-ReLU; the first stage has an extra stride-2 conv so it
/// lands at 1/4. Every level is projected to 32 channels by a 1x1 conv.
class FeatureNet {
 public:
  static constexpr std::array<std::size_t, kPyramidLevels> kStageWidths{32, 48, 64, 96, 128};

  explicit FeatureNet(std::mt19937_64& rng);

  /// `images` is 3xHxW or Nx3xHxW with H, W multiples of 64. Each image has
  /// its mean subtracted before the first layer.
  FeaturePyramid extract(const Tensor& images, Mode mode);

  void collect(const std::string& prefix, ParamList& out);

 private:
  std::array<std::vector<ConvBnRelu>, kPyramidLevels> stages_;
  std::array<ConvLayer, kPyramidLevels> projections_;
};

}  // namespace dicl
