#pragma once

// Synthetic flow samples with exact ground truth, metrics, and file I/O
// (Middlebury .flo, 8-bit RGB PNG).

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dicl/tensor.hpp"

namespace dicl {

enum class MotionKind { translation, affine, smooth };

std::string to_string(MotionKind kind);
MotionKind parse_motion_kind(std::string_view name);

struct FlowSample {
  Tensor img1;     // 3 x H x W in [0, 1]
  Tensor img2;     // 3 x H x W in [0, 1]
  Tensor gt_flow;  // 2 x H x W, pixels; img1(p) matches img2(p + gt(p))
  Tensor valid;    // 1 x H x W in {0, 1}
};

/// Multi-octave value-noise texture as img1; img2(q) = texture(p) where
/// p + f(p) = q, so the flow is exact at every pixel. A pixel is valid when
/// p + f(p) lands inside the frame. Requires max_mag <= min(H, W) / 4.
FlowSample gen_synthetic(std::uint64_t seed, MotionKind kind, std::size_t height, std::size_t width, double max_mag);

/// Same texture model with the constant flow (u, v).
FlowSample gen_translation(std::uint64_t seed, std::size_t height, std::size_t width, double u, double v);

/// Samples stacked along a leading batch axis.
struct FlowBatch {
  Tensor img1;     // N x 3 x H x W
  Tensor img2;     // N x 3 x H x W
  Tensor gt_flow;  // N x 2 x H x W
  Tensor valid;    // N x 1 x H x W

  std::size_t size() const { return img1.dim(0); }
};

FlowBatch stack(std::span<const FlowSample> samples);

struct EvalResult {
  double epe = 0.0;
  double fl_all = 0.0;
};

/// Mean endpoint error over valid pixels. Accepts 2xHxW / 1xHxW or batched
/// Nx2xHxW / Nx1xHxW operands. Throws on an empty mask.
double epe(const Tensor& pred, const Tensor& gt, const Tensor& valid);
/// Fraction of valid pixels with error > 3 px and > 5% of |gt|.
double fl_all(const Tensor& pred, const Tensor& gt, const Tensor& valid);
EvalResult evaluate(const Tensor& pred, const Tensor& gt, const Tensor& valid);

class FlowFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr float kFloMagic = 202021.25f;

/// 2 x H x W flow to a little-endian .flo file (values stored as float32).
void write_flo(const std::filesystem::path& path, const Tensor& flow);
Tensor read_flo(const std::filesystem::path& path);

struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, interleaved RGB

  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * 3 + c]; }
};

/// Middlebury color wheel. Hue is direction, saturation is magnitude relative
/// to `max_mag` (default: 99th percentile of magnitudes). Zero flow is white.
RgbImage flow_to_color(const Tensor& flow, std::optional<double> max_mag = std::nullopt);
/// Endpoint error heat map, black (0) to white (>= max_err); invalid pixels
/// are drawn blue.
RgbImage error_map(const Tensor& pred, const Tensor& gt, const Tensor& valid, double max_err = 3.0);

void write_png(const std::filesystem::path& path, const RgbImage& image);
/// Any PNG, converted to 8-bit RGB.
RgbImage read_png(const std::filesystem::path& path);
/// Single-channel 8-bit PNG.
void write_gray_png(const std::filesystem::path& path, std::size_t width, std::size_t height,
                    std::span<const std::uint8_t> pixels);

/// 3 x H x W tensor in [0, 1].
Tensor to_tensor(const RgbImage& image);
RgbImage to_image(const Tensor& rgb);

}  // namespace dicl
