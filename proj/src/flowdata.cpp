#include "dicl/flowdata.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>

namespace dicl {

std::string to_string(MotionKind kind) {
  switch (kind) {
    case MotionKind::translation: return "translation";
    case MotionKind::affine: return "affine";
    case MotionKind::smooth: return "smooth";
  }
  return "?";
}

MotionKind parse_motion_kind(std::string_view name) {
  if (name == "translation") return MotionKind::translation;
  if (name == "affine") return MotionKind::affine;
  if (name == "smooth") return MotionKind::smooth;
  throw std::invalid_argument("unknown motion kind '" + std::string(name) +
                              "' (expected translation, affine or smooth)");
}

// ---------------------------------------------------------------------------
// Synthetic samples

namespace {

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// Random values on a regular lattice, interpolated with smoothstep weights.
// Coordinates outside the lattice clamp to its border cells.
class Lattice {
 public:
  Lattice(double origin_x, double origin_y, double cell, std::size_t nx, std::size_t ny, std::size_t channels)
      : ox_(origin_x), oy_(origin_y), cell_(cell), nx_(nx), ny_(ny), values_(nx * ny * channels) {}

  std::vector<double>& values() { return values_; }

  double operator()(std::size_t c, double x, double y) const {
    const auto locate = [](double g, std::size_t n, std::size_t& i, double& t) {
      g = std::clamp(g, 0.0, static_cast<double>(n - 1));
      i = std::min(static_cast<std::size_t>(g), n - 2);
      t = smoothstep(g - static_cast<double>(i));
    };
    std::size_t ix, iy;
    double tx, ty;
    locate((x - ox_) / cell_, nx_, ix, tx);
    locate((y - oy_) / cell_, ny_, iy, ty);
    const double* v = values_.data() + c * nx_ * ny_;
    const double top = v[iy * nx_ + ix] * (1 - tx) + v[iy * nx_ + ix + 1] * tx;
    const double bottom = v[(iy + 1) * nx_ + ix] * (1 - tx) + v[(iy + 1) * nx_ + ix + 1] * tx;
    return top * (1 - ty) + bottom * ty;
  }

 private:
  double ox_, oy_, cell_;
  std::size_t nx_, ny_;
  std::vector<double> values_;
};

class Texture {
 public:
  static constexpr std::array<double, 4> kCells{32.0, 16.0, 8.0, 4.0};
  static constexpr std::array<double, 4> kAmplitudes{1.0, 0.7, 0.5, 0.35};

  Texture(std::mt19937_64& rng, std::size_t height, std::size_t width, double margin) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (double cell : kCells) {
      const std::size_t nx = static_cast<std::size_t>(std::ceil((width + 2 * margin) / cell)) + 2;
      const std::size_t ny = static_cast<std::size_t>(std::ceil((height + 2 * margin) / cell)) + 2;
      Lattice& l = octaves_.emplace_back(-margin - cell, -margin - cell, cell, nx, ny, 3);
      for (double& v : l.values()) v = unit(rng);
    }
  }

  double operator()(std::size_t c, double x, double y) const {
    double s = 0.0, total = 0.0;
    for (std::size_t o = 0; o < octaves_.size(); ++o) {
      s += kAmplitudes[o] * octaves_[o](c, x, y);
      total += kAmplitudes[o];
    }
    return std::clamp(0.5 + 1.6 * (s / total - 0.5), 0.0, 1.0);
  }

 private:
  std::vector<Lattice> octaves_;
};

using FlowFn = std::function<std::array<double, 2>(double, double)>;

// Scales `f` so that its largest magnitude over the pixel grid is `target`.
FlowFn rescaled(FlowFn f, std::size_t height, std::size_t width, double target) {
  double peak = 0.0;
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const auto [u, v] = f(static_cast<double>(x), static_cast<double>(y));
      peak = std::max(peak, std::hypot(u, v));
    }
  const double s = peak > 0.0 ? target / peak : 0.0;
  return [f = std::move(f), s](double x, double y) {
    const auto [u, v] = f(x, y);
    return std::array<double, 2>{u * s, v * s};
  };
}

FlowFn make_field(std::mt19937_64& rng, MotionKind kind, std::size_t height, std::size_t width, double max_mag) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double angle = 2.0 * std::numbers::pi * unit(rng);
  switch (kind) {
    case MotionKind::translation: {
      const double r = max_mag * std::sqrt(unit(rng));
      const double u = r * std::cos(angle), v = r * std::sin(angle);
      return [u, v](double, double) { return std::array<double, 2>{u, v}; };
    }
    case MotionKind::affine: {
      const double r = 0.5 * max_mag * std::sqrt(unit(rng));
      const double tu = r * std::cos(angle), tv = r * std::sin(angle);
      std::array<double, 4> a{};
      for (double& e : a) e = normal(rng);
      const double cx = 0.5 * static_cast<double>(width - 1), cy = 0.5 * static_cast<double>(height - 1);
      FlowFn f = [=](double x, double y) {
        return std::array<double, 2>{tu + a[0] * (x - cx) + a[1] * (y - cy), tv + a[2] * (x - cx) + a[3] * (y - cy)};
      };
      return rescaled(std::move(f), height, width, max_mag * (0.5 + 0.5 * unit(rng)));
    }
    case MotionKind::smooth: {
      // 3x3 control vectors spanning the frame keep the field a contraction.
      auto lattice = std::make_shared<Lattice>(0.0, 0.0, 0.5 * static_cast<double>(std::max(height, width) - 1), 3,
                                               3, 2);
      for (double& v : lattice->values()) v = normal(rng);
      FlowFn f = [lattice](double x, double y) {
        return std::array<double, 2>{(*lattice)(0, x, y), (*lattice)(1, x, y)};
      };
      return rescaled(std::move(f), height, width, max_mag * (0.5 + 0.5 * unit(rng)));
    }
  }
  throw std::invalid_argument("unknown motion kind");
}

FlowSample render(const Texture& texture, const FlowFn& field, std::size_t height, std::size_t width) {
  FlowSample s{Tensor({3, height, width}), Tensor({3, height, width}), Tensor({2, height, width}),
               Tensor({1, height, width})};
  const double xmax = static_cast<double>(width - 1), ymax = static_cast<double>(height - 1);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const double px = static_cast<double>(x), py = static_cast<double>(y);
      const auto [u, v] = field(px, py);
      s.gt_flow.at(0, y, x) = u;
      s.gt_flow.at(1, y, x) = v;
      const double tx = px + u, ty = py + v;
      s.valid.at(0, y, x) = (tx >= 0.0 && tx <= xmax && ty >= 0.0 && ty <= ymax) ? 1.0 : 0.0;
      for (std::size_t c = 0; c < 3; ++c) s.img1.at(c, y, x) = texture(c, px, py);

      // Solve p + f(p) = q for the img2 pixel q = (x, y).
      double sx = px, sy = py;
      for (int it = 0; it < 200; ++it) {
        const auto [fu, fv] = field(sx, sy);
        const double nx = px - fu, ny = py - fv;
        const double step = std::abs(nx - sx) + std::abs(ny - sy);
        sx = nx;
        sy = ny;
        if (step < 1e-13) break;
      }
      for (std::size_t c = 0; c < 3; ++c) s.img2.at(c, y, x) = texture(c, sx, sy);
    }
  return s;
}

void check_extents(std::size_t height, std::size_t width, double mag) {
  if (height == 0 || width == 0) throw std::invalid_argument("gen_synthetic: image extents must be positive");
  if (!(mag >= 0.0) || mag > static_cast<double>(std::min(height, width)) / 4.0) {
    throw std::invalid_argument("gen_synthetic: flow magnitude must lie in [0, min(H, W) / 4]");
  }
}

}  // namespace

FlowSample gen_synthetic(std::uint64_t seed, MotionKind kind, std::size_t height, std::size_t width, double max_mag) {
  check_extents(height, width, max_mag);
  std::mt19937_64 rng(seed);
  const Texture texture(rng, height, width, max_mag + 2.0);
  return render(texture, make_field(rng, kind, height, width, max_mag), height, width);
}

FlowSample gen_translation(std::uint64_t seed, std::size_t height, std::size_t width, double u, double v) {
  const double mag = std::hypot(u, v);
  check_extents(height, width, mag);
  std::mt19937_64 rng(seed);
  const Texture texture(rng, height, width, mag + 2.0);
  return render(texture, [u, v](double, double) { return std::array<double, 2>{u, v}; }, height, width);
}

FlowBatch stack(std::span<const FlowSample> samples) {
  if (samples.empty()) throw std::invalid_argument("stack: no samples");
  const auto batch = [&](auto member) {
    const Tensor& first = samples[0].*member;
    Shape shape{samples.size()};
    shape.insert(shape.end(), first.shape().begin(), first.shape().end());
    Tensor out(shape);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const Tensor& t = samples[i].*member;
      if (!t.same_shape(first)) throw ShapeError("stack: samples have different shapes");
      std::copy(t.storage().begin(), t.storage().end(), out.storage().begin() + static_cast<long>(i * t.numel()));
    }
    return out;
  };
  return {batch(&FlowSample::img1), batch(&FlowSample::img2), batch(&FlowSample::gt_flow),
          batch(&FlowSample::valid)};
}

// ---------------------------------------------------------------------------
// Metrics

namespace {

struct Aligned {
  std::size_t n, plane;
};

Aligned check_metric_operands(const Tensor& pred, const Tensor& gt, const Tensor& valid, const char* op) {
  const bool batched = pred.ndim() == 4;
  const std::size_t lead = batched ? 1 : 0;
  if ((pred.ndim() != 3 && pred.ndim() != 4) || !pred.same_shape(gt) || valid.ndim() != pred.ndim() ||
      pred.dim(lead) != 2 || valid.dim(lead) != 1 || valid.dim(lead + 1) != pred.dim(lead + 1) ||
      valid.dim(lead + 2) != pred.dim(lead + 2) || (batched && valid.dim(0) != pred.dim(0))) {
    throw ShapeError(std::string(op) + ": expected [N x] 2xHxW flows and [N x] 1xHxW mask, got " +
                     shape_string(pred.shape()) + ", " + shape_string(gt.shape()) + ", " +
                     shape_string(valid.shape()));
  }
  return {batched ? pred.dim(0) : 1, valid.numel() / (batched ? pred.dim(0) : 1)};
}

template <typename F>
std::size_t for_valid(const Tensor& pred, const Tensor& gt, const Tensor& valid, const char* op, F&& f) {
  const auto [n, plane] = check_metric_operands(pred, gt, valid, op);
  std::size_t count = 0;
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < plane; ++i) {
      if (valid[b * plane + i] == 0.0) continue;
      const std::size_t iu = (b * 2) * plane + i, iv = iu + plane;
      f(std::hypot(pred[iu] - gt[iu], pred[iv] - gt[iv]), std::hypot(gt[iu], gt[iv]));
      ++count;
    }
  if (count == 0) throw std::invalid_argument(std::string(op) + ": validity mask is empty");
  return count;
}

}  // namespace

double epe(const Tensor& pred, const Tensor& gt, const Tensor& valid) {
  double total = 0.0;
  const std::size_t count = for_valid(pred, gt, valid, "epe", [&](double err, double) { total += err; });
  return total / static_cast<double>(count);
}

double fl_all(const Tensor& pred, const Tensor& gt, const Tensor& valid) {
  std::size_t outliers = 0;
  const std::size_t count = for_valid(pred, gt, valid, "fl_all", [&](double err, double mag) {
    if (err > 3.0 && err > 0.05 * mag) ++outliers;
  });
  return static_cast<double>(outliers) / static_cast<double>(count);
}

EvalResult evaluate(const Tensor& pred, const Tensor& gt, const Tensor& valid) {
  return {epe(pred, gt, valid), fl_all(pred, gt, valid)};
}

// ---------------------------------------------------------------------------
// .flo

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

std::uint32_t get_u32(const unsigned char* b) {
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

}  // namespace

void write_flo(const std::filesystem::path& path, const Tensor& flow) {
  if (flow.ndim() != 3 || flow.dim(0) != 2) {
    throw ShapeError("write_flo: expected a 2xHxW flow, got " + shape_string(flow.shape()));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FlowFileError("cannot open " + path.string() + " for writing");
  const std::size_t h = flow.dim(1), w = flow.dim(2);
  put_u32(out, std::bit_cast<std::uint32_t>(kFloMagic));
  put_u32(out, static_cast<std::uint32_t>(w));
  put_u32(out, static_cast<std::uint32_t>(h));
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 2; ++c) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(flow.at(c, y, x))));
  if (!out) throw FlowFileError("write to " + path.string() + " failed");
}

Tensor read_flo(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FlowFileError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12) throw FlowFileError(path.string() + ": truncated .flo header");
  const float magic = std::bit_cast<float>(get_u32(bytes.data()));
  if (magic != kFloMagic) throw FlowFileError(path.string() + ": bad .flo magic (expected 202021.25)");
  const auto w = static_cast<std::int32_t>(get_u32(bytes.data() + 4));
  const auto h = static_cast<std::int32_t>(get_u32(bytes.data() + 8));
  if (w <= 0 || h <= 0 || w > (1 << 20) || h > (1 << 20)) {
    throw FlowFileError(path.string() + ": invalid .flo extents " + std::to_string(w) + "x" + std::to_string(h));
  }
  const std::size_t count = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 2;
  if (bytes.size() < 12 + 4 * count) {
    throw FlowFileError(path.string() + ": truncated .flo payload (" + std::to_string(bytes.size() - 12) + " of " +
                        std::to_string(4 * count) + " bytes)");
  }
  if (bytes.size() != 12 + 4 * count) throw FlowFileError(path.string() + ": trailing bytes after .flo payload");
  Tensor flow({2, static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
  const unsigned char* p = bytes.data() + 12;
  for (std::size_t y = 0; y < flow.dim(1); ++y)
    for (std::size_t x = 0; x < flow.dim(2); ++x)
      for (std::size_t c = 0; c < 2; ++c, p += 4) flow.at(c, y, x) = std::bit_cast<float>(get_u32(p));
  return flow;
}

// ---------------------------------------------------------------------------
// Visualization

namespace {

// Middlebury wheel: red-yellow-green-cyan-blue-magenta segments.
const std::vector<std::array<double, 3>>& color_wheel() {
  static const auto wheel = [] {
    std::vector<std::array<double, 3>> w;
    const auto ramp = [&](int n, auto colour) {
      for (int i = 0; i < n; ++i) w.push_back(colour(static_cast<double>(i) / n));
    };
    ramp(15, [](double t) { return std::array<double, 3>{1, t, 0}; });
    ramp(6, [](double t) { return std::array<double, 3>{1 - t, 1, 0}; });
    ramp(4, [](double t) { return std::array<double, 3>{0, 1, t}; });
    ramp(11, [](double t) { return std::array<double, 3>{0, 1 - t, 1}; });
    ramp(13, [](double t) { return std::array<double, 3>{t, 0, 1}; });
    ramp(6, [](double t) { return std::array<double, 3>{1, 0, 1 - t}; });
    return w;
  }();
  return wheel;
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

RgbImage flow_to_color(const Tensor& flow, std::optional<double> max_mag) {
  if (flow.ndim() != 3 || flow.dim(0) != 2) {
    throw ShapeError("flow_to_color: expected a 2xHxW flow, got " + shape_string(flow.shape()));
  }
  const std::size_t h = flow.dim(1), w = flow.dim(2), l = h * w;
  double scale = max_mag.value_or(0.0);
  if (!max_mag) {
    std::vector<double> mags(l);
    for (std::size_t i = 0; i < l; ++i) mags[i] = std::hypot(flow[i], flow[l + i]);
    const std::size_t k = static_cast<std::size_t>(0.99 * static_cast<double>(l - 1));
    std::nth_element(mags.begin(), mags.begin() + static_cast<long>(k), mags.end());
    scale = mags[k];
  }
  if (!(scale > 0.0)) scale = 1.0;

  const auto& wheel = color_wheel();
  const double ncols = static_cast<double>(wheel.size());
  RgbImage img{w, h, std::vector<std::uint8_t>(3 * l)};
  for (std::size_t i = 0; i < l; ++i) {
    const double u = flow[i] / scale, v = flow[l + i] / scale;
    const double rad = std::hypot(u, v);
    const double a = std::atan2(-v, -u) / std::numbers::pi;
    const double fk = (a + 1.0) / 2.0 * (ncols - 1.0);
    const std::size_t k0 = static_cast<std::size_t>(fk);
    const std::size_t k1 = (k0 + 1) % wheel.size();
    const double f = fk - static_cast<double>(k0);
    for (std::size_t c = 0; c < 3; ++c) {
      double col = (1 - f) * wheel[k0][c] + f * wheel[k1][c];
      col = rad <= 1.0 ? 1.0 - rad * (1.0 - col) : col * 0.75;
      img.pixels[3 * i + c] = to_byte(col);
    }
  }
  return img;
}

RgbImage error_map(const Tensor& pred, const Tensor& gt, const Tensor& valid, double max_err) {
  if (pred.ndim() != 3) throw ShapeError("error_map: expected 2xHxW flows");
  check_metric_operands(pred, gt, valid, "error_map");
  const std::size_t h = pred.dim(1), w = pred.dim(2), l = h * w;
  RgbImage img{w, h, std::vector<std::uint8_t>(3 * l)};
  for (std::size_t i = 0; i < l; ++i) {
    if (valid[i] == 0.0) {
      img.pixels[3 * i + 2] = 255;
      continue;
    }
    const std::uint8_t g = to_byte(std::hypot(pred[i] - gt[i], pred[l + i] - gt[l + i]) / max_err);
    img.pixels[3 * i] = img.pixels[3 * i + 1] = img.pixels[3 * i + 2] = g;
  }
  return img;
}

// ---------------------------------------------------------------------------
// PNG

namespace {

void write_png_format(const std::filesystem::path& path, std::size_t width, std::size_t height,
                      std::uint32_t format, const std::uint8_t* pixels) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;
  if (!png_image_write_to_file(&image, path.c_str(), 0, pixels, 0, nullptr)) {
    throw std::runtime_error("cannot write PNG " + path.string() + ": " + image.message);
  }
}

}  // namespace

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  if (image.pixels.size() != 3 * image.width * image.height || image.width == 0 || image.height == 0) {
    throw ShapeError("write_png: pixel buffer does not match image extents");
  }
  write_png_format(path, image.width, image.height, PNG_FORMAT_RGB, image.pixels.data());
}

void write_gray_png(const std::filesystem::path& path, std::size_t width, std::size_t height,
                    std::span<const std::uint8_t> pixels) {
  if (pixels.size() != width * height || width == 0 || height == 0) {
    throw ShapeError("write_gray_png: pixel buffer does not match image extents");
  }
  write_png_format(path, width, height, PNG_FORMAT_GRAY, pixels.data());
}

RgbImage read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw std::runtime_error("cannot read PNG " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  RgbImage out{image.width, image.height, std::vector<std::uint8_t>(PNG_IMAGE_SIZE(image))};
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw std::runtime_error("cannot decode PNG " + path.string() + ": " + image.message);
  }
  return out;
}

Tensor to_tensor(const RgbImage& image) {
  Tensor t({3, image.height, image.width});
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) t.at(c, y, x) = image.at(y, x, c) / 255.0;
  return t;
}

RgbImage to_image(const Tensor& rgb) {
  if (rgb.ndim() != 3 || rgb.dim(0) != 3) throw ShapeError("to_image: expected 3xHxW, got " + shape_string(rgb.shape()));
  const std::size_t h = rgb.dim(1), w = rgb.dim(2);
  RgbImage img{w, h, std::vector<std::uint8_t>(3 * w * h)};
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.pixels[(y * w + x) * 3 + c] = to_byte(rgb.at(c, y, x));
  return img;
}

}  // namespace dicl
