#include "dicl/feature_net.hpp"

#include <cstring>

namespace dicl {

namespace {

Tensor as_batch(const Tensor& t) {
  if (t.ndim() == 4) return t;
  if (t.ndim() == 3) return t.reshaped({1, t.dim(0), t.dim(1), t.dim(2)});
  throw ShapeError("expected CxHxW or NxCxHxW, got " + shape_string(t.shape()));
}

std::size_t round_up(std::size_t v, std::size_t m) { return (v + m - 1) / m * m; }

}  // namespace

PaddedImage pad_to_multiple(const Tensor& image, std::size_t multiple) {
  const Tensor b = as_batch(image);
  const std::size_t n = b.dim(0), c = b.dim(1), h = b.dim(2), w = b.dim(3);
  const std::size_t ph = round_up(h, multiple), pw = round_up(w, multiple);
  Tensor out({n, c, ph, pw});
  for (std::size_t p = 0; p < n * c; ++p)
    for (std::size_t y = 0; y < h; ++y)
      std::memcpy(out.data() + (p * ph + y) * pw, b.data() + (p * h + y) * w, w * sizeof(double));
  if (image.ndim() == 3) out = out.reshaped({c, ph, pw});
  return {std::move(out), h, w};
}

Tensor crop_to(const Tensor& t, std::size_t height, std::size_t width) {
  const Tensor b = as_batch(t);
  const std::size_t n = b.dim(0), c = b.dim(1), h = b.dim(2), w = b.dim(3);
  if (height > h || width > w || height == 0 || width == 0) {
    throw ShapeError("crop_to: cannot crop " + shape_string(t.shape()) + " to " + std::to_string(height) + "x" +
                     std::to_string(width));
  }
  Tensor out({n, c, height, width});
  for (std::size_t p = 0; p < n * c; ++p)
    for (std::size_t y = 0; y < height; ++y)
      std::memcpy(out.data() + (p * height + y) * width, b.data() + (p * h + y) * w, width * sizeof(double));
  if (t.ndim() == 3) out = out.reshaped({c, height, width});
  return out;
}

FeatureNet::FeatureNet(std::mt19937_64& rng) {
  std::size_t in = 3;
  for (std::size_t k = 0; k < kPyramidLevels; ++k) {
    const std::size_t width = kStageWidths[k];
    if (k == 0) {
      stages_[k].push_back(ConvBnRelu::make(conv_spec(in, 16, 3, 2), rng));
      in = 16;
    }
    stages_[k].push_back(ConvBnRelu::make(conv_spec(in, width, 3, 2), rng));
    stages_[k].push_back(ConvBnRelu::make(conv_spec(width, width, 3, 1), rng));
    projections_[k] = ConvLayer::make(conv_spec(width, kFeatureChannels, 1, 1), rng);
    in = width;
  }
}

FeaturePyramid FeatureNet::extract(const Tensor& images, Mode mode) {
  Tensor x = as_batch(images);
  if (x.dim(1) != 3) throw ShapeError("feature net expects 3-channel images, got " + shape_string(images.shape()));
  if (x.dim(2) % kInputMultiple != 0 || x.dim(3) % kInputMultiple != 0) {
    throw ShapeError("feature net input " + shape_string(images.shape()) + " must have height and width divisible by " +
                     std::to_string(kInputMultiple) + "; pad first");
  }
  const std::size_t per_image = x.numel() / x.dim(0);
  for (std::size_t b = 0; b < x.dim(0); ++b) {
    double* p = x.data() + b * per_image;
    double mean = 0.0;
    for (std::size_t i = 0; i < per_image; ++i) mean += p[i];
    mean /= static_cast<double>(per_image);
    for (std::size_t i = 0; i < per_image; ++i) p[i] -= mean;
  }

  FeaturePyramid pyramid;
  Var h = constant(std::move(x));
  for (std::size_t k = 0; k < kPyramidLevels; ++k) {
    for (auto& layer : stages_[k]) h = layer(h, mode);
    pyramid.levels[k] = projections_[k](h);
  }
  return pyramid;
}

void FeatureNet::collect(const std::string& prefix, ParamList& out) {
  for (std::size_t k = 0; k < kPyramidLevels; ++k) {
    for (std::size_t i = 0; i < stages_[k].size(); ++i)
      stages_[k][i].collect(prefix + ".stage" + std::to_string(k) + "." + std::to_string(i), out);
    projections_[k].collect(prefix + ".proj" + std::to_string(k), out);
  }
}

}  // namespace dicl
