#pragma once

// Loop-level reference implementations, written independently of the
// GEMM-based operators they are compared against.

#include <cmath>

#include "dicl/ops.hpp"

namespace dicl::testing {

inline Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride, std::size_t pad,
                         std::size_t dil = 1) {
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t oh = (h + 2 * pad - dil * (kh - 1) - 1) / stride + 1;
  const std::size_t ow = (wd + 2 * pad - dil * (kw - 1) - 1) / stride + 1;
  Tensor out({n, co, oh, ow});
  for (std::size_t bn = 0; bn < n; ++bn)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          double s = b.empty() ? 0.0 : b[o];
          for (std::size_t i = 0; i < ci; ++i)
            for (std::size_t ky = 0; ky < kh; ++ky)
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const long sy = static_cast<long>(y * stride + ky * dil) - static_cast<long>(pad);
                const long sx = static_cast<long>(xx * stride + kx * dil) - static_cast<long>(pad);
                if (sy < 0 || sx < 0 || sy >= static_cast<long>(h) || sx >= static_cast<long>(wd)) continue;
                s += w.at(o, i, ky, kx) * x.at(bn, i, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
              }
          out.at(bn, o, y, xx) = s;
        }
  return out;
}

// Scatter form: every input pixel stamps its kernel onto the output.
// Weight layout (out, in, kh, kw).
inline Tensor naive_deconv(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride, std::size_t pad) {
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t oh = (h - 1) * stride + kh - 2 * pad, ow = (wd - 1) * stride + kw - 2 * pad;
  Tensor out({n, co, oh, ow});
  for (std::size_t bn = 0; bn < n; ++bn)
    for (std::size_t o = 0; o < co; ++o) {
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) out.at(bn, o, y, xx) = b.empty() ? 0.0 : b[o];
      for (std::size_t i = 0; i < ci; ++i)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t xx = 0; xx < wd; ++xx)
            for (std::size_t ky = 0; ky < kh; ++ky)
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const long ty = static_cast<long>(y * stride + ky) - static_cast<long>(pad);
                const long tx = static_cast<long>(xx * stride + kx) - static_cast<long>(pad);
                if (ty < 0 || tx < 0 || ty >= static_cast<long>(oh) || tx >= static_cast<long>(ow)) continue;
                out.at(bn, o, static_cast<std::size_t>(ty), static_cast<std::size_t>(tx)) +=
                    w.at(o, i, ky, kx) * x.at(bn, i, y, xx);
              }
    }
  return out;
}

// Train-mode batch norm with unit gamma and zero beta, followed by ReLU.
inline Tensor naive_bn_relu(const Tensor& x, double eps = 1e-5) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out(x.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    double m = 0.0, v = 0.0;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx) m += x.at(b, ch, y, xx);
    m /= static_cast<double>(n * h * w);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx) v += (x.at(b, ch, y, xx) - m) * (x.at(b, ch, y, xx) - m);
    v /= static_cast<double>(n * h * w);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx)
          out.at(b, ch, y, xx) = std::max(0.0, (x.at(b, ch, y, xx) - m) / std::sqrt(v + eps));
  }
  return out;
}

}  // namespace dicl::testing
