#include "dicl/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

namespace dicl {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

void require(bool cond, const std::string& what) {
  if (!cond) throw ShapeError(what);
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* operand) {
  require(t.ndim() == rank, std::string(op) + ": " + operand + " must have rank " + std::to_string(rank) +
                                ", got " + shape_string(t.shape()));
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  require(a.same_shape(b), std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                               shape_string(b.shape()));
}

// Patch geometry shared by im2col/col2im. `channels x height x width` is the
// image side; `out_h x out_w` the sliding-window grid.
struct Patches {
  std::size_t batch, channels, height, width;
  std::size_t kernel_h, kernel_w, stride, padding, dilation;
  std::size_t out_h, out_w;

  std::size_t rows() const { return channels * kernel_h * kernel_w; }
  std::size_t cols() const { return batch * out_h * out_w; }
};

void im2col(const double* image, const Patches& g, double* cols) {
  const std::size_t grid = g.out_h * g.out_w;
  const std::size_t ncols = g.cols();
  const long pad = static_cast<long>(g.padding);
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
        double* row = cols + ((c * g.kernel_h + ky) * g.kernel_w + kx) * ncols;
        const long dy = static_cast<long>(ky * g.dilation) - pad;
        const long dx = static_cast<long>(kx * g.dilation) - pad;
        for (std::size_t n = 0; n < g.batch; ++n) {
          const double* plane = image + (n * g.channels + c) * g.height * g.width;
          double* out = row + n * grid;
          for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            const long iy = static_cast<long>(oy * g.stride) + dy;
            double* orow = out + oy * g.out_w;
            if (iy < 0 || iy >= static_cast<long>(g.height)) {
              std::fill(orow, orow + g.out_w, 0.0);
              continue;
            }
            const double* irow = plane + iy * g.width;
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
              const long ix = static_cast<long>(ox * g.stride) + dx;
              orow[ox] = (ix < 0 || ix >= static_cast<long>(g.width)) ? 0.0 : irow[ix];
            }
          }
        }
      }
    }
  }
}

void col2im(const double* cols, const Patches& g, double* image) {
  const std::size_t grid = g.out_h * g.out_w;
  const std::size_t ncols = g.cols();
  const long pad = static_cast<long>(g.padding);
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
        const double* row = cols + ((c * g.kernel_h + ky) * g.kernel_w + kx) * ncols;
        const long dy = static_cast<long>(ky * g.dilation) - pad;
        const long dx = static_cast<long>(kx * g.dilation) - pad;
        for (std::size_t n = 0; n < g.batch; ++n) {
          double* plane = image + (n * g.channels + c) * g.height * g.width;
          const double* in = row + n * grid;
          for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            const long iy = static_cast<long>(oy * g.stride) + dy;
            if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
            double* irow = plane + iy * g.width;
            const double* orow = in + oy * g.out_w;
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
              const long ix = static_cast<long>(ox * g.stride) + dx;
              if (ix >= 0 && ix < static_cast<long>(g.width)) irow[ix] += orow[ox];
            }
          }
        }
      }
    }
  }
}

// N x C x L  <->  C x (N*L)
void to_channel_major(const double* src, std::size_t n, std::size_t c, std::size_t l, double* dst) {
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      std::memcpy(dst + ch * n * l + b * l, src + (b * c + ch) * l, l * sizeof(double));
}

void from_channel_major(const double* src, std::size_t n, std::size_t c, std::size_t l, double* dst) {
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      std::memcpy(dst + (b * c + ch) * l, src + ch * n * l + b * l, l * sizeof(double));
}

void check_conv_operands(const Tensor& x, const Tensor& w, const Var& bias, const ConvSpec& spec,
                         const char* op) {
  spec.validate();
  require_rank(x, 4, op, "input");
  require(x.dim(1) == spec.in_channels, std::string(op) + ": input has " + std::to_string(x.dim(1)) +
                                            " channels, spec expects " + std::to_string(spec.in_channels) +
                                            " (input shape " + shape_string(x.shape()) + ")");
  require(w.shape() == spec.weight_shape(), std::string(op) + ": weight shape " + shape_string(w.shape()) +
                                                " does not match spec " + shape_string(spec.weight_shape()));
  if (bias) {
    require(bias->value.shape() == spec.bias_shape(), std::string(op) + ": bias shape " +
                                                          shape_string(bias->value.shape()) + " does not match " +
                                                          shape_string(spec.bias_shape()));
  }
}

void add_bias(Tensor& out, const Var& bias) {
  if (!bias) return;
  const std::size_t n = out.dim(0), c = out.dim(1), l = out.dim(2) * out.dim(3);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      double* p = out.data() + (b * c + ch) * l;
      const double v = bias->value[ch];
      for (std::size_t i = 0; i < l; ++i) p[i] += v;
    }
}

void accumulate_bias_grad(const Tensor& grad_out, Node& bias) {
  const std::size_t n = grad_out.dim(0), c = grad_out.dim(1), l = grad_out.dim(2) * grad_out.dim(3);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* p = grad_out.data() + (b * c + ch) * l;
      double s = 0.0;
      for (std::size_t i = 0; i < l; ++i) s += p[i];
      bias.grad[ch] += s;
    }
}

bool needs_grad(const Node& self, std::size_t i) {
  return i < self.parents.size() && self.parents[i] && self.parents[i]->requires_grad;
}

}  // namespace

// ---------------------------------------------------------------------------
// Convolution

std::size_t ConvSpec::output_extent(std::size_t in, std::size_t kernel) const {
  const std::size_t span = dilation * (kernel - 1) + 1;
  if (transposed) {
    const std::size_t full = (in - 1) * stride + span;
    require(full > 2 * padding, "transposed conv: padding too large for input extent " + std::to_string(in));
    return full - 2 * padding;
  }
  require(in + 2 * padding >= span, "conv: kernel span " + std::to_string(span) + " exceeds padded extent " +
                                        std::to_string(in + 2 * padding));
  return (in + 2 * padding - span) / stride + 1;
}

void ConvSpec::validate() const {
  require(kernel_h >= 1 && kernel_w >= 1, "conv spec: kernel extents must be >= 1");
  require(stride >= 1, "conv spec: stride must be >= 1");
  require(dilation >= 1, "conv spec: dilation must be >= 1");
  require(in_channels >= 1 && out_channels >= 1, "conv spec: channel counts must be >= 1");
}

ConvSpec conv_spec(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t dilation) {
  ConvSpec s;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel_h = s.kernel_w = kernel;
  s.stride = stride;
  s.dilation = dilation;
  s.padding = dilation * (kernel - 1) / 2;
  return s;
}

ConvSpec deconv_spec(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride) {
  ConvSpec s;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel_h = s.kernel_w = kernel;
  s.stride = stride;
  s.padding = kernel >= stride ? (kernel - stride) / 2 : 0;
  s.transposed = true;
  return s;
}

Var conv2d(const Var& input, const Var& weight, const Var& bias, const ConvSpec& spec) {
  const Tensor& x = input->value;
  check_conv_operands(x, weight->value, bias, spec, "conv2d");
  require(!spec.transposed, "conv2d: spec is marked transposed; use deconv2d");

  Patches g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), spec.kernel_h, spec.kernel_w, spec.stride, spec.padding,
            spec.dilation, 0, 0};
  g.out_h = spec.output_extent(g.height, spec.kernel_h);
  g.out_w = spec.output_extent(g.width, spec.kernel_w);
  const std::size_t cout = spec.out_channels, grid = g.out_h * g.out_w;

  std::vector<double> cols(g.rows() * g.cols());
  im2col(x.data(), g, cols.data());
  std::vector<double> ym(cout * g.cols());
  MatMap(ym.data(), cout, g.cols()).noalias() =
      ConstMatMap(weight->value.data(), cout, g.rows()) * ConstMatMap(cols.data(), g.rows(), g.cols());

  Tensor out({g.batch, cout, g.out_h, g.out_w});
  from_channel_major(ym.data(), g.batch, cout, grid, out.data());
  add_bias(out, bias);

  return make_result(std::move(out), {input, weight, bias}, [g, cout, grid](Node& self) {
    Node& in = *self.parents[0];
    Node& w = *self.parents[1];
    std::vector<double> dy(cout * g.cols());
    to_channel_major(self.grad.data(), g.batch, cout, grid, dy.data());
    ConstMatMap dym(dy.data(), cout, g.cols());
    if (needs_grad(self, 1) || needs_grad(self, 0)) {
      std::vector<double> cols(g.rows() * g.cols());
      if (w.requires_grad) {
        im2col(in.value.data(), g, cols.data());
        MatMap(w.grad.data(), cout, g.rows()).noalias() +=
            dym * ConstMatMap(cols.data(), g.rows(), g.cols()).transpose();
      }
      if (in.requires_grad) {
        MatMap(cols.data(), g.rows(), g.cols()).noalias() =
            ConstMatMap(w.value.data(), cout, g.rows()).transpose() * dym;
        col2im(cols.data(), g, in.grad.data());
      }
    }
    if (needs_grad(self, 2)) accumulate_bias_grad(self.grad, *self.parents[2]);
  });
}

namespace {

// (out, in, kh, kw) -> matrix (out*kh*kw) x in
std::vector<double> deconv_matrix(const Tensor& w, const ConvSpec& spec) {
  const std::size_t kk = spec.kernel_h * spec.kernel_w;
  std::vector<double> a(spec.out_channels * kk * spec.in_channels);
  for (std::size_t o = 0; o < spec.out_channels; ++o)
    for (std::size_t i = 0; i < spec.in_channels; ++i)
      for (std::size_t t = 0; t < kk; ++t)
        a[(o * kk + t) * spec.in_channels + i] = w[(o * spec.in_channels + i) * kk + t];
  return a;
}

}  // namespace

Var deconv2d(const Var& input, const Var& weight, const Var& bias, const ConvSpec& spec) {
  const Tensor& x = input->value;
  check_conv_operands(x, weight->value, bias, spec, "deconv2d");
  require(spec.transposed, "deconv2d: spec must be marked transposed");

  const std::size_t n = x.dim(0), cin = spec.in_channels, cout = spec.out_channels;
  const std::size_t h = x.dim(2), w = x.dim(3);
  // The output image is the "input side" of the equivalent forward conv.
  Patches g{n, cout, spec.output_extent(h, spec.kernel_h), spec.output_extent(w, spec.kernel_w), spec.kernel_h,
            spec.kernel_w, spec.stride, spec.padding, spec.dilation, h, w};
  const std::size_t grid = h * w;

  std::vector<double> xm(cin * g.cols());
  to_channel_major(x.data(), n, cin, grid, xm.data());
  const std::vector<double> a = deconv_matrix(weight->value, spec);
  std::vector<double> cols(g.rows() * g.cols());
  MatMap(cols.data(), g.rows(), g.cols()).noalias() =
      ConstMatMap(a.data(), g.rows(), cin) * ConstMatMap(xm.data(), cin, g.cols());

  Tensor out({n, cout, g.height, g.width});
  col2im(cols.data(), g, out.data());
  add_bias(out, bias);

  return make_result(std::move(out), {input, weight, bias}, [g, spec, cin, grid](Node& self) {
    Node& in = *self.parents[0];
    Node& w = *self.parents[1];
    if (needs_grad(self, 0) || needs_grad(self, 1)) {
      std::vector<double> dcols(g.rows() * g.cols());
      im2col(self.grad.data(), g, dcols.data());
      ConstMatMap dc(dcols.data(), g.rows(), g.cols());
      if (w.requires_grad) {
        std::vector<double> xm(cin * g.cols());
        to_channel_major(in.value.data(), g.batch, cin, grid, xm.data());
        RowMat da = dc * ConstMatMap(xm.data(), cin, g.cols()).transpose();
        const std::size_t kk = spec.kernel_h * spec.kernel_w;
        for (std::size_t o = 0; o < spec.out_channels; ++o)
          for (std::size_t i = 0; i < cin; ++i)
            for (std::size_t t = 0; t < kk; ++t) w.grad[(o * cin + i) * kk + t] += da(o * kk + t, i);
      }
      if (in.requires_grad) {
        const std::vector<double> a = deconv_matrix(w.value, spec);
        std::vector<double> dxm(cin * g.cols());
        MatMap(dxm.data(), cin, g.cols()).noalias() = ConstMatMap(a.data(), g.rows(), cin).transpose() * dc;
        Tensor dx(in.value.shape());
        from_channel_major(dxm.data(), g.batch, cin, grid, dx.data());
        in.grad += dx;
      }
    }
    if (needs_grad(self, 2)) accumulate_bias_grad(self.grad, *self.parents[2]);
  });
}

// ---------------------------------------------------------------------------
// Batch norm

Var batchnorm2d(const Var& input, const Var& gamma, const Var& beta, BatchNormState& state, Mode mode) {
  const Tensor& x = input->value;
  require_rank(x, 4, "batchnorm2d", "input");
  const std::size_t n = x.dim(0), c = x.dim(1), l = x.dim(2) * x.dim(3);
  require(gamma->value.shape() == Shape{c} && beta->value.shape() == Shape{c},
          "batchnorm2d: gamma/beta must have shape (" + std::to_string(c) + ")");
  require(state.running_mean.shape() == Shape{c} && state.running_var.shape() == Shape{c},
          "batchnorm2d: running statistics do not match channel count " + std::to_string(c));
  const std::size_t m = n * l;

  Tensor xhat(x.shape());
  std::vector<double> inv_std(c);
  if (mode == Mode::train) {
    require(m >= 2, "batchnorm2d: train mode needs N*H*W >= 2, got input " + shape_string(x.shape()));
    for (std::size_t ch = 0; ch < c; ++ch) {
      double mean = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double* p = x.data() + (b * c + ch) * l;
        for (std::size_t i = 0; i < l; ++i) mean += p[i];
      }
      mean /= static_cast<double>(m);
      double var = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double* p = x.data() + (b * c + ch) * l;
        for (std::size_t i = 0; i < l; ++i) var += (p[i] - mean) * (p[i] - mean);
      }
      var /= static_cast<double>(m);
      inv_std[ch] = 1.0 / std::sqrt(var + state.eps);
      for (std::size_t b = 0; b < n; ++b) {
        const double* p = x.data() + (b * c + ch) * l;
        double* q = xhat.data() + (b * c + ch) * l;
        for (std::size_t i = 0; i < l; ++i) q[i] = (p[i] - mean) * inv_std[ch];
      }
      const double unbiased = var * static_cast<double>(m) / static_cast<double>(m - 1);
      state.running_mean[ch] = (1.0 - state.momentum) * state.running_mean[ch] + state.momentum * mean;
      state.running_var[ch] = (1.0 - state.momentum) * state.running_var[ch] + state.momentum * unbiased;
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      inv_std[ch] = 1.0 / std::sqrt(state.running_var[ch] + state.eps);
      const double mean = state.running_mean[ch];
      for (std::size_t b = 0; b < n; ++b) {
        const double* p = x.data() + (b * c + ch) * l;
        double* q = xhat.data() + (b * c + ch) * l;
        for (std::size_t i = 0; i < l; ++i) q[i] = (p[i] - mean) * inv_std[ch];
      }
    }
  }

  Tensor out(x.shape());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double gm = gamma->value[ch], bt = beta->value[ch];
      const double* q = xhat.data() + (b * c + ch) * l;
      double* o = out.data() + (b * c + ch) * l;
      for (std::size_t i = 0; i < l; ++i) o[i] = gm * q[i] + bt;
    }

  const bool train = mode == Mode::train;
  return make_result(std::move(out), {input, gamma, beta},
                     [xhat = std::move(xhat), inv_std = std::move(inv_std), n, c, l, train](Node& self) {
                       Node& in = *self.parents[0];
                       Node& gm = *self.parents[1];
                       Node& bt = *self.parents[2];
                       const double md = static_cast<double>(n * l);
                       for (std::size_t ch = 0; ch < c; ++ch) {
                         double sum_dy = 0.0, sum_dy_xhat = 0.0;
                         for (std::size_t b = 0; b < n; ++b) {
                           const double* dy = self.grad.data() + (b * c + ch) * l;
                           const double* q = xhat.data() + (b * c + ch) * l;
                           for (std::size_t i = 0; i < l; ++i) {
                             sum_dy += dy[i];
                             sum_dy_xhat += dy[i] * q[i];
                           }
                         }
                         if (gm.requires_grad) gm.grad[ch] += sum_dy_xhat;
                         if (bt.requires_grad) bt.grad[ch] += sum_dy;
                         if (!in.requires_grad) continue;
                         const double k = gm.value[ch] * inv_std[ch];
                         for (std::size_t b = 0; b < n; ++b) {
                           const double* dy = self.grad.data() + (b * c + ch) * l;
                           const double* q = xhat.data() + (b * c + ch) * l;
                           double* dx = in.grad.data() + (b * c + ch) * l;
                           if (train) {
                             for (std::size_t i = 0; i < l; ++i)
                               dx[i] += k * (dy[i] - sum_dy / md - q[i] * sum_dy_xhat / md);
                           } else {
                             for (std::size_t i = 0; i < l; ++i) dx[i] += k * dy[i];
                           }
                         }
                       }
                     });
}

// ---------------------------------------------------------------------------
// Elementwise

Var relu(const Var& input) {
  Tensor out(input->value.shape());
  const Tensor& x = input->value;
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return make_result(std::move(out), {input}, [](Node& self) {
    Node& in = *self.parents[0];
    for (std::size_t i = 0; i < in.value.numel(); ++i)
      if (in.value[i] > 0.0) in.grad[i] += self.grad[i];
  });
}

Var add(const Var& a, const Var& b) {
  require_same(a->value, b->value, "add");
  Tensor out = a->value;
  out += b->value;
  return make_result(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k)
      if (needs_grad(self, k)) self.parents[k]->grad += self.grad;
  });
}

Var sub(const Var& a, const Var& b) {
  require_same(a->value, b->value, "sub");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b->value[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    if (needs_grad(self, 0)) self.parents[0]->grad += self.grad;
    if (needs_grad(self, 1)) {
      Tensor& g = self.parents[1]->grad;
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i];
    }
  });
}

Var scale(const Var& a, double factor) {
  Tensor out = a->value;
  for (auto& v : out.values()) v *= factor;
  return make_result(std::move(out), {a}, [factor](Node& self) {
    Tensor& g = self.parents[0]->grad;
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += factor * self.grad[i];
  });
}

Var square(const Var& a) {
  Tensor out = a->value;
  for (auto& v : out.values()) v *= v;
  return make_result(std::move(out), {a}, [](Node& self) {
    Node& in = *self.parents[0];
    for (std::size_t i = 0; i < in.grad.numel(); ++i) in.grad[i] += 2.0 * in.value[i] * self.grad[i];
  });
}

Var sum(const Var& a) {
  Tensor out({1}, a->value.sum());
  return make_result(std::move(out), {a}, [](Node& self) {
    Tensor& g = self.parents[0]->grad;
    const double s = self.grad[0];
    for (auto& v : g.values()) v += s;
  });
}

Var inner(const Var& a, const Tensor& weights) {
  require_same(a->value, weights, "inner");
  double s = 0.0;
  for (std::size_t i = 0; i < weights.numel(); ++i) s += a->value[i] * weights[i];
  return make_result(Tensor({1}, s), {a}, [weights](Node& self) {
    Tensor& g = self.parents[0]->grad;
    const double d = self.grad[0];
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += d * weights[i];
  });
}

// ---------------------------------------------------------------------------
// Softmax

Var softmax(const Var& input, std::size_t axis) {
  const Tensor& x = input->value;
  require(axis < x.ndim(), "softmax: axis " + std::to_string(axis) + " out of range for " + shape_string(x.shape()));
  std::size_t outer = 1, inner_n = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.ndim(); ++i) inner_n *= x.dim(i);
  const std::size_t extent = x.dim(axis);

  Tensor out(x.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    const double* px = x.data() + o * extent * inner_n;
    double* py = out.data() + o * extent * inner_n;
    for (std::size_t j = 0; j < inner_n; ++j) {
      double mx = px[j];
      for (std::size_t k = 1; k < extent; ++k) mx = std::max(mx, px[k * inner_n + j]);
      double total = 0.0;
      for (std::size_t k = 0; k < extent; ++k) {
        const double e = std::exp(px[k * inner_n + j] - mx);
        py[k * inner_n + j] = e;
        total += e;
      }
      for (std::size_t k = 0; k < extent; ++k) py[k * inner_n + j] /= total;
    }
  }
  return make_result(std::move(out), {input}, [outer, inner_n, extent](Node& self) {
    Node& in = *self.parents[0];
    for (std::size_t o = 0; o < outer; ++o) {
      const double* py = self.value.data() + o * extent * inner_n;
      const double* pg = self.grad.data() + o * extent * inner_n;
      double* pd = in.grad.data() + o * extent * inner_n;
      for (std::size_t j = 0; j < inner_n; ++j) {
        double dot = 0.0;
        for (std::size_t k = 0; k < extent; ++k) dot += pg[k * inner_n + j] * py[k * inner_n + j];
        for (std::size_t k = 0; k < extent; ++k)
          pd[k * inner_n + j] += py[k * inner_n + j] * (pg[k * inner_n + j] - dot);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Layout

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  require(!parts.empty(), "concat: no operands");
  const Shape& first = parts.front()->value.shape();
  require(axis < first.size(), "concat: axis out of range for " + shape_string(first));
  Shape shape = first;
  shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p->value.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    require(ok, "concat: incompatible shapes " + shape_string(first) + " and " + shape_string(s));
    shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner_n = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner_n *= shape[i];

  Tensor out(shape);
  const std::size_t row = shape[axis] * inner_n;
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t chunk = p->value.dim(axis) * inner_n;
    for (std::size_t o = 0; o < outer; ++o)
      std::memcpy(out.data() + o * row + off, p->value.data() + o * chunk, chunk * sizeof(double));
    off += chunk;
  }
  return make_result(std::move(out), parts, [offsets, outer, row, axis, inner_n](Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      Node& p = *self.parents[k];
      if (!p.requires_grad) continue;
      const std::size_t chunk = p.value.dim(axis) * inner_n;
      for (std::size_t o = 0; o < outer; ++o) {
        const double* src = self.grad.data() + o * row + offsets[k];
        double* dst = p.grad.data() + o * chunk;
        for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
      }
    }
  });
}

Var slice(const Var& input, std::size_t axis, std::size_t start, std::size_t count) {
  const Shape& s = input->value.shape();
  require(axis < s.size() && count >= 1 && start + count <= s[axis],
          "slice: range [" + std::to_string(start) + ", " + std::to_string(start + count) + ") invalid for " +
              shape_string(s));
  std::size_t outer = 1, inner_n = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner_n *= s[i];
  Shape shape = s;
  shape[axis] = count;
  Tensor out(shape);
  const std::size_t src_row = s[axis] * inner_n, chunk = count * inner_n, off = start * inner_n;
  for (std::size_t o = 0; o < outer; ++o)
    std::memcpy(out.data() + o * chunk, input->value.data() + o * src_row + off, chunk * sizeof(double));
  return make_result(std::move(out), {input}, [outer, src_row, chunk, off](Node& self) {
    Node& in = *self.parents[0];
    for (std::size_t o = 0; o < outer; ++o) {
      const double* src = self.grad.data() + o * chunk;
      double* dst = in.grad.data() + o * src_row + off;
      for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
    }
  });
}

Var reshape(const Var& input, Shape shape) {
  Tensor out = input->value.reshaped(std::move(shape));
  return make_result(std::move(out), {input}, [](Node& self) {
    Node& in = *self.parents[0];
    for (std::size_t i = 0; i < in.grad.numel(); ++i) in.grad[i] += self.grad[i];
  });
}

Var pad_spatial(const Var& input, std::size_t bottom, std::size_t right) {
  const Tensor& x = input->value;
  require_rank(x, 4, "pad_spatial", "input");
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h + bottom, ow = w + right;
  Tensor out({x.dim(0), x.dim(1), oh, ow});
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < h; ++y)
      std::memcpy(out.data() + (p * oh + y) * ow, x.data() + (p * h + y) * w, w * sizeof(double));
  return make_result(std::move(out), {input}, [planes, h, w, oh, ow](Node& self) {
    Node& in = *self.parents[0];
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) in.grad[(p * h + y) * w + x] += self.grad[(p * oh + y) * ow + x];
  });
}

Var crop_spatial(const Var& input, std::size_t out_h, std::size_t out_w) {
  const Tensor& x = input->value;
  require_rank(x, 4, "crop_spatial", "input");
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  require(out_h >= 1 && out_w >= 1 && out_h <= h && out_w <= w,
          "crop_spatial: cannot crop " + shape_string(x.shape()) + " to " + std::to_string(out_h) + "x" +
              std::to_string(out_w));
  Tensor out({x.dim(0), x.dim(1), out_h, out_w});
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < out_h; ++y)
      std::memcpy(out.data() + (p * out_h + y) * out_w, x.data() + (p * h + y) * w, out_w * sizeof(double));
  return make_result(std::move(out), {input}, [planes, h, w, out_h, out_w](Node& self) {
    Node& in = *self.parents[0];
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t y = 0; y < out_h; ++y)
        for (std::size_t x = 0; x < out_w; ++x)
          in.grad[(p * h + y) * w + x] += self.grad[(p * out_h + y) * out_w + x];
  });
}

// ---------------------------------------------------------------------------
// Resampling

namespace {

struct Tap {
  std::size_t i0, i1;
  double w0, w1;
};

std::vector<Tap> resize_taps(std::size_t in, std::size_t out) {
  std::vector<Tap> taps(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(src));
    const double frac = src - static_cast<double>(i0);
    taps[o] = {i0, std::min(i0 + 1, in - 1), 1.0 - frac, frac};
  }
  return taps;
}

}  // namespace

Var resize_bilinear(const Var& input, std::size_t out_h, std::size_t out_w) {
  const Tensor& x = input->value;
  require_rank(x, 4, "resize_bilinear", "input");
  require(out_h >= 1 && out_w >= 1, "resize_bilinear: output extents must be positive");
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  auto ty = resize_taps(h, out_h);
  auto tx = resize_taps(w, out_w);
  Tensor out({x.dim(0), x.dim(1), out_h, out_w});
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = x.data() + p * h * w;
    double* dst = out.data() + p * out_h * out_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const double* r0 = src + ty[y].i0 * w;
      const double* r1 = src + ty[y].i1 * w;
      for (std::size_t xo = 0; xo < out_w; ++xo) {
        const Tap& t = tx[xo];
        dst[y * out_w + xo] = ty[y].w0 * (t.w0 * r0[t.i0] + t.w1 * r0[t.i1]) +
                              ty[y].w1 * (t.w0 * r1[t.i0] + t.w1 * r1[t.i1]);
      }
    }
  }
  return make_result(std::move(out), {input},
                     [ty = std::move(ty), tx = std::move(tx), planes, h, w, out_h, out_w](Node& self) {
                       Node& in = *self.parents[0];
                       for (std::size_t p = 0; p < planes; ++p) {
                         const double* g = self.grad.data() + p * out_h * out_w;
                         double* d = in.grad.data() + p * h * w;
                         for (std::size_t y = 0; y < out_h; ++y) {
                           double* r0 = d + ty[y].i0 * w;
                           double* r1 = d + ty[y].i1 * w;
                           for (std::size_t xo = 0; xo < out_w; ++xo) {
                             const Tap& t = tx[xo];
                             const double gv = g[y * out_w + xo];
                             r0[t.i0] += ty[y].w0 * t.w0 * gv;
                             r0[t.i1] += ty[y].w0 * t.w1 * gv;
                             r1[t.i0] += ty[y].w1 * t.w0 * gv;
                             r1[t.i1] += ty[y].w1 * t.w1 * gv;
                           }
                         }
                       }
                     });
}

WarpResult bilinear_warp(const Var& target, const Var& flow) {
  const Tensor& t = target->value;
  const Tensor& f = flow->value;
  require_rank(t, 4, "bilinear_warp", "target");
  require_rank(f, 4, "bilinear_warp", "flow");
  require(f.dim(0) == t.dim(0) && f.dim(1) == 2 && f.dim(2) == t.dim(2) && f.dim(3) == t.dim(3),
          "bilinear_warp: flow " + shape_string(f.shape()) + " does not match target " + shape_string(t.shape()));
  const std::size_t n = t.dim(0), c = t.dim(1), h = t.dim(2), w = t.dim(3);
  const long hl = static_cast<long>(h), wl = static_cast<long>(w);

  Tensor out(t.shape());
  Tensor valid({n, 1, h, w});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double sx = static_cast<double>(x) + f.at(b, 0, y, x);
        const double sy = static_cast<double>(y) + f.at(b, 1, y, x);
        valid.at(b, 0, y, x) = (sx >= 0.0 && sx <= static_cast<double>(w - 1) && sy >= 0.0 &&
                                sy <= static_cast<double>(h - 1))
                                   ? 1.0
                                   : 0.0;
        const double fx = std::floor(sx), fy = std::floor(sy);
        const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
        const double ax = sx - fx, ay = sy - fy;
        const double wts[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
        const long cx[4] = {x0, x0 + 1, x0, x0 + 1};
        const long cy[4] = {y0, y0, y0 + 1, y0 + 1};
        for (int k = 0; k < 4; ++k) {
          if (cx[k] < 0 || cx[k] >= wl || cy[k] < 0 || cy[k] >= hl) continue;
          for (std::size_t ch = 0; ch < c; ++ch) out.at(b, ch, y, x) += wts[k] * t.at(b, ch, cy[k], cx[k]);
        }
      }

  Var warped = make_result(std::move(out), {target, flow}, [n, c, h, w, hl, wl](Node& self) {
    Node& tn = *self.parents[0];
    Node& fn = *self.parents[1];
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const double sx = static_cast<double>(x) + fn.value.at(b, 0, y, x);
          const double sy = static_cast<double>(y) + fn.value.at(b, 1, y, x);
          const double fx = std::floor(sx), fy = std::floor(sy);
          const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
          const double ax = sx - fx, ay = sy - fy;
          const double wts[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
          const double dwx[4] = {-(1 - ay), 1 - ay, -ay, ay};
          const double dwy[4] = {-(1 - ax), -ax, 1 - ax, ax};
          const long cx[4] = {x0, x0 + 1, x0, x0 + 1};
          const long cy[4] = {y0, y0, y0 + 1, y0 + 1};
          double gu = 0.0, gv = 0.0;
          for (int k = 0; k < 4; ++k) {
            if (cx[k] < 0 || cx[k] >= wl || cy[k] < 0 || cy[k] >= hl) continue;
            for (std::size_t ch = 0; ch < c; ++ch) {
              const double g = self.grad.at(b, ch, y, x);
              const double v = tn.value.at(b, ch, cy[k], cx[k]);
              if (tn.requires_grad) tn.grad.at(b, ch, cy[k], cx[k]) += wts[k] * g;
              gu += dwx[k] * v * g;
              gv += dwy[k] * v * g;
            }
          }
          if (fn.requires_grad) {
            fn.grad.at(b, 0, y, x) += gu;
            fn.grad.at(b, 1, y, x) += gv;
          }
        }
  });
  return {std::move(warped), std::move(valid)};
}

// ---------------------------------------------------------------------------
// Reductions used by losses

Var channel_norm(const Var& input) {
  const Tensor& x = input->value;
  require_rank(x, 4, "channel_norm", "input");
  const std::size_t n = x.dim(0), c = x.dim(1), l = x.dim(2) * x.dim(3);
  Tensor out({n, 1, x.dim(2), x.dim(3)});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < l; ++i) {
      double s = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double v = x[(b * c + ch) * l + i];
        s += v * v;
      }
      out[b * l + i] = std::sqrt(s);
    }
  return make_result(std::move(out), {input}, [n, c, l](Node& self) {
    Node& in = *self.parents[0];
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t i = 0; i < l; ++i) {
        const double norm = self.value[b * l + i];
        if (norm == 0.0) continue;
        const double g = self.grad[b * l + i] / norm;
        for (std::size_t ch = 0; ch < c; ++ch) in.grad[(b * c + ch) * l + i] += g * in.value[(b * c + ch) * l + i];
      }
  });
}

Var masked_mean(const Var& input, const Tensor& mask) {
  require_same(input->value, mask, "masked_mean");
  std::size_t count = 0;
  double s = 0.0;
  for (std::size_t i = 0; i < mask.numel(); ++i) {
    if (mask[i] != 0.0) {
      ++count;
      s += input->value[i];
    }
  }
  if (count == 0) return constant(Tensor({1}, 0.0));
  const double inv = 1.0 / static_cast<double>(count);
  return make_result(Tensor({1}, s * inv), {input}, [mask, inv](Node& self) {
    Node& in = *self.parents[0];
    const double g = self.grad[0] * inv;
    for (std::size_t i = 0; i < mask.numel(); ++i)
      if (mask[i] != 0.0) in.grad[i] += g;
  });
}

}  // namespace dicl
