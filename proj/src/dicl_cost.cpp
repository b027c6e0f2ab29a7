#include "dicl/dicl_cost.hpp"

#include <algorithm>
#include <cstring>

namespace dicl {

Displacement Displacement::from_index(std::size_t index) {
  if (index >= kHypotheses) throw std::out_of_range("displacement index " + std::to_string(index) + " out of range");
  return {static_cast<int>(index / kWindow) - kMaxDisplacement, static_cast<int>(index % kWindow) - kMaxDisplacement};
}

const std::array<Displacement, kHypotheses>& all_displacements() {
  static const auto table = [] {
    std::array<Displacement, kHypotheses> t{};
    for (std::size_t k = 0; k < kHypotheses; ++k) t[k] = Displacement::from_index(k);
    return t;
  }();
  return table;
}

Tensor CostVolume::slice(Displacement d) const {
  const Tensor& c = costs->value;
  const std::size_t n = c.dim(0), h = c.dim(2), w = c.dim(3), k = d.index();
  Tensor out({n, 1, h, w});
  for (std::size_t b = 0; b < n; ++b)
    std::memcpy(out.data() + b * h * w, c.data() + (b * c.dim(1) + k) * h * w, h * w * sizeof(double));
  return out;
}

Var stack_displaced(const Var& f1, const Var& f2, std::span<const Displacement> ds) {
  const Tensor& a = f1->value;
  const Tensor& b = f2->value;
  if (a.ndim() != 4 || !a.same_shape(b)) {
    throw ShapeError("stack_displaced: feature maps must be matching NxCxHxW, got " + shape_string(a.shape()) +
                     " and " + shape_string(b.shape()));
  }
  if (ds.empty()) throw ShapeError("stack_displaced: no displacements");
  const std::size_t n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3), nd = ds.size();
  const std::size_t plane = h * w;
  std::vector<Displacement> disp(ds.begin(), ds.end());

  Tensor out({n * nd, 2 * c, h, w});
  for (std::size_t bn = 0; bn < n; ++bn)
    for (std::size_t k = 0; k < nd; ++k) {
      double* dst = out.data() + (bn * nd + k) * 2 * c * plane;
      std::memcpy(dst, a.data() + bn * c * plane, c * plane * sizeof(double));
      const long du = disp[k].u, dv = disp[k].v;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double* src = b.data() + (bn * c + ch) * plane;
        double* o = dst + (c + ch) * plane;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + dv;
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          for (std::size_t x = 0; x < w; ++x) {
            const long sx = static_cast<long>(x) + du;
            if (sx >= 0 && sx < static_cast<long>(w)) o[y * w + x] = src[sy * w + sx];
          }
        }
      }
    }

  return make_result(std::move(out), {f1, f2}, [disp = std::move(disp), n, c, h, w, plane](Node& self) {
    Node& n1 = *self.parents[0];
    Node& n2 = *self.parents[1];
    const std::size_t nd = disp.size();
    for (std::size_t bn = 0; bn < n; ++bn)
      for (std::size_t k = 0; k < nd; ++k) {
        const double* g = self.grad.data() + (bn * nd + k) * 2 * c * plane;
        if (n1.requires_grad) {
          double* d1 = n1.grad.data() + bn * c * plane;
          for (std::size_t i = 0; i < c * plane; ++i) d1[i] += g[i];
        }
        if (!n2.requires_grad) continue;
        const long du = disp[k].u, dv = disp[k].v;
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double* gs = g + (c + ch) * plane;
          double* d2 = n2.grad.data() + (bn * c + ch) * plane;
          for (std::size_t y = 0; y < h; ++y) {
            const long sy = static_cast<long>(y) + dv;
            if (sy < 0 || sy >= static_cast<long>(h)) continue;
            for (std::size_t x = 0; x < w; ++x) {
              const long sx = static_cast<long>(x) + du;
              if (sx >= 0 && sx < static_cast<long>(w)) d2[sy * w + sx] += gs[y * w + x];
            }
          }
        }
      }
  });
}

Var concat_displaced(const Var& f1, const Var& f2, Displacement d) {
  const Displacement one[1] = {d};
  return stack_displaced(f1, f2, one);
}

MatchingNet::Specs MatchingNet::dicl_specs() {
  return {conv_spec(64, 96, 3, 1),  conv_spec(96, 128, 3, 2),   conv_spec(128, 128, 3, 1),
          conv_spec(128, 64, 3, 1), deconv_spec(64, 32, 4, 2), conv_spec(32, 1, 3, 1)};
}

MatchingNet::MatchingNet(std::mt19937_64& rng, const Specs& specs) : specs_(specs) {
  for (std::size_t i = 0; i < specs_.size(); ++i) layers_[i] = ConvLayer::make(specs_[i], rng);
  for (std::size_t i = 0; i < norms_.size(); ++i) norms_[i] = BatchNormLayer(specs_[i].out_channels);
}

Var MatchingNet::operator()(const Var& fu, Mode mode, std::vector<std::size_t>* activation_sizes) {
  const Tensor& x = fu->value;
  if (x.ndim() != 4 || x.dim(1) != specs_[0].in_channels) {
    throw ShapeError("matching net expects Bx" + std::to_string(specs_[0].in_channels) + "xHxW, got " +
                     shape_string(x.shape()));
  }
  if (x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0) {
    throw ShapeError("matching net needs even spatial extents (stride-2 down/up pair), got " +
                     shape_string(x.shape()));
  }
  Var h = fu;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i](h);
    if (i + 1 < layers_.size()) h = relu(norms_[i](h, mode));
    if (activation_sizes) activation_sizes->push_back(h->value.numel());
  }
  return h;
}

void MatchingNet::collect(const std::string& prefix, ParamList& out) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i].collect(prefix + ".conv" + std::to_string(i), out);
    if (i < norms_.size()) norms_[i].collect(prefix + ".bn" + std::to_string(i), out);
  }
}

Var matching_cost(const Var& fu, MatchingNet& net, Mode mode) { return net(fu, mode); }

CostVolume build_cost_volume(const Var& f1, const Var& f2, MatchingNet& net, Mode mode,
                             std::optional<std::span<const Displacement>> order) {
  const auto& canonical = all_displacements();
  std::span<const Displacement> ds = order.value_or(std::span<const Displacement>(canonical));
  if (ds.size() != kHypotheses) throw ShapeError("build_cost_volume: order must list all 49 hypotheses");
  std::array<std::size_t, kHypotheses> position{};
  std::array<bool, kHypotheses> seen{};
  for (std::size_t k = 0; k < ds.size(); ++k) {
    if (!ds[k].in_window() || seen[ds[k].index()]) {
      throw ShapeError("build_cost_volume: order is not a permutation of the 7x7 window");
    }
    seen[ds[k].index()] = true;
    position[ds[k].index()] = k;
  }

  const std::size_t n = f1->value.dim(0), h = f1->value.dim(2), w = f1->value.dim(3);
  Var flat = net(stack_displaced(f1, f2, ds), mode);
  Var vol = reshape(flat, {n, kHypotheses, h, w});
  bool identity = true;
  for (std::size_t k = 0; k < kHypotheses; ++k) identity = identity && position[k] == k;
  if (!identity) {
    std::vector<Var> slots;
    slots.reserve(kHypotheses);
    for (std::size_t k = 0; k < kHypotheses; ++k) slots.push_back(slice(vol, 1, position[k], 1));
    vol = concat(slots, 1);
  }
  return {vol, 0};
}

}  // namespace dicl
