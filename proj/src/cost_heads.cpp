#include "dicl/cost_heads.hpp"

#include "dicl/feature_net.hpp"

#include <cmath>
#include <stdexcept>

namespace dicl {

std::string to_string(CostHeadKind kind) {
  switch (kind) {
    case CostHeadKind::dot: return "dot";
    case CostHeadKind::cosine: return "cosine";
    case CostHeadKind::mlp3: return "mlp3";
    case CostHeadKind::reduced_dicl: return "reduced-dicl";
    case CostHeadKind::dicl: return "dicl";
  }
  return "?";
}

CostHeadKind parse_cost_head(std::string_view name) {
  if (name == "dot") return CostHeadKind::dot;
  if (name == "cosine") return CostHeadKind::cosine;
  if (name == "mlp3") return CostHeadKind::mlp3;
  if (name == "reduced-dicl" || name == "reduced_dicl") return CostHeadKind::reduced_dicl;
  if (name == "dicl") return CostHeadKind::dicl;
  throw std::invalid_argument("unknown cost head '" + std::string(name) +
                              "' (expected dot, cosine, mlp3, reduced-dicl or dicl)");
}

// ---------------------------------------------------------------------------
// Non-learned similarities

namespace {

constexpr double kCosineEps = 1e-9;

Tensor pixel_norms(const Tensor& f) {
  const std::size_t n = f.dim(0), c = f.dim(1), l = f.dim(2) * f.dim(3);
  Tensor out({n, l});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < l; ++i) {
      double s = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double v = f[(b * c + ch) * l + i];
        s += v * v;
      }
      out[b * l + i] = std::sqrt(s);
    }
  return out;
}

}  // namespace

Var similarity_volume(const Var& f1, const Var& f2, std::span<const Displacement> ds, Similarity kind) {
  const Tensor& a = f1->value;
  const Tensor& b = f2->value;
  if (a.ndim() != 4 || !a.same_shape(b)) {
    throw ShapeError("similarity_volume: feature maps must be matching NxCxHxW, got " + shape_string(a.shape()) +
                     " and " + shape_string(b.shape()));
  }
  const std::size_t n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3), l = h * w, nd = ds.size();
  std::vector<Displacement> disp(ds.begin(), ds.end());
  const bool cosine = kind == Similarity::cosine;
  Tensor na = cosine ? pixel_norms(a) : Tensor();
  Tensor nb = cosine ? pixel_norms(b) : Tensor();

  Tensor out({n, nd, h, w});
  for (std::size_t bn = 0; bn < n; ++bn)
    for (std::size_t k = 0; k < nd; ++k)
      for (std::size_t y = 0; y < h; ++y) {
        const long sy = static_cast<long>(y) + disp[k].v;
        if (sy < 0 || sy >= static_cast<long>(h)) continue;
        for (std::size_t x = 0; x < w; ++x) {
          const long sx = static_cast<long>(x) + disp[k].u;
          if (sx < 0 || sx >= static_cast<long>(w)) continue;
          const std::size_t p = y * w + x, q = static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx);
          double dot = 0.0;
          for (std::size_t ch = 0; ch < c; ++ch) dot += a[(bn * c + ch) * l + p] * b[(bn * c + ch) * l + q];
          if (cosine) dot /= na[bn * l + p] * nb[bn * l + q] + kCosineEps;
          out[(bn * nd + k) * l + p] = dot;
        }
      }

  return make_result(std::move(out), {f1, f2},
                     [disp = std::move(disp), na = std::move(na), nb = std::move(nb), cosine, n, c, h, w,
                      l](Node& self) {
                       Node& n1 = *self.parents[0];
                       Node& n2 = *self.parents[1];
                       const Tensor& a = n1.value;
                       const Tensor& b = n2.value;
                       const std::size_t nd = disp.size();
                       for (std::size_t bn = 0; bn < n; ++bn)
                         for (std::size_t k = 0; k < nd; ++k)
                           for (std::size_t y = 0; y < h; ++y) {
                             const long sy = static_cast<long>(y) + disp[k].v;
                             if (sy < 0 || sy >= static_cast<long>(h)) continue;
                             for (std::size_t x = 0; x < w; ++x) {
                               const long sx = static_cast<long>(x) + disp[k].u;
                               if (sx < 0 || sx >= static_cast<long>(w)) continue;
                               const std::size_t p = y * w + x;
                               const std::size_t q = static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx);
                               const double g = self.grad[(bn * nd + k) * l + p];
                               if (g == 0.0) continue;
                               double ca = g, cb = g, sa = 0.0, sb = 0.0;
                               if (cosine) {
                                 const double an = na[bn * l + p], bnrm = nb[bn * l + q];
                                 const double denom = an * bnrm + kCosineEps;
                                 double dot = 0.0;
                                 for (std::size_t ch = 0; ch < c; ++ch)
                                   dot += a[(bn * c + ch) * l + p] * b[(bn * c + ch) * l + q];
                                 ca = cb = g / denom;
                                 // d|a|/da = a/|a|; taken as zero at a = 0.
                                 sa = an > 0.0 ? -g * dot * bnrm / (denom * denom * an) : 0.0;
                                 sb = bnrm > 0.0 ? -g * dot * an / (denom * denom * bnrm) : 0.0;
                               }
                               for (std::size_t ch = 0; ch < c; ++ch) {
                                 const double av = a[(bn * c + ch) * l + p], bv = b[(bn * c + ch) * l + q];
                                 if (n1.requires_grad) n1.grad[(bn * c + ch) * l + p] += ca * bv + sa * av;
                                 if (n2.requires_grad) n2.grad[(bn * c + ch) * l + q] += cb * av + sb * bv;
                               }
                             }
                           }
                     });
}

Var dot_similarity(const Var& f1, const Var& f2, Displacement d) {
  const Displacement one[1] = {d};
  return similarity_volume(f1, f2, one, Similarity::dot);
}

Var cosine_similarity(const Var& f1, const Var& f2, Displacement d) {
  const Displacement one[1] = {d};
  return similarity_volume(f1, f2, one, Similarity::cosine);
}

CostVolume SimilarityHead::cost_volume(const Var& f1, const Var& f2, Mode) {
  const auto& ds = all_displacements();
  return {scale(similarity_volume(f1, f2, ds, kind_), -1.0), 0};
}

// ---------------------------------------------------------------------------
// MLP

Mlp3Head::Mlp3Head(std::mt19937_64& rng) {
  const std::size_t in = 2 * kFeatureChannels;
  layers_[0] = ConvLayer::make(conv_spec(in, kHidden, 1, 1), rng);
  layers_[1] = ConvLayer::make(conv_spec(kHidden, kHidden, 1, 1), rng);
  layers_[2] = ConvLayer::make(conv_spec(kHidden, 1, 1, 1), rng);
}

Var Mlp3Head::score(const Var& fu) const { return layers_[2](relu(layers_[1](relu(layers_[0](fu))))); }

Var mlp3_cost(const Var& fu, const Mlp3Head& head) { return head.score(fu); }

CostVolume Mlp3Head::cost_volume(const Var& f1, const Var& f2, Mode) {
  const auto& ds = all_displacements();
  const std::size_t n = f1->value.dim(0), h = f1->value.dim(2), w = f1->value.dim(3);
  return {reshape(score(stack_displaced(f1, f2, ds)), {n, kHypotheses, h, w}), 0};
}

void Mlp3Head::collect(const std::string& prefix, ParamList& out) {
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(prefix + ".fc" + std::to_string(i), out);
}

// ---------------------------------------------------------------------------
// Matching-net heads

MatchingNet::Specs reduced_dicl_specs() {
  return {conv_spec(64, 96, 1, 1),  conv_spec(96, 128, 1, 2),   conv_spec(128, 128, 1, 1),
          conv_spec(128, 64, 1, 1), deconv_spec(64, 32, 2, 2), conv_spec(32, 1, 1, 1)};
}

Var reduced_dicl_cost(const Var& fu, MatchingNet& net, Mode mode) { return net(fu, mode); }

MatchingNetHead::MatchingNetHead(std::mt19937_64& rng, bool reduced)
    : reduced_(reduced), net_(rng, reduced ? reduced_dicl_specs() : MatchingNet::dicl_specs()) {}

CostVolume MatchingNetHead::cost_volume(const Var& f1, const Var& f2, Mode mode) {
  return build_cost_volume(f1, f2, net_, mode);
}

std::unique_ptr<CostHead> make_cost_head(CostHeadKind kind, std::mt19937_64& rng) {
  switch (kind) {
    case CostHeadKind::dot: return std::make_unique<SimilarityHead>(Similarity::dot);
    case CostHeadKind::cosine: return std::make_unique<SimilarityHead>(Similarity::cosine);
    case CostHeadKind::mlp3: return std::make_unique<Mlp3Head>(rng);
    case CostHeadKind::reduced_dicl: return std::make_unique<MatchingNetHead>(rng, true);
    case CostHeadKind::dicl: return std::make_unique<MatchingNetHead>(rng, false);
  }
  throw std::invalid_argument("unknown cost head kind");
}

}  // namespace dicl
