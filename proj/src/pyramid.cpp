#include "dicl/pyramid.hpp"

#include <algorithm>
#include <limits>
#include <sstream>

namespace dicl {

// ---------------------------------------------------------------------------
// Config

namespace {

const char* on_off(bool v) { return v ? "on" : "off"; }

bool parse_on_off(const std::string& key, const std::string& value) {
  if (value == "on" || value == "true" || value == "1") return true;
  if (value == "off" || value == "false" || value == "0") return false;
  throw std::invalid_argument("config key '" + key + "' expects on/off, got '" + value + "'");
}

}  // namespace

std::string ModelConfig::to_text() const {
  std::ostringstream out;
  out << "head=" << to_string(head) << '\n'
      << "dap=" << on_off(use_dap) << '\n'
      << "context=" << on_off(use_context) << '\n'
      << "context_levels=" << (context_all_levels ? "all" : "finest") << '\n';
  return out.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  ModelConfig c;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "head") {
      c.head = parse_cost_head(value);
    } else if (key == "dap") {
      c.use_dap = parse_on_off(key, value);
    } else if (key == "context") {
      c.use_context = parse_on_off(key, value);
    } else if (key == "context_levels") {
      if (value != "all" && value != "finest") throw std::invalid_argument("context_levels must be all or finest");
      c.context_all_levels = value == "all";
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// Context net

ContextNet::ContextNet(std::mt19937_64& rng) {
  std::size_t in = 2 + kFeatureChannels;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const ConvSpec spec = conv_spec(in, kWidths[i], 3, 1, kDilations[i]);
    layers_[i] = i + 1 < layers_.size() ? ConvLayer::make(spec, rng) : ConvLayer::zeros(spec);
    in = kWidths[i];
  }
}

Var ContextNet::residual(const Var& flow, const Var& features) const {
  const Tensor& f = flow->value;
  const Tensor& x = features->value;
  if (f.ndim() != 4 || f.dim(1) != 2 || x.ndim() != 4 || x.dim(1) != kFeatureChannels || f.dim(0) != x.dim(0) ||
      f.dim(2) != x.dim(2) || f.dim(3) != x.dim(3)) {
    throw ShapeError("context net expects Nx2xhxw flow and Nx32xhxw features, got " + shape_string(f.shape()) +
                     " and " + shape_string(x.shape()));
  }
  Var h = concat({flow, features}, 1);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i](h);
    if (i + 1 < layers_.size()) h = relu(h);
  }
  return h;
}

void ContextNet::collect(const std::string& prefix, ParamList& out) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(prefix + ".conv" + std::to_string(i), out);
}

Var context_refine(const Var& flow, const Var& features, const ContextNet& net) {
  return add(flow, net.residual(flow, features));
}

Var upsample_flow(const Var& flow) {
  const Tensor& f = flow->value;
  if (f.ndim() != 4 || f.dim(1) != 2) throw ShapeError("upsample_flow: expected Nx2xhxw, got " + shape_string(f.shape()));
  return scale(resize_bilinear(flow, 2 * f.dim(2), 2 * f.dim(3)), 2.0);
}

// ---------------------------------------------------------------------------
// Model

FlowModel::FlowModel(const ModelConfig& config, std::mt19937_64& rng) : config_(config) {
  features_ = std::make_unique<FeatureNet>(rng);
  for (auto& h : heads_) h = make_cost_head(config.head, rng);
  for (auto& d : daps_) d = DapParams::identity();
  context_ = std::make_unique<ContextNet>(rng);
}

PyramidOutput FlowModel::forward(const Tensor& img1, const Tensor& img2, Mode mode) {
  if (!img1.same_shape(img2)) {
    throw ShapeError("forward: frame shapes differ: " + shape_string(img1.shape()) + " vs " +
                     shape_string(img2.shape()));
  }
  const Tensor a = img1.ndim() == 3 ? img1.reshaped({1, img1.dim(0), img1.dim(1), img1.dim(2)}) : img1;
  const Tensor b = img2.ndim() == 3 ? img2.reshaped({1, img2.dim(0), img2.dim(1), img2.dim(2)}) : img2;
  if (a.ndim() != 4) throw ShapeError("forward: expected 3xHxW or Nx3xHxW frames, got " + shape_string(img1.shape()));
  const std::size_t n = a.dim(0);

  Tensor both({2 * n, a.dim(1), a.dim(2), a.dim(3)});
  std::copy(a.storage().begin(), a.storage().end(), both.storage().begin());
  std::copy(b.storage().begin(), b.storage().end(), both.storage().begin() + static_cast<long>(a.numel()));
  const FeaturePyramid pyramid = features_->extract(both, mode);

  PyramidOutput out;
  Var flow;
  for (std::size_t k = kPyramidLevels; k-- > 0;) {
    const Var& f = pyramid.levels[k];
    Var f1 = slice(f, 0, 0, n);
    Var f2 = slice(f, 0, n, n);
    const std::size_t h = f1->value.dim(2), w = f1->value.dim(3);

    Var base;
    if (flow) {
      base = upsample_flow(flow);
      f2 = bilinear_warp(f2, base).warped;
    } else {
      base = constant(Tensor({n, 2, h, w}));
    }

    CostHead& head = *heads_[k];
    const std::size_t pad_h = head.needs_even_extent() ? h % 2 : 0, pad_w = head.needs_even_extent() ? w % 2 : 0;
    CostVolume costs;
    if (pad_h || pad_w) {
      costs = head.cost_volume(pad_spatial(f1, pad_h, pad_w), pad_spatial(f2, pad_h, pad_w), mode);
      costs.costs = crop_spatial(costs.costs, h, w);
    } else {
      costs = head.cost_volume(f1, f2, mode);
    }
    costs.level = k;
    if (config_.use_dap) costs = dap_reweight(costs, daps_[k]);

    SoftArgmin sa = soft_argmin2d(costs);
    flow = add(base, sa.flow);
    if (config_.use_context && (k == 0 || config_.context_all_levels)) flow = context_refine(flow, f1, *context_);
    out.flows[k] = flow;
    out.probs[k] = sa.probs;
  }
  const Tensor& f0 = out.flows[0]->value;
  out.full_res = scale(resize_bilinear(out.flows[0], 4 * f0.dim(2), 4 * f0.dim(3)), 4.0);
  return out;
}

Tensor FlowModel::predict(const Tensor& img1, const Tensor& img2) {
  NoGradGuard guard;
  const PaddedImage p1 = pad_to_multiple(img1), p2 = pad_to_multiple(img2);
  const PyramidOutput out = forward(p1.image, p2.image, Mode::eval);
  Tensor flow = crop_to(out.full_res->value, p1.height, p1.width);
  if (img1.ndim() == 3) flow = flow.reshaped({2, p1.height, p1.width});
  return flow;
}

ParamList FlowModel::parameters() {
  ParamList list;
  features_->collect("features", list);
  for (std::size_t k = 0; k < kPyramidLevels; ++k) {
    heads_[k]->collect("level" + std::to_string(k) + ".head", list);
    if (config_.use_dap) daps_[k].collect("level" + std::to_string(k) + ".dap", list);
  }
  if (config_.use_context) context_->collect("context", list);
  return list;
}

// ---------------------------------------------------------------------------
// Loss

namespace {

template <typename Reduce>
Tensor block_pool(const Tensor& t, std::size_t s, const char* op, double init, Reduce reduce, bool average) {
  if (t.ndim() != 4 || s == 0 || t.dim(2) % s != 0 || t.dim(3) % s != 0) {
    throw ShapeError(std::string(op) + ": cannot pool " + shape_string(t.shape()) + " by " + std::to_string(s));
  }
  const std::size_t planes = t.dim(0) * t.dim(1), h = t.dim(2), w = t.dim(3), oh = h / s, ow = w / s;
  Tensor out({t.dim(0), t.dim(1), oh, ow});
  const double norm = 1.0 / static_cast<double>(s * s);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        double acc = init;
        for (std::size_t dy = 0; dy < s; ++dy)
          for (std::size_t dx = 0; dx < s; ++dx) acc = reduce(acc, t[(p * h + y * s + dy) * w + x * s + dx]);
        out[(p * oh + y) * ow + x] = average ? acc * norm : acc;
      }
  return out;
}

}  // namespace

Tensor avg_pool(const Tensor& t, std::size_t s) {
  return block_pool(t, s, "avg_pool", 0.0, [](double a, double b) { return a + b; }, true);
}

Tensor min_pool(const Tensor& t, std::size_t s) {
  return block_pool(
      t, s, "min_pool", std::numeric_limits<double>::infinity(), [](double a, double b) { return std::min(a, b); },
      false);
}

Var level_loss(const Var& pred, const Tensor& gt, const Tensor& mask) {
  const Tensor& p = pred->value;
  if (p.ndim() != 4 || p.dim(1) != 2 || !p.same_shape(gt) || mask.ndim() != 4 || mask.dim(1) != 1 ||
      mask.dim(0) != p.dim(0) || mask.dim(2) != p.dim(2) || mask.dim(3) != p.dim(3)) {
    throw ShapeError("level_loss: expected Nx2xhxw prediction/gt and Nx1xhxw mask, got " + shape_string(p.shape()) +
                     ", " + shape_string(gt.shape()) + ", " + shape_string(mask.shape()));
  }
  return masked_mean(channel_norm(sub(pred, constant(gt))), mask);
}

Var multi_level_loss(const PyramidOutput& out, const Tensor& gt_flow, const Tensor& valid,
                     const std::array<double, kPyramidLevels>& weights) {
  const Tensor gt = gt_flow.ndim() == 3 ? gt_flow.reshaped({1, 2, gt_flow.dim(1), gt_flow.dim(2)}) : gt_flow;
  const Tensor mask = valid.ndim() == 3 ? valid.reshaped({1, 1, valid.dim(1), valid.dim(2)}) : valid;
  Var total;
  for (std::size_t k = 0; k < kPyramidLevels; ++k) {
    const std::size_t s = level_stride(k);
    Tensor g = avg_pool(gt, s);
    for (auto& v : g.values()) v /= static_cast<double>(s);
    Var term = scale(level_loss(out.flows[k], g, min_pool(mask, s)), weights[k]);
    total = total ? add(total, term) : term;
  }
  return total;
}

}  // namespace dicl
