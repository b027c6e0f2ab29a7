#include "dicl/flow_head.hpp"

#include <algorithm>
#include <stdexcept>

namespace dicl {

namespace {

ConvSpec dap_spec() { return conv_spec(kHypotheses, kHypotheses, 1, 1); }

// E[u] and E[v] under p, summed as sum_{d>0} d * (P(d) - P(-d)) so that a
// symmetric distribution yields exactly zero.
Var expected_displacement(const Var& probs) {
  const Tensor& p = probs->value;
  const std::size_t n = p.dim(0), l = p.dim(2) * p.dim(3);
  Tensor out({n, 2, p.dim(2), p.dim(3)});
  const auto at = [&](std::size_t b, int u, int v, std::size_t i) {
    return p[(b * kHypotheses + Displacement{u, v}.index()) * l + i];
  };
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < l; ++i) {
      double eu = 0.0, ev = 0.0;
      for (int d = kMaxDisplacement; d >= 1; --d) {
        double pu = 0.0, pv = 0.0;
        for (int o = -kMaxDisplacement; o <= kMaxDisplacement; ++o) {
          pu += at(b, d, o, i) - at(b, -d, o, i);
          pv += at(b, o, d, i) - at(b, o, -d, i);
        }
        eu += d * pu;
        ev += d * pv;
      }
      out[(b * 2) * l + i] = eu;
      out[(b * 2 + 1) * l + i] = ev;
    }
  return make_result(std::move(out), {probs}, [n, l](Node& self) {
    Node& in = *self.parents[0];
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t k = 0; k < kHypotheses; ++k) {
        const Displacement d = Displacement::from_index(k);
        const double* gu = self.grad.data() + (b * 2) * l;
        const double* gv = gu + l;
        double* g = in.grad.data() + (b * kHypotheses + k) * l;
        for (std::size_t i = 0; i < l; ++i) g[i] += d.u * gu[i] + d.v * gv[i];
      }
  });
}

}  // namespace

DapParams DapParams::identity() {
  Tensor w({kHypotheses, kHypotheses, 1, 1});
  for (std::size_t k = 0; k < kHypotheses; ++k) w[k * kHypotheses + k] = 1.0;
  return {parameter(std::move(w)), parameter(Tensor({kHypotheses}))};
}

DapParams DapParams::from_matrix(const Tensor& matrix, const Tensor& bias) {
  if (matrix.shape() != Shape{kHypotheses, kHypotheses} || bias.shape() != Shape{kHypotheses}) {
    throw ShapeError("DAP parameters must be 49x49 and 49, got " + shape_string(matrix.shape()) + " and " +
                     shape_string(bias.shape()));
  }
  return {parameter(matrix.reshaped({kHypotheses, kHypotheses, 1, 1})), parameter(bias)};
}

Tensor DapParams::matrix() const { return weight->value.reshaped({kHypotheses, kHypotheses}); }

void DapParams::collect(const std::string& prefix, ParamList& out) const {
  out.add(prefix + ".weight", weight);
  out.add(prefix + ".bias", bias);
}

CostVolume dap_reweight(const CostVolume& costs, const DapParams& dap) {
  const Tensor& c = costs.costs->value;
  if (c.ndim() != 4 || c.dim(1) != kHypotheses) {
    throw ShapeError("dap_reweight: cost volume must have 49 hypotheses, got " + shape_string(c.shape()));
  }
  return {conv2d(costs.costs, dap.weight, dap.bias, dap_spec()), costs.level};
}

SoftArgmin soft_argmin2d(const CostVolume& costs) {
  const Tensor& c = costs.costs->value;
  if (c.ndim() != 4 || c.dim(1) != kHypotheses) {
    throw ShapeError("soft_argmin2d: cost volume must have 49 hypotheses, got " + shape_string(c.shape()));
  }
  Var probs = softmax(scale(costs.costs, -1.0), 1);
  Var flow = expected_displacement(probs);
  return {flow, probs};
}

Tensor d_peak(const Tensor& probs) {
  if (probs.ndim() != 4 || probs.dim(1) < 2) {
    throw ShapeError("d_peak: expected N x K x h x w probabilities, got " + shape_string(probs.shape()));
  }
  const std::size_t n = probs.dim(0), k = probs.dim(1), l = probs.dim(2) * probs.dim(3);
  Tensor out({n, 1, probs.dim(2), probs.dim(3)});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < l; ++i) {
      double first = -1.0, second = -1.0;
      for (std::size_t s = 0; s < k; ++s) {
        const double p = probs[(b * k + s) * l + i];
        if (p > first) {
          second = first;
          first = p;
        } else if (p > second) {
          second = p;
        }
      }
      out[b * l + i] = first - second;
    }
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of an empty set");
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<long>(mid), values.end());
  const double upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + static_cast<long>(mid));
  return 0.5 * (lower + upper);
}

}  // namespace dicl
