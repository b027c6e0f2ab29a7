#pragma once

#include <span>
#include <vector>

#include "dicl/dicl_cost.hpp"

namespace dicl {

/// Displacement-aware projection: a learned 49x49 map across hypotheses,
/// applied per pixel as a 1x1 convolution.
struct DapParams {
  Var weight;  // 49 x 49 x 1 x 1, row = output slot
  Var bias;    // 49

  /// Identity weights and zero bias.
  static DapParams identity();
  /// Weights and bias copied from a 49x49 matrix and a length-49 vector.
  static DapParams from_matrix(const Tensor& matrix, const Tensor& bias);

  /// 49 x 49 view of the weights.
  Tensor matrix() const;
  void collect(const std::string& prefix, ParamList& out) const;
};

/// C'_u = sum_v w(u, v) C_v + b_u at every pixel.
CostVolume dap_reweight(const CostVolume& costs, const DapParams& dap);

struct SoftArgmin {
  Var flow;   // N x 2 x h x w, (u, v) in [-3, 3]
  Var probs;  // N x 49 x h x w, softmax of negated costs over the window
};

/// Expected displacement under p = softmax(-C') over the 7x7 window.
SoftArgmin soft_argmin2d(const CostVolume& costs);

/// Difference between the largest and second-largest hypothesis probability
/// at each pixel: N x 49 x h x w -> N x 1 x h x w.
Tensor d_peak(const Tensor& probs);

/// Median (mean of the middle pair for even counts). Throws on empty input.
double median(std::vector<double> values);

}  // namespace dicl
