#pragma once

// Coarse-to-fine flow model: per level, warp F2 by the upsampled flow, build
// costs, reweight (DAP), soft-argmin a residual, add, and optionally refine
// with the context net.

#include <array>
#include <memory>
#include <random>
#include <string>

#include "dicl/cost_heads.hpp"
#include "dicl/feature_net.hpp"
#include "dicl/flow_head.hpp"

namespace dicl {

struct ModelConfig {
  CostHeadKind head = CostHeadKind::dicl;
  bool use_dap = true;
  bool use_context = true;
  /// Refine at every level instead of only the finest.
  bool context_all_levels = false;

  /// key=value lines, one per field.
  std::string to_text() const;
  /// Inverse of to_text; unknown keys are ignored, missing keys keep defaults.
  static ModelConfig from_text(const std::string& text);
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Seven 3x3 convolutions, dilations 1,2,4,8,16,1,1, on [flow, features]
/// (2 + 32 channels). ReLU between layers; the last layer is linear and
/// zero-initialized, so refinement starts as the identity.
class ContextNet {
 public:
  static constexpr std::array<std::size_t, 7> kDilations{1, 2, 4, 8, 16, 1, 1};
  static constexpr std::array<std::size_t, 7> kWidths{64, 64, 64, 48, 32, 16, 2};

  explicit ContextNet(std::mt19937_64& rng);

  /// Residual flow for N x 2 x h x w flow and N x 32 x h x w features.
  Var residual(const Var& flow, const Var& features) const;
  std::array<ConvLayer, 7>& layers() { return layers_; }
  void collect(const std::string& prefix, ParamList& out) const;

 private:
  std::array<ConvLayer, 7> layers_;
};

/// flow + context residual.
Var context_refine(const Var& flow, const Var& features, const ContextNet& net);

/// Bilinear x2 upsampling with flow values doubled.
Var upsample_flow(const Var& flow);

struct PyramidOutput {
  std::array<Var, kPyramidLevels> flows;  // finest (1/4) first, N x 2 x h_k x w_k
  std::array<Var, kPyramidLevels> probs;  // N x 49 x h_k x w_k
  Var full_res;                           // N x 2 x H x W
};

class FlowModel {
 public:
  FlowModel(const ModelConfig& config, std::mt19937_64& rng);

  /// img1, img2: 3xHxW or Nx3xHxW with H, W multiples of 64. Both frames go
  /// through the feature net as one batch.
  PyramidOutput forward(const Tensor& img1, const Tensor& img2, Mode mode);

  /// Pads to multiples of 64, runs in eval mode without recording, and crops
  /// the full-resolution flow back: N x 2 x H x W (or 2 x H x W).
  Tensor predict(const Tensor& img1, const Tensor& img2);

  /// All trainable tensors plus BN running statistics, with stable names.
  ParamList parameters();

  const ModelConfig& config() const { return config_; }
  FeatureNet& feature_net() { return *features_; }
  CostHead& head(std::size_t level) { return *heads_.at(level); }
  DapParams& dap(std::size_t level) { return daps_.at(level); }
  ContextNet& context() { return *context_; }

 private:
  ModelConfig config_;
  std::unique_ptr<FeatureNet> features_;
  std::array<std::unique_ptr<CostHead>, kPyramidLevels> heads_;
  std::array<DapParams, kPyramidLevels> daps_;
  std::unique_ptr<ContextNet> context_;
};

inline constexpr std::array<double, kPyramidLevels> kDefaultLossWeights{1.0, 0.75, 0.5, 0.5, 0.5};

/// Mean over `mask` of the per-pixel Euclidean norm of pred - gt, where pred
/// and gt are N x 2 x h x w and mask N x 1 x h x w. Zero for an empty mask.
Var level_loss(const Var& pred, const Tensor& gt, const Tensor& mask);

/// s x s block average of an N x C x H x W tensor.
Tensor avg_pool(const Tensor& t, std::size_t s);
/// s x s block minimum (a block is valid only if every pixel is).
Tensor min_pool(const Tensor& t, std::size_t s);

/// Per level k: gt average-pooled by stride s_k and divided by s_k, mask
/// min-pooled, weighted sum of level losses.
Var multi_level_loss(const PyramidOutput& out, const Tensor& gt_flow, const Tensor& valid,
                     const std::array<double, kPyramidLevels>& weights = kDefaultLossWeights);

}  // namespace dicl
