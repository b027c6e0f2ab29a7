#pragma once

#include <random>
#include <string>

#include "dicl/ops.hpp"

namespace dicl {

/// Convolution (or transposed convolution) with owned parameters.
struct ConvLayer {
  ConvSpec spec;
  Var weight;
  Var bias;

  /// He-normal weights, zero bias.
  static ConvLayer make(const ConvSpec& spec, std::mt19937_64& rng);
  static ConvLayer zeros(const ConvSpec& spec);

  Var operator()(const Var& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct BatchNormLayer {
  Var gamma;
  Var beta;
  BatchNormState state;

  explicit BatchNormLayer(std::size_t channels = 1);
  Var operator()(const Var& x, Mode mode) { return batchnorm2d(x, gamma, beta, state, mode); }
  void collect(const std::string& prefix, ParamList& out);
};

/// conv -> BN -> ReLU
struct ConvBnRelu {
  ConvLayer conv;
  BatchNormLayer bn;

  static ConvBnRelu make(const ConvSpec& spec, std::mt19937_64& rng);
  Var operator()(const Var& x, Mode mode);
  void collect(const std::string& prefix, ParamList& out);
};

}  // namespace dicl
