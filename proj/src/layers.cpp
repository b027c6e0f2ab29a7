#include "dicl/layers.hpp"

#include <cmath>

namespace dicl {

ConvLayer ConvLayer::make(const ConvSpec& spec, std::mt19937_64& rng) {
  spec.validate();
  const double fan_in = static_cast<double>(spec.in_channels * spec.kernel_h * spec.kernel_w);
  ConvLayer layer;
  layer.spec = spec;
  layer.weight = parameter(Tensor::randn(spec.weight_shape(), rng, std::sqrt(2.0 / fan_in)));
  layer.bias = parameter(Tensor(spec.bias_shape()));
  return layer;
}

ConvLayer ConvLayer::zeros(const ConvSpec& spec) {
  spec.validate();
  ConvLayer layer;
  layer.spec = spec;
  layer.weight = parameter(Tensor(spec.weight_shape()));
  layer.bias = parameter(Tensor(spec.bias_shape()));
  return layer;
}

Var ConvLayer::operator()(const Var& x) const {
  return spec.transposed ? deconv2d(x, weight, bias, spec) : conv2d(x, weight, bias, spec);
}

void ConvLayer::collect(const std::string& prefix, ParamList& out) const {
  out.add(prefix + ".weight", weight);
  out.add(prefix + ".bias", bias);
}

BatchNormLayer::BatchNormLayer(std::size_t channels)
    : gamma(parameter(Tensor({channels}, 1.0))), beta(parameter(Tensor({channels}, 0.0))), state(channels) {}

void BatchNormLayer::collect(const std::string& prefix, ParamList& out) {
  out.add(prefix + ".gamma", gamma);
  out.add(prefix + ".beta", beta);
  out.add_buffer(prefix + ".running_mean", &state.running_mean);
  out.add_buffer(prefix + ".running_var", &state.running_var);
  out.add_norm(&state);
}

ConvBnRelu ConvBnRelu::make(const ConvSpec& spec, std::mt19937_64& rng) {
  return {ConvLayer::make(spec, rng), BatchNormLayer(spec.out_channels)};
}

Var ConvBnRelu::operator()(const Var& x, Mode mode) { return relu(bn(conv(x), mode)); }

void ConvBnRelu::collect(const std::string& prefix, ParamList& out) {
  conv.collect(prefix + ".conv", out);
  bn.collect(prefix + ".bn", out);
}

}  // namespace dicl
