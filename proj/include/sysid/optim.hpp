#pragma once

// Xavier initialization and the Adam optimizer.

#include "sysid/autodiff.hpp"

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace sysid::train {

// Uniform on ±sqrt(6 / (fan_in + fan_out)) for a 2-D (fan_in, fan_out) shape.
ad::Tensor xavier_init(const ad::Shape& shape, std::uint64_t seed);

// Same distribution with explicit fans, drawn from a shared stream; `shape`
// may be any layout (conv kernels use fan = channels × 9).
ad::Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, ad::Shape shape,
                          std::mt19937_64& rng);

// Visitor over the trainable tensors of a model, in a fixed order.
using ParamVisitor = std::function<void(const std::string& name, ad::Tensor& value)>;
using ConstParamVisitor = std::function<void(const std::string& name, const ad::Tensor& value)>;

// Returns a copy of `model` whose parameters are variables on `tape`.
template <class Model>
Model bind(const Model& model, ad::Tape& tape) {
  Model bound = model;
  bound.visit([&tape](const std::string&, ad::Tensor& t) { t = tape.variable(t.detach()); });
  return bound;
}

struct AdamOptions {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::uint64_t step = 0;
};

// One bias-corrected Adam update. weights[i] and grads[i] must share shapes.
void adam_step(std::vector<ad::Tensor*>& weights, const std::vector<ad::Tensor>& grads, AdamState& state,
               const AdamOptions& opt);

}  // namespace sysid::train
