#pragma once

#include "sysid/autodiff.hpp"
#include "sysid/optim.hpp"

#include <functional>
#include <random>
#include <vector>

namespace testing_support {

using sysid::ad::Tensor;

// Parameters in visit order; tracked handles are kept unless `detach`.
template <class Model>
std::vector<Tensor> params_of(Model m, bool detach = true) {
  std::vector<Tensor> out;
  m.visit([&](const std::string&, Tensor& t) { out.push_back(detach ? t.detach() : t); });
  return out;
}

// Copy of `m` with its parameters replaced, in visit order, starting at inputs[offset].
template <class Model>
Model with_params(const Model& m, const std::vector<Tensor>& inputs, std::size_t offset = 0) {
  Model out = m;
  std::size_t k = offset;
  out.visit([&](const std::string&, Tensor& t) { t = inputs.at(k++); });
  return out;
}

template <class Model>
void fill_params(Model& m, double value) {
  m.visit([&](const std::string&, Tensor& t) { std::fill(t.data.begin(), t.data.end(), value); });
}

// Xavier leaves biases at zero, which parks dead relu units exactly on the kink.
template <class Model>
void randomize_biases(Model& m, std::uint64_t seed, double lo = -0.2, double hi = 0.2) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  m.visit([&](const std::string& name, Tensor& t) {
    if (name.ends_with("bias"))
      for (auto& v : t.data) v = u(rng);
  });
}

inline Tensor random_tensor(sysid::ad::Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape), 0.0);
  for (auto& v : t.data) v = u(rng);
  return t;
}

// Weighted sum so every output entry reaches the root with a distinct weight.
inline Tensor weighted_sum(const Tensor& t, std::uint64_t seed) {
  Tensor w = random_tensor(t.shape, seed, 0.5, 1.5);
  return sysid::ad::sum(sysid::ad::mul(t, w));
}

// Plain Adam loop on a model; returns the final loss.
template <class Model>
double fit(Model& m, const std::function<Tensor(const Model&)>& loss_fn, int steps, double lr) {
  sysid::train::AdamState st;
  double last = 0.0;
  for (int i = 0; i < steps; ++i) {
    sysid::ad::Tape tape;
    const Model bound = sysid::train::bind(m, tape);
    const Tensor loss = loss_fn(bound);
    last = loss.item();
    const auto grads = tape.backward(loss);
    std::vector<Tensor*> ws;
    std::vector<Tensor> gs;
    auto bound_params = params_of(bound, false);
    m.visit([&](const std::string&, Tensor& t) { ws.push_back(&t); });
    for (const auto& p : bound_params) gs.push_back(grads.of(p));
    sysid::train::adam_step(ws, gs, st, {.lr = lr});
  }
  return last;
}

}  // namespace testing_support
