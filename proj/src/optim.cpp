#include "sysid/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace sysid::train {

ad::Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, ad::Shape shape, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-bound, bound);
  ad::Tensor t(std::move(shape), 0.0);
  for (auto& v : t.data) v = u(rng);
  return t;
}

ad::Tensor xavier_init(const ad::Shape& shape, std::uint64_t seed) {
  if (shape.size() != 2) throw ad::ShapeError("xavier_init: expected a 2-D shape, got " + ad::shape_str(shape));
  std::mt19937_64 rng(seed);
  return xavier_uniform(shape[0], shape[1], shape, rng);
}

void adam_step(std::vector<ad::Tensor*>& weights, const std::vector<ad::Tensor>& grads, AdamState& state,
               const AdamOptions& opt) {
  if (weights.size() != grads.size()) throw ad::ShapeError("adam_step: weight/gradient count mismatch");
  if (state.m.empty()) {
    for (auto* w : weights) {
      state.m.emplace_back(w->size(), 0.0);
      state.v.emplace_back(w->size(), 0.0);
    }
  }
  if (state.m.size() != weights.size()) throw ad::ShapeError("adam_step: optimizer state does not match weights");
  for (std::size_t k = 0; k < weights.size(); ++k)
    if (weights[k]->shape != grads[k].shape || state.m[k].size() != weights[k]->size())
      throw ad::ShapeError("adam_step: shape mismatch " + ad::shape_str(weights[k]->shape) + " vs " +
                           ad::shape_str(grads[k].shape));
  ++state.step;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < weights.size(); ++k) {
    auto& w = weights[k]->data;
    const auto& g = grads[k].data;
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g[i];
      v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1, vhat = v[i] / bc2;
      w[i] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
    }
  }
}

}  // namespace sysid::train
