#include "sysid/gradsuite.hpp"

#include "sysid/cnn_ae.hpp"
#include "sysid/flow.hpp"
#include "sysid/lstm_ae.hpp"

#include <random>

namespace sysid::ad {

namespace {

template <class Model>
std::vector<Tensor> params_of(Model m) {
  std::vector<Tensor> out;
  m.visit([&](const std::string&, Tensor& t) { out.push_back(t.detach()); });
  return out;
}

template <class Model>
Model with_params(const Model& m, const std::vector<Tensor>& in) {
  Model out = m;
  std::size_t k = 0;
  out.visit([&](const std::string&, Tensor& t) { t = in.at(k++); });
  return out;
}

// Zero biases park dead relu units on the kink.
template <class Model>
void randomize_biases(Model& m, std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  m.visit([&](const std::string& name, Tensor& t) {
    if (name.ends_with("bias"))
      for (auto& v : t.data) v = u(rng);
  });
}

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape), 0.0);
  for (auto& v : t.data) v = u(rng);
  return t;
}

Tensor weighted_sum(const Tensor& t, std::uint64_t seed) { return sum(mul(t, random_tensor(t.shape, seed, 0.5, 1.5))); }

// Gradients through the stacked LSTMs are ~1e-8 in places; a smaller step is
// dominated by cancellation.
constexpr double kLstmStep = 1e-4;

lstm::LstmAutoencoder toy_lstm(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return lstm::LstmAutoencoder({.input_dim = 2, .feature_dim = 3, .hidden = 4}, rng);
}

flow::FlowStack toy_flow(std::size_t s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  flow::FlowStack f({.n_params = s, .padding = 2, .layers = 2, .width = 8},
                    {std::vector<double>(s, 0.0), std::vector<double>(s, 1.0)}, rng);
  randomize_biases(f, seed, -0.2, 0.2);
  return f;
}

}  // namespace

std::vector<GradcheckCase> gradcheck_suite(const std::vector<std::uint64_t>& seeds) {
  std::vector<GradcheckCase> out;
  for (const auto& op : registered_ops())
    for (auto seed : seeds) out.push_back({"op:" + op, seed, gradcheck(op, default_shapes(op), seed), false});

  for (auto seed : seeds) {
    {
      const auto ae = toy_lstm(seed);
      auto in = params_of(ae);
      in.push_back(random_tensor({6, 2}, seed + 10));
      const auto r = gradcheck_fn(
          [&](const std::vector<Tensor>& v) { return weighted_sum(lstm::lstm_encode(with_params(ae, v), v.back()), 3); },
          in, kLstmStep);
      out.push_back({"lstm_encode", seed, r.max_relative_error, false});
    }
    {
      const auto ae = toy_lstm(seed);
      auto in = params_of(ae);
      in.push_back(random_tensor({5, 2}, seed + 20));
      const auto r = gradcheck_directional(
          [&](const std::vector<Tensor>& v) {
            const auto m = with_params(ae, v);
            return lstm::lstm_rec_loss(v.back(), lstm::lstm_decode(m, lstm::lstm_encode(m, v.back()), 5));
          },
          in, 8, seed, kLstmStep);
      out.push_back({"lstm_encode_decode", seed, r.max_relative_error, true});
    }
    {
      std::mt19937_64 rng(seed);
      cnn::CnnAutoencoder ae({.height = 64, .width = 64, .channels = {1, 1, 1, 1, 1, 1}}, rng);
      randomize_biases(ae, seed, 0.05, 0.3);
      auto in = params_of(ae);
      in.push_back(random_tensor({64, 64}, seed + 5));
      const auto r = gradcheck_directional(
          [&](const std::vector<Tensor>& v) { return weighted_sum(cnn::cnn_encode(with_params(ae, v), v.back()), 2); }, in,
          8, seed);
      out.push_back({"cnn_encode", seed, r.max_relative_error, true});
    }
    {
      std::mt19937_64 rng(seed);
      cnn::CnnAutoencoder ae({.height = 12, .width = 16, .channels = {2, 2}}, rng);
      randomize_biases(ae, seed, 0.05, 0.3);
      auto in = params_of(ae);
      in.push_back(random_tensor({12, 16}, seed + 5));
      const auto r = gradcheck_directional(
          [&](const std::vector<Tensor>& v) {
            const auto m = with_params(ae, v);
            return cnn::cnn_rec_loss(v.back(), cnn::cnn_decode(m, cnn::cnn_encode(m, v.back())));
          },
          in, 8, seed);
      out.push_back({"cnn_encode_decode", seed, r.max_relative_error, true});
    }
    {
      const auto f = toy_flow(2, seed);
      const auto target = random_tensor({1, 4}, seed + 50);
      const Tensor y({1, 2}, std::vector<double>{0.3, -0.7});
      const auto r = gradcheck_fn(
          [&](const std::vector<Tensor>& v) { return sum(square(sub(target, with_params(f, v).from_params(y)))); },
          params_of(f));
      out.push_back({"flow_from_params", seed, r.max_relative_error, false});
    }
    {
      const auto f = toy_flow(1, seed);
      auto in = params_of(f);
      in.push_back(random_tensor({2, 3}, seed));
      const auto r = gradcheck_fn(
          [&](const std::vector<Tensor>& v) { return sum(with_params(f, v).log_prob(v.back())); }, in);
      out.push_back({"flow_log_prob", seed, r.max_relative_error, false});
    }
  }
  return out;
}

}  // namespace sysid::ad
