#include "sysid/lstm_ae.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace sysid;
using testing_support::random_tensor;

namespace {

lstm::LstmAutoencoder make_ae(std::uint64_t seed, std::size_t hidden = 8, std::size_t feature_dim = 3) {
  std::mt19937_64 rng(seed);
  return lstm::LstmAutoencoder({.input_dim = 2, .feature_dim = feature_dim, .hidden = hidden}, rng);
}

double loop_mse(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return acc / static_cast<double>(a.size());
}

}  // namespace

TEST(LstmAe, ZeroWeightsZeroInputGivesZeroFeatures) {
  auto ae = make_ae(1);
  testing_support::fill_params(ae, 0.0);
  const auto phi = lstm::lstm_encode(ae, ad::Tensor({10, 2}, 0.0));
  EXPECT_EQ(phi.data, std::vector<double>(3, 0.0));
}

TEST(LstmAe, OrderSensitive) {
  const auto ae = make_ae(2);
  const auto x = random_tensor({12, 2}, 5);
  ad::Tensor rev = x;
  for (std::size_t t = 0; t < 12; ++t)
    for (std::size_t j = 0; j < 2; ++j) rev.data[t * 2 + j] = x.data[(11 - t) * 2 + j];
  const auto a = lstm::lstm_encode(ae, x).data, b = lstm::lstm_encode(ae, rev).data;
  double diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) diff += std::abs(a[i] - b[i]);
  EXPECT_GT(diff, 1e-6);
}

TEST(LstmAe, EncodeGradcheck) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto ae = make_ae(seed, 4);
    auto inputs = testing_support::params_of(ae);
    inputs.push_back(random_tensor({6, 2}, seed + 10));
    const auto res = ad::gradcheck_fn(
        [&](const std::vector<ad::Tensor>& in) {
          return testing_support::weighted_sum(lstm::lstm_encode(testing_support::with_params(ae, in), in.back()), 3);
        },
        inputs);
    EXPECT_LT(res.max_relative_error, 1e-4) << "seed " << seed << " input " << res.worst_input << "[" << res.worst_index << "] analytic " << res.worst_analytic << " numeric " << res.worst_numeric;
  }
}

TEST(LstmAe, EncodeDecodeGradcheck) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto ae = make_ae(seed, 4);
    auto inputs = testing_support::params_of(ae);
    inputs.push_back(random_tensor({5, 2}, seed + 20));
    const auto res = ad::gradcheck_directional(
        [&](const std::vector<ad::Tensor>& in) {
          const auto m = testing_support::with_params(ae, in);
          return lstm::lstm_rec_loss(in.back(), lstm::lstm_decode(m, lstm::lstm_encode(m, in.back()), 5));
        },
        inputs, 8, seed);
    EXPECT_LT(res.max_relative_error, 1e-4) << "seed " << seed << " input " << res.worst_input << "[" << res.worst_index << "] analytic " << res.worst_analytic << " numeric " << res.worst_numeric;
  }
}

TEST(LstmAe, DecodeShapeAndDeterminism) {
  for (std::size_t df : {1u, 3u, 5u}) {
    const auto ae = make_ae(3, 8, df);
    const auto phi = random_tensor({df}, 1);
    const auto a = lstm::lstm_decode(ae, phi, 17), b = lstm::lstm_decode(ae, phi, 17);
    EXPECT_EQ(a.shape, (ad::Shape{17, 2}));
    EXPECT_EQ(a.data, b.data);
  }
}

TEST(LstmAe, BatchedMatchesSingle) {
  const auto ae = make_ae(4);
  const auto x0 = random_tensor({9, 2}, 1), x1 = random_tensor({9, 2}, 2);
  const auto packed = nn::pack_sequences({x0.data, x1.data}, 9, 2);
  const auto phi = ae.encode(packed, 9, 2);
  const auto p0 = lstm::lstm_encode(ae, x0).data, p1 = lstm::lstm_encode(ae, x1).data;
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_NEAR(phi.data[j], p0[j], 1e-14);
    EXPECT_NEAR(phi.data[3 + j], p1[j], 1e-14);
  }
  const auto dec = nn::unpack_sequence(ae.decode(phi, 9), 9, 2, 1);
  const auto single = lstm::lstm_decode(ae, ad::Tensor::vector(p1), 9).data;
  for (std::size_t i = 0; i < single.size(); ++i) EXPECT_NEAR(dec[i], single[i], 1e-14);
}

TEST(LstmAe, OverfitsOneTrajectory) {
  auto ae = make_ae(7, 16);
  ad::Tensor x({20, 2}, 0.0);
  for (std::size_t t = 0; t < 20; ++t) {
    x.data[2 * t] = std::sin(0.3 * static_cast<double>(t));
    x.data[2 * t + 1] = 0.5 * std::cos(0.2 * static_cast<double>(t));
  }
  const double loss = testing_support::fit<lstm::LstmAutoencoder>(
      ae, [&](const lstm::LstmAutoencoder& m) { return lstm::lstm_rec_loss(x, lstm::lstm_decode(m, lstm::lstm_encode(m, x), 20)); },
      1500, 1e-2);
  const auto rec = lstm::lstm_decode(ae, lstm::lstm_encode(ae, x), 20);
  EXPECT_LT(lstm::lstm_rec_loss(x, rec).item(), 1e-3) << "last training loss " << loss;
}

TEST(LstmAe, RecLoss) {
  const auto x = random_tensor({4, 3}, 1);
  EXPECT_EQ(lstm::lstm_rec_loss(x, x).item(), 0.0);
  EXPECT_EQ(lstm::lstm_rec_loss(ad::Tensor({2, 2}, 0.0), ad::Tensor({2, 2}, 1.0)).item(), 1.0);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto a = random_tensor({30, 2}, seed), b = random_tensor({30, 2}, seed + 100);
    EXPECT_NEAR(lstm::lstm_rec_loss(a, b).item(), loop_mse(a.data, b.data), 1e-12);
  }
  EXPECT_THROW(lstm::lstm_rec_loss(ad::Tensor({2, 2}, 0.0), ad::Tensor({2, 3}, 0.0)), ad::ShapeError);
}

TEST(LstmAe, Continuous) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto ae = make_ae(seed);
    auto x = random_tensor({15, 2}, seed + 1);
    const auto a = lstm::lstm_encode(ae, x).data;
    for (auto& v : x.data) v += 1e-6;
    const auto b = lstm::lstm_encode(ae, x).data;
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_LT(std::abs(a[i] - b[i]), 1e-3);
  }
}

TEST(LstmAe, FiniteAcrossSeeds) {
  const auto x = random_tensor({50, 2}, 9, -3.0, 3.0);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    lstm::LstmAutoencoder ae({}, rng);
    EXPECT_TRUE(nn::all_finite(lstm::lstm_encode(ae, x).data)) << "seed " << seed;
  }
}

TEST(LstmAe, Errors) {
  const auto ae = make_ae(1);
  ad::Tensor bad({5, 2}, 0.0);
  bad.data[3] = NAN;
  EXPECT_THROW(lstm::lstm_encode(ae, bad), lstm::NonFiniteInput);
  EXPECT_THROW(lstm::lstm_encode(ae, ad::Tensor({1, 2}, 0.0)), std::invalid_argument);
  EXPECT_THROW(lstm::lstm_decode(ae, ad::Tensor::vector({INFINITY, 0.0, 0.0}), 5), lstm::NonFiniteInput);
  EXPECT_THROW(lstm::lstm_decode(ae, ad::Tensor::vector({0.0, 0.0}), 5), ad::ShapeError);
  EXPECT_THROW(lstm::lstm_encode(ae, ad::Tensor({5, 3}, 0.0)), ad::ShapeError);
}
