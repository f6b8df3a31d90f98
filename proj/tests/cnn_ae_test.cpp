#include "sysid/cnn_ae.hpp"
#include "sysid/lstm_ae.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace sysid;
using testing_support::random_tensor;

namespace {

cnn::CnnAutoencoder make_ae(cnn::CnnAeConfig cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return cnn::CnnAutoencoder(cfg, rng);
}

}  // namespace

TEST(CnnAe, ZeroFrameZeroBiasGivesZeroCode) {
  const auto ae = make_ae({.height = 64, .width = 64}, 1);
  const auto code = cnn::cnn_encode(ae, ad::Tensor({64, 64}, 0.0));
  EXPECT_EQ(code.data, std::vector<double>(code.size(), 0.0));
}

TEST(CnnAe, CodeDimension) {
  const auto ae = make_ae({.height = 128, .width = 192}, 1);
  EXPECT_EQ(ae.code_dim(), 24u);
  EXPECT_EQ(cnn::cnn_encode(ae, random_tensor({128, 192}, 1)).size(), 24u);
  const auto full_grid = make_ae({.height = 96, .width = 192}, 1);
  EXPECT_EQ(full_grid.padded_height(), 128u);
  EXPECT_EQ(full_grid.code_dim(), 24u);
}

TEST(CnnAe, EncodeGradcheck) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    auto ae = make_ae({.height = 64, .width = 64, .channels = {1, 1, 1, 1, 1, 1}}, seed);
    testing_support::randomize_biases(ae, seed, 0.05, 0.3);
    auto inputs = testing_support::params_of(ae);
    inputs.push_back(random_tensor({64, 64}, seed + 5));
    const auto res = ad::gradcheck_directional(
        [&](const std::vector<ad::Tensor>& in) {
          return testing_support::weighted_sum(cnn::cnn_encode(testing_support::with_params(ae, in), in.back()), 2);
        },
        inputs, 8, seed);
    EXPECT_LT(res.max_relative_error, 1e-4) << "seed " << seed << " input " << res.worst_input << "[" << res.worst_index << "] analytic " << res.worst_analytic << " numeric " << res.worst_numeric;
  }
}

TEST(CnnAe, EncodeDecodeGradcheck) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    auto ae = make_ae({.height = 12, .width = 16, .channels = {2, 2}}, seed);
    testing_support::randomize_biases(ae, seed, 0.05, 0.3);
    auto inputs = testing_support::params_of(ae);
    inputs.push_back(random_tensor({12, 16}, seed + 5));
    const auto res = ad::gradcheck_directional(
        [&](const std::vector<ad::Tensor>& in) {
          const auto m = testing_support::with_params(ae, in);
          return cnn::cnn_rec_loss(in.back(), cnn::cnn_decode(m, cnn::cnn_encode(m, in.back())));
        },
        inputs, 8, seed);
    EXPECT_LT(res.max_relative_error, 1e-4) << "seed " << seed << " input " << res.worst_input << "[" << res.worst_index << "] analytic " << res.worst_analytic << " numeric " << res.worst_numeric;
  }
}

TEST(CnnAe, ShapeRoundTripAndDeterminism) {
  const auto ae = make_ae({.height = 48, .width = 96, .channels = {4, 4, 4, 4, 4, 4}}, 2);
  const auto f = random_tensor({48, 96}, 3);
  const auto rec = cnn::cnn_decode(ae, cnn::cnn_encode(ae, f));
  EXPECT_EQ(rec.shape, f.shape);
  EXPECT_EQ(rec.data, cnn::cnn_decode(ae, cnn::cnn_encode(ae, f)).data);
}

TEST(CnnAe, OverfitsOneFrame) {
  auto ae = make_ae({.height = 16, .width = 16, .channels = {8, 8}}, 4);
  ad::Tensor f({16, 16}, 0.0);
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 16; ++x)
      f.data[y * 16 + x] = std::sin(0.4 * static_cast<double>(x)) * std::exp(-std::pow((static_cast<double>(y) - 8.0) / 5.0, 2));
  testing_support::fit<cnn::CnnAutoencoder>(
      ae, [&](const cnn::CnnAutoencoder& m) { return cnn::cnn_rec_loss(f, cnn::cnn_decode(m, cnn::cnn_encode(m, f))); }, 1500,
      1e-2);
  EXPECT_LT(cnn::cnn_rec_loss(f, cnn::cnn_decode(ae, cnn::cnn_encode(ae, f))).item(), 1e-3);
}

TEST(CnnAe, RecLoss) {
  const auto a = random_tensor({3, 8, 8}, 1);
  EXPECT_EQ(cnn::cnn_rec_loss(a, a).item(), 0.0);
  EXPECT_NEAR(cnn::cnn_rec_loss(a, ad::add_scalar(a, 0.5)).item(), 0.25, 1e-15);
  const auto b = random_tensor({3, 8, 8}, 2);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
  EXPECT_NEAR(cnn::cnn_rec_loss(a, b).item(), acc / static_cast<double>(a.size()), 1e-12);
  EXPECT_THROW(cnn::cnn_rec_loss(a, random_tensor({3, 8, 7}, 1)), ad::ShapeError);
}

TEST(CnnAe, CircularShiftPermutesBottleneck) {
  const auto ae = make_ae({.height = 64, .width = 128, .channels = {2, 2, 2, 2, 2, 2}, .circular = true}, 6);
  const auto f = random_tensor({64, 128}, 7);
  ad::Tensor shifted({64, 128}, 0.0);
  for (std::size_t y = 0; y < 64; ++y)
    for (std::size_t x = 0; x < 128; ++x) shifted.data[y * 128 + (x + 64) % 128] = f.data[y * 128 + x];
  const auto a = cnn::cnn_encode(ae, f).data, b = cnn::cnn_encode(ae, shifted).data;
  // Bottleneck is 2 channels × 1 × 2; the shift swaps the two columns.
  ASSERT_EQ(a.size(), 4u);
  for (std::size_t c = 0; c < 2; ++c) {
    EXPECT_NEAR(b[c * 2 + 0], a[c * 2 + 1], 1e-12);
    EXPECT_NEAR(b[c * 2 + 1], a[c * 2 + 0], 1e-12);
  }
  EXPECT_NE(a[0], a[1]);
}

TEST(CnnAe, Errors) {
  const auto ae = make_ae({.height = 16, .width = 16, .channels = {2, 2}}, 1);
  ad::Tensor bad({16, 16}, 0.0);
  bad.data[5] = NAN;
  EXPECT_THROW(cnn::cnn_encode(ae, bad), lstm::NonFiniteInput);
  EXPECT_THROW(cnn::cnn_encode(ae, ad::Tensor({16, 15}, 0.0)), ad::ShapeError);
  EXPECT_THROW(cnn::cnn_decode(ae, ad::Tensor({ae.code_dim() + 1}, 0.0)), ad::ShapeError);
}
