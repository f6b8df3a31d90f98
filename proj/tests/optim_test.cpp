#include "sysid/optim.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace sysid;

TEST(Xavier, WithinBound) {
  const ad::Tensor w = train::xavier_init({100, 100}, 3);
  double max_abs = 0.0;
  for (double v : w.data) max_abs = std::max(max_abs, std::abs(v));
  EXPECT_LE(max_abs, std::sqrt(6.0 / 200.0));
  EXPECT_GT(max_abs, 0.9 * std::sqrt(6.0 / 200.0));
}

TEST(Xavier, VarianceMatchesUniform) {
  const ad::Tensor w = train::xavier_init({100, 100}, 11);
  double mean = 0.0, var = 0.0;
  for (double v : w.data) mean += v;
  mean /= static_cast<double>(w.size());
  for (double v : w.data) var += (v - mean) * (v - mean);
  var /= static_cast<double>(w.size() - 1);
  EXPECT_NEAR(var / (2.0 / 200.0), 1.0, 0.1);
}

TEST(Xavier, DeterministicPerSeed) {
  EXPECT_EQ(train::xavier_init({7, 5}, 42).data, train::xavier_init({7, 5}, 42).data);
  EXPECT_NE(train::xavier_init({7, 5}, 42).data, train::xavier_init({7, 5}, 43).data);
}

TEST(Xavier, RejectsNon2D) {
  EXPECT_THROW(train::xavier_init({3, 3, 3}, 1), ad::ShapeError);
  EXPECT_THROW(train::xavier_init({3}, 1), ad::ShapeError);
}

TEST(Adam, ZeroGradientLeavesWeights) {
  ad::Tensor w({3}, std::vector<double>{1.0, -2.0, 0.5});
  const auto before = w.data;
  std::vector<ad::Tensor*> ws{&w};
  train::AdamState st;
  for (int i = 0; i < 5; ++i) train::adam_step(ws, {ad::Tensor({3}, 0.0)}, st, {.lr = 0.1});
  EXPECT_EQ(w.data, before);
}

TEST(Adam, FirstStepIsSignedLearningRate) {
  ad::Tensor w({3}, 0.0);
  std::vector<ad::Tensor*> ws{&w};
  train::AdamState st;
  train::adam_step(ws, {ad::Tensor({3}, std::vector<double>{2.5, -0.01, 40.0})}, st, {.lr = 0.01});
  EXPECT_NEAR(w.data[0], -0.01, 1e-8);
  EXPECT_NEAR(w.data[1], 0.01, 1e-8);
  EXPECT_NEAR(w.data[2], -0.01, 1e-8);
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, ConvergesOnQuadratic) {
  ad::Tensor w = ad::Tensor::scalar(0.0);
  std::vector<ad::Tensor*> ws{&w};
  train::AdamState st;
  for (int i = 0; i < 200; ++i) {
    ad::Tape tape;
    const ad::Tensor wv = tape.variable(w);
    const ad::Tensor loss = ad::square(ad::add_scalar(wv, -3.0));
    train::adam_step(ws, {tape.backward(loss).of(wv)}, st, {.lr = 0.1});
  }
  EXPECT_LT(std::abs(w.item() - 3.0), 0.1);
}

TEST(Adam, ShapeMismatchThrows) {
  ad::Tensor w({2}, 0.0);
  std::vector<ad::Tensor*> ws{&w};
  train::AdamState st;
  EXPECT_THROW(train::adam_step(ws, {ad::Tensor({3}, 0.0)}, st, {}), ad::ShapeError);
  EXPECT_THROW(train::adam_step(ws, {}, st, {}), ad::ShapeError);
}
