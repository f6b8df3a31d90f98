#pragma once

// LSTM autoencoder: a stacked-LSTM encoder whose final top-layer hidden state
// is projected to the feature vector, and a stacked-LSTM decoder started from
// a linear lift of the features and driven by zero inputs.

#include "sysid/autodiff.hpp"
#include "sysid/nn.hpp"

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace sysid::lstm {

struct LstmAeConfig {
  std::size_t input_dim = 2;
  std::size_t feature_dim = 3;
  std::size_t hidden = 32;
  std::size_t encoder_layers = 3;
  std::size_t decoder_layers = 4;
};

class NonFiniteInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class LstmAutoencoder {
 public:
  LstmAutoencoder() = default;
  LstmAutoencoder(const LstmAeConfig& cfg, std::mt19937_64& rng);

  const LstmAeConfig& config() const { return cfg_; }

  // x: T·B × input_dim (time-major). Returns B × feature_dim.
  ad::Tensor encode(const ad::Tensor& x, std::size_t steps, std::size_t batch) const;
  // phi: B × feature_dim. Returns T·B × input_dim.
  ad::Tensor decode(const ad::Tensor& phi, std::size_t steps) const;

  void visit(const train::ParamVisitor& f);

 private:
  LstmAeConfig cfg_;
  std::vector<nn::LstmLayer> encoder_;
  nn::Dense encoder_head_;
  nn::Dense decoder_lift_;  // feature → [h0, c0] of the first decoder layer
  std::vector<nn::LstmLayer> decoder_;
  nn::Dense decoder_head_;
};

// Single-trajectory forms: x is T × n.
ad::Tensor lstm_encode(const LstmAutoencoder& ae, const ad::Tensor& x);
ad::Tensor lstm_decode(const LstmAutoencoder& ae, const ad::Tensor& phi, std::size_t steps);

// Mean squared error over samples, steps and channels.
ad::Tensor lstm_rec_loss(const ad::Tensor& x, const ad::Tensor& x_hat);

}  // namespace sysid::lstm
