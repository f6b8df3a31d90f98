#pragma once

// INI run configuration:
//
//   [data]   scenario, n, steps, dt, height, width, seed
//   [train]  learning_rate, epochs, batch_size, loss_weights (a,b,c,d), seed,
//            patience, validation_fraction, log_every, lstm_hidden,
//            encoder_layers, decoder_layers, padding, flow_layers,
//            flow_width, cnn_channels (comma list), detach_phi_nll,
//            detach_flow_rec_f
//
// Unknown sections or keys are rejected.

#include "sysid/simulators.hpp"
#include "sysid/training.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>

namespace sysid::config {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string scenario;
  sim::SamplingOptions data;
  train::TrainConfig train;
};

RunConfig parse_ini(const std::string& text);
RunConfig load_ini(const std::filesystem::path& file);

// "a,b,c,d" → weights; throws ConfigError.
train::LossWeights parse_loss_weights(const std::string& text);

}  // namespace sysid::config
