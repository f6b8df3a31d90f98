#pragma once

// Joint training of the autoencoder(s) and the flow, checkpoints and the
// feature/identification pipeline shared by evaluation and inference.

#include "sysid/autodiff.hpp"
#include "sysid/cnn_ae.hpp"
#include "sysid/flow.hpp"
#include "sysid/lstm_ae.hpp"
#include "sysid/optim.hpp"
#include "sysid/simulators.hpp"

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace sysid::train {

struct LossWeights {
  double nf = 1.0;
  double rec_lstm = 1.0;
  double rec_cnn = 1.0;
  double rec_f = 1.0;
};

struct TrainConfig {
  std::string scenario;
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t epochs = 2000;
  std::size_t batch_size = 10;
  LossWeights weights;
  std::uint64_t seed = 0;
  std::size_t patience = 200;
  double validation_fraction = 0.1;
  std::size_t log_every = 1;  // epochs between training-log rows
  // Stop the NLL gradient at phi, so that term only trains the flow.
  bool detach_phi_nll = false;
  // Stop the rec-f gradient at nf_from_params(Y), so that term only trains the encoder.
  bool detach_flow_rec_f = false;

  // Network sizes.
  std::size_t lstm_hidden = 32;
  std::size_t encoder_layers = 3;
  std::size_t decoder_layers = 4;
  std::size_t padding = 2;
  std::size_t flow_layers = 4;
  std::size_t flow_width = 64;
  std::vector<std::size_t> cnn_channels{8, 8, 16, 16, 4, 4};

  void validate() const;
};

// Per-channel standardization (one channel for fields).
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> std;
};

struct LossBreakdown {
  double total = 0.0, nf = 0.0, rec_lstm = 0.0, rec_cnn = 0.0, rec_f = 0.0;
};

struct LogRow {
  std::size_t step = 0;  // optimizer steps taken
  LossBreakdown train;
  double validation = 0.0;
};

struct TrainedModel {
  std::string scenario;
  bool fluid = false;
  std::size_t steps = 0;                 // T
  std::vector<std::size_t> sample_shape; // {T, n} or {T, H, W}
  std::vector<std::string> param_names;  // varying parameters
  TrainConfig config;
  Standardizer input_norm;
  lstm::LstmAutoencoder lstm;
  cnn::CnnAutoencoder cnn;  // fluid only
  flow::FlowStack flow;
  LossBreakdown final_loss;
  std::vector<LogRow> curve;

  void visit(const ParamVisitor& f);
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t epoch, const std::string& what)
      : std::runtime_error(what), epoch_(epoch) {}
  std::size_t epoch() const { return epoch_; }

 private:
  std::size_t epoch_;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A standardized mini-batch.
struct Batch {
  std::size_t size = 0;
  ad::Tensor x;                    // non-fluid: T·B × n, time-major
  std::vector<ad::Tensor> frames;  // fluid: B·T frames (H × W), sample-major
  ad::Tensor y;                    // B × s raw varying parameters
};

struct LossTerms {
  ad::Tensor total, nf, rec_lstm, rec_cnn, rec_f;
  ad::Tensor phi;  // B × d_f
  LossBreakdown values() const;
};

// Fresh model for a dataset: normalization statistics from `train_idx`.
TrainedModel init_model(const sim::Dataset& ds, const TrainConfig& cfg, const std::vector<std::size_t>& train_idx);

Batch make_batch(const TrainedModel& m, const sim::Dataset& ds, const std::vector<std::size_t>& idx);
LossTerms compute_losses(const TrainedModel& m, const Batch& batch, const LossWeights& w);

// Mean loss over `idx` without recording gradients, batch-size weighted.
LossBreakdown evaluate_loss(const TrainedModel& m, const sim::Dataset& ds, const std::vector<std::size_t>& idx,
                            const LossWeights& w, std::size_t batch_size);

// Deterministic 90/10-style split: {train, validation}.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double validation_fraction,
                                                                            std::uint64_t seed);

// One optimizer step; returns the loss terms of the batch (before the update).
LossBreakdown train_step(TrainedModel& m, const Batch& batch, AdamState& state, const TrainConfig& cfg);

TrainedModel train_nonfluid(const sim::Dataset& ds, const TrainConfig& cfg);
TrainedModel train_fluid(const sim::Dataset& ds, const TrainConfig& cfg);
// Dispatches on the dataset kind.
TrainedModel train(const sim::Dataset& ds, const TrainConfig& cfg);

// Features φ (d_f) of one raw sample (row-major sample_shape values).
std::vector<double> extract_features(const TrainedModel& m, std::span<const double> values);
// Predicted varying parameters of one raw sample.
std::vector<double> predict(const TrainedModel& m, std::span<const double> values);

// Checkpoint container: "SYSIDFLW", u64 header length, u32 header CRC-32,
// JSON header, then little-endian float64 blocks in header order.
inline constexpr int kCheckpointVersion = 1;
std::string serialize_model(const TrainedModel& m);
TrainedModel deserialize_model(const std::string& bytes);
void save_model(const TrainedModel& m, const std::filesystem::path& file);
TrainedModel load_model(const std::filesystem::path& file);
// CRC-32 of the serialized checkpoint, as 8 hex digits.
std::string model_checksum(const TrainedModel& m);

// CSV: step,L_total,L_NF,L_rec_lstm,L_rec_cnn,L_rec_f,validation_loss
std::string training_log_csv(const std::vector<LogRow>& rows);

}  // namespace sysid::train
