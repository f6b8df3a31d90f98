#pragma once

// Convolutional autoencoder for single field frames.
//
// Encoder: per stage conv3×3 (same) → relu → maxpool 2×2; six stages by default.
// Decoder: per stage nearest-upsample ×2 → conv3×3 → relu, then a per-pixel
// dense projection from the last channel count to one output channel.
// Frames are zero-padded at the bottom/right to a multiple of 2^stages and the
// reconstruction is cropped back to the input extent.

#include "sysid/autodiff.hpp"
#include "sysid/nn.hpp"

#include <random>
#include <vector>

namespace sysid::cnn {

struct CnnAeConfig {
  std::size_t height = 96;
  std::size_t width = 192;
  std::vector<std::size_t> channels{8, 8, 16, 16, 4, 4};  // encoder stage widths
  // Wrap-around borders instead of zeros; the translation-covariant variant.
  bool circular = false;
};

struct ConvLayer {
  ad::Tensor weight;  // out × in × 3 × 3
  ad::Tensor bias;    // out
};

class CnnAutoencoder {
 public:
  CnnAutoencoder() = default;
  CnnAutoencoder(const CnnAeConfig& cfg, std::mt19937_64& rng);

  const CnnAeConfig& config() const { return cfg_; }
  std::size_t stages() const { return cfg_.channels.size(); }
  std::size_t padded_height() const;
  std::size_t padded_width() const;
  // (padded H / 2^stages) · (padded W / 2^stages) · bottleneck channels
  std::size_t code_dim() const;

  // frame: H × W. Returns the flattened bottleneck (code_dim).
  ad::Tensor encode(const ad::Tensor& frame) const;
  // code: code_dim. Returns H × W.
  ad::Tensor decode(const ad::Tensor& code) const;

  void visit(const train::ParamVisitor& f);

 private:
  CnnAeConfig cfg_;
  std::vector<ConvLayer> encoder_;
  std::vector<ConvLayer> decoder_;
  ad::Tensor out_weight_;  // 1 × last decoder channels
  ad::Tensor out_bias_;    // scalar
};

ad::Tensor cnn_encode(const CnnAutoencoder& ae, const ad::Tensor& frame);
ad::Tensor cnn_decode(const CnnAutoencoder& ae, const ad::Tensor& code);
// Mean squared error over samples, frames and pixels.
ad::Tensor cnn_rec_loss(const ad::Tensor& frames, const ad::Tensor& reconstructed);

}  // namespace sysid::cnn
