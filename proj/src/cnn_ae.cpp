#include "sysid/cnn_ae.hpp"

#include "sysid/lstm_ae.hpp"

#include <algorithm>

namespace sysid::cnn {

namespace {

std::size_t round_up(std::size_t v, std::size_t m) { return (v + m - 1) / m * m; }

ConvLayer conv_init(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  return ConvLayer{train::xavier_uniform(in * 9, out * 9, {out, in, 3, 3}, rng), ad::Tensor({out}, 0.0)};
}

}  // namespace

CnnAutoencoder::CnnAutoencoder(const CnnAeConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  if (cfg.channels.empty() || cfg.height == 0 || cfg.width == 0)
    throw std::invalid_argument("cnn autoencoder: need at least one stage and a non-empty frame");
  std::size_t in = 1;
  for (std::size_t c : cfg.channels) {
    encoder_.push_back(conv_init(in, c, rng));
    in = c;
  }
  std::vector<std::size_t> dec(cfg.channels.rbegin(), cfg.channels.rend());
  for (std::size_t c : dec) {
    decoder_.push_back(conv_init(in, c, rng));
    in = c;
  }
  out_weight_ = train::xavier_uniform(in, 1, {1, in}, rng);
  out_bias_ = ad::Tensor::scalar(0.0);
}

std::size_t CnnAutoencoder::padded_height() const { return round_up(cfg_.height, std::size_t{1} << stages()); }
std::size_t CnnAutoencoder::padded_width() const { return round_up(cfg_.width, std::size_t{1} << stages()); }

std::size_t CnnAutoencoder::code_dim() const {
  return (padded_height() >> stages()) * (padded_width() >> stages()) * cfg_.channels.back();
}

ad::Tensor CnnAutoencoder::encode(const ad::Tensor& frame) const {
  if (frame.rank() != 2 || frame.shape[0] != cfg_.height || frame.shape[1] != cfg_.width)
    throw ad::ShapeError("cnn_encode: frame " + ad::shape_str(frame.shape) + " vs configured " +
                         ad::shape_str({cfg_.height, cfg_.width}));
  if (!nn::all_finite(frame.data)) throw lstm::NonFiniteInput("cnn_encode: non-finite frame");
  const std::size_t ph = padded_height(), pw = padded_width();
  ad::Tensor x;
  if (ph == cfg_.height && pw == cfg_.width) {
    x = ad::reshape(frame, {1, ph, pw});
  } else {
    // Zero padding is input-side only, so the frame itself stays differentiable via concat.
    std::vector<ad::Tensor> parts{ad::reshape(frame, {1, cfg_.height, cfg_.width})};
    if (pw > cfg_.width) parts.push_back(ad::Tensor({1, cfg_.height, pw - cfg_.width}, 0.0));
    x = parts.size() > 1 ? ad::concat(parts, 2) : parts[0];
    if (ph > cfg_.height) x = ad::concat({x, ad::Tensor({1, ph - cfg_.height, pw}, 0.0)}, 1);
  }
  const auto pad = cfg_.circular ? ad::Padding::kCircular : ad::Padding::kZero;
  for (const auto& layer : encoder_) x = ad::maxpool2d(ad::relu(ad::conv2d(x, layer.weight, layer.bias, pad)));
  return ad::reshape(x, {x.size()});
}

ad::Tensor CnnAutoencoder::decode(const ad::Tensor& code) const {
  if (code.size() != code_dim())
    throw ad::ShapeError("cnn_decode: code " + ad::shape_str(code.shape) + " vs code_dim " +
                         std::to_string(code_dim()));
  const std::size_t bh = padded_height() >> stages(), bw = padded_width() >> stages();
  ad::Tensor x = ad::reshape(code, {cfg_.channels.back(), bh, bw});
  const auto pad = cfg_.circular ? ad::Padding::kCircular : ad::Padding::kZero;
  for (const auto& layer : decoder_) x = ad::relu(ad::conv2d(ad::upsample2d(x), layer.weight, layer.bias, pad));
  const std::size_t c = x.shape[0], ph = x.shape[1], pw = x.shape[2];
  ad::Tensor y = ad::add(ad::matmul(out_weight_, ad::reshape(x, {c, ph * pw})), out_bias_);
  y = ad::reshape(y, {ph, pw});
  if (ph != cfg_.height) y = ad::slice(y, 0, 0, cfg_.height);
  if (pw != cfg_.width) y = ad::slice(y, 1, 0, cfg_.width);
  return y;
}

void CnnAutoencoder::visit(const train::ParamVisitor& f) {
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    f("cnn.enc" + std::to_string(i) + ".weight", encoder_[i].weight);
    f("cnn.enc" + std::to_string(i) + ".bias", encoder_[i].bias);
  }
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    f("cnn.dec" + std::to_string(i) + ".weight", decoder_[i].weight);
    f("cnn.dec" + std::to_string(i) + ".bias", decoder_[i].bias);
  }
  f("cnn.out.weight", out_weight_);
  f("cnn.out.bias", out_bias_);
}

ad::Tensor cnn_encode(const CnnAutoencoder& ae, const ad::Tensor& frame) { return ae.encode(frame); }
ad::Tensor cnn_decode(const CnnAutoencoder& ae, const ad::Tensor& code) { return ae.decode(code); }

ad::Tensor cnn_rec_loss(const ad::Tensor& frames, const ad::Tensor& reconstructed) {
  return ad::mse(frames, reconstructed);
}

}  // namespace sysid::cnn
