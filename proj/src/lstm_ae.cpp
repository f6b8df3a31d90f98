#include "sysid/lstm_ae.hpp"

namespace sysid::lstm {

LstmAutoencoder::LstmAutoencoder(const LstmAeConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  if (cfg.encoder_layers == 0 || cfg.decoder_layers == 0 || cfg.hidden == 0 || cfg.feature_dim == 0)
    throw std::invalid_argument("lstm autoencoder: layer counts and widths must be positive");
  for (std::size_t l = 0; l < cfg.encoder_layers; ++l)
    encoder_.push_back(nn::LstmLayer::init(l == 0 ? cfg.input_dim : cfg.hidden, cfg.hidden, rng));
  encoder_head_ = nn::Dense::init(cfg.hidden, cfg.feature_dim, rng);
  decoder_lift_ = nn::Dense::init(cfg.feature_dim, 2 * cfg.hidden, rng);
  for (std::size_t l = 0; l < cfg.decoder_layers; ++l)
    decoder_.push_back(nn::LstmLayer::init(l == 0 ? 0 : cfg.hidden, cfg.hidden, rng));
  decoder_head_ = nn::Dense::init(cfg.hidden, cfg.input_dim, rng);
}

ad::Tensor LstmAutoencoder::encode(const ad::Tensor& x, std::size_t steps, std::size_t batch) const {
  if (steps < 2) throw std::invalid_argument("lstm_encode: need at least 2 steps");
  if (!nn::all_finite(x.data)) throw NonFiniteInput("lstm_encode: non-finite input");
  const ad::Tensor zeros({batch, cfg_.hidden}, 0.0);
  ad::Tensor seq = x;
  ad::Tensor last;
  for (const auto& layer : encoder_) {
    auto out = layer.run(&seq, steps, batch, zeros, zeros);
    seq = std::move(out.sequence);
    last = std::move(out.h);
  }
  return encoder_head_(last);
}

ad::Tensor LstmAutoencoder::decode(const ad::Tensor& phi, std::size_t steps) const {
  if (steps < 2) throw std::invalid_argument("lstm_decode: need at least 2 steps");
  if (!nn::all_finite(phi.data)) throw NonFiniteInput("lstm_decode: non-finite features");
  if (phi.rank() != 2 || phi.shape[1] != cfg_.feature_dim)
    throw ad::ShapeError("lstm_decode: features " + ad::shape_str(phi.shape) + " vs feature_dim " +
                         std::to_string(cfg_.feature_dim));
  const std::size_t batch = phi.shape[0], hd = cfg_.hidden;
  const ad::Tensor lift = decoder_lift_(phi);
  const ad::Tensor zeros({batch, hd}, 0.0);
  auto out = decoder_[0].run(nullptr, steps, batch, ad::slice(lift, 1, 0, hd), ad::slice(lift, 1, hd, 2 * hd));
  ad::Tensor seq = std::move(out.sequence);
  for (std::size_t l = 1; l < decoder_.size(); ++l) seq = decoder_[l].run(&seq, steps, batch, zeros, zeros).sequence;
  return decoder_head_(seq);
}

void LstmAutoencoder::visit(const train::ParamVisitor& f) {
  for (std::size_t l = 0; l < encoder_.size(); ++l) encoder_[l].visit("lstm.enc" + std::to_string(l), f);
  encoder_head_.visit("lstm.enc_head", f);
  decoder_lift_.visit("lstm.dec_lift", f);
  for (std::size_t l = 0; l < decoder_.size(); ++l) decoder_[l].visit("lstm.dec" + std::to_string(l), f);
  decoder_head_.visit("lstm.dec_head", f);
}

ad::Tensor lstm_encode(const LstmAutoencoder& ae, const ad::Tensor& x) {
  if (x.rank() != 2) throw ad::ShapeError("lstm_encode: expected T×n, got " + ad::shape_str(x.shape));
  return ad::reshape(ae.encode(x, x.shape[0], 1), {ae.config().feature_dim});
}

ad::Tensor lstm_decode(const LstmAutoencoder& ae, const ad::Tensor& phi, std::size_t steps) {
  return ae.decode(ad::reshape(phi, {1, phi.size()}), steps);
}

ad::Tensor lstm_rec_loss(const ad::Tensor& x, const ad::Tensor& x_hat) { return ad::mse(x, x_hat); }

}  // namespace sysid::lstm
