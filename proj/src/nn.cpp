#include "sysid/nn.hpp"

#include <cmath>

namespace sysid::nn {

Dense Dense::init(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  return Dense{train::xavier_uniform(in, out, {in, out}, rng), ad::Tensor({out}, 0.0)};
}

ad::Tensor Dense::operator()(const ad::Tensor& x) const {
  return ad::add(ad::matmul(x, weight), ad::tile_rows(bias, x.shape[0]));
}

void Dense::visit(const std::string& prefix, const train::ParamVisitor& f) {
  f(prefix + ".weight", weight);
  f(prefix + ".bias", bias);
}

LstmLayer LstmLayer::init(std::size_t input_size, std::size_t hidden, std::mt19937_64& rng) {
  LstmLayer l;
  l.input_size = input_size;
  l.hidden = hidden;
  if (input_size > 0) l.w_in = train::xavier_uniform(input_size, 4 * hidden, {input_size, 4 * hidden}, rng);
  l.w_rec = train::xavier_uniform(hidden, 4 * hidden, {hidden, 4 * hidden}, rng);
  l.bias = ad::Tensor({4 * hidden}, 0.0);
  for (std::size_t j = hidden; j < 2 * hidden; ++j) l.bias.data[j] = 1.0;
  return l;
}

LstmLayer::Output LstmLayer::run(const ad::Tensor* inputs, std::size_t steps, std::size_t batch,
                                 ad::Tensor h, ad::Tensor c) const {
  const std::size_t hd = hidden;
  ad::Tensor proj;
  if (input_size > 0) {
    if (!inputs || inputs->rank() != 2 || inputs->shape[0] != steps * batch || inputs->shape[1] != input_size)
      throw ad::ShapeError("lstm: input shape " + (inputs ? ad::shape_str(inputs->shape) : std::string("none")) +
                           " does not match " + std::to_string(steps * batch) + "x" + std::to_string(input_size));
    proj = ad::add(ad::matmul(*inputs, w_in), ad::tile_rows(bias, steps * batch));
  }
  const ad::Tensor bias_rows = input_size > 0 ? ad::Tensor() : ad::tile_rows(bias, batch);
  std::vector<ad::Tensor> hs;
  hs.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    ad::Tensor z = ad::matmul(h, w_rec);
    z = ad::add(z, input_size > 0 ? ad::slice(proj, 0, t * batch, (t + 1) * batch) : bias_rows);
    const ad::Tensor hc = ad::lstm_cell(z, c);
    h = ad::slice(hc, 1, 0, hd);
    c = ad::slice(hc, 1, hd, 2 * hd);
    hs.push_back(h);
  }
  return Output{ad::concat(hs, 0), h, c};
}

void LstmLayer::visit(const std::string& prefix, const train::ParamVisitor& f) {
  if (input_size > 0) f(prefix + ".w_in", w_in);
  f(prefix + ".w_rec", w_rec);
  f(prefix + ".bias", bias);
}

ad::Tensor pack_sequences(const std::vector<std::span<const double>>& samples, std::size_t steps,
                          std::size_t width) {
  const std::size_t batch = samples.size();
  ad::Tensor out({steps * batch, width}, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    if (samples[b].size() != steps * width)
      throw ad::ShapeError("pack_sequences: sample " + std::to_string(b) + " has " +
                           std::to_string(samples[b].size()) + " values, expected " +
                           std::to_string(steps * width));
    for (std::size_t t = 0; t < steps; ++t)
      for (std::size_t j = 0; j < width; ++j) out.data[(t * batch + b) * width + j] = samples[b][t * width + j];
  }
  return out;
}

std::vector<double> unpack_sequence(const ad::Tensor& packed, std::size_t steps, std::size_t batch,
                                    std::size_t b) {
  const std::size_t width = packed.shape[1];
  std::vector<double> out(steps * width);
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t j = 0; j < width; ++j) out[t * width + j] = packed.data[(t * batch + b) * width + j];
  return out;
}

bool all_finite(std::span<const double> values) {
  for (double v : values)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace sysid::nn
