#include "sysid/flow.hpp"

#include "sysid/lstm_ae.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace sysid::flow {

namespace {

// MADE degrees: inputs 1..d, hidden units cycle over 1..d-1 (0 when d == 1).
std::vector<std::size_t> hidden_degrees(std::size_t dim, std::size_t width) {
  std::vector<std::size_t> deg(width, 0);
  if (dim > 1)
    for (std::size_t k = 0; k < width; ++k) deg[k] = k % (dim - 1) + 1;
  return deg;
}

ad::Tensor ones_column(std::size_t n) { return ad::Tensor({n, 1}, 1.0); }

ad::Tensor row_sum(const ad::Tensor& m) { return ad::matmul(m, ones_column(m.shape[1])); }

void check_rows(const ad::Tensor& t, std::size_t dim, const char* op) {
  if (t.rank() != 2 || t.shape[1] != dim)
    throw ad::ShapeError(std::string(op) + ": expected B×" + std::to_string(dim) + ", got " + ad::shape_str(t.shape));
  if (!nn::all_finite(t.data)) throw lstm::NonFiniteInput(std::string(op) + ": non-finite input");
}

}  // namespace

MaskedAffineLayer MaskedAffineLayer::init(std::size_t dim, std::size_t width, std::mt19937_64& rng) {
  MaskedAffineLayer l;
  l.dim = dim;
  l.hidden1 = nn::Dense::init(dim, width, rng);
  l.hidden2 = nn::Dense::init(width, width, rng);
  l.out = nn::Dense::init(width, 2 * dim, rng);
  const auto deg = hidden_degrees(dim, width);
  l.mask1 = ad::Tensor({dim, width}, 0.0);
  for (std::size_t j = 0; j < dim; ++j)
    for (std::size_t k = 0; k < width; ++k) l.mask1.data[j * width + k] = deg[k] >= j + 1 ? 1.0 : 0.0;
  l.mask2 = ad::Tensor({width, width}, 0.0);
  for (std::size_t a = 0; a < width; ++a)
    for (std::size_t b = 0; b < width; ++b) l.mask2.data[a * width + b] = deg[b] >= deg[a] ? 1.0 : 0.0;
  l.mask3 = ad::Tensor({width, 2 * dim}, 0.0);
  for (std::size_t k = 0; k < width; ++k)
    for (std::size_t o = 0; o < 2 * dim; ++o) l.mask3.data[k * 2 * dim + o] = deg[k] < o % dim + 1 ? 1.0 : 0.0;
  return l;
}

MaskedAffineLayer::Conditioner MaskedAffineLayer::condition(const ad::Tensor& x, double clamp) const {
  const std::size_t batch = x.shape[0];
  auto masked = [batch](const nn::Dense& d, const ad::Tensor& mask, const ad::Tensor& in) {
    return ad::add(ad::matmul(in, ad::mul(d.weight, mask)), ad::tile_rows(d.bias, batch));
  };
  const ad::Tensor h1 = ad::relu(masked(hidden1, mask1, x));
  const ad::Tensor h2 = ad::relu(masked(hidden2, mask2, h1));
  const ad::Tensor o = masked(out, mask3, h2);
  return {ad::slice(o, 1, 0, dim), ad::clamp(ad::slice(o, 1, dim, 2 * dim), -clamp, clamp)};
}

void MaskedAffineLayer::visit(const std::string& prefix, const train::ParamVisitor& f) {
  hidden1.visit(prefix + ".hidden1", f);
  hidden2.visit(prefix + ".hidden2", f);
  out.visit(prefix + ".out", f);
}

FlowStack::FlowStack(const FlowConfig& cfg, ParamNormalizer norm, std::mt19937_64& rng)
    : cfg_(cfg), base_(BaseSpec::standard(cfg.dim())), norm_(std::move(norm)) {
  if (cfg.dim() == 0 || cfg.layers == 0) throw std::invalid_argument("flow: dimension and layer count must be positive");
  if (norm_.mean.size() != cfg.n_params || norm_.std.size() != cfg.n_params)
    throw std::invalid_argument("flow: normalizer does not match n_params");
  const std::size_t d = cfg.dim();
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    layers_.push_back(MaskedAffineLayer::init(d, cfg.width, rng));
    std::vector<std::size_t> perm(d);
    for (std::size_t i = 0; i < d; ++i) perm[i] = d - 1 - i;
    std::vector<std::size_t> inv(d);
    for (std::size_t i = 0; i < d; ++i) inv[perm[i]] = i;
    perms_.push_back(std::move(perm));
    inverse_perms_.push_back(std::move(inv));
  }
}

void FlowStack::set_base(BaseSpec base) {
  if (base.mean.size() != dim() || base.std.size() != dim()) throw std::invalid_argument("flow: base spec dimension mismatch");
  base_ = std::move(base);
}

FlowResult FlowStack::forward(const ad::Tensor& z) const {
  check_rows(z, dim(), "flow_forward");
  const std::size_t d = dim();
  ad::Tensor x = z;
  ad::Tensor log_det({z.shape[0], 1}, 0.0);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    ad::Tensor layer_in = x;
    ad::Tensor log_scale;
    // After pass k, entries 0..k are exact; d passes settle every entry.
    for (std::size_t pass = 0; pass < d; ++pass) {
      auto c = layers_[l].condition(x, cfg_.log_scale_clamp);
      x = ad::add(ad::mul(layer_in, ad::exp(c.log_scale)), c.shift);
      log_scale = std::move(c.log_scale);
    }
    log_det = ad::add(log_det, row_sum(log_scale));
    x = ad::index_permute(x, perms_[l]);
  }
  return {x, log_det};
}

FlowResult FlowStack::inverse(const ad::Tensor& x_in) const {
  check_rows(x_in, dim(), "flow_inverse");
  ad::Tensor x = x_in;
  ad::Tensor log_det({x_in.shape[0], 1}, 0.0);
  for (std::size_t l = layers_.size(); l-- > 0;) {
    x = ad::index_permute(x, inverse_perms_[l]);
    auto c = layers_[l].condition(x, cfg_.log_scale_clamp);
    x = ad::mul(ad::sub(x, c.shift), ad::exp(ad::neg(c.log_scale)));
    log_det = ad::sub(log_det, row_sum(c.log_scale));
  }
  return {x, log_det};
}

ad::Tensor FlowStack::base_log_prob(const ad::Tensor& z) const {
  const std::size_t batch = z.shape[0], d = dim();
  ad::Tensor mean_rows({batch, d}, 0.0), inv_std_rows({batch, d}, 0.0);
  double norm_const = -0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi);
  for (std::size_t j = 0; j < d; ++j) norm_const -= std::log(base_.std[j]);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t j = 0; j < d; ++j) {
      mean_rows.data[b * d + j] = base_.mean[j];
      inv_std_rows.data[b * d + j] = 1.0 / base_.std[j];
    }
  const ad::Tensor u = ad::mul(ad::sub(z, mean_rows), inv_std_rows);
  return ad::add_scalar(ad::scale(row_sum(ad::square(u)), -0.5), norm_const);
}

ad::Tensor FlowStack::log_prob(const ad::Tensor& x) const {
  auto inv = inverse(x);
  return ad::add(base_log_prob(inv.value), inv.log_det);
}

ad::Tensor FlowStack::normalize(const ad::Tensor& y) const {
  const std::size_t batch = y.shape[0], s = cfg_.n_params;
  ad::Tensor mean_rows({batch, s}, 0.0), inv_std_rows({batch, s}, 0.0);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t j = 0; j < s; ++j) {
      mean_rows.data[b * s + j] = norm_.mean[j];
      inv_std_rows.data[b * s + j] = 1.0 / norm_.std[j];
    }
  return ad::mul(ad::sub(y, mean_rows), inv_std_rows);
}

ad::Tensor FlowStack::from_params(const ad::Tensor& y) const {
  if (y.rank() != 2 || y.shape[1] != cfg_.n_params)
    throw std::invalid_argument("nf_from_params: expected " + std::to_string(cfg_.n_params) +
                                " parameters per row, got " + ad::shape_str(y.shape));
  ad::Tensor z = normalize(y);
  if (cfg_.padding > 0) {
    const std::size_t batch = y.shape[0];
    ad::Tensor pad({batch, cfg_.padding}, 0.0);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t j = 0; j < cfg_.padding; ++j) pad.data[b * cfg_.padding + j] = base_.mean[cfg_.n_params + j];
    z = ad::concat({z, pad}, 1);
  }
  return forward(z).value;
}

std::vector<double> FlowStack::identify(const ad::Tensor& phi) const {
  const ad::Tensor z = inverse(phi.detach()).value;
  const std::size_t batch = z.shape[0], d = dim(), s = cfg_.n_params;
  std::vector<double> out(batch * s);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t j = 0; j < s; ++j) out[b * s + j] = z.data[b * d + j] * norm_.std[j] + norm_.mean[j];
  return out;
}

void FlowStack::visit(const train::ParamVisitor& f) {
  for (std::size_t l = 0; l < layers_.size(); ++l) layers_[l].visit("flow.maf" + std::to_string(l), f);
}

FlowResult flow_forward(const FlowStack& f, const ad::Tensor& z) {
  auto r = f.forward(ad::reshape(z, {1, z.size()}));
  return {ad::reshape(r.value, {z.size()}), ad::reshape(r.log_det, {1})};
}

FlowResult flow_inverse(const FlowStack& f, const ad::Tensor& x) {
  auto r = f.inverse(ad::reshape(x, {1, x.size()}));
  return {ad::reshape(r.value, {x.size()}), ad::reshape(r.log_det, {1})};
}

ad::Tensor log_prob(const FlowStack& f, const ad::Tensor& x) {
  return ad::reshape(f.log_prob(ad::reshape(x, {1, x.size()})), {1});
}

ad::Tensor nf_from_params(const FlowStack& f, const std::vector<double>& params) {
  if (params.size() != f.config().n_params)
    throw std::invalid_argument("nf_from_params: got " + std::to_string(params.size()) + " parameters, scenario has " +
                                std::to_string(f.config().n_params));
  return ad::reshape(f.from_params(ad::Tensor({1, params.size()}, params)), {f.dim()});
}

std::vector<double> identify(const FlowStack& f, const std::vector<double>& phi) {
  return f.identify(ad::Tensor({1, phi.size()}, phi));
}

}  // namespace sysid::flow
