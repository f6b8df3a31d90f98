#pragma once

// Masked autoregressive flow between a base space built from normalized system
// parameters (plus padding dimensions) and the feature space.
//
// Each masked affine layer maps z → x with
//     x_i = z_i · exp(s_i(x_<i)) + t_i(x_<i)
// where (t, s) come from a MADE-masked conditioner reading x. The forward
// direction is sequential in i; the inverse is a single conditioner pass.
// Layers alternate with fixed permutations (reversal by default).

#include "sysid/autodiff.hpp"
#include "sysid/nn.hpp"

#include <random>
#include <vector>

namespace sysid::flow {

struct FlowConfig {
  std::size_t n_params = 1;  // s: varying system parameters
  std::size_t padding = 2;   // p: extra base dimensions, N(0, 1)
  std::size_t layers = 4;    // masked + permutation pairs
  std::size_t width = 64;    // conditioner hidden width
  double log_scale_clamp = 7.0;

  std::size_t dim() const { return n_params + padding; }
};

// Per-dimension independent normal over the base space.
struct BaseSpec {
  std::vector<double> mean;
  std::vector<double> std;

  static BaseSpec standard(std::size_t dim) { return {std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0)}; }
};

// Raw parameter ↔ base coordinate: (y − mean) / std.
struct ParamNormalizer {
  std::vector<double> mean;
  std::vector<double> std;
};

struct MaskedAffineLayer {
  std::size_t dim = 0;
  nn::Dense hidden1, hidden2, out;  // out has 2·dim units: [shift, log_scale]
  ad::Tensor mask1, mask2, mask3;   // constant 0/1, same shapes as the weights

  static MaskedAffineLayer init(std::size_t dim, std::size_t width, std::mt19937_64& rng);

  struct Conditioner {
    ad::Tensor shift, log_scale;  // B × dim
  };
  Conditioner condition(const ad::Tensor& x, double clamp) const;
  void visit(const std::string& prefix, const train::ParamVisitor& f);
};

struct FlowResult {
  ad::Tensor value;    // B × dim
  ad::Tensor log_det;  // B × 1
};

class FlowStack {
 public:
  FlowStack() = default;
  FlowStack(const FlowConfig& cfg, ParamNormalizer norm, std::mt19937_64& rng);

  const FlowConfig& config() const { return cfg_; }
  std::size_t dim() const { return cfg_.dim(); }
  const BaseSpec& base() const { return base_; }
  const ParamNormalizer& normalizer() const { return norm_; }
  const std::vector<std::vector<std::size_t>>& permutations() const { return perms_; }

  // z (B × dim) → x, log|det ∂x/∂z|.
  FlowResult forward(const ad::Tensor& z) const;
  // x (B × dim) → z, log|det ∂z/∂x| (the negated forward log-det).
  FlowResult inverse(const ad::Tensor& x) const;
  // log density of x under the pushed-forward base (B × 1).
  ad::Tensor log_prob(const ad::Tensor& x) const;
  // Base log density of z (B × 1).
  ad::Tensor base_log_prob(const ad::Tensor& z) const;

  // y: B × n_params raw values → features B × dim.
  ad::Tensor from_params(const ad::Tensor& y) const;
  // features B × dim → raw parameter estimates, row-major B × n_params.
  std::vector<double> identify(const ad::Tensor& phi) const;

  ad::Tensor normalize(const ad::Tensor& y) const;

  void set_base(BaseSpec base);
  void visit(const train::ParamVisitor& f);
  std::vector<MaskedAffineLayer>& layers() { return layers_; }
  const std::vector<MaskedAffineLayer>& layers() const { return layers_; }

 private:
  FlowConfig cfg_;
  BaseSpec base_;
  ParamNormalizer norm_;
  std::vector<MaskedAffineLayer> layers_;
  std::vector<std::vector<std::size_t>> perms_, inverse_perms_;
};

// Single-vector forms of the operations.
FlowResult flow_forward(const FlowStack& f, const ad::Tensor& z);
FlowResult flow_inverse(const FlowStack& f, const ad::Tensor& x);
ad::Tensor log_prob(const FlowStack& f, const ad::Tensor& x);
ad::Tensor nf_from_params(const FlowStack& f, const std::vector<double>& params);
std::vector<double> identify(const FlowStack& f, const std::vector<double>& phi);

}  // namespace sysid::flow
