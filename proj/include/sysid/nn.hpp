#pragma once

// Layer building blocks shared by the autoencoders and the flow.
//
// Sequences are stored time-major as a (T·B × n) matrix: row t·B + b holds
// step t of batch member b. With B = 1 this is the plain T × n trajectory.

#include "sysid/autodiff.hpp"
#include "sysid/optim.hpp"

#include <random>
#include <span>
#include <string>
#include <vector>

namespace sysid::nn {

struct Dense {
  ad::Tensor weight;  // in × out
  ad::Tensor bias;    // out

  static Dense init(std::size_t in, std::size_t out, std::mt19937_64& rng);
  // x: B × in
  ad::Tensor operator()(const ad::Tensor& x) const;
  void visit(const std::string& prefix, const train::ParamVisitor& f);
};

// Standard LSTM cell, gates packed as [input, forget, candidate, output].
struct LstmLayer {
  std::size_t input_size = 0;  // 0: the layer takes no external input
  std::size_t hidden = 0;
  ad::Tensor w_in;   // input × 4h
  ad::Tensor w_rec;  // h × 4h
  ad::Tensor bias;   // 4h, forget-gate slice initialized to 1

  static LstmLayer init(std::size_t input_size, std::size_t hidden, std::mt19937_64& rng);

  struct Output {
    ad::Tensor sequence;  // T·B × h
    ad::Tensor h, c;      // final states, B × h
  };

  // inputs: T·B × input_size (ignored when input_size == 0). h0/c0: B × h.
  Output run(const ad::Tensor* inputs, std::size_t steps, std::size_t batch, ad::Tensor h0,
             ad::Tensor c0) const;
  void visit(const std::string& prefix, const train::ParamVisitor& f);
};

// Packs B per-sample (T × n) row-major blocks into the time-major layout.
ad::Tensor pack_sequences(const std::vector<std::span<const double>>& samples, std::size_t steps,
                          std::size_t width);
// Inverse of pack_sequences for batch member b.
std::vector<double> unpack_sequence(const ad::Tensor& packed, std::size_t steps, std::size_t batch,
                                    std::size_t b);

bool all_finite(std::span<const double> values);

}  // namespace sysid::nn
