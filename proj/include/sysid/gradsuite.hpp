#pragma once

// Finite-difference gradient checks over every registered op and the composed
// encoder, decoder and flow pipelines at toy sizes.

#include <cstdint>
#include <string>
#include <vector>

namespace sysid::ad {

struct GradcheckCase {
  std::string name;
  std::uint64_t seed = 0;
  double error = 0.0;        // max relative error
  bool directional = false;  // projected on random directions instead of per entry
};

std::vector<GradcheckCase> gradcheck_suite(const std::vector<std::uint64_t>& seeds = {1, 2, 3});

}  // namespace sysid::ad
