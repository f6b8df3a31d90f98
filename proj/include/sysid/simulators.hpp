#pragma once

// Data generation: 2-DOF Duffing chain, Lorenz system, fixed-step RK4, seeded
// scenario sampling and a parameterized travelling-wave field surrogate.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sysid::sim {

struct DuffingParams {
  double mass = 5.0;       // M, kg (both masses)
  double stiffness = 5.0;  // K, N/m (all three springs)
  double nl_coef = 0.3;    // mu, 1/m^2
  double damping = 0.01;   // q, s (C = q K)
};

struct LorenzParams {
  double sigma = 10.0;
  double beta = 8.0 / 3.0;
  double rho = 28.0;
};

struct Trajectory {
  std::vector<double> times;   // length T
  std::vector<double> states;  // T × dim, row-major
  std::size_t dim = 0;

  std::size_t steps() const { return times.size(); }
  double at(std::size_t t, std::size_t j) const { return states[t * dim + j]; }
};

struct FieldSequence {
  std::vector<double> times;   // length T
  std::vector<double> fields;  // T × H × W, row-major
  std::size_t height = 0, width = 0;
  double re_param = 0.0;
};

class IntegrationError : public std::runtime_error {
 public:
  IntegrationError(const std::string& what, std::size_t step)
      : std::runtime_error(what + " at step " + std::to_string(step)), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

// state = [x1, x2, v1, v2]; returns [v1, v2, a1, a2] for
// M x'' + q K x' + K x + g(x) = 0 on a wall-spring-mass-spring-mass-spring-wall chain.
std::array<double, 4> duffing_rhs(std::span<const double> state, const DuffingParams& p);

// [sigma (y - x), x (rho - z) - y, x y - beta z]
std::array<double, 3> lorenz_rhs(std::span<const double> state, const LorenzParams& p);

// Kinetic plus linear elastic energy of the Duffing chain.
double duffing_energy(std::span<const double> state, const DuffingParams& p);

using Rhs = std::function<void(std::span<const double> x, std::span<double> dxdt)>;

// Classical RK4 with `steps` rows of output, the first being x0.
Trajectory rk4_integrate(const Rhs& rhs, std::vector<double> x0, double dt, std::size_t steps);

// ---------------------------------------------------------------------------
// Synthetic wake surrogate
//   u(x, y, t) = U + A sin(k x - w t + phase) exp(-(y - yc)^2 / sy^2)
//   w = kOmegaPerRe * re,  A = kAmplitude * tanh(re / kAmplitudeScale)
// on x in [0, 2), y in [0, 1); phase ~ U(0, 2 pi) from the seed.
// ---------------------------------------------------------------------------
namespace field_constants {
inline constexpr double kFreeStream = 1.0;
inline constexpr double kOmegaPerRe = 0.014;
inline constexpr double kAmplitude = 1.0;
inline constexpr double kAmplitudeScale = 500.0;
inline constexpr double kWaveNumber = 6.283185307179586;  // two wavelengths over the domain
inline constexpr double kLengthX = 2.0;
inline constexpr double kLengthY = 1.0;
inline constexpr double kCenterY = 0.5;
inline constexpr double kWidthY = 0.2;
}  // namespace field_constants

FieldSequence synthetic_field(double re_param, std::size_t height, std::size_t width,
                              std::size_t steps, double dt, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Scenarios and datasets
// ---------------------------------------------------------------------------

enum class SystemKind { kDuffing, kLorenz, kField };

struct ParamPrior {
  std::string name;
  double mean = 0.0;
  double std = 1.0;
};

struct Scenario {
  std::string name;
  SystemKind kind = SystemKind::kDuffing;
  std::vector<std::string> param_names;  // full parameter vector layout
  std::vector<double> defaults;          // fixed values, same layout
  std::vector<ParamPrior> varying;       // drawn per sample
  double default_dt = 0.01;
  std::size_t default_steps = 200;

  std::size_t param_index(const std::string& name) const;
  bool is_fluid() const { return kind == SystemKind::kField; }
};

class UnknownScenario : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// duffing_K, duffing_M, duffing_mu, lorenz_sigma, lorenz_rho, lorenz_joint, field_re
std::vector<std::string> scenario_names();
Scenario scenario(const std::string& name);

struct Sample {
  std::size_t index = 0;
  std::vector<double> params;  // full layout, Scenario::param_names
  std::vector<double> values;  // row-major, Dataset::sample_shape
};

struct Dataset {
  std::string scenario;
  std::uint64_t seed = 0;
  double dt = 0.0;
  std::size_t steps = 0;
  std::vector<std::size_t> sample_shape;  // {T, n} or {T, H, W}
  std::vector<std::string> param_names;
  std::vector<ParamPrior> priors;         // varying parameters only
  std::vector<Sample> samples;

  // Values of the varying parameters of sample i, prior order.
  std::vector<double> targets(std::size_t i) const;
  std::size_t size() const { return samples.size(); }
};

struct SamplingOptions {
  std::size_t n_samples = 100;
  std::size_t steps = 0;  // 0: scenario default
  double dt = 0.0;        // 0: scenario default
  std::uint64_t seed = 0;
  // Field scenarios only.
  std::size_t height = 96, width = 192;
  // Overrides the varying priors (same order/names) when non-empty.
  std::vector<ParamPrior> priors;
};

std::uint64_t derive_seed(std::uint64_t dataset_seed, std::uint64_t index);

Dataset sample_dataset(const std::string& scenario_name, const SamplingOptions& opts);

// Simulates one sample of a scenario at the given full parameter vector.
std::vector<double> simulate(const Scenario& sc, std::span<const double> params, std::size_t steps,
                             double dt, std::size_t height, std::size_t width, std::uint64_t seed);

// manifest.json + sample_<i>.f64 (little-endian float64, row-major).
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);
void export_params_csv(const Dataset& ds, const std::filesystem::path& file);

void write_f64(const std::filesystem::path& file, std::span<const double> values);
std::vector<double> read_f64(const std::filesystem::path& file);

}  // namespace sysid::sim
