#include "sysid/simulators.hpp"

#include "sysid/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>

namespace sysid::sim {

namespace fs = std::filesystem;
using nlohmann::json;

std::array<double, 4> duffing_rhs(std::span<const double> s, const DuffingParams& p) {
  const double x1 = s[0], x2 = s[1], v1 = s[2], v2 = s[3];
  const double k = p.stiffness, mu = p.nl_coef;
  // Spring stretches: wall-m1, m1-m2, m2-wall.
  const double d1 = x1, d2 = x2 - x1, d3 = -x2;
  const double kx1 = 2.0 * k * x1 - k * x2;
  const double kx2 = -k * x1 + 2.0 * k * x2;
  const double kv1 = 2.0 * k * v1 - k * v2;
  const double kv2 = -k * v1 + 2.0 * k * v2;
  const double g1 = mu * k * d1 * d1 * d1 - mu * k * d2 * d2 * d2;
  const double g2 = mu * k * d2 * d2 * d2 - mu * k * d3 * d3 * d3;
  return {v1, v2, -(p.damping * kv1 + kx1 + g1) / p.mass, -(p.damping * kv2 + kx2 + g2) / p.mass};
}

std::array<double, 3> lorenz_rhs(std::span<const double> s, const LorenzParams& p) {
  const double x = s[0], y = s[1], z = s[2];
  return {p.sigma * (y - x), x * (p.rho - z) - y, x * y - p.beta * z};
}

double duffing_energy(std::span<const double> s, const DuffingParams& p) {
  const double x1 = s[0], x2 = s[1], v1 = s[2], v2 = s[3], k = p.stiffness;
  const double kinetic = 0.5 * p.mass * (v1 * v1 + v2 * v2);
  const double elastic = 0.5 * (x1 * (2 * k * x1 - k * x2) + x2 * (-k * x1 + 2 * k * x2));
  return kinetic + elastic;
}

Trajectory rk4_integrate(const Rhs& rhs, std::vector<double> x0, double dt, std::size_t steps) {
  if (!(dt > 0.0)) throw std::invalid_argument("rk4_integrate: dt must be positive");
  if (steps < 2) throw std::invalid_argument("rk4_integrate: need at least 2 steps");
  const std::size_t n = x0.size();
  Trajectory tr;
  tr.dim = n;
  tr.times.resize(steps);
  tr.states.resize(steps * n);
  for (double v : x0)
    if (!std::isfinite(v)) throw IntegrationError("rk4_integrate: non-finite initial state", 0);
  std::vector<double> x = std::move(x0), k1(n), k2(n), k3(n), k4(n), tmp(n);
  std::copy(x.begin(), x.end(), tr.states.begin());
  for (std::size_t step = 1; step < steps; ++step) {
    rhs(x, k1);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + 0.5 * dt * k1[i];
    rhs(tmp, k2);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + 0.5 * dt * k2[i];
    rhs(tmp, k3);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + dt * k3[i];
    rhs(tmp, k4);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
      if (!std::isfinite(x[i])) throw IntegrationError("rk4_integrate: non-finite state", step);
    }
    tr.times[step] = static_cast<double>(step) * dt;
    std::copy(x.begin(), x.end(), tr.states.begin() + step * n);
  }
  return tr;
}

FieldSequence synthetic_field(double re_param, std::size_t height, std::size_t width,
                              std::size_t steps, double dt, std::uint64_t seed) {
  namespace c = field_constants;
  if (!(re_param > 0.0)) throw std::invalid_argument("synthetic_field: re_param must be positive");
  std::mt19937_64 rng(seed);
  const double phase = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);
  const double omega = c::kOmegaPerRe * re_param;
  const double amp = c::kAmplitude * std::tanh(re_param / c::kAmplitudeScale);
  FieldSequence f;
  f.height = height;
  f.width = width;
  f.re_param = re_param;
  f.times.resize(steps);
  f.fields.resize(steps * height * width);
  std::vector<double> envelope(height);
  for (std::size_t iy = 0; iy < height; ++iy) {
    const double y = c::kLengthY * static_cast<double>(iy) / static_cast<double>(height);
    const double r = (y - c::kCenterY) / c::kWidthY;
    envelope[iy] = std::exp(-r * r);
  }
  for (std::size_t t = 0; t < steps; ++t) {
    const double time = static_cast<double>(t) * dt;
    f.times[t] = time;
    for (std::size_t ix = 0; ix < width; ++ix) {
      const double x = c::kLengthX * static_cast<double>(ix) / static_cast<double>(width);
      const double wave = amp * std::sin(c::kWaveNumber * x - omega * time + phase);
      for (std::size_t iy = 0; iy < height; ++iy)
        f.fields[(t * height + iy) * width + ix] = c::kFreeStream + wave * envelope[iy];
    }
  }
  return f;
}

// ---------------------------------------------------------------------------

std::size_t Scenario::param_index(const std::string& n) const {
  auto it = std::find(param_names.begin(), param_names.end(), n);
  if (it == param_names.end()) throw std::invalid_argument("scenario " + name + " has no parameter " + n);
  return static_cast<std::size_t>(it - param_names.begin());
}

std::vector<std::string> scenario_names() {
  return {"duffing_K", "duffing_M", "duffing_mu", "lorenz_sigma", "lorenz_rho", "lorenz_joint", "field_re"};
}

Scenario scenario(const std::string& name) {
  Scenario sc;
  sc.name = name;
  if (name.starts_with("duffing_")) {
    sc.kind = SystemKind::kDuffing;
    sc.param_names = {"M", "K", "mu", "q"};
    sc.defaults = {5.0, 5.0, 0.3, 0.01};
    sc.default_dt = 0.01;
    sc.default_steps = 200;
    if (name == "duffing_K") sc.varying = {{"K", 5.0, 1.0}};
    else if (name == "duffing_M") sc.varying = {{"M", 5.0, 1.0}};
    else if (name == "duffing_mu") sc.varying = {{"mu", 0.3, 0.1}};
    else throw UnknownScenario("unknown scenario '" + name + "'");
  } else if (name.starts_with("lorenz_")) {
    sc.kind = SystemKind::kLorenz;
    sc.param_names = {"sigma", "beta", "rho"};
    sc.defaults = {10.0, 8.0 / 3.0, 28.0};
    sc.default_dt = 0.01;
    sc.default_steps = 500;
    if (name == "lorenz_sigma") sc.varying = {{"sigma", 10.0, 2.0}};
    else if (name == "lorenz_rho") sc.varying = {{"rho", 28.0, 2.0}};
    else if (name == "lorenz_joint") sc.varying = {{"sigma", 10.0, 2.0}, {"rho", 28.0, 2.0}};
    else throw UnknownScenario("unknown scenario '" + name + "'");
  } else if (name == "field_re") {
    sc.kind = SystemKind::kField;
    sc.param_names = {"re"};
    sc.defaults = {450.0};
    sc.varying = {{"re", 450.0, 25.0}};
    sc.default_dt = 0.1;
    sc.default_steps = 20;
  } else {
    throw UnknownScenario("unknown scenario '" + name + "'");
  }
  return sc;
}

std::vector<double> Dataset::targets(std::size_t i) const {
  std::vector<double> out;
  const auto& p = samples.at(i).params;
  for (const auto& prior : priors) {
    auto it = std::find(param_names.begin(), param_names.end(), prior.name);
    out.push_back(p[static_cast<std::size_t>(it - param_names.begin())]);
  }
  return out;
}

std::uint64_t derive_seed(std::uint64_t dataset_seed, std::uint64_t index) {
  // splitmix64 finalizer over a golden-ratio stride.
  std::uint64_t z = dataset_seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<double> simulate(const Scenario& sc, std::span<const double> params, std::size_t steps,
                             double dt, std::size_t height, std::size_t width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  switch (sc.kind) {
    case SystemKind::kDuffing: {
      DuffingParams p{params[0], params[1], params[2], params[3]};
      std::normal_distribution<double> ic(0.0, 0.5);
      std::vector<double> x0{ic(rng), ic(rng), 0.0, 0.0};
      auto tr = rk4_integrate(
          [&p](std::span<const double> x, std::span<double> dx) {
            auto d = duffing_rhs(x, p);
            std::copy(d.begin(), d.end(), dx.begin());
          },
          x0, dt, steps);
      std::vector<double> out(steps * 2);
      for (std::size_t t = 0; t < steps; ++t) {
        out[2 * t] = tr.at(t, 0);
        out[2 * t + 1] = tr.at(t, 1);
      }
      return out;
    }
    case SystemKind::kLorenz: {
      LorenzParams p{params[0], params[1], params[2]};
      std::normal_distribution<double> ic(0.0, 0.1);
      std::vector<double> x0{1.0 + ic(rng), 1.0 + ic(rng), 1.0 + ic(rng)};
      auto tr = rk4_integrate(
          [&p](std::span<const double> x, std::span<double> dx) {
            auto d = lorenz_rhs(x, p);
            std::copy(d.begin(), d.end(), dx.begin());
          },
          x0, dt, steps);
      return tr.states;
    }
    case SystemKind::kField:
      return synthetic_field(params[0], height, width, steps, dt, rng()).fields;
  }
  return {};
}

Dataset sample_dataset(const std::string& scenario_name, const SamplingOptions& opts) {
  Scenario sc = scenario(scenario_name);
  if (opts.n_samples < 1) throw std::invalid_argument("sample_dataset: n_samples must be >= 1");
  if (!opts.priors.empty()) {
    if (opts.priors.size() != sc.varying.size())
      throw std::invalid_argument("sample_dataset: prior override count mismatch");
    for (std::size_t i = 0; i < sc.varying.size(); ++i) {
      if (opts.priors[i].name != sc.varying[i].name || !(opts.priors[i].std >= 0.0))
        throw std::invalid_argument("sample_dataset: bad prior override for " + sc.varying[i].name);
      sc.varying[i] = opts.priors[i];
    }
  }
  Dataset ds;
  ds.scenario = sc.name;
  ds.seed = opts.seed;
  ds.dt = opts.dt > 0 ? opts.dt : sc.default_dt;
  ds.steps = opts.steps > 0 ? opts.steps : sc.default_steps;
  ds.param_names = sc.param_names;
  ds.priors = sc.varying;
  if (sc.kind == SystemKind::kDuffing) ds.sample_shape = {ds.steps, 2};
  else if (sc.kind == SystemKind::kLorenz) ds.sample_shape = {ds.steps, 3};
  else ds.sample_shape = {ds.steps, opts.height, opts.width};

  for (std::size_t i = 0; i < opts.n_samples; ++i) {
    std::mt19937_64 rng(derive_seed(opts.seed, i));
    Sample s;
    s.index = i;
    s.params = sc.defaults;
    for (const auto& prior : sc.varying) {
      std::normal_distribution<double> draw(prior.mean, prior.std);
      double v = draw(rng);
      // Every parameter here is physically positive (mu may be zero).
      const bool allow_zero = prior.name == "mu";
      while (allow_zero ? v < 0.0 : v <= 0.0) v = draw(rng);
      s.params[sc.param_index(prior.name)] = v;
    }
    s.values = simulate(sc, s.params, ds.steps, ds.dt, opts.height, opts.width, rng());
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

// ---------------------------------------------------------------------------

void write_f64(const fs::path& file, std::span<const double> values) {
  std::vector<std::uint64_t> words(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) words[i] = io::to_little_endian(std::bit_cast<std::uint64_t>(values[i]));
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(words.size() * 8));
  if (!out) throw std::runtime_error("short write to " + file.string());
}

std::vector<double> read_f64(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + file.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() % 8) throw std::runtime_error(file.string() + ": size is not a multiple of 8");
  std::vector<double> out(bytes.size() / 8);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t w;
    std::memcpy(&w, bytes.data() + 8 * i, 8);
    out[i] = std::bit_cast<double>(io::from_little_endian(w));
  }
  return out;
}

namespace {

std::string values_crc(const std::vector<double>& values) {
  std::string bytes(values.size() * 8, '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint64_t w = io::to_little_endian(std::bit_cast<std::uint64_t>(values[i]));
    std::memcpy(bytes.data() + 8 * i, &w, 8);
  }
  return io::hex32(io::crc32(bytes));
}

}  // namespace

void save_dataset(const Dataset& ds, const fs::path& dir) {
  fs::create_directories(dir);
  json m;
  m["format_version"] = 1;
  m["scenario"] = ds.scenario;
  m["seed"] = ds.seed;
  m["dt"] = io::format_double(ds.dt);
  m["steps"] = ds.steps;
  m["sample_shape"] = ds.sample_shape;
  m["param_names"] = ds.param_names;
  m["prior"] = json::array();
  for (const auto& p : ds.priors)
    m["prior"].push_back({{"name", p.name}, {"mean", io::format_double(p.mean)}, {"std", io::format_double(p.std)}});
  m["samples"] = json::array();
  for (const auto& s : ds.samples) {
    const std::string file = "sample_" + std::to_string(s.index) + ".f64";
    write_f64(dir / file, s.values);
    json params = json::object();
    for (std::size_t j = 0; j < ds.param_names.size(); ++j) params[ds.param_names[j]] = io::format_double(s.params[j]);
    m["samples"].push_back({{"index", s.index}, {"file", file}, {"crc32", values_crc(s.values)}, {"params", params}});
  }
  io::write_atomic(dir / "manifest.json", m.dump(2) + "\n");
}

Dataset load_dataset(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("no manifest.json in " + dir.string());
  json m = json::parse(in);
  if (m.at("format_version").get<int>() != 1) throw std::runtime_error("unsupported dataset format version");
  Dataset ds;
  ds.scenario = m.at("scenario").get<std::string>();
  ds.seed = m.at("seed").get<std::uint64_t>();
  ds.dt = io::parse_double(m.at("dt").get<std::string>());
  ds.steps = m.at("steps").get<std::size_t>();
  ds.sample_shape = m.at("sample_shape").get<std::vector<std::size_t>>();
  ds.param_names = m.at("param_names").get<std::vector<std::string>>();
  for (const auto& p : m.at("prior"))
    ds.priors.push_back({p.at("name").get<std::string>(), io::parse_double(p.at("mean").get<std::string>()),
                         io::parse_double(p.at("std").get<std::string>())});
  std::size_t per_sample = 1;
  for (auto e : ds.sample_shape) per_sample *= e;
  for (const auto& js : m.at("samples")) {
    Sample s;
    s.index = js.at("index").get<std::size_t>();
    for (const auto& name : ds.param_names) s.params.push_back(io::parse_double(js.at("params").at(name).get<std::string>()));
    s.values = read_f64(dir / js.at("file").get<std::string>());
    if (js.contains("crc32") && js.at("crc32").get<std::string>() != values_crc(s.values))
      throw std::runtime_error("sample " + std::to_string(s.index) + " fails its checksum");
    if (s.values.size() != per_sample)
      throw std::runtime_error("sample " + std::to_string(s.index) + " has wrong size");
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

void export_params_csv(const Dataset& ds, const fs::path& file) {
  std::vector<std::string> header{"index"};
  header.insert(header.end(), ds.param_names.begin(), ds.param_names.end());
  std::vector<std::vector<std::string>> rows;
  for (const auto& s : ds.samples) {
    std::vector<std::string> row{std::to_string(s.index)};
    for (double v : s.params) row.push_back(io::format_double(v));
    rows.push_back(std::move(row));
  }
  io::write_atomic(file, io::csv_table(header, rows));
}

}  // namespace sysid::sim
