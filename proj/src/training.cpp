#include "sysid/training.hpp"

#include "sysid/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>

namespace sysid::train {

using nlohmann::json;

namespace {

constexpr std::string_view kMagic = "SYSIDFLW";

bool finite(const LossBreakdown& l) {
  return std::isfinite(l.total) && std::isfinite(l.nf) && std::isfinite(l.rec_lstm) && std::isfinite(l.rec_cnn) &&
         std::isfinite(l.rec_f);
}

LossBreakdown& operator+=(LossBreakdown& a, const LossBreakdown& b) {
  a.total += b.total;
  a.nf += b.nf;
  a.rec_lstm += b.rec_lstm;
  a.rec_cnn += b.rec_cnn;
  a.rec_f += b.rec_f;
  return a;
}

LossBreakdown scaled(LossBreakdown a, double c) {
  a.total *= c;
  a.nf *= c;
  a.rec_lstm *= c;
  a.rec_cnn *= c;
  a.rec_f *= c;
  return a;
}

std::size_t frame_pixels(const TrainedModel& m) { return m.sample_shape[1] * m.sample_shape[2]; }

// Codes of every frame, sample-major, plus the time-major sequence for the LSTM.
struct FluidCodes {
  std::vector<ad::Tensor> codes;
  ad::Tensor sequence;
};

FluidCodes encode_frames(const TrainedModel& m, const std::vector<ad::Tensor>& frames, std::size_t batch) {
  const std::size_t T = m.steps;
  FluidCodes out;
  out.codes.reserve(frames.size());
  for (const auto& f : frames) out.codes.push_back(m.cnn.encode(f));
  std::vector<ad::Tensor> rows;
  rows.reserve(frames.size());
  const std::size_t d = m.cnn.code_dim();
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t b = 0; b < batch; ++b) rows.push_back(ad::reshape(out.codes[b * T + t], {1, d}));
  out.sequence = ad::concat(rows, 0);
  return out;
}

json config_to_json(const TrainConfig& c) {
  return {{"scenario", c.scenario},
          {"learning_rate", io::format_double(c.learning_rate)},
          {"beta1", io::format_double(c.beta1)},
          {"beta2", io::format_double(c.beta2)},
          {"eps", io::format_double(c.eps)},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"loss_weights",
           {io::format_double(c.weights.nf), io::format_double(c.weights.rec_lstm),
            io::format_double(c.weights.rec_cnn), io::format_double(c.weights.rec_f)}},
          {"seed", c.seed},
          {"patience", c.patience},
          {"validation_fraction", io::format_double(c.validation_fraction)},
          {"log_every", c.log_every},
          {"detach_phi_nll", c.detach_phi_nll},
          {"detach_flow_rec_f", c.detach_flow_rec_f},
          {"lstm_hidden", c.lstm_hidden},
          {"encoder_layers", c.encoder_layers},
          {"decoder_layers", c.decoder_layers},
          {"padding", c.padding},
          {"flow_layers", c.flow_layers},
          {"flow_width", c.flow_width},
          {"cnn_channels", c.cnn_channels}};
}

double num(const json& j) { return io::parse_double(j.get<std::string>()); }

std::vector<double> nums(const json& j) {
  std::vector<double> out;
  for (const auto& v : j) out.push_back(num(v));
  return out;
}

json strs(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(io::format_double(x));
  return a;
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  c.scenario = j.at("scenario").get<std::string>();
  c.learning_rate = num(j.at("learning_rate"));
  c.beta1 = num(j.at("beta1"));
  c.beta2 = num(j.at("beta2"));
  c.eps = num(j.at("eps"));
  c.epochs = j.at("epochs").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  const auto w = nums(j.at("loss_weights"));
  c.weights = {w.at(0), w.at(1), w.at(2), w.at(3)};
  c.seed = j.at("seed").get<std::uint64_t>();
  c.patience = j.at("patience").get<std::size_t>();
  c.validation_fraction = num(j.at("validation_fraction"));
  c.log_every = j.at("log_every").get<std::size_t>();
  c.detach_phi_nll = j.at("detach_phi_nll").get<bool>();
  c.detach_flow_rec_f = j.at("detach_flow_rec_f").get<bool>();
  c.lstm_hidden = j.at("lstm_hidden").get<std::size_t>();
  c.encoder_layers = j.at("encoder_layers").get<std::size_t>();
  c.decoder_layers = j.at("decoder_layers").get<std::size_t>();
  c.padding = j.at("padding").get<std::size_t>();
  c.flow_layers = j.at("flow_layers").get<std::size_t>();
  c.flow_width = j.at("flow_width").get<std::size_t>();
  c.cnn_channels = j.at("cnn_channels").get<std::vector<std::size_t>>();
  return c;
}

json loss_to_json(const LossBreakdown& l) {
  return strs({l.total, l.nf, l.rec_lstm, l.rec_cnn, l.rec_f});
}

LossBreakdown loss_from_json(const json& j) {
  const auto v = nums(j);
  return {v.at(0), v.at(1), v.at(2), v.at(3), v.at(4)};
}

// Builds every sub-network from one stream seeded by the config seed.
void build_networks(TrainedModel& m, flow::ParamNormalizer norm) {
  const auto& c = m.config;
  std::mt19937_64 rng(c.seed);
  std::size_t input_dim = m.fluid ? 0 : m.sample_shape.at(1);
  if (m.fluid) {
    m.cnn = cnn::CnnAutoencoder({.height = m.sample_shape.at(1), .width = m.sample_shape.at(2), .channels = c.cnn_channels}, rng);
    input_dim = m.cnn.code_dim();
  }
  const std::size_t s = m.param_names.size();
  m.lstm = lstm::LstmAutoencoder({.input_dim = input_dim,
                                  .feature_dim = s + c.padding,
                                  .hidden = c.lstm_hidden,
                                  .encoder_layers = c.encoder_layers,
                                  .decoder_layers = c.decoder_layers},
                                 rng);
  m.flow = flow::FlowStack({.n_params = s, .padding = c.padding, .layers = c.flow_layers, .width = c.flow_width},
                           std::move(norm), rng);
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
  for (double w : {weights.nf, weights.rec_lstm, weights.rec_cnn, weights.rec_f})
    if (!(w >= 0.0)) throw std::invalid_argument("loss weights must be >= 0");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
    throw std::invalid_argument("validation_fraction must be in [0, 1)");
  if (log_every == 0) throw std::invalid_argument("log_every must be >= 1");
}

void TrainedModel::visit(const ParamVisitor& f) {
  if (fluid) cnn.visit(f);
  lstm.visit(f);
  flow.visit(f);
}

LossBreakdown LossTerms::values() const {
  return {total.item(), nf.item(), rec_lstm.item(), rec_cnn.item(), rec_f.item()};
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double validation_fraction,
                                                                            std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(sim::derive_seed(seed, 0x5b11));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = static_cast<std::size_t>(std::floor(validation_fraction * static_cast<double>(n)));
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> tr(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(val.begin(), val.end());
  std::sort(tr.begin(), tr.end());
  return {tr, val};
}

TrainedModel init_model(const sim::Dataset& ds, const TrainConfig& cfg, const std::vector<std::size_t>& train_idx) {
  cfg.validate();
  if (ds.size() == 0 || train_idx.empty()) throw std::invalid_argument("training: empty dataset");
  const auto sc = sim::scenario(ds.scenario);
  if (!cfg.scenario.empty() && cfg.scenario != ds.scenario)
    throw std::invalid_argument("training: config scenario " + cfg.scenario + " vs dataset " + ds.scenario);
  TrainedModel m;
  m.scenario = ds.scenario;
  m.fluid = sc.is_fluid();
  m.steps = ds.steps;
  m.sample_shape = ds.sample_shape;
  m.config = cfg;
  m.config.scenario = ds.scenario;
  for (const auto& p : ds.priors) m.param_names.push_back(p.name);
  if (m.fluid != (ds.sample_shape.size() == 3)) throw std::invalid_argument("training: sample shape does not match scenario");

  // Standardization statistics over the training split.
  const std::size_t channels = m.fluid ? 1 : ds.sample_shape[1];
  std::vector<double> sum(channels, 0.0), sq(channels, 0.0);
  std::size_t count = 0;
  for (auto i : train_idx) {
    const auto& v = ds.samples.at(i).values;
    for (std::size_t k = 0; k < v.size(); ++k) {
      const std::size_t ch = m.fluid ? 0 : k % channels;
      sum[ch] += v[k];
      sq[ch] += v[k] * v[k];
    }
    count += v.size() / channels;
  }
  m.input_norm.mean.resize(channels);
  m.input_norm.std.resize(channels);
  for (std::size_t ch = 0; ch < channels; ++ch) {
    const double mean = sum[ch] / static_cast<double>(count);
    const double var = std::max(sq[ch] / static_cast<double>(count) - mean * mean, 0.0);
    m.input_norm.mean[ch] = mean;
    m.input_norm.std[ch] = var > 1e-24 ? std::sqrt(var) : 1.0;
  }

  flow::ParamNormalizer norm;
  for (const auto& p : ds.priors) {
    norm.mean.push_back(p.mean);
    norm.std.push_back(p.std > 0.0 ? p.std : 1.0);
  }
  build_networks(m, std::move(norm));
  return m;
}

Batch make_batch(const TrainedModel& m, const sim::Dataset& ds, const std::vector<std::size_t>& idx) {
  Batch b;
  b.size = idx.size();
  const std::size_t s = m.param_names.size();
  b.y = ad::Tensor({b.size, s}, 0.0);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto y = ds.targets(idx[k]);
    std::copy(y.begin(), y.end(), b.y.data.begin() + static_cast<std::ptrdiff_t>(k * s));
  }
  if (m.fluid) {
    const std::size_t T = m.steps, H = m.sample_shape[1], W = m.sample_shape[2];
    const double mean = m.input_norm.mean[0], inv = 1.0 / m.input_norm.std[0];
    for (auto i : idx) {
      const auto& v = ds.samples.at(i).values;
      for (std::size_t t = 0; t < T; ++t) {
        ad::Tensor f({H, W}, 0.0);
        for (std::size_t p = 0; p < H * W; ++p) f.data[p] = (v[t * H * W + p] - mean) * inv;
        b.frames.push_back(std::move(f));
      }
    }
  } else {
    const std::size_t T = m.steps, n = m.sample_shape[1];
    std::vector<std::vector<double>> standardized;
    for (auto i : idx) {
      auto v = ds.samples.at(i).values;
      for (std::size_t k = 0; k < v.size(); ++k) v[k] = (v[k] - m.input_norm.mean[k % n]) / m.input_norm.std[k % n];
      standardized.push_back(std::move(v));
    }
    std::vector<std::span<const double>> spans(standardized.begin(), standardized.end());
    b.x = nn::pack_sequences(spans, T, n);
  }
  return b;
}

LossTerms compute_losses(const TrainedModel& m, const Batch& batch, const LossWeights& w) {
  LossTerms t;
  const std::size_t T = m.steps;
  ad::Tensor seq;
  if (m.fluid) {
    auto enc = encode_frames(m, batch.frames, batch.size);
    ad::Tensor acc;
    for (std::size_t i = 0; i < batch.frames.size(); ++i) {
      const ad::Tensor e = ad::mse(batch.frames[i], m.cnn.decode(enc.codes[i]));
      acc = i == 0 ? e : ad::add(acc, e);
    }
    // Frames share one shape, so the mean of per-frame MSEs is the MSE over all pixels.
    t.rec_cnn = ad::scale(acc, 1.0 / static_cast<double>(batch.frames.size()));
    seq = std::move(enc.sequence);
  } else {
    t.rec_cnn = ad::Tensor::scalar(0.0);
    seq = batch.x;
  }
  t.phi = m.lstm.encode(seq, T, batch.size);
  t.rec_lstm = ad::mse(seq, m.lstm.decode(t.phi, T));
  t.nf = ad::neg(ad::mean(m.flow.log_prob(m.config.detach_phi_nll ? t.phi.detach() : t.phi)));
  const ad::Tensor target = m.flow.from_params(batch.y);
  t.rec_f = ad::mse(t.phi, m.config.detach_flow_rec_f ? target.detach() : target);
  t.total = ad::add(ad::add(ad::scale(t.nf, w.nf), ad::scale(t.rec_lstm, w.rec_lstm)),
                    ad::add(ad::scale(t.rec_cnn, w.rec_cnn), ad::scale(t.rec_f, w.rec_f)));
  return t;
}

LossBreakdown evaluate_loss(const TrainedModel& m, const sim::Dataset& ds, const std::vector<std::size_t>& idx,
                            const LossWeights& w, std::size_t batch_size) {
  LossBreakdown acc;
  for (std::size_t start = 0; start < idx.size(); start += batch_size) {
    const std::vector<std::size_t> chunk(idx.begin() + static_cast<std::ptrdiff_t>(start),
                                         idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), start + batch_size)));
    acc += scaled(compute_losses(m, make_batch(m, ds, chunk), w).values(), static_cast<double>(chunk.size()));
  }
  return scaled(acc, 1.0 / static_cast<double>(idx.size()));
}

LossBreakdown train_step(TrainedModel& m, const Batch& batch, AdamState& state, const TrainConfig& cfg) {
  ad::Tape tape;
  const TrainedModel bound = bind(m, tape);
  const LossTerms terms = compute_losses(bound, batch, cfg.weights);
  const LossBreakdown values = terms.values();
  if (!finite(values)) return values;
  const ad::Gradients grads = tape.backward(terms.total);
  std::vector<ad::Tensor> gs;
  TrainedModel probe = bound;
  probe.visit([&](const std::string&, ad::Tensor& t) { gs.push_back(grads.of(t)); });
  std::vector<ad::Tensor*> ws;
  m.visit([&](const std::string&, ad::Tensor& t) { ws.push_back(&t); });
  adam_step(ws, gs, state, {cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps});
  return values;
}

namespace {

TrainedModel run_training(const sim::Dataset& ds, const TrainConfig& cfg) {
  auto [train_idx, val_idx] = split_indices(ds.size(), cfg.validation_fraction, cfg.seed);
  if (val_idx.empty()) val_idx = train_idx;
  TrainedModel m = init_model(ds, cfg, train_idx);
  AdamState state;
  std::vector<LogRow> curve;
  const std::size_t bs = cfg.batch_size;

  LogRow first{0, evaluate_loss(m, ds, train_idx, cfg.weights, bs), 0.0};
  first.validation = evaluate_loss(m, ds, val_idx, cfg.weights, bs).total;
  if (!finite(first.train)) throw TrainingDiverged(0, "training diverged: non-finite loss before epoch 0");
  curve.push_back(first);

  TrainedModel best = m;
  double best_val = first.validation;
  std::size_t stale = 0;
  std::vector<std::size_t> order = train_idx;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::mt19937_64 rng(sim::derive_seed(cfg.seed, epoch + 1));
    std::shuffle(order.begin(), order.end(), rng);
    LossBreakdown acc;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::vector<std::size_t> chunk(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + bs)));
      const LossBreakdown l = train_step(m, make_batch(m, ds, chunk), state, cfg);
      if (!finite(l)) throw TrainingDiverged(epoch, "training diverged: non-finite loss in epoch " + std::to_string(epoch));
      acc += scaled(l, static_cast<double>(chunk.size()));
    }
    const LossBreakdown train_mean = scaled(acc, 1.0 / static_cast<double>(order.size()));
    const double val = evaluate_loss(m, ds, val_idx, cfg.weights, bs).total;
    if (!std::isfinite(val)) throw TrainingDiverged(epoch, "training diverged: non-finite validation loss in epoch " + std::to_string(epoch));
    const bool last = epoch + 1 == cfg.epochs;
    if (val < best_val) {
      best_val = val;
      best = m;
      stale = 0;
    } else {
      ++stale;
    }
    const bool stop = stale >= cfg.patience;
    if ((epoch + 1) % cfg.log_every == 0 || last || stop) curve.push_back({state.step, train_mean, val});
    if (stop) break;
  }
  best.final_loss = evaluate_loss(best, ds, train_idx, cfg.weights, bs);
  best.curve = std::move(curve);
  return best;
}

}  // namespace

TrainedModel train_nonfluid(const sim::Dataset& ds, const TrainConfig& cfg) {
  if (sim::scenario(ds.scenario).is_fluid())
    throw std::invalid_argument("train_nonfluid: scenario " + ds.scenario + " is a field scenario");
  return run_training(ds, cfg);
}

TrainedModel train_fluid(const sim::Dataset& ds, const TrainConfig& cfg) {
  if (!sim::scenario(ds.scenario).is_fluid())
    throw std::invalid_argument("train_fluid: scenario " + ds.scenario + " is not a field scenario");
  return run_training(ds, cfg);
}

TrainedModel train(const sim::Dataset& ds, const TrainConfig& cfg) {
  return sim::scenario(ds.scenario).is_fluid() ? train_fluid(ds, cfg) : train_nonfluid(ds, cfg);
}

std::vector<double> extract_features(const TrainedModel& m, std::span<const double> values) {
  std::size_t expected = 1;
  for (auto e : m.sample_shape) expected *= e;
  if (values.size() != expected)
    throw ad::ShapeError("extract_features: sample has " + std::to_string(values.size()) + " values, model expects " +
                         ad::shape_str(m.sample_shape));
  if (!nn::all_finite(values)) throw lstm::NonFiniteInput("extract_features: non-finite sample");
  ad::Tensor seq;
  if (m.fluid) {
    const std::size_t hw = frame_pixels(m);
    std::vector<ad::Tensor> frames;
    for (std::size_t t = 0; t < m.steps; ++t) {
      ad::Tensor f({m.sample_shape[1], m.sample_shape[2]}, 0.0);
      for (std::size_t p = 0; p < hw; ++p) f.data[p] = (values[t * hw + p] - m.input_norm.mean[0]) / m.input_norm.std[0];
      frames.push_back(std::move(f));
    }
    seq = encode_frames(m, frames, 1).sequence;
  } else {
    const std::size_t n = m.sample_shape[1];
    seq = ad::Tensor({m.steps, n}, 0.0);
    for (std::size_t k = 0; k < values.size(); ++k) seq.data[k] = (values[k] - m.input_norm.mean[k % n]) / m.input_norm.std[k % n];
  }
  return m.lstm.encode(seq, m.steps, 1).data;
}

std::vector<double> predict(const TrainedModel& m, std::span<const double> values) {
  const auto phi = extract_features(m, values);
  return m.flow.identify(ad::Tensor({1, phi.size()}, phi));
}

std::string serialize_model(const TrainedModel& m_in) {
  TrainedModel m = m_in;
  json h;
  h["format"] = "sysid-flows-checkpoint";
  h["format_version"] = kCheckpointVersion;
  h["scenario"] = m.scenario;
  h["fluid"] = m.fluid;
  h["steps"] = m.steps;
  h["sample_shape"] = m.sample_shape;
  h["param_names"] = m.param_names;
  h["config"] = config_to_json(m.config);
  h["input_norm"] = {{"mean", strs(m.input_norm.mean)}, {"std", strs(m.input_norm.std)}};
  h["param_norm"] = {{"mean", strs(m.flow.normalizer().mean)}, {"std", strs(m.flow.normalizer().std)}};
  h["flow_base"] = {{"mean", strs(m.flow.base().mean)}, {"std", strs(m.flow.base().std)}};
  h["final_loss"] = loss_to_json(m.final_loss);
  h["curve"] = json::array();
  for (const auto& r : m.curve) {
    json row = loss_to_json(r.train);
    row.push_back(io::format_double(r.validation));
    h["curve"].push_back({{"step", r.step}, {"losses", row}});
  }
  std::string payload;
  h["blocks"] = json::array();
  m.visit([&](const std::string& name, ad::Tensor& t) {
    h["blocks"].push_back({{"name", name}, {"shape", t.shape}});
    for (double v : t.data) {
      const std::uint64_t w = io::to_little_endian(std::bit_cast<std::uint64_t>(v));
      payload.append(reinterpret_cast<const char*>(&w), 8);
    }
  });
  h["payload_bytes"] = payload.size();
  h["payload_crc32"] = io::hex32(io::crc32(payload));
  const std::string header = h.dump();

  std::string out(kMagic);
  const std::uint64_t len = io::to_little_endian(header.size());
  out.append(reinterpret_cast<const char*>(&len), 8);
  const std::uint32_t hcrc = io::crc32(header);
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((hcrc >> (8 * k)) & 0xff));
  out += header;
  out += payload;
  return out;
}

namespace {

TrainedModel parse_checkpoint(const std::string& bytes) {
  if (bytes.size() < kMagic.size() + 12 || bytes.compare(0, kMagic.size(), kMagic) != 0)
    throw CheckpointError("checkpoint: bad magic");
  std::uint64_t len;
  std::memcpy(&len, bytes.data() + kMagic.size(), 8);
  len = io::from_little_endian(len);
  std::uint32_t hcrc = 0;
  for (int k = 0; k < 4; ++k)
    hcrc |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[kMagic.size() + 8 + k])) << (8 * k);
  const std::size_t hstart = kMagic.size() + 12;
  if (len > bytes.size() - hstart) throw CheckpointError("checkpoint: truncated header");
  const std::string header = bytes.substr(hstart, len);
  if (io::crc32(header) != hcrc) throw CheckpointError("checkpoint: header checksum mismatch");
  const json h = json::parse(header);
  if (h.at("format_version").get<int>() != kCheckpointVersion)
    throw CheckpointError("checkpoint: unsupported format version " + std::to_string(h.at("format_version").get<int>()));
  const std::string payload = bytes.substr(hstart + len);
  if (payload.size() != h.at("payload_bytes").get<std::size_t>()) throw CheckpointError("checkpoint: truncated payload");
  if (io::hex32(io::crc32(payload)) != h.at("payload_crc32").get<std::string>())
    throw CheckpointError("checkpoint: payload checksum mismatch");

  TrainedModel m;
  m.scenario = h.at("scenario").get<std::string>();
  m.fluid = h.at("fluid").get<bool>();
  m.steps = h.at("steps").get<std::size_t>();
  m.sample_shape = h.at("sample_shape").get<std::vector<std::size_t>>();
  m.param_names = h.at("param_names").get<std::vector<std::string>>();
  m.config = config_from_json(h.at("config"));
  m.input_norm = {nums(h.at("input_norm").at("mean")), nums(h.at("input_norm").at("std"))};
  build_networks(m, {nums(h.at("param_norm").at("mean")), nums(h.at("param_norm").at("std"))});
  m.flow.set_base({nums(h.at("flow_base").at("mean")), nums(h.at("flow_base").at("std"))});
  m.final_loss = loss_from_json(h.at("final_loss"));
  for (const auto& r : h.at("curve")) {
    const auto v = nums(r.at("losses"));
    m.curve.push_back({r.at("step").get<std::size_t>(), {v.at(0), v.at(1), v.at(2), v.at(3), v.at(4)}, v.at(5)});
  }

  const auto& blocks = h.at("blocks");
  std::size_t k = 0, offset = 0;
  m.visit([&](const std::string& name, ad::Tensor& t) {
    if (k >= blocks.size()) throw CheckpointError("checkpoint: missing block " + name);
    const auto& b = blocks[k++];
    if (b.at("name").get<std::string>() != name || b.at("shape").get<ad::Shape>() != t.shape)
      throw CheckpointError("checkpoint: block " + b.at("name").get<std::string>() + " does not match " + name + " " +
                            ad::shape_str(t.shape));
    for (auto& v : t.data) {
      std::uint64_t w;
      std::memcpy(&w, payload.data() + offset, 8);
      v = std::bit_cast<double>(io::from_little_endian(w));
      offset += 8;
    }
  });
  if (k != blocks.size() || offset != payload.size()) throw CheckpointError("checkpoint: extra weight blocks");
  return m;
}

}  // namespace

TrainedModel deserialize_model(const std::string& bytes) {
  try {
    return parse_checkpoint(bytes);
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint: malformed header: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint: invalid contents: ") + e.what());
  }
}

void save_model(const TrainedModel& m, const std::filesystem::path& file) { io::write_atomic(file, serialize_model(m)); }

TrainedModel load_model(const std::filesystem::path& file) {
  if (!std::filesystem::is_regular_file(file)) throw CheckpointError("checkpoint not found: " + file.string());
  return deserialize_model(io::read_file(file));
}

std::string model_checksum(const TrainedModel& m) { return io::hex32(io::crc32(serialize_model(m))); }

std::string training_log_csv(const std::vector<LogRow>& rows) {
  std::vector<std::vector<std::string>> body;
  for (const auto& r : rows)
    body.push_back({std::to_string(r.step), io::format_double(r.train.total), io::format_double(r.train.nf),
                    io::format_double(r.train.rec_lstm), io::format_double(r.train.rec_cnn),
                    io::format_double(r.train.rec_f), io::format_double(r.validation)});
  return io::csv_table({"step", "L_total", "L_NF", "L_rec_lstm", "L_rec_cnn", "L_rec_f", "validation_loss"}, body);
}

}  // namespace sysid::train
