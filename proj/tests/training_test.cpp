#include "sysid/training.hpp"

#include "sysid/io.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

using namespace sysid;

namespace {

sim::Dataset duffing(std::size_t n, std::size_t steps, std::uint64_t seed = 3) {
  return sim::sample_dataset("duffing_K", {.n_samples = n, .steps = steps, .dt = 0.05, .seed = seed});
}

sim::Dataset fields(std::size_t n, std::size_t steps, std::uint64_t seed = 3) {
  return sim::sample_dataset("field_re", {.n_samples = n, .steps = steps, .dt = 0.1, .seed = seed, .height = 16, .width = 16});
}

train::TrainConfig tiny_config() {
  train::TrainConfig c;
  c.learning_rate = 1e-3;
  c.epochs = 2;
  c.batch_size = 3;
  c.lstm_hidden = 4;
  c.flow_width = 8;
  c.flow_layers = 2;
  c.cnn_channels = {2, 2};
  c.seed = 5;
  return c;
}

std::vector<double> flat_params(train::TrainedModel m) {
  std::vector<double> out;
  m.visit([&](const std::string&, ad::Tensor& t) { out.insert(out.end(), t.data.begin(), t.data.end()); });
  return out;
}

double loop_mse(const std::vector<double>& a, const std::vector<double>& b) {
  EXPECT_EQ(a.size(), b.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return acc / static_cast<double>(a.size());
}

std::vector<std::size_t> all_indices(const sim::Dataset& ds) {
  std::vector<std::size_t> idx(ds.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return idx;
}

// Independent recomputation of every term from the sub-model outputs.
void check_decomposition(const train::TrainedModel& m, const train::Batch& b, const train::LossWeights& w) {
  const auto terms = train::compute_losses(m, b, w);
  const auto v = terms.values();

  double rec_cnn = 0.0;
  std::vector<double> seq;
  if (m.fluid) {
    const std::size_t T = m.steps, d = m.cnn.code_dim();
    std::vector<std::vector<double>> codes;
    for (const auto& f : b.frames) {
      const auto code = m.cnn.encode(f);
      rec_cnn += loop_mse(f.data, m.cnn.decode(code).data);
      codes.push_back(code.data);
    }
    rec_cnn /= static_cast<double>(b.frames.size());
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t k = 0; k < b.size; ++k)
        for (std::size_t j = 0; j < d; ++j) seq.push_back(codes[k * T + t][j]);
  } else {
    seq = b.x.data;
  }
  const ad::Tensor seq_t({seq.size() / (m.fluid ? m.cnn.code_dim() : m.sample_shape[1]),
                          m.fluid ? m.cnn.code_dim() : m.sample_shape[1]},
                         seq);
  const auto phi = m.lstm.encode(seq_t, m.steps, b.size);
  const double rec_lstm = loop_mse(seq, m.lstm.decode(phi, m.steps).data);
  const auto lp = m.flow.log_prob(phi);
  double nf = 0.0;
  for (double x : lp.data) nf -= x;
  nf /= static_cast<double>(lp.data.size());
  const double rec_f = loop_mse(phi.data, m.flow.from_params(b.y).data);
  const double total = w.nf * nf + w.rec_lstm * rec_lstm + w.rec_cnn * rec_cnn + w.rec_f * rec_f;

  EXPECT_NEAR(v.nf, nf, 1e-10);
  EXPECT_NEAR(v.rec_lstm, rec_lstm, 1e-10);
  EXPECT_NEAR(v.rec_cnn, rec_cnn, 1e-10);
  EXPECT_NEAR(v.rec_f, rec_f, 1e-10);
  EXPECT_NEAR(v.total, total, 1e-10);
}

// Sum of |grad| per trainable tensor over one pass of the data.
std::vector<std::pair<std::string, double>> gradient_mass(const train::TrainedModel& m, const sim::Dataset& ds,
                                                          const train::LossWeights& w, std::size_t bs) {
  std::vector<std::pair<std::string, double>> mass;
  const auto idx = all_indices(ds);
  for (std::size_t s = 0; s < idx.size(); s += bs) {
    const std::vector<std::size_t> chunk(idx.begin() + s, idx.begin() + std::min(idx.size(), s + bs));
    ad::Tape tape;
    auto bound = train::bind(m, tape);
    const auto terms = train::compute_losses(bound, train::make_batch(m, ds, chunk), w);
    const auto g = tape.backward(terms.total);
    std::size_t k = 0;
    bound.visit([&](const std::string& name, ad::Tensor& t) {
      double a = 0.0;
      for (double x : g.of(t).data) a += std::abs(x);
      if (mass.size() <= k) mass.emplace_back(name, 0.0);
      mass[k++].second += a;
    });
  }
  return mass;
}

}  // namespace

TEST(Training, ConfigValidation) {
  train::TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.learning_rate = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.weights.rec_f = -1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_DOUBLE_EQ(train::TrainConfig{}.learning_rate, 1e-5);
}

TEST(Training, SplitIsDeterministicAndDisjoint) {
  const auto [tr, va] = train::split_indices(100, 0.1, 7);
  EXPECT_EQ(tr.size(), 90u);
  EXPECT_EQ(va.size(), 10u);
  std::vector<int> seen(100, 0);
  for (auto i : tr) ++seen[i];
  for (auto i : va) ++seen[i];
  for (int s : seen) EXPECT_EQ(s, 1);
  EXPECT_EQ(train::split_indices(100, 0.1, 7), train::split_indices(100, 0.1, 7));
  EXPECT_NE(train::split_indices(100, 0.1, 7).second, train::split_indices(100, 0.1, 8).second);
}

TEST(Training, EmptyDatasetRejected) {
  auto ds = duffing(3, 10);
  ds.samples.clear();
  EXPECT_THROW(train::train(ds, tiny_config()), std::invalid_argument);
}

TEST(Training, WrongKindRejected) {
  EXPECT_THROW(train::train_fluid(duffing(3, 10), tiny_config()), std::invalid_argument);
  EXPECT_THROW(train::train_nonfluid(fields(3, 3), tiny_config()), std::invalid_argument);
}

TEST(Training, ZeroWeightsLeaveModelUnchanged) {
  const auto ds = duffing(6, 12);
  auto cfg = tiny_config();
  cfg.weights = {0.0, 0.0, 0.0, 0.0};
  cfg.epochs = 1;
  const auto [tr, va] = train::split_indices(ds.size(), cfg.validation_fraction, cfg.seed);
  const auto init = train::init_model(ds, cfg, tr);
  const auto trained = train::train(ds, cfg);
  EXPECT_GT(trained.curve.back().step, 0u);
  EXPECT_EQ(flat_params(trained), flat_params(init));
}

TEST(Training, NonFluidLossDecomposition) {
  const auto ds = duffing(5, 15);
  auto cfg = tiny_config();
  const auto m = train::init_model(ds, cfg, all_indices(ds));
  check_decomposition(m, train::make_batch(m, ds, {0, 2, 4}), {1.0, 1.0, 1.0, 1.0});
  check_decomposition(m, train::make_batch(m, ds, {1, 3}), {0.3, 2.0, 0.0, 1.7});
}

TEST(Training, FluidLossDecomposition) {
  const auto ds = fields(3, 3);
  const auto m = train::init_model(ds, tiny_config(), all_indices(ds));
  check_decomposition(m, train::make_batch(m, ds, {0, 2}), {1.0, 1.0, 1.0, 1.0});
  check_decomposition(m, train::make_batch(m, ds, {1}), {0.5, 0.25, 2.0, 1.5});
}

TEST(Training, LoggedTotalsAreWeightedSums) {
  const auto ds = duffing(6, 12);
  auto cfg = tiny_config();
  cfg.weights = {0.5, 2.0, 1.0, 3.0};
  const auto m = train::train(ds, cfg);
  ASSERT_EQ(m.curve.size(), cfg.epochs + 1);
  for (const auto& r : m.curve) {
    const auto& l = r.train;
    EXPECT_NEAR(l.total, 0.5 * l.nf + 2.0 * l.rec_lstm + l.rec_cnn + 3.0 * l.rec_f, 1e-10);
  }
}

TEST(Training, EveryNonFluidTensorReceivesGradient) {
  const auto ds = duffing(10, 200);
  train::TrainConfig cfg;
  const auto m = train::init_model(ds, cfg, all_indices(ds));
  for (const auto& [name, g] : gradient_mass(m, ds, cfg.weights, cfg.batch_size)) EXPECT_GT(g, 0.0) << name;
}

TEST(Training, EveryFluidTensorReceivesGradient) {
  const auto ds = sim::sample_dataset("field_re", {.n_samples = 4, .steps = 3, .dt = 0.1, .seed = 2, .height = 48, .width = 96});
  train::TrainConfig cfg;
  const auto m = train::init_model(ds, cfg, all_indices(ds));
  const auto mass = gradient_mass(m, ds, cfg.weights, 2);
  EXPECT_TRUE(std::any_of(mass.begin(), mass.end(), [](const auto& p) { return p.first.starts_with("cnn."); }));
  for (const auto& [name, g] : mass) EXPECT_GT(g, 0.0) << name;
}

TEST(Training, ZeroCnnWeightGivesZeroDecoderGradients) {
  const auto ds = fields(3, 3);
  const auto m = train::init_model(ds, tiny_config(), all_indices(ds));
  std::size_t decoder_tensors = 0;
  for (const auto& [name, g] : gradient_mass(m, ds, {1.0, 1.0, 0.0, 1.0}, 3)) {
    if (name.starts_with("cnn.dec") || name.starts_with("cnn.out")) {
      ++decoder_tensors;
      EXPECT_EQ(g, 0.0) << name;
    }
  }
  EXPECT_GT(decoder_tensors, 0u);
}

TEST(Training, DeterministicChecksums) {
  const auto ds = duffing(6, 12);
  const auto a = train::train(ds, tiny_config());
  const auto b = train::train(ds, tiny_config());
  EXPECT_EQ(train::model_checksum(a), train::model_checksum(b));
  EXPECT_EQ(train::serialize_model(a), train::serialize_model(b));
  auto other = tiny_config();
  other.seed = 6;
  EXPECT_NE(train::model_checksum(train::train(ds, other)), train::model_checksum(a));
}

TEST(Training, CheckpointRoundTrip) {
  const auto ds = fields(3, 3);
  const auto m = train::train(ds, tiny_config());
  const auto dir = std::filesystem::temp_directory_path() / "sysid_ckpt_test";
  std::filesystem::create_directories(dir);
  const auto file = dir / "model.ckpt";
  train::save_model(m, file);
  const auto back = train::load_model(file);
  EXPECT_EQ(train::serialize_model(back), train::serialize_model(m));
  EXPECT_EQ(back.curve.size(), m.curve.size());
  EXPECT_EQ(back.config.cnn_channels, m.config.cnn_channels);
  for (std::size_t i = 0; i < ds.size(); ++i)
    EXPECT_EQ(train::predict(back, ds.samples[i].values), train::predict(m, ds.samples[i].values));
  std::filesystem::remove_all(dir);
}

TEST(Training, CorruptCheckpointsDetected) {
  const auto m = train::train(duffing(6, 12), tiny_config());
  const std::string good = train::serialize_model(m);
  EXPECT_NO_THROW(train::deserialize_model(good));

  std::string payload_flip = good;
  payload_flip[payload_flip.size() - 3] ^= 0x10;
  EXPECT_THROW(train::deserialize_model(payload_flip), train::CheckpointError);

  std::string header_flip = good;
  header_flip[30] ^= 0x01;
  EXPECT_THROW(train::deserialize_model(header_flip), train::CheckpointError);

  EXPECT_THROW(train::deserialize_model(good.substr(0, good.size() - 8)), train::CheckpointError);
  EXPECT_THROW(train::deserialize_model("NOTACKPT" + good.substr(8)), train::CheckpointError);
  EXPECT_THROW(train::load_model("/nonexistent/model.ckpt"), train::CheckpointError);
}

TEST(Training, CheckpointVersionMismatch) {
  const auto m = train::train(duffing(6, 12), tiny_config());
  const std::string bytes = train::serialize_model(m);
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, 8);
  std::string header = bytes.substr(20, len);
  const std::string needle = "\"format_version\":1";
  const auto pos = header.find(needle);
  ASSERT_NE(pos, std::string::npos);
  header.replace(pos, needle.size(), "\"format_version\":2");
  // Re-sealed with a valid header CRC, so only the version check can reject it.
  const std::uint32_t crc = io::crc32(header);
  std::string resealed = bytes.substr(0, 16);
  for (int k = 0; k < 4; ++k) resealed.push_back(static_cast<char>((crc >> (8 * k)) & 0xff));
  resealed += header + bytes.substr(20 + len);
  try {
    train::deserialize_model(resealed);
    FAIL() << "version 2 accepted";
  } catch (const train::CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos) << e.what();
  }
}

TEST(Training, TrainingLogCsv) {
  std::vector<train::LogRow> rows{{0, {1.0, 0.5, 0.25, 0.0, 0.25}, 1.5}, {9, {0.5, 0.25, 0.125, 0.0, 0.125}, 0.75}};
  const auto parsed = io::parse_csv(train::training_log_csv(rows));
  ASSERT_EQ(parsed.size(), 3u);
  EXPECT_EQ(parsed[0], (std::vector<std::string>{"step", "L_total", "L_NF", "L_rec_lstm", "L_rec_cnn", "L_rec_f",
                                                 "validation_loss"}));
  EXPECT_EQ(parsed[2][0], "9");
  EXPECT_EQ(parsed[2][6], "0.75");
}

TEST(Training, FluidOverfitTiny) {
  const auto ds = fields(5, 3, 9);
  auto cfg = tiny_config();
  cfg.epochs = 300;
  cfg.batch_size = 5;
  cfg.patience = 1000;
  cfg.validation_fraction = 0.0;
  cfg.learning_rate = 3e-3;
  const auto m = train::train(ds, cfg);
  const double initial = m.curve.front().train.total;
  EXPECT_LT(m.final_loss.total, 0.1 * initial) << "initial " << initial;
}

TEST(Training, FeaturesRejectBadSamples) {
  const auto ds = duffing(4, 10);
  const auto m = train::init_model(ds, tiny_config(), all_indices(ds));
  EXPECT_THROW(train::extract_features(m, std::vector<double>(7, 0.0)), ad::ShapeError);
  auto bad = ds.samples[0].values;
  bad[3] = NAN;
  EXPECT_THROW(train::predict(m, bad), lstm::NonFiniteInput);
  EXPECT_EQ(train::predict(m, ds.samples[0].values).size(), 1u);
}
