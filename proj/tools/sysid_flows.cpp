// sysid-flows: generate datasets, train, evaluate, infer, sweep, gradcheck.

#include "sysid/config.hpp"
#include "sysid/eval.hpp"
#include "sysid/gradsuite.hpp"
#include "sysid/io.hpp"
#include "sysid/simulators.hpp"
#include "sysid/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

using namespace sysid;
using nlohmann::json;

namespace {

// Failure with a machine-readable kind and its exit code.
struct CliError {
  std::string kind;
  std::string message;
  int code;
};

[[noreturn]] void fail(std::string kind, std::string message, int code) { throw CliError{std::move(kind), std::move(message), code}; }

config::RunConfig base_config(const std::string& path) {
  if (path.empty()) return {};
  try {
    return config::load_ini(path);
  } catch (const config::ConfigError& e) {
    fail("config", e.what(), 3);
  }
}

sim::Dataset read_dataset(const std::string& dir) {
  try {
    return sim::load_dataset(dir);
  } catch (const std::exception& e) {
    fail("dataset", e.what(), 3);
  }
}

train::TrainedModel read_checkpoint(const std::string& file) {
  try {
    return train::load_model(file);
  } catch (const train::CheckpointError& e) {
    fail("checkpoint", e.what(), 4);
  }
}

void print_json(const json& j) { std::cout << j.dump() << std::endl; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"System identification with autoencoders and normalizing flows"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  std::string config_path, scenario, out, dataset_dir, checkpoint, input, loss_weights;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs, batch, n, steps, height, width;
  std::optional<double> lr, dt;
  std::vector<std::string> checkpoints, datasets;

  auto* gen = app.add_subcommand("generate", "simulate a dataset");
  gen->add_option("--scenario", scenario, "scenario name");
  gen->add_option("--config", config_path, "INI config");
  gen->add_option("--n", n, "number of samples");
  gen->add_option("--seed", seed, "dataset seed");
  gen->add_option("--steps", steps, "time steps per sample");
  gen->add_option("--dt", dt, "time step");
  gen->add_option("--height", height, "field grid height");
  gen->add_option("--width", width, "field grid width");
  gen->add_option("--out", out, "output directory")->required();

  auto* tr = app.add_subcommand("train", "train a model on a dataset");
  tr->add_option("--dataset", dataset_dir, "dataset directory")->required();
  tr->add_option("--scenario", scenario, "expected scenario");
  tr->add_option("--config", config_path, "INI config");
  tr->add_option("--seed", seed, "training seed");
  tr->add_option("--epochs", epochs, "epochs");
  tr->add_option("--lr", lr, "learning rate");
  tr->add_option("--batch", batch, "batch size");
  tr->add_option("--loss-weights", loss_weights, "a,b,c,d = NF, rec-lstm, rec-cnn, rec-f");
  tr->add_option("--out", out, "output directory (model.ckpt, training_log.csv)")->required();

  auto* ev = app.add_subcommand("evaluate", "evaluate a checkpoint on a test set");
  ev->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  ev->add_option("--dataset", dataset_dir, "test dataset directory")->required();
  ev->add_option("--out", out, "report directory")->required();

  auto* inf = app.add_subcommand("infer", "predict parameters of one sample file");
  inf->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  inf->add_option("--input", input, "sample file (little-endian float64)")->required();

  auto* sw = app.add_subcommand("sweep", "error per parameter-prior bucket");
  sw->add_option("--checkpoint", checkpoints, "checkpoint per bucket")->required();
  sw->add_option("--dataset", datasets, "test dataset per bucket")->required();
  sw->add_option("--out", out, "output directory")->required();

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every op and pipeline");
  gc->add_option("--seed", seed, "first of three consecutive seeds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << json{{"error", "usage"}, {"message", e.what()}}.dump() << std::endl;
    return 2;
  }

  try {
    if (*gen) {
      auto rc = base_config(config_path);
      if (!scenario.empty()) rc.scenario = scenario;
      if (rc.scenario.empty()) fail("usage", "--scenario is required (flag or [data] scenario)", 2);
      if (n) rc.data.n_samples = *n;
      if (seed) rc.data.seed = *seed;
      if (steps) rc.data.steps = *steps;
      if (dt) rc.data.dt = *dt;
      if (height) rc.data.height = *height;
      if (width) rc.data.width = *width;
      sim::Dataset ds;
      try {
        ds = sim::sample_dataset(rc.scenario, rc.data);
      } catch (const sim::UnknownScenario& e) {
        fail("scenario", e.what(), 2);
      }
      sim::save_dataset(ds, out);
      sim::export_params_csv(ds, std::filesystem::path(out) / "params.csv");
      print_json({{"dataset", out},
                  {"scenario", ds.scenario},
                  {"samples", ds.size()},
                  {"manifest_crc32", io::hex32(io::crc32(io::read_file(std::filesystem::path(out) / "manifest.json")))}});
    } else if (*tr) {
      auto rc = base_config(config_path);
      const sim::Dataset ds = read_dataset(dataset_dir);
      if (!scenario.empty() && scenario != ds.scenario)
        fail("scenario", "dataset scenario is " + ds.scenario + ", requested " + scenario, 2);
      auto& cfg = rc.train;
      cfg.scenario = ds.scenario;
      if (seed) cfg.seed = *seed;
      if (epochs) cfg.epochs = *epochs;
      if (lr) cfg.learning_rate = *lr;
      if (batch) cfg.batch_size = *batch;
      if (!loss_weights.empty()) {
        try {
          cfg.weights = config::parse_loss_weights(loss_weights);
        } catch (const config::ConfigError& e) {
          fail("usage", e.what(), 2);
        }
      }
      try {
        cfg.validate();
      } catch (const std::invalid_argument& e) {
        fail("config", e.what(), 3);
      }
      train::TrainedModel m;
      try {
        m = train::train(ds, cfg);
      } catch (const train::TrainingDiverged& e) {
        fail("diverged", e.what(), 5);
      }
      const std::filesystem::path dir(out);
      std::filesystem::create_directories(dir);
      train::save_model(m, dir / "model.ckpt");
      io::write_atomic(dir / "training_log.csv", train::training_log_csv(m.curve));
      print_json({{"checkpoint", (dir / "model.ckpt").string()},
                  {"checksum", train::model_checksum(m)},
                  {"final_loss", m.final_loss.total},
                  {"logged_rows", m.curve.size()}});
    } else if (*ev) {
      const auto m = read_checkpoint(checkpoint);
      const auto ds = read_dataset(dataset_dir);
      eval::EvalReport r;
      try {
        r = eval::evaluate(m, ds);
      } catch (const eval::EvalError& e) {
        fail("mismatch", e.what(), 2);
      }
      eval::write_report(r, out);
      json agg = json::object();
      for (const auto& a : r.aggregates)
        agg[a.name] = {{"mean_abs_percent_error", a.mean_abs_percent_error}, {"ks_statistic", a.ks_statistic}};
      print_json({{"report", out}, {"rows", r.rows.size()}, {"model_checksum", r.model_checksum}, {"aggregates", agg}});
    } else if (*inf) {
      const auto m = read_checkpoint(checkpoint);
      std::vector<double> values;
      try {
        values = sim::read_f64(input);
      } catch (const std::exception& e) {
        fail("input", e.what(), 3);
      }
      std::vector<double> p;
      try {
        p = train::predict(m, values);
      } catch (const std::exception& e) {
        fail("input", e.what(), 3);
      }
      json params = json::object();
      for (std::size_t j = 0; j < p.size(); ++j) params[m.param_names[j]] = p[j];
      print_json({{"scenario", m.scenario}, {"params", params}});
    } else if (*sw) {
      if (checkpoints.size() != datasets.size())
        fail("mismatch", "bucket mismatch: " + std::to_string(checkpoints.size()) + " checkpoints, " +
                             std::to_string(datasets.size()) + " datasets", 2);
      std::vector<train::TrainedModel> models;
      std::vector<sim::Dataset> sets;
      for (const auto& c : checkpoints) models.push_back(read_checkpoint(c));
      for (const auto& d : datasets) sets.push_back(read_dataset(d));
      std::vector<const train::TrainedModel*> mp;
      std::vector<const sim::Dataset*> dp;
      for (const auto& m : models) mp.push_back(&m);
      for (const auto& d : sets) dp.push_back(&d);
      std::vector<eval::SweepRow> rows;
      try {
        rows = eval::reynolds_sweep(mp, dp);
      } catch (const eval::EvalError& e) {
        fail("mismatch", e.what(), 2);
      }
      eval::write_sweep(rows, out);
      json j = json::array();
      for (const auto& r : rows) j.push_back({{"prior_mean", r.prior_mean}, {"mean_abs_percent_error", r.mean_abs_percent_error}});
      print_json({{"sweep", out}, {"buckets", j}});
    } else if (*gc) {
      const std::uint64_t s0 = seed.value_or(1);
      bool ok = true;
      for (const auto& c : ad::gradcheck_suite({s0, s0 + 1, s0 + 2})) {
        const bool pass = c.error < 1e-4;
        ok = ok && pass;
        std::printf("%s %s seed=%llu rel_err=%.3e%s\n", pass ? "PASS" : "FAIL", c.name.c_str(),
                    static_cast<unsigned long long>(c.seed), c.error, c.directional ? " (directional)" : "");
      }
      return ok ? 0 : 1;
    }
  } catch (const CliError& e) {
    std::cerr << json{{"error", e.kind}, {"message", e.message}}.dump() << std::endl;
    return e.code;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", "internal"}, {"message", e.what()}}.dump() << std::endl;
    return 1;
  }
  return 0;
}
