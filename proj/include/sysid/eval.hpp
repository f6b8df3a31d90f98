#pragma once

// Evaluation of trained models on test sets, aggregate statistics, report
// files and plot data.

#include "sysid/simulators.hpp"
#include "sysid/training.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace sysid::eval {

struct EvalRow {
  std::size_t sample_id = 0;
  std::vector<double> truth;
  std::vector<double> predicted;
  std::vector<double> percent_error;  // 100·|ŷ − y| / |y|
};

struct ParamAggregate {
  std::string name;
  double mean_abs_percent_error = 0.0;
  double predicted_mean = 0.0, predicted_std = 0.0;
  double true_mean = 0.0, true_std = 0.0;
  double prior_mean = 0.0, prior_std = 0.0;
  double ks_statistic = 0.0;  // predicted vs true
};

struct EvalReport {
  std::string scenario;
  std::string model_checksum;
  std::vector<std::string> param_names;
  std::vector<EvalRow> rows;  // ordered by sample id
  std::vector<ParamAggregate> aggregates;
};

class EvalError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Two-sample Kolmogorov–Smirnov statistic sup|F_a − F_b|.
double ks_statistic(std::vector<double> a, std::vector<double> b);

// Rebuilds the aggregates from the rows (priors from the report's existing entries).
std::vector<ParamAggregate> aggregate(const std::vector<EvalRow>& rows, const std::vector<std::string>& names,
                                      const std::vector<sim::ParamPrior>& priors);

// Threads: SYSID_FLOWS_THREADS if set (≥ 1), else hardware concurrency.
std::size_t eval_threads();

EvalReport evaluate(const train::TrainedModel& model, const sim::Dataset& testset);

struct SweepRow {
  double prior_mean = 0.0;
  double prior_std = 0.0;
  double mean_abs_percent_error = 0.0;  // first varying parameter
  std::size_t samples = 0;
};

// One (model, testset) pair per prior bucket.
std::vector<SweepRow> reynolds_sweep(const std::vector<const train::TrainedModel*>& models,
                                     const std::vector<const sim::Dataset*>& testsets);

std::string report_csv(const EvalReport& r);
std::string report_json(const EvalReport& r);
std::string sweep_csv(const std::vector<SweepRow>& rows);

// Plot-data file stem for a scenario parameter, e.g. "fig6_k".
std::string figure_stem(const std::string& scenario, const std::string& param);

// report.csv, report.json and <stem>_predictions.dat / <stem>_distribution.dat
// per parameter. Every file is written atomically.
void write_report(const EvalReport& r, const std::filesystem::path& dir);
// sweep.csv and fig13_sweep.dat.
void write_sweep(const std::vector<SweepRow>& rows, const std::filesystem::path& dir);

}  // namespace sysid::eval
