#include "sysid/eval.hpp"

#include "sysid/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <map>
#include <sstream>
#include <thread>

namespace sysid::eval {

using nlohmann::json;

namespace {

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Sample standard deviation (n − 1); 0 for fewer than two values.
double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::string fmt(double v) { return io::format_double(v); }

std::string dat_line(std::initializer_list<double> cols) {
  std::ostringstream os;
  bool first = true;
  for (double c : cols) {
    if (!first) os << ' ';
    os << fmt(c);
    first = false;
  }
  os << '\n';
  return os.str();
}

// Shared-bin histogram of truth and prediction: bin center, true count, predicted count.
std::string distribution_dat(const std::vector<double>& truth, const std::vector<double>& pred, std::size_t bins) {
  std::string out = "# bin_center true_count predicted_count\n";
  if (truth.empty()) return out;
  double lo = std::min(*std::min_element(truth.begin(), truth.end()), *std::min_element(pred.begin(), pred.end()));
  double hi = std::max(*std::max_element(truth.begin(), truth.end()), *std::max_element(pred.begin(), pred.end()));
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double w = (hi - lo) / static_cast<double>(bins);
  std::vector<std::size_t> ct(bins, 0), cp(bins, 0);
  auto bin = [&](double x) { return std::min(bins - 1, static_cast<std::size_t>((x - lo) / w)); };
  for (double x : truth) ++ct[bin(x)];
  for (double x : pred) ++cp[bin(x)];
  for (std::size_t b = 0; b < bins; ++b)
    out += dat_line({lo + (static_cast<double>(b) + 0.5) * w, static_cast<double>(ct[b]), static_cast<double>(cp[b])});
  return out;
}

}  // namespace

double ks_statistic(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw EvalError("ks_statistic: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

std::vector<ParamAggregate> aggregate(const std::vector<EvalRow>& rows, const std::vector<std::string>& names,
                                      const std::vector<sim::ParamPrior>& priors) {
  std::vector<ParamAggregate> out;
  for (std::size_t j = 0; j < names.size(); ++j) {
    std::vector<double> err, pred, truth;
    for (const auto& r : rows) {
      err.push_back(r.percent_error.at(j));
      pred.push_back(r.predicted.at(j));
      truth.push_back(r.truth.at(j));
    }
    ParamAggregate a;
    a.name = names[j];
    a.mean_abs_percent_error = mean_of(err);
    a.predicted_mean = mean_of(pred);
    a.predicted_std = std_of(pred);
    a.true_mean = mean_of(truth);
    a.true_std = std_of(truth);
    if (j < priors.size()) {
      a.prior_mean = priors[j].mean;
      a.prior_std = priors[j].std;
    }
    a.ks_statistic = rows.empty() ? 0.0 : ks_statistic(pred, truth);
    out.push_back(a);
  }
  return out;
}

std::size_t eval_threads() {
  if (const char* env = std::getenv("SYSID_FLOWS_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

EvalReport evaluate(const train::TrainedModel& model, const sim::Dataset& testset) {
  if (testset.scenario != model.scenario)
    throw EvalError("scenario mismatch: model " + model.scenario + ", dataset " + testset.scenario);
  if (testset.sample_shape != model.sample_shape)
    throw EvalError("sample shape mismatch: model " + ad::shape_str(model.sample_shape) + ", dataset " +
                    ad::shape_str(testset.sample_shape));
  if (testset.size() == 0) throw EvalError("empty test set");

  EvalReport r;
  r.scenario = model.scenario;
  r.model_checksum = train::model_checksum(model);
  r.param_names = model.param_names;
  r.rows.resize(testset.size());

  const std::size_t n = testset.size();
  const std::size_t workers = std::min(eval_threads(), n);
  std::vector<std::exception_ptr> errors(workers);
  auto work = [&](std::size_t w) {
    try {
      for (std::size_t i = w; i < n; i += workers) {
        EvalRow row;
        row.sample_id = testset.samples[i].index;
        row.truth = testset.targets(i);
        row.predicted = train::predict(model, testset.samples[i].values);
        for (std::size_t j = 0; j < row.truth.size(); ++j)
          row.percent_error.push_back(100.0 * std::abs(row.predicted[j] - row.truth[j]) / std::abs(row.truth[j]));
        r.rows[i] = std::move(row);
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::stable_sort(r.rows.begin(), r.rows.end(), [](const EvalRow& a, const EvalRow& b) { return a.sample_id < b.sample_id; });
  r.aggregates = aggregate(r.rows, r.param_names, testset.priors);
  return r;
}

std::vector<SweepRow> reynolds_sweep(const std::vector<const train::TrainedModel*>& models,
                                     const std::vector<const sim::Dataset*>& testsets) {
  if (models.empty() || models.size() != testsets.size())
    throw EvalError("bucket mismatch: " + std::to_string(models.size()) + " models, " + std::to_string(testsets.size()) +
                    " test sets");
  std::vector<SweepRow> out;
  for (std::size_t k = 0; k < models.size(); ++k) {
    const EvalReport r = evaluate(*models[k], *testsets[k]);
    const auto& prior = testsets[k]->priors.at(0);
    out.push_back({prior.mean, prior.std, r.aggregates.at(0).mean_abs_percent_error, r.rows.size()});
  }
  return out;
}

std::string report_csv(const EvalReport& r) {
  std::vector<std::string> header{"sample_id"};
  for (const auto& p : r.param_names) header.push_back("true_" + p);
  for (const auto& p : r.param_names) header.push_back("pred_" + p);
  for (const auto& p : r.param_names) header.push_back("pct_err_" + p);
  std::vector<std::vector<std::string>> rows;
  for (const auto& row : r.rows) {
    std::vector<std::string> line{std::to_string(row.sample_id)};
    for (double v : row.truth) line.push_back(fmt(v));
    for (double v : row.predicted) line.push_back(fmt(v));
    for (double v : row.percent_error) line.push_back(fmt(v));
    rows.push_back(std::move(line));
  }
  return io::csv_table(header, rows);
}

std::string report_json(const EvalReport& r) {
  json j;
  j["scenario"] = r.scenario;
  j["model_checksum"] = r.model_checksum;
  j["param_names"] = r.param_names;
  j["samples"] = r.rows.size();
  j["aggregates"] = json::array();
  for (const auto& a : r.aggregates)
    j["aggregates"].push_back({{"name", a.name},
                               {"mean_abs_percent_error", a.mean_abs_percent_error},
                               {"predicted_mean", a.predicted_mean},
                               {"predicted_std", a.predicted_std},
                               {"true_mean", a.true_mean},
                               {"true_std", a.true_std},
                               {"prior_mean", a.prior_mean},
                               {"prior_std", a.prior_std},
                               {"ks_statistic", a.ks_statistic}});
  j["rows"] = json::array();
  for (const auto& row : r.rows)
    j["rows"].push_back(
        {{"sample_id", row.sample_id}, {"true", row.truth}, {"predicted", row.predicted}, {"percent_error", row.percent_error}});
  return j.dump(2) + "\n";
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::vector<std::vector<std::string>> lines;
  for (const auto& r : rows)
    lines.push_back({fmt(r.prior_mean), fmt(r.prior_std), fmt(r.mean_abs_percent_error), std::to_string(r.samples)});
  return io::csv_table({"prior_mean", "prior_std", "mean_abs_percent_error", "samples"}, lines);
}

std::string figure_stem(const std::string& scenario, const std::string& param) {
  static const std::map<std::string, std::string> figs{{"duffing_K", "fig6"},    {"duffing_M", "fig6"},
                                                       {"duffing_mu", "fig6"},   {"lorenz_sigma", "fig7"},
                                                       {"lorenz_rho", "fig7"},   {"lorenz_joint", "fig8"},
                                                       {"field_re", "fig9"}};
  const auto it = figs.find(scenario);
  std::string p = lower(param);
  if (p == "re_param") p = "re";
  return (it == figs.end() ? scenario : it->second) + "_" + p;
}

void write_report(const EvalReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  io::write_atomic(dir / "report.csv", report_csv(r));
  io::write_atomic(dir / "report.json", report_json(r));
  for (std::size_t j = 0; j < r.param_names.size(); ++j) {
    const std::string stem = figure_stem(r.scenario, r.param_names[j]);
    std::string pred = "# true predicted percent_error\n";
    std::vector<double> truth, p;
    for (const auto& row : r.rows) {
      pred += dat_line({row.truth[j], row.predicted[j], row.percent_error[j]});
      truth.push_back(row.truth[j]);
      p.push_back(row.predicted[j]);
    }
    io::write_atomic(dir / (stem + "_predictions.dat"), pred);
    io::write_atomic(dir / (stem + "_distribution.dat"), distribution_dat(truth, p, 20));
  }
}

void write_sweep(const std::vector<SweepRow>& rows, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  io::write_atomic(dir / "sweep.csv", sweep_csv(rows));
  std::string dat = "# prior_mean mean_abs_percent_error\n";
  for (const auto& r : rows) dat += dat_line({r.prior_mean, r.mean_abs_percent_error});
  io::write_atomic(dir / "fig13_sweep.dat", dat);
}

}  // namespace sysid::eval
