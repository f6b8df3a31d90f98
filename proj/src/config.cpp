#include "sysid/config.hpp"

#include "sysid/io.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <set>
#include <sstream>

namespace sysid::config {

namespace pt = boost::property_tree;

namespace {

std::vector<std::string> split(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    out.push_back(b == std::string::npos ? "" : item.substr(b, e - b + 1));
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    return io::parse_double(v);
  } catch (const std::exception&) {
    throw ConfigError(key + ": not a number: '" + v + "'");
  }
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long x = 0;
  try {
    if (v.empty() || v[0] == '-') throw std::invalid_argument(v);
    x = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw ConfigError(key + ": not a non-negative integer: '" + v + "'");
  return static_cast<std::size_t>(x);
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": not a boolean: '" + v + "'");
}

}  // namespace

train::LossWeights parse_loss_weights(const std::string& text) {
  const auto parts = split(text);
  if (parts.size() != 4) throw ConfigError("loss_weights: expected 4 comma-separated values, got '" + text + "'");
  train::LossWeights w{to_double("loss_weights", parts[0]), to_double("loss_weights", parts[1]),
                       to_double("loss_weights", parts[2]), to_double("loss_weights", parts[3])};
  for (double v : {w.nf, w.rec_lstm, w.rec_cnn, w.rec_f})
    if (!(v >= 0.0)) throw ConfigError("loss_weights: weights must be >= 0");
  return w;
}

RunConfig parse_ini(const std::string& text) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("ini syntax: ") + e.what());
  }
  RunConfig rc;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ConfigError("key outside a section: " + section);
    for (const auto& [key, node] : body) {
      const std::string v = node.get_value<std::string>();
      const std::string k = section + "." + key;
      if (section == "data") {
        if (key == "scenario") rc.scenario = v;
        else if (key == "n") rc.data.n_samples = to_size(k, v);
        else if (key == "steps") rc.data.steps = to_size(k, v);
        else if (key == "dt") rc.data.dt = to_double(k, v);
        else if (key == "height") rc.data.height = to_size(k, v);
        else if (key == "width") rc.data.width = to_size(k, v);
        else if (key == "seed") rc.data.seed = to_size(k, v);
        else throw ConfigError("unknown key " + k);
      } else if (section == "train") {
        auto& t = rc.train;
        if (key == "learning_rate") t.learning_rate = to_double(k, v);
        else if (key == "epochs") t.epochs = to_size(k, v);
        else if (key == "batch_size") t.batch_size = to_size(k, v);
        else if (key == "loss_weights") t.weights = parse_loss_weights(v);
        else if (key == "seed") t.seed = to_size(k, v);
        else if (key == "patience") t.patience = to_size(k, v);
        else if (key == "validation_fraction") t.validation_fraction = to_double(k, v);
        else if (key == "log_every") t.log_every = to_size(k, v);
        else if (key == "lstm_hidden") t.lstm_hidden = to_size(k, v);
        else if (key == "encoder_layers") t.encoder_layers = to_size(k, v);
        else if (key == "decoder_layers") t.decoder_layers = to_size(k, v);
        else if (key == "padding") t.padding = to_size(k, v);
        else if (key == "flow_layers") t.flow_layers = to_size(k, v);
        else if (key == "flow_width") t.flow_width = to_size(k, v);
        else if (key == "detach_phi_nll") t.detach_phi_nll = to_bool(k, v);
        else if (key == "detach_flow_rec_f") t.detach_flow_rec_f = to_bool(k, v);
        else if (key == "cnn_channels") {
          t.cnn_channels.clear();
          for (const auto& c : split(v)) t.cnn_channels.push_back(to_size(k, c));
        } else {
          throw ConfigError("unknown key " + k);
        }
      } else {
        throw ConfigError("unknown section [" + section + "]");
      }
    }
  }
  rc.train.scenario = rc.scenario;
  try {
    rc.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return rc;
}

RunConfig load_ini(const std::filesystem::path& file) {
  if (!std::filesystem::is_regular_file(file)) throw ConfigError("config not found: " + file.string());
  return parse_ini(io::read_file(file));
}

}  // namespace sysid::config
