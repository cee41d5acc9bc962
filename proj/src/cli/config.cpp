#include "cli/config.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "itdt/error.hpp"
#include "text_util.hpp"

namespace itdt::cli {

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"train", "", "training CSV (attack-free) for identify"},
      {"validation", "", "attack-free CSV for calibrate"},
      {"test", "", "labeled CSV scored by pipeline and eval"},
      {"stream", "", "comma-separated CSV paths for detect; '-' reads standard input"},
      {"model", "model.itdt-model", "model file written by identify, updated by calibrate"},
      {"output_dir", "out", "directory for reports and score files"},
      {"scores", "", "score CSV (detect output for a single stream, eval input)"},
      {"report", "", "JSON report path (defaults inside output_dir)"},
      {"timestamp_column", "timestamp", "timestamp column: integer step or ISO-8601"},
      {"inputs", "", "comma-separated input (u) columns"},
      {"outputs", "", "comma-separated output (y) columns"},
      {"label_column", "label", "optional 0/1 attack label column"},
      {"horizon", "60", "N4SID block rows i"},
      {"max_order", "30", "largest admissible model order"},
      {"order", "gap", "order strategy: gap | energy:<fraction> | fixed:<n>"},
      {"noise_floor", "1.5", "singular values below this multiple of the noise level are ignored"},
      {"standardize", "true", "z-score channels before identification"},
      {"ljung_box_lags", "20", "lags in the residual whiteness table"},
      {"window", "60", "sliding window W"},
      {"alpha", "0.01", "target false-alarm rate for the threshold"},
      {"epsilon", "1e-4", "Tikhonov term added to the window covariance"},
      {"warmup", "60", "initial steps excluded from the window"},
      {"consecutive", "1", "crossings in a row required to alarm"},
      {"reference", "theoretical", "reference covariance: theoretical | empirical"},
      {"bootstrap", "100", "bootstrap resamples for the threshold CI (0 = none)"},
      {"sweep_windows", "", "comma-separated W candidates for a window sweep during calibrate"},
      {"sweep_data", "", "labeled CSV used to score the window sweep"},
      {"seed", "", "master seed; required by every randomized command"},
      {"period", "", "sample period in seconds (default: median timestamp step)"},
      {"folds", "5", "chronological folds for eval"},
      {"sim.n", "4", "simulated plant states"},
      {"sim.m", "2", "simulated plant inputs"},
      {"sim.p", "3", "simulated plant outputs"},
      {"sim.rho", "0.9", "spectral radius of the simulated A"},
      {"sim.snr_db", "20", "output SNR in dB"},
      {"sim.plant_seed", "1", "seed for the plant matrices"},
      {"sim.length", "10000", "steps written by simulate"},
      {"sim.input", "excitation", "input policy: excitation | zero"},
      {"sim.attack", "none", "none | bias | covariance | ramp | long_ramp"},
      {"sim.channels", "0", "attacked output channels (0-based)"},
      {"sim.start", "5000", "attack onset step"},
      {"sim.end", "6000", "attack end step (exclusive; bias and covariance)"},
      {"sim.magnitude", "5", "bias in innovation sigma"},
      {"sim.theta", "0.6", "mixing angle for the covariance attack"},
      {"sim.ramp_stages", "100:2,100:0", "ramp stages duration:slope (sigma per 100 steps)"},
      {"sim.output", "", "CSV written by simulate (default output_dir/sim.csv)"},
      {"sim.truth", "", "optional path for the generating model (uncalibrated)"},
      {"pipeline.train_length", "50000", "training steps simulated by pipeline"},
      {"pipeline.validation_length", "20000", "calibration steps simulated by pipeline"},
      {"pipeline.test_length", "20000", "labeled test steps simulated by pipeline"},
      {"bench.steps", "100000", "timed detector steps"},
      {"bench.p", "", "outputs of the synthetic bench model (default: the model file's)"},
      {"bench.n", "12", "states of the synthetic bench model"},
  };
  return keys;
}

namespace {

const ConfigKey* find_key(const std::string& name) {
  for (const auto& k : config_keys()) {
    if (name == k.name) return &k;
  }
  return nullptr;
}

[[noreturn]] void bad(const std::string& msg) { throw Error(ErrorCode::kInvalidArgument, msg); }

}  // namespace

Config::Config() {
  for (const auto& k : config_keys()) values_[k.name] = k.default_value;
}

Config Config::parse(std::string_view text, const std::string& origin) {
  Config cfg;
  std::map<std::string, int> seen;
  long line_no = 0;
  for (auto line : text::split(text, '\n')) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string_view::npos) line = line.substr(0, hash);
    line = text::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      bad(origin + ":" + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key(text::trim(line.substr(0, eq)));
    if (++seen[key] > 1) bad(origin + ":" + std::to_string(line_no) + ": repeated key '" + key + "'");
    try {
      cfg.set(key, std::string(text::trim(line.substr(eq + 1))));
    } catch (const Error& e) {
      bad(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cfg;
}

Config Config::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) bad("cannot open config '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  Config cfg = parse(buf.str(), path);
  cfg.base_dir_ = std::filesystem::path(path).parent_path().string();
  return cfg;
}

void Config::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) bad("override '" + assignment + "' is not key=value");
  set(std::string(text::trim(std::string_view(assignment).substr(0, eq))),
      std::string(text::trim(std::string_view(assignment).substr(eq + 1))));
}

void Config::set(const std::string& key, const std::string& value) {
  if (!find_key(key)) bad("unknown config key '" + key + "'");
  values_[key] = value;
}

bool Config::has(const std::string& key) const {
  auto it = values_.find(key);
  return it != values_.end() && !it->second.empty();
}

std::string Config::str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) bad("unknown config key '" + key + "'");
  return it->second;
}

std::string Config::required(const std::string& key) const {
  if (!has(key)) bad("config key '" + key + "' is required");
  return str(key);
}

double Config::real(const std::string& key) const {
  const auto v = text::parse_double(required(key));
  if (!v) bad("config key '" + key + "' must be a number, got '" + str(key) + "'");
  return *v;
}

long Config::integer(const std::string& key) const {
  const auto v = text::parse_long(required(key));
  if (!v) bad("config key '" + key + "' must be an integer, got '" + str(key) + "'");
  return *v;
}

bool Config::flag(const std::string& key) const {
  const auto v = required(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  bad("config key '" + key + "' must be true or false, got '" + v + "'");
}

std::vector<std::string> Config::list(const std::string& key) const {
  std::vector<std::string> out;
  if (!has(key)) return out;
  for (auto item : text::split(str(key), ',')) {
    item = text::trim(item);
    if (item.empty()) bad("config key '" + key + "' has an empty list item");
    out.emplace_back(item);
  }
  return out;
}

std::vector<long> Config::int_list(const std::string& key) const {
  std::vector<long> out;
  for (const auto& item : list(key)) {
    const auto v = text::parse_long(item);
    if (!v) bad("config key '" + key + "' must list integers, got '" + item + "'");
    out.push_back(*v);
  }
  return out;
}

std::uint64_t Config::seed(const std::string& key) const {
  if (!has(key)) bad("config key '" + key + "' is required: randomized commands need an explicit seed");
  const auto v = integer(key);
  if (v < 0) bad("config key '" + key + "' must be nonnegative");
  return static_cast<std::uint64_t>(v);
}

std::string Config::resolve(const std::string& p) const {
  if (p == "-" || base_dir_.empty() || std::filesystem::path(p).is_absolute()) return p;
  return (std::filesystem::path(base_dir_) / p).string();
}

std::string Config::path(const std::string& key) const { return resolve(required(key)); }

void Config::print(std::ostream& out) const {
  for (const auto& k : config_keys()) {
    out << "# " << k.help << '\n' << k.name << " = " << values_.at(k.name) << '\n';
  }
}

}  // namespace itdt::cli
