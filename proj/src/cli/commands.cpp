#include "cli/commands.hpp"

#include <sys/utsname.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "cli/csv.hpp"
#include "itdt/calibrate.hpp"
#include "itdt/eval.hpp"
#include "itdt/kalman.hpp"
#include "itdt/model.hpp"
#include "itdt/simulate.hpp"
#include "itdt/sysid.hpp"
#include "text_util.hpp"

namespace itdt::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::kParseError:
    case ErrorCode::kVersionMismatch:
    case ErrorCode::kNonFiniteInput:
    case ErrorCode::kInsufficientData:
    case ErrorCode::kEmptySet:
    case ErrorCode::kInvalidIterations:
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kInvalidMixing:
    case ErrorCode::kInvalidStages:
    case ErrorCode::kLengthMismatch:
    case ErrorCode::kInvalidK:
    case ErrorCode::kAllZeroDifferences:
    case ErrorCode::kTooFewPairs:
      return kExitInput;
    default:
      return kExitNumerical;
  }
}

namespace {

[[noreturn]] void input_error(const std::string& msg) {
  throw Error(ErrorCode::kInvalidArgument, msg);
}

ColumnRoles roles_from_config(const Config& cfg) {
  ColumnRoles roles;
  roles.timestamp = cfg.required("timestamp_column");
  roles.inputs = cfg.list("inputs");
  roles.outputs = cfg.list("outputs");
  roles.label = cfg.str("label_column");
  if (roles.outputs.empty()) input_error("config key 'outputs' must name at least one column");
  return roles;
}

ColumnRoles roles_from_model(const Config& cfg, const Provenance& prov) {
  ColumnRoles roles;
  roles.timestamp = cfg.required("timestamp_column");
  roles.inputs = prov.input_columns;
  roles.outputs = prov.output_columns;
  roles.label = cfg.str("label_column");
  return roles;
}

std::string report_path(const Config& cfg, const std::string& fallback) {
  if (cfg.has("report")) return cfg.path("report");
  return (fs::path(cfg.resolve(cfg.str("output_dir"))) / fallback).string();
}

void ensure_parent(const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

void write_json(const std::string& path, const json& doc) {
  ensure_parent(path);
  std::ofstream out(path);
  if (!out) input_error("cannot write '" + path + "'");
  out << doc.dump(2) << '\n';
}

std::vector<double> to_vector(const Vector& v) { return {v.data(), v.data() + v.size()}; }

Stream scaled_stream(const Dataset& data, const Provenance& prov) {
  Stream s;
  s.U = prov.input_scaling.empty() ? data.U : scale_rows(prov.input_scaling, data.U);
  s.Y = prov.output_scaling.empty() ? data.Y : scale_rows(prov.output_scaling, data.Y);
  return s;
}

void reject_labeled_attacks(const Dataset& data, const std::string& path) {
  for (std::size_t t = 0; t < data.labels.size(); ++t) {
    if (data.labels[t]) {
      input_error(path + ": row " + std::to_string(t + 1) +
                  " is labeled as an attack; calibration data must be attack-free");
    }
  }
}

double checked_alpha(const Config& cfg) {
  const double alpha = cfg.real("alpha");
  if (!(alpha > 0.0 && alpha < 1.0)) {
    input_error("invalid rate: alpha must lie in (0, 1), got " + cfg.str("alpha"));
  }
  return alpha;
}

DetectorConfig detector_config(const Config& cfg) {
  DetectorConfig dc;
  dc.window = static_cast<int>(cfg.integer("window"));
  dc.epsilon = cfg.real("epsilon");
  dc.warmup = static_cast<int>(cfg.integer("warmup"));
  dc.consecutive = static_cast<int>(cfg.integer("consecutive"));
  dc.check();
  return dc;
}

DetectorConfig detector_config(const Provenance& prov) {
  if (!prov.tau) input_error("model is not calibrated (no threshold); run calibrate first");
  DetectorConfig dc;
  dc.tau = *prov.tau;
  dc.window = prov.window.value_or(dc.window);
  dc.epsilon = prov.epsilon.value_or(dc.epsilon);
  dc.warmup = prov.warmup.value_or(dc.warmup);
  dc.consecutive = prov.consecutive.value_or(dc.consecutive);
  dc.check();
  return dc;
}

ReferenceKind reference_kind(const Config& cfg) {
  const auto kind = cfg.required("reference");
  if (kind == "theoretical") return ReferenceKind::kTheoretical;
  if (kind == "empirical") return ReferenceKind::kEmpirical;
  input_error("reference must be 'theoretical' or 'empirical', got '" + kind + "'");
}

ReferenceDistribution reference_from(const ModelFile& file) {
  if (file.provenance.reference == "empirical") {
    if (!file.provenance.reference_sigma) {
      input_error("model declares an empirical reference but stores no covariance");
    }
    return ReferenceDistribution(*file.provenance.reference_sigma);
  }
  return ReferenceDistribution(file.filter.sigma());
}

OrderStrategy order_strategy(const std::string& spec) {
  if (spec == "gap") return OrderStrategy::max_gap_ratio();
  const auto colon = spec.find(':');
  const auto head = spec.substr(0, colon);
  const auto arg = colon == std::string::npos ? std::string() : spec.substr(colon + 1);
  if (head == "energy") {
    const auto f = text::parse_double(arg);
    if (!f || !(*f > 0.0 && *f <= 1.0)) input_error("order energy fraction must be in (0, 1]");
    return OrderStrategy::energy_threshold(*f);
  }
  if (head == "fixed") {
    const auto n = text::parse_long(arg);
    if (!n || *n < 1) input_error("order fixed:<n> needs n >= 1");
    return OrderStrategy::fixed_order(static_cast<int>(*n));
  }
  input_error("order must be gap, energy:<fraction> or fixed:<n>, got '" + spec + "'");
}

double median_period(const std::vector<double>& ts) {
  if (ts.size() < 2) return 1.0;
  std::vector<double> d(ts.size() - 1);
  for (std::size_t k = 1; k < ts.size(); ++k) d[k - 1] = ts[k] - ts[k - 1];
  std::nth_element(d.begin(), d.begin() + static_cast<long>(d.size() / 2), d.end());
  return d[d.size() / 2];
}

void check_timestamps(const Dataset& data, const std::string& path) {
  for (std::size_t t = 1; t < data.timestamps.size(); ++t) {
    if (!(data.timestamps[t] > data.timestamps[t - 1])) {
      input_error(path + ": row " + std::to_string(t + 1) + ": timestamp '" +
                  data.timestamp_text[t] + "' does not increase");
    }
  }
}

std::string format_fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

// ---------------------------------------------------------------- identify

json identification_json(const IdentificationResult& r, const Provenance& prov) {
  json doc;
  doc["order"] = r.order;
  doc["low_confidence"] = r.low_confidence;
  doc["horizon"] = prov.horizon;
  doc["stabilized"] = r.stabilized;
  doc["noise_floor"] = r.noise_floor;
  doc["hankel_singular_values"] = to_vector(r.hankel_singular_values);
  json fit = json::object();
  for (std::size_t k = 0; k < prov.output_columns.size(); ++k) {
    fit[prov.output_columns[k]] = r.fit_score(static_cast<Eigen::Index>(k));
  }
  doc["fit"] = fit;
  json lb = json::array();
  const auto& d = r.residual_diagnostics;
  for (std::size_t k = 0; k < d.lags.size(); ++k) {
    lb.push_back({{"lag", d.lags[k]}, {"statistic", d.statistic[k]}, {"p_value", d.p_value[k]}});
  }
  doc["ljung_box"] = lb;
  doc["training_hash"] = prov.training_hash;
  return doc;
}

void print_identification(std::ostream& log, const IdentificationResult& r,
                          const Provenance& prov) {
  log << "order " << r.order << (r.low_confidence ? " (low confidence)" : "")
      << (r.stabilized ? ", A rescaled to radius 0.999" : "") << '\n';
  log << "hankel singular values:";
  const auto shown = std::min<Eigen::Index>(r.hankel_singular_values.size(), r.order + 5);
  for (Eigen::Index k = 0; k < shown; ++k) log << ' ' << r.hankel_singular_values(k);
  log << "\nnoise floor " << r.noise_floor << '\n';
  log << "fit (variance accounted for):\n";
  for (std::size_t k = 0; k < prov.output_columns.size(); ++k) {
    log << "  " << prov.output_columns[k] << "  "
        << format_fixed(r.fit_score(static_cast<Eigen::Index>(k)), 4) << '\n';
  }
  const auto& d = r.residual_diagnostics;
  if (!d.lags.empty()) {
    log << "Ljung-Box (min p over channels)\n  lag        Q        p\n";
    for (std::size_t k = 0; k < d.lags.size(); ++k) {
      log << "  " << std::setw(3) << d.lags[k] << "  " << std::setw(9) << format_fixed(d.statistic[k], 2)
          << "  " << format_fixed(d.p_value[k], 4) << '\n';
    }
  }
}

// ---------------------------------------------------------------- detect

void write_score_header(std::ostream& out) { out << "step,timestamp,kl,alarm\n"; }

void detect_stream(const ModelFile& file, const ReferenceDistribution& ref,
                   const DetectorConfig& dc, const ColumnRoles& roles, const std::string& input,
                   std::ostream& out) {
  CsvReader reader(input);
  try {
    reader.bind(roles);
  } catch (const Error& e) {
    throw Error(ErrorCode::kDimensionMismatch, e.detail());
  }
  Detector detector(file.filter, ref, dc);
  const auto& prov = file.provenance;
  write_score_header(out);
  Record rec;
  long step = 0;
  while (reader.next(rec)) {
    const Vector u = prov.input_scaling.empty() ? rec.u : prov.input_scaling.apply(rec.u);
    const Vector y = prov.output_scaling.empty() ? rec.y : prov.output_scaling.apply(rec.y);
    const Decision d = detector.process(u, y);
    out << step << ',' << rec.timestamp_text << ',';
    if (d.score) out << text::format_double(d.score->value);
    out << ',' << (d.alarm ? 1 : 0) << '\n';
    ++step;
  }
  out.flush();
}

int thread_cap() {
  const char* env = std::getenv("ITDT_THREADS");
  if (!env || !*env) return 1;
  const auto v = text::parse_long(env);
  if (!v || *v < 1) input_error("ITDT_THREADS must be a positive integer");
  return static_cast<int>(*v);
}

// ---------------------------------------------------------------- simulate

StateSpaceModel simulation_plant(const Config& cfg) {
  PlantSpec spec;
  spec.n = static_cast<int>(cfg.integer("sim.n"));
  spec.m = static_cast<int>(cfg.integer("sim.m"));
  spec.p = static_cast<int>(cfg.integer("sim.p"));
  spec.spectral_radius = cfg.real("sim.rho");
  spec.process_noise = 1.0;
  spec.measurement_noise = 1.0;
  spec.seed = static_cast<std::uint64_t>(cfg.integer("sim.plant_seed"));
  if (spec.n < 1 || spec.p < 1 || spec.m < 0) input_error("sim.n, sim.p must be >= 1, sim.m >= 0");
  StateSpaceModel model = gen_plant(spec);
  if (spec.m > 0) {
    model = with_output_snr(model, cfg.real("sim.snr_db"));
  } else {
    model.Q *= 0.01;
    model.R *= 0.01;
  }
  return model;
}

std::vector<RampStage> parse_stages(const Config& cfg) {
  std::vector<RampStage> stages;
  for (const auto& item : cfg.list("sim.ramp_stages")) {
    const auto parts = text::split(item, ':');
    const auto d = parts.size() == 2 ? text::parse_long(parts[0]) : std::nullopt;
    const auto s = parts.size() == 2 ? text::parse_double(parts[1]) : std::nullopt;
    if (!d || !s) input_error("sim.ramp_stages items must be duration:slope, got '" + item + "'");
    stages.push_back({*d, *s});
  }
  return stages;
}

std::vector<AttackScenario> simulation_attacks(const Config& cfg, long length) {
  const auto kind = cfg.required("sim.attack");
  if (kind == "none") return {};
  std::vector<int> channels;
  for (long c : cfg.int_list("sim.channels")) {
    if (c < 0 || c >= cfg.integer("sim.p")) input_error("sim.channels entry out of range");
    channels.push_back(static_cast<int>(c));
  }
  const long start = cfg.integer("sim.start");
  const long end = cfg.integer("sim.end");
  if (start < 0 || start >= length) input_error("sim.start must lie inside the simulated run");
  if (kind == "bias") {
    if (end <= start) input_error("sim.end must exceed sim.start");
    return {bias_injection(channels, start, std::min(end, length), cfg.real("sim.magnitude"))};
  }
  if (kind == "covariance") {
    if (end <= start) input_error("sim.end must exceed sim.start");
    if (channels.size() != 2) input_error("covariance attack needs exactly two sim.channels");
    return {stealth_covariance_shift(channels, start, std::min(end, length),
                                     correlating_mixing(cfg.real("sim.theta")))};
  }
  if (kind == "ramp") {
    const auto stages = parse_stages(cfg);
    return {multi_stage_ramp(channels, stages, start)};
  }
  if (kind == "long_ramp") return {long_ramp_attack(channels, start)};
  input_error("sim.attack must be none, bias, covariance, ramp or long_ramp, got '" + kind + "'");
}

Dataset run_to_dataset(const LabeledRun& run, long offset) {
  Dataset d;
  d.U = run.U;
  d.Y = run.Y;
  d.labels = run.labels;
  d.has_labels = true;
  for (Eigen::Index t = 0; t < run.Y.rows(); ++t) {
    d.timestamps.push_back(static_cast<double>(offset + t));
    d.timestamp_text.push_back(std::to_string(offset + t));
  }
  return d;
}

ColumnRoles simulation_roles(const StateSpaceModel& model) {
  ColumnRoles roles;
  for (Eigen::Index k = 0; k < model.m(); ++k) roles.inputs.push_back("u" + std::to_string(k));
  for (Eigen::Index k = 0; k < model.p(); ++k) roles.outputs.push_back("y" + std::to_string(k));
  return roles;
}

void write_simulation(const std::string& path, const StateSpaceModel& model, long length,
                      const std::vector<AttackScenario>& attacks, std::uint64_t seed,
                      InputPolicy policy, long offset) {
  const LabeledRun run = simulate_run(model, length, policy, attacks, seed);
  ensure_parent(path);
  std::ofstream out(path);
  if (!out) input_error("cannot write '" + path + "'");
  write_dataset(out, run_to_dataset(run, offset), simulation_roles(model));
}

InputPolicy input_policy(const Config& cfg) {
  const auto p = cfg.required("sim.input");
  if (p == "excitation") return InputPolicy::kExcitation;
  if (p == "zero") return InputPolicy::kZero;
  input_error("sim.input must be excitation or zero");
}

// ---------------------------------------------------------------- eval

struct ScoreFile {
  std::vector<std::uint8_t> alarm;
  std::vector<std::uint8_t> scored;
};

ScoreFile read_scores(const std::string& path) {
  std::ifstream in(path);
  if (!in) input_error("cannot open score file '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || text::trim(line) != "step,timestamp,kl,alarm") {
    throw Error(ErrorCode::kParseError, path + ": expected header step,timestamp,kl,alarm");
  }
  ScoreFile s;
  long row = 0;
  while (std::getline(in, line)) {
    ++row;
    const auto body = text::trim(line);
    if (body.empty()) continue;
    const auto cells = text::split(body, ',');
    if (cells.size() != 4 || (cells[3] != "0" && cells[3] != "1")) {
      throw Error(ErrorCode::kParseError, path + ": row " + std::to_string(row) + " is malformed");
    }
    s.scored.push_back(!text::trim(cells[2]).empty());
    s.alarm.push_back(cells[3] == "1");
  }
  return s;
}

json metrics_json(const DetectionReport& r) {
  const auto& m = r.metrics;
  json doc;
  doc["precision"] = m.precision;
  doc["recall"] = m.recall;
  doc["f1"] = m.f1;
  doc["false_alarm_rate"] = m.false_alarm_rate;
  doc["confusion"] = {{"tp", m.tp}, {"fp", m.fp}, {"fn", m.fn}, {"tn", m.tn}};
  doc["segment_recall"] = r.segment_recall;
  doc["mean_delay_seconds"] = r.mean_delay_seconds ? json(*r.mean_delay_seconds) : json(nullptr);
  json segs = json::array();
  for (const auto& d : r.delays) {
    segs.push_back({{"segment", d.segment_id},
                    {"detected", d.detected},
                    {"delay_steps", d.delay_steps},
                    {"delay_seconds", d.delay_seconds}});
  }
  doc["segments"] = segs;
  doc["fold_f1"] = r.fold_f1;
  return doc;
}

void print_metrics(std::ostream& log, const DetectionReport& r) {
  const auto& m = r.metrics;
  log << "metric              value\n";
  log << "precision           " << format_fixed(m.precision, 4) << '\n';
  log << "recall              " << format_fixed(m.recall, 4) << '\n';
  log << "F1                  " << format_fixed(m.f1, 4) << '\n';
  log << "false alarm rate    " << format_fixed(m.false_alarm_rate, 5) << '\n';
  log << "TP FP FN TN         " << m.tp << ' ' << m.fp << ' ' << m.fn << ' ' << m.tn << '\n';
  log << "segments detected   " << format_fixed(r.segment_recall, 4) << " of " << r.delays.size()
      << '\n';
  log << "mean delay (s)      "
      << (r.mean_delay_seconds ? format_fixed(*r.mean_delay_seconds, 3) : std::string("n/a"))
      << '\n';
  if (!r.fold_f1.empty()) {
    log << "fold F1            ";
    for (double f : r.fold_f1) log << ' ' << format_fixed(f, 4);
    log << '\n';
  }
}

// ---------------------------------------------------------------- bench

std::string cpu_model() {
  std::ifstream in("/proc/cpuinfo");
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) return std::string(text::trim(line.substr(colon + 1)));
    }
  }
  return "unknown";
}

json machine_info() {
  json info;
  info["cpu"] = cpu_model();
  info["hardware_threads"] = std::thread::hardware_concurrency();
  utsname u{};
  if (uname(&u) == 0) {
    info["os"] = std::string(u.sysname) + " " + u.release;
    info["arch"] = u.machine;
  }
#if defined(__clang__)
  info["compiler"] = std::string("clang ") + __clang_version__;
#elif defined(__GNUC__)
  info["compiler"] = std::string("gcc ") + __VERSION__;
#endif
#ifdef NDEBUG
  info["assertions"] = false;
#else
  info["assertions"] = true;
#endif
  info["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                  "." + std::to_string(EIGEN_MINOR_VERSION);
  return info;
}

}  // namespace

// ==================================================================== commands

void cmd_identify(const Config& cfg, std::ostream& log) {
  const std::string train = cfg.path("train");
  const ColumnRoles roles = roles_from_config(cfg);
  const Dataset data = read_dataset(train, roles);
  check_timestamps(data, train);
  if (std::any_of(data.labels.begin(), data.labels.end(), [](auto l) { return l != 0; })) {
    input_error(train + ": training data contains attack labels");
  }
  TrainingLog tl;
  tl.timestamps = data.timestamps;
  tl.U = data.U;
  tl.Y = data.Y;

  IdentifyOptions opt;
  opt.horizon = static_cast<int>(cfg.integer("horizon"));
  opt.max_order = static_cast<int>(cfg.integer("max_order"));
  opt.order = order_strategy(cfg.required("order"));
  opt.noise_floor_factor = cfg.real("noise_floor");
  opt.standardize = cfg.flag("standardize");
  opt.ljung_box_lags = static_cast<int>(cfg.integer("ljung_box_lags"));
  const IdentificationResult r = identify(tl, opt);

  Provenance prov;
  prov.created = "identify " + fs::path(train).filename().string();
  prov.training_hash = file_hash(train);
  prov.order = r.order;
  prov.horizon = opt.horizon;
  prov.input_columns = roles.inputs;
  prov.output_columns = roles.outputs;
  prov.input_scaling = r.input_scaling;
  prov.output_scaling = r.output_scaling;
  ModelFile file{build_filter(r.model), prov};
  const std::string model_path = cfg.path("model");
  ensure_parent(model_path);
  write_model_file(model_path, file);

  print_identification(log, r, prov);
  const auto rp = report_path(cfg, "identify_report.json");
  write_json(rp, identification_json(r, prov));
  log << "model written to " << model_path << ", report to " << rp << '\n';
}

void cmd_calibrate(const Config& cfg, std::ostream& log) {
  const double alpha = checked_alpha(cfg);
  const std::string model_path = cfg.path("model");
  ModelFile file = read_model_file(model_path);
  const ColumnRoles roles = roles_from_model(cfg, file.provenance);
  const std::string val_path = cfg.path("validation");
  const Dataset data = read_dataset(val_path, roles);
  reject_labeled_attacks(data, val_path);
  const Stream clean = scaled_stream(data, file.provenance);

  DetectorConfig dc = detector_config(cfg);
  const ReferenceKind kind = reference_kind(cfg);
  const int iterations = static_cast<int>(cfg.integer("bootstrap"));
  if (iterations < 0) input_error("bootstrap must be >= 0");
  const std::uint64_t seed = iterations > 0 ? cfg.seed() : 0;
  const Calibration cal = calibrate(file.filter, clean, dc, alpha, kind, iterations, seed);

  Provenance& prov = file.provenance;
  prov.tau = cal.threshold.tau;
  prov.alpha = alpha;
  prov.calibration_samples = cal.threshold.samples;
  prov.tau_ci95 = cal.threshold.ci95;
  prov.window = dc.window;
  prov.epsilon = dc.epsilon;
  prov.warmup = dc.warmup;
  prov.consecutive = dc.consecutive;
  prov.reference = kind == ReferenceKind::kEmpirical ? "empirical" : "theoretical";
  prov.reference_sigma.reset();
  if (kind == ReferenceKind::kEmpirical) prov.reference_sigma = cal.reference.sigma();
  prov.sweep.clear();

  log << "threshold tau " << text::format_double(cal.threshold.tau) << " (alpha " << alpha
      << ", " << cal.threshold.samples << " scores)\n";
  if (cal.threshold.ci95) {
    log << "bootstrap 95% interval [" << text::format_double(cal.threshold.ci95->first) << ", "
        << text::format_double(cal.threshold.ci95->second) << "]\n";
  }

  if (cfg.has("sweep_windows")) {
    std::vector<int> windows;
    for (long w : cfg.int_list("sweep_windows")) windows.push_back(static_cast<int>(w));
    const std::string sweep_path = cfg.path("sweep_data");
    const Dataset labeled = read_dataset(sweep_path, roles);
    if (!labeled.has_labels) input_error(sweep_path + ": the window sweep needs a label column");
    const SweepResult sweep =
        sweep_window(file.filter, clean, scaled_stream(labeled, prov), labeled.labels, windows,
                     alpha, dc.epsilon, dc.warmup, kind);
    prov.sweep = sweep.rows;
    log << "window sweep\n    W        tau      F1\n";
    for (const auto& row : sweep.rows) {
      log << "  " << std::setw(3) << row.window << "  " << std::setw(9)
          << format_fixed(row.tau, 5) << "  " << format_fixed(row.f1, 4) << '\n';
    }
    log << "best W " << sweep.recommended << " (not applied; set window to use it)\n";
  }
  write_model_file(model_path, file);
  log << "model updated: " << model_path << '\n';
}

void cmd_detect(const Config& cfg, const std::vector<std::string>& streams, std::ostream& out,
                std::ostream& log) {
  const ModelFile file = read_model_file(cfg.path("model"));
  const DetectorConfig dc = detector_config(file.provenance);
  const ReferenceDistribution ref = reference_from(file);
  const ColumnRoles roles = roles_from_model(cfg, file.provenance);

  std::vector<std::string> inputs;
  if (!streams.empty()) {
    inputs = streams;
  } else {
    for (const auto& s : cfg.list("stream")) inputs.push_back(cfg.resolve(s));
  }
  if (inputs.empty()) input_error("no input stream: set 'stream' or pass paths");

  if (inputs.size() == 1) {
    const std::string target = cfg.has("scores") ? cfg.path("scores") : std::string("-");
    if (target == "-") {
      detect_stream(file, ref, dc, roles, inputs[0], out);
    } else {
      ensure_parent(target);
      std::ofstream f(target);
      if (!f) input_error("cannot write '" + target + "'");
      detect_stream(file, ref, dc, roles, inputs[0], f);
      log << inputs[0] << " -> " << target << '\n';
    }
    return;
  }

  if (std::count(inputs.begin(), inputs.end(), std::string("-")) > 0) {
    input_error("standard input can only be used with a single stream");
  }
  const fs::path dir = cfg.resolve(cfg.str("output_dir"));
  fs::create_directories(dir);
  std::vector<std::string> targets;
  for (const auto& in : inputs) {
    targets.push_back((dir / (fs::path(in).stem().string() + ".scores.csv")).string());
  }
  const int workers = std::min<int>(thread_cap(), static_cast<int>(inputs.size()));
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr first_error;
  std::size_t first_index = inputs.size();
  auto work = [&] {
    for (std::size_t k = next++; k < inputs.size(); k = next++) {
      try {
        std::ofstream f(targets[k]);
        if (!f) input_error("cannot write '" + targets[k] + "'");
        detect_stream(file, ref, dc, roles, inputs[k], f);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (k < first_index) {
          first_index = k;
          first_error = std::current_exception();
        }
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
  for (std::size_t k = 0; k < inputs.size(); ++k) log << inputs[k] << " -> " << targets[k] << '\n';
}

void cmd_simulate(const Config& cfg, std::ostream& log) {
  const std::uint64_t seed = cfg.seed();
  const StateSpaceModel model = simulation_plant(cfg);
  const long length = cfg.integer("sim.length");
  if (length < 1) input_error("sim.length must be positive");
  const auto attacks = simulation_attacks(cfg, length);
  const std::string path = cfg.has("sim.output")
                               ? cfg.path("sim.output")
                               : (fs::path(cfg.resolve(cfg.str("output_dir"))) / "sim.csv").string();
  write_simulation(path, model, length, attacks, seed, input_policy(cfg), 0);
  log << "wrote " << length << " steps to " << path << '\n';
  if (cfg.has("sim.truth")) {
    Provenance prov;
    prov.created = "simulate";
    const ColumnRoles roles = simulation_roles(model);
    prov.input_columns = roles.inputs;
    prov.output_columns = roles.outputs;
    prov.order = static_cast<int>(model.n());
    const std::string truth = cfg.path("sim.truth");
    ensure_parent(truth);
    write_model_file(truth, ModelFile{build_filter(model), prov});
    log << "generating model written to " << truth << '\n';
  }
}

void cmd_eval(const Config& cfg, std::ostream& log) {
  const std::string scores_path = cfg.path("scores");
  const std::string test_path = cfg.path("test");
  const ScoreFile scores = read_scores(scores_path);

  // Only the timestamp and label columns matter here; every other column is
  // accepted as-is.
  std::ifstream probe(test_path);
  std::string header_line;
  if (!probe || !std::getline(probe, header_line)) input_error("cannot read '" + test_path + "'");
  ColumnRoles roles;
  roles.timestamp = cfg.required("timestamp_column");
  roles.label = cfg.required("label_column");
  for (auto h : text::split(text::trim(header_line), ',')) {
    const std::string name(text::trim(h));
    if (name != roles.timestamp && name != roles.label) roles.outputs.push_back(name);
  }
  const Dataset data = read_dataset(test_path, roles);
  if (!data.has_labels) input_error(test_path + ": no '" + roles.label + "' column");
  if (data.labels.size() != scores.alarm.size()) {
    throw Error(ErrorCode::kLengthMismatch,
                "score file has " + std::to_string(scores.alarm.size()) + " rows, labels have " +
                    std::to_string(data.labels.size()));
  }
  const double period = cfg.has("period") ? cfg.real("period") : median_period(data.timestamps);
  const DetectionReport report =
      make_report(scores.alarm, data.labels, scores.scored, period, cfg.integer("folds"));
  print_metrics(log, report);
  const auto rp = report_path(cfg, "eval_report.json");
  json doc = metrics_json(report);
  doc["sample_period"] = period;
  write_json(rp, doc);
  log << "report written to " << rp << '\n';
}

void cmd_bench(const Config& cfg, std::ostream& log) {
  const std::uint64_t seed = cfg.seed();
  const long steps = cfg.integer("bench.steps");
  if (steps < 100000) input_error("bench.steps must be at least 100000");

  std::optional<ModelFile> file;
  if (!cfg.has("bench.p") && cfg.has("model") && fs::exists(cfg.path("model"))) {
    file = read_model_file(cfg.path("model"));
  }
  StateSpaceModel model;
  std::optional<SteadyStateFilter> filter;
  DetectorConfig dc = detector_config(cfg);
  std::optional<ReferenceDistribution> ref;
  if (file) {
    filter = file->filter;
    model = filter->model();
    if (file->provenance.tau) dc = detector_config(file->provenance);
    ref = reference_from(*file);
  } else {
    PlantSpec spec;
    spec.n = static_cast<int>(cfg.integer("bench.n"));
    spec.p = static_cast<int>(cfg.has("bench.p") ? cfg.integer("bench.p") : 127);
    spec.m = 0;
    spec.spectral_radius = 0.9;
    spec.seed = seed;
    model = gen_plant(spec);
    filter = build_filter(model);
    ref = ReferenceDistribution(filter->sigma());
  }
  dc.tau = std::numeric_limits<double>::infinity();

  // A finite trace replayed cyclically keeps memory bounded for large p.
  const long trace_len = std::min<long>(steps, 8192);
  const LabeledRun run = simulate_run(model, trace_len, InputPolicy::kZero, {}, seed);
  Detector detector(*filter, *ref, dc);
  const Vector u = Vector::Zero(model.m());
  const long prefill = dc.warmup + dc.window;
  for (long t = 0; t < prefill; ++t) detector.process(u, run.Y.row(t % trace_len).transpose());

  std::vector<double> us(static_cast<std::size_t>(steps));
  Vector y(model.p());
  double sink = 0.0;
  for (long t = 0; t < steps; ++t) {
    y = run.Y.row((prefill + t) % trace_len).transpose();
    const auto t0 = std::chrono::steady_clock::now();
    const Decision d = detector.process(u, y);
    const auto t1 = std::chrono::steady_clock::now();
    sink += d.score ? d.score->value : 0.0;
    us[static_cast<std::size_t>(t)] = std::chrono::duration<double, std::micro>(t1 - t0).count();
  }
  std::vector<double> sorted = us;
  std::sort(sorted.begin(), sorted.end());
  auto quantile = [&](double q) {
    const auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(sorted.size()))) - 1;
    return sorted[std::min(k, sorted.size() - 1)];
  };
  const double mean = std::accumulate(us.begin(), us.end(), 0.0) / static_cast<double>(steps);
  json doc;
  doc["steps"] = steps;
  doc["n"] = model.n();
  doc["m"] = model.m();
  doc["p"] = model.p();
  doc["window"] = dc.window;
  doc["threads"] = 1;
  doc["latency_us"] = {{"mean", mean},
                       {"median", quantile(0.5)},
                       {"p99", quantile(0.99)},
                       {"max", sorted.back()}};
  doc["machine"] = machine_info();
  doc["checksum"] = sink;

  log << "per-step latency over " << steps << " steps (n=" << model.n() << ", p=" << model.p()
      << ", W=" << dc.window << ", single thread)\n";
  log << "  mean   " << format_fixed(mean, 2) << " us\n";
  log << "  median " << format_fixed(quantile(0.5), 2) << " us\n";
  log << "  p99    " << format_fixed(quantile(0.99), 2) << " us\n";
  log << "machine: " << doc["machine"]["cpu"].get<std::string>() << ", "
      << doc["machine"]["hardware_threads"].get<unsigned>() << " hardware threads\n";
  const auto rp = report_path(cfg, "bench_report.json");
  write_json(rp, doc);
  log << "report written to " << rp << '\n';
}

void cmd_pipeline(const Config& base, std::ostream& log) {
  const std::uint64_t seed = base.seed();
  const fs::path dir = base.resolve(base.str("output_dir"));
  fs::create_directories(dir);
  const StateSpaceModel plant = simulation_plant(base);
  const InputPolicy policy = input_policy(base);
  const long n_train = base.integer("pipeline.train_length");
  const long n_val = base.integer("pipeline.validation_length");
  const long n_test = base.integer("pipeline.test_length");
  if (n_train < 1 || n_val < 1 || n_test < 1) input_error("pipeline lengths must be positive");

  const std::string train = (dir / "train.csv").string();
  const std::string validation = (dir / "validation.csv").string();
  const std::string test = (dir / "test.csv").string();
  write_simulation(train, plant, n_train, {}, seed, policy, 0);
  write_simulation(validation, plant, n_val, {}, seed + 1, policy, 0);
  write_simulation(test, plant, n_test, simulation_attacks(base, n_test), seed + 2, policy, 0);
  log << "simulated train/validation/test in " << dir.string() << '\n';

  Config cfg = base;
  const ColumnRoles roles = simulation_roles(plant);
  std::string ins, outs;
  for (const auto& c : roles.inputs) ins += (ins.empty() ? "" : ",") + c;
  for (const auto& c : roles.outputs) outs += (outs.empty() ? "" : ",") + c;
  cfg.set("inputs", ins);
  cfg.set("outputs", outs);
  cfg.set("train", train);
  cfg.set("validation", validation);
  cfg.set("test", test);
  cfg.set("model", (dir / "model.itdt-model").string());
  cfg.set("scores", (dir / "test.scores.csv").string());
  cfg.set("output_dir", dir.string());
  cfg.set("report", (dir / "identify_report.json").string());
  cmd_identify(cfg, log);
  cfg.set("report", "");
  cmd_calibrate(cfg, log);
  cmd_detect(cfg, {test}, log, log);
  cfg.set("report", (dir / "eval_report.json").string());
  cmd_eval(cfg, log);
}

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"itdt: information-theoretic digital-twin anomaly detection"};
  app.require_subcommand(0, 1);
  std::string config_path;
  std::vector<std::string> overrides;
  bool print_config = false;
  app.add_flag("--print-config", print_config, "print every config key with its default");

  struct Sub {
    const char* name;
    const char* help;
  };
  const std::vector<Sub> subs = {
      {"identify", "identify a state-space model from training data"},
      {"calibrate", "fit the detection threshold on attack-free data"},
      {"detect", "score streams; writes step,timestamp,kl,alarm"},
      {"simulate", "write a synthetic labeled CSV"},
      {"eval", "compare a score file with labels"},
      {"bench", "measure per-step detector latency"},
      {"pipeline", "simulate, identify, calibrate, detect and evaluate"},
  };
  std::vector<std::string> streams;
  std::vector<CLI::App*> commands;
  for (const auto& s : subs) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    sub->add_option("-c,--config", config_path, "key = value config file");
    sub->add_option("-s,--set", overrides, "override one key (key=value); repeatable")
        ->allow_extra_args(false);
    if (std::string(s.name) == "detect") {
      sub->add_option("streams", streams, "input CSV paths ('-' for standard input)");
    }
    commands.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? kExitOk : kExitInput;
  }

  try {
    if (print_config) {
      Config().print(out);
      return kExitOk;
    }
    CLI::App* chosen = nullptr;
    for (auto* c : commands) {
      if (c->parsed()) chosen = c;
    }
    if (!chosen) {
      err << app.help();
      return kExitInput;
    }
    Config cfg = config_path.empty() ? Config() : Config::load(config_path);
    for (const auto& o : overrides) cfg.set(o);
    const std::string name = chosen->get_name();
    if (name == "identify") cmd_identify(cfg, err);
    else if (name == "calibrate") cmd_calibrate(cfg, err);
    else if (name == "detect") cmd_detect(cfg, streams, out, err);
    else if (name == "simulate") cmd_simulate(cfg, err);
    else if (name == "eval") cmd_eval(cfg, out);
    else if (name == "bench") cmd_bench(cfg, out);
    else if (name == "pipeline") cmd_pipeline(cfg, err);
    return kExitOk;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(e.code());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitNumerical;
  }
}

}  // namespace itdt::cli
