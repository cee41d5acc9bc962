// One line per criterion: "PASS|FAIL [n] title: measured values".
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cli/commands.hpp"
#include "cli/config.hpp"
#include "itdt/calibrate.hpp"
#include "itdt/detector.hpp"
#include "itdt/error.hpp"
#include "itdt/eval.hpp"
#include "itdt/kalman.hpp"
#include "itdt/simulate.hpp"
#include "itdt/sysid.hpp"

using namespace itdt;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = nd(rng);
  }
  return m;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() /
                     ("itdt_acceptance_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

long first_alarm(const ScoredStream& s, long from, long to) {
  for (long t = from; t < to; ++t) {
    if (s.alarm[static_cast<std::size_t>(t)]) return t;
  }
  return -1;
}

Outcome kl_oracles() {
  const auto t0 = std::chrono::steady_clock::now();
  Matrix sigma(2, 2);
  sigma << 2, 1, 1, 2;
  const Matrix one = Matrix::Constant(1, 1, 1.0);
  const double e0 = std::abs(kl_divergence(Vector::Zero(2), sigma, ReferenceDistribution(sigma)).value);
  const double e1 = std::abs(kl_divergence(Vector::Ones(1), one, ReferenceDistribution(one)).value - 0.5);
  const double e2 = std::abs(kl_divergence(Vector::Zero(1), 2.0 * one, ReferenceDistribution(one)).value -
                             0.5 * (1.0 - std::log(2.0)));
  const double closed = std::max({e0, e1, e2});

  // Monte Carlo E_P[log p(x) − log q(x)] with x ~ P = N(μ̂, I).
  const Vector mu = Eigen::Vector2d(1.0, 0.0);
  const double analytic = kl_divergence(mu, Matrix::Identity(2, 2), ReferenceDistribution(sigma)).value;
  const SpdFactor fs(sigma);
  std::mt19937_64 rng(20240601);
  std::normal_distribution<double> nd;
  const long n = 1000000;
  double acc = 0.0;
  for (long k = 0; k < n; ++k) {
    const Eigen::Vector2d z(nd(rng), nd(rng));
    const Vector x = mu + z;
    acc += -0.5 * z.squaredNorm() + 0.5 * fs.quad_form(x) + 0.5 * fs.log_det();
  }
  const double mc = acc / static_cast<double>(n);
  const double rel = std::abs(mc - analytic) / analytic;
  const double secs = seconds_since(t0);
  return {closed <= 1e-12 && rel <= 0.01 && secs < 10.0,
          fmt("max closed-form error %.2e, 2-D analytic %.6f vs MC %.6f (rel %.4f), %.2f s", closed,
              analytic, mc, rel, secs)};
}

Outcome stealth() {
  const auto t0 = std::chrono::steady_clock::now();
  // Measurement noise dominates the innovations, so mixing v reshapes Σ.
  const auto plant = gen_plant(PlantSpec{4, 1, 2, 0.9, 0.0001, 0.1, 101});
  const auto filter = build_filter(plant);
  DetectorConfig cfg;
  const auto clean = simulate_run(plant, 50000, InputPolicy::kExcitation, {}, 102);
  const Calibration cal = calibrate(filter, Stream{clean.U, clean.Y}, cfg, 0.01, ReferenceKind::kTheoretical);
  cfg.tau = cal.threshold.tau;

  const long start = 5000, end = 15000, len = 20000;
  const std::vector<AttackScenario> attack{
      stealth_covariance_shift({0, 1}, start, end, correlating_mixing(0.6))};
  const auto run = simulate_run(plant, len, InputPolicy::kExcitation, attack, 103);
  const ScoredStream s = score_stream(filter, cal.reference, cfg, Stream{run.U, run.Y});

  const Matrix r_att = filter_residuals(filter, Stream{run.U, run.Y}).middleRows(start, end - start);
  const Matrix r_cln = filter_residuals(filter, Stream{run.U, run.clean_y}).middleRows(start, end - start);
  const Vector sd = filter.sigma().diagonal().cwiseSqrt();
  double mean_shift = 0.0, var_change = 0.0;
  for (int c = 0; c < 2; ++c) {
    const double ma = r_att.col(c).mean(), mc = r_cln.col(c).mean();
    mean_shift = std::max(mean_shift, std::abs(ma - mc) / sd(c));
    const double va = (r_att.col(c).array() - ma).square().mean();
    const double vc = (r_cln.col(c).array() - mc).square().mean();
    var_change = std::max(var_change, std::abs(va / vc - 1.0));
  }

  long kl_hits = 0, sigma_hits = 0;
  const Matrix r_all = filter_residuals(filter, Stream{run.U, run.Y});
  for (long t = start; t < end; ++t) {
    kl_hits += s.alarm[static_cast<std::size_t>(t)];
    bool out = false;
    for (int c = 0; c < 2; ++c) out |= std::abs(r_all(t, c)) > 3.0 * sd(c);
    sigma_hits += out;
  }
  const double kl_rate = static_cast<double>(kl_hits) / static_cast<double>(end - start);
  const double sigma_rate = static_cast<double>(sigma_hits) / static_cast<double>(end - start);
  const double secs = seconds_since(t0);
  return {kl_rate >= 0.9 && sigma_rate <= 0.05 && mean_shift <= 0.1 && var_change <= 0.05 && secs < 60,
          fmt("KL alarm rate %.4f, per-channel 3-sigma rate %.4f, mean shift %.3f sigma, variance "
              "change %.3f, %.2f s",
              kl_rate, sigma_rate, mean_shift, var_change, secs)};
}

Outcome far() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto plant = gen_plant(PlantSpec{4, 2, 3, 0.9, 0.01, 0.01, 201});
  const auto filter = build_filter(plant);
  DetectorConfig cfg;
  cfg.warmup = 60;
  const auto calib = simulate_run(plant, 50000, InputPolicy::kExcitation, {}, 202);
  const Calibration cal = calibrate(filter, Stream{calib.U, calib.Y}, cfg, 0.01, ReferenceKind::kTheoretical);
  cfg.tau = cal.threshold.tau;
  const auto test = simulate_run(plant, 50000, InputPolicy::kExcitation, {}, 203);
  const ScoredStream s = score_stream(filter, cal.reference, cfg, Stream{test.U, test.Y});
  long alarms = 0, scored = 0;
  for (std::size_t t = 0; t < s.kl.size(); ++t) {
    scored += s.scored(t);
    alarms += s.alarm[t];
  }
  const double rate = static_cast<double>(alarms) / static_cast<double>(scored);
  const double secs = seconds_since(t0);
  return {rate >= 0.003 && rate <= 0.03 && secs < 120,
          fmt("tau %.5f, realized alarm rate %.5f over %ld scored steps, %.2f s", cal.threshold.tau,
              rate, scored, secs)};
}

Outcome dare() {
  double worst_fixed = 0.0, worst_inv = 0.0, worst_rho = 0.0;
  int failures = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const int n = 1 + static_cast<int>(seed % 10);
    const int p = 1 + static_cast<int>(seed % 4);
    const int m = static_cast<int>(seed % 3);
    const double rho = 0.5 + 0.45 * static_cast<double>(seed % 7) / 6.0;
    try {
      const auto plant = gen_plant(PlantSpec{n, m, p, rho, 0.01 * (1 + seed % 5), 0.01, 300 + seed});
      const auto f = build_filter(plant);
      const Matrix& C = plant.C;
      worst_fixed = std::max(worst_fixed, max_abs(riccati_map(plant, f.P()) - f.P()));
      const Matrix s_err = f.sigma() - (C * f.P() * C.transpose() + plant.R);
      const Matrix k_err = f.K() - f.P() * C.transpose() * f.sigma().inverse();
      worst_inv = std::max({worst_inv, max_abs(s_err) / max_abs(f.sigma()), max_abs(k_err) / max_abs(f.K())});
      worst_rho = std::max(worst_rho, spectral_radius(plant.A - f.K() * C * plant.A));
    } catch (const Error&) {
      ++failures;
    }
  }
  return {failures == 0 && worst_fixed <= 1e-10 && worst_inv <= 1e-9 && worst_rho < 1.0,
          fmt("100 plants, max fixed-point residual %.2e, max invariant error %.2e, max rho(A-KCA) "
              "%.4f, %d failures",
              worst_fixed, worst_inv, worst_rho, failures)};
}

Outcome identification() {
  const auto plant = with_output_snr(gen_plant(PlantSpec{4, 2, 3, 0.9, 1.0, 1.0, 3}), 20.0);
  const auto matched = build_filter(plant);
  const long train = 50000, held = 12500;
  int order_ok = 0, vaf_ok = 0, lb_ok = 0, errors = 0;
  double worst_vaf = 1.0;
  for (int s = 0; s < 20; ++s) {
    const auto run = simulate_run(plant, train + held, InputPolicy::kExcitation, {}, 1000 + s);
    TrainingLog log;
    log.U = run.U.topRows(train);
    log.Y = run.Y.topRows(train);
    for (long t = 0; t < train; ++t) log.timestamps.push_back(static_cast<double>(t));
    IdentifyOptions opt;
    opt.horizon = 10;
    try {
      const auto r = identify(log, opt);
      order_ok += r.order == 4;
      const Vector vaf = variance_accounted_for(r.model, scale_rows(r.input_scaling, run.U.bottomRows(held)),
                                                scale_rows(r.output_scaling, run.Y.bottomRows(held)),
                                                Vector(), 200);
      worst_vaf = std::min(worst_vaf, vaf.minCoeff());
      vaf_ok += vaf.minCoeff() >= 0.95;
    } catch (const Error&) {
      ++errors;
    }
    const Matrix res = filter_residuals(matched, Stream{run.U, run.Y}).bottomRows(train);
    const auto lb = ljung_box(res, 20);
    lb_ok += *std::min_element(lb.p_value.begin(), lb.p_value.end()) > 0.05;
  }
  const bool pass = errors == 0 && vaf_ok == 20 && order_ok >= 18 && lb_ok >= 18;
  return {pass, fmt("VAF>=0.95 in %d/20 (worst %.4f), order 4 in %d/20, Ljung-Box all lags "
                    "p>0.05 in %d/20 (needs 18), %d errors",
                    vaf_ok, worst_vaf, order_ok, lb_ok, errors)};
}

Outcome latency() {
  const fs::path dir = scratch_dir("bench");
  cli::Config cfg;
  cfg.set("seed", "1");
  cfg.set("bench.p", "127");
  cfg.set("bench.steps", "100000");
  cfg.set("window", "60");
  cfg.set("report", (dir / "bench.json").string());
  std::ostringstream log;
  cli::cmd_bench(cfg, log);
  std::ifstream in(dir / "bench.json");
  const auto doc = nlohmann::json::parse(in);
  const double median = doc["latency_us"]["median"].get<double>();
  const double p99 = doc["latency_us"]["p99"].get<double>();
  fs::remove_all(dir);
  return {median <= 1000.0 && doc["steps"].get<long>() >= 100000 && doc["p"].get<long>() == 127,
          fmt("p=127 W=60 over %ld steps: median %.1f us, p99 %.1f us", doc["steps"].get<long>(),
              median, p99)};
}

Outcome delay() {
  const auto plant = gen_plant(PlantSpec{4, 2, 3, 0.9, 0.01, 0.01, 401});
  const auto filter = build_filter(plant);
  DetectorConfig cfg;
  cfg.warmup = 60;
  const auto clean = simulate_run(plant, 30000, InputPolicy::kExcitation, {}, 402);
  const Stream cs{clean.U, clean.Y};
  const ReferenceDistribution ref = make_reference(filter, cs, ReferenceKind::kTheoretical, cfg.warmup);
  const std::vector<double> scores = score_stream(filter, ref, cfg, cs).emitted();
  const double tau = fit_threshold(scores, 0.01).tau;
  const auto replicates = bootstrap_replicates(scores, 0.01, 100, 403);

  const long onset = 2000;
  const std::vector<AttackScenario> attack{long_ramp_attack({0, 1}, onset)};
  const auto run = simulate_run(plant, 4000, InputPolicy::kExcitation, attack, 404);
  const Stream as{run.U, run.Y};
  auto delay_at = [&](double t) {
    DetectorConfig c = cfg;
    c.tau = t;
    const long first = first_alarm(score_stream(filter, ref, c, as), onset, attack[0].end);
    return first < 0 ? -1 : first - onset;
  };
  const long base = delay_at(tau);
  long worst_shift = 0;
  bool all_detected = base >= 0;
  for (double t : replicates) {
    const long d = delay_at(t);
    if (d < 0) {
      all_detected = false;
      continue;
    }
    worst_shift = std::max(worst_shift, std::abs(d - base));
  }
  const int w = cfg.window;
  return {all_detected && base <= 2 * w && worst_shift <= w,
          fmt("first alarm %ld steps after onset (bound %d), max shift over 100 bootstrap tau %ld "
              "steps (bound %d)",
              base, 2 * w, worst_shift, w)};
}

double enumerated_p(const std::vector<double>& d) {
  const std::size_t k = d.size();
  std::vector<double> rank(k);
  for (std::size_t i = 0; i < k; ++i) {
    double less = 0, equal = 0;
    for (std::size_t j = 0; j < k; ++j) {
      less += std::abs(d[j]) < std::abs(d[i]);
      equal += std::abs(d[j]) == std::abs(d[i]);
    }
    rank[i] = less + (equal + 1.0) / 2.0;
  }
  double total = 0, plus = 0;
  for (std::size_t i = 0; i < k; ++i) {
    total += rank[i];
    if (d[i] > 0) plus += rank[i];
  }
  const double observed = std::min(plus, total - plus);
  long hits = 0;
  for (unsigned long mask = 0; mask < (1UL << k); ++mask) {
    double w = 0;
    for (std::size_t i = 0; i < k; ++i) {
      if (mask >> i & 1UL) w += rank[i];
    }
    hits += std::min(w, total - w) <= observed + 1e-9;
  }
  return std::min(1.0, static_cast<double>(hits) / static_cast<double>(1UL << k));
}

Outcome stat_tests() {
  std::mt19937_64 rng(801);
  std::normal_distribution<double> nd(0.2, 1.0);
  double worst = 0.0;
  int cases = 0;
  for (int k = 5; k <= 10; ++k) {
    for (int rep = 0; rep < 50; ++rep) {
      std::vector<double> a(k), b(k);
      for (int i = 0; i < k; ++i) {
        a[i] = std::round(nd(rng) * 4.0) / 4.0;
        b[i] = 0.0;
        if (a[i] == 0.0) a[i] = -0.25;
      }
      const auto r = wilcoxon_signed_rank(a, b);
      worst = std::max(worst, std::abs(r.p_value - enumerated_p(a)));
      ++cases;
    }
  }

  int accepted = 0;
  const int seeds = 1000;
  for (int s = 0; s < seeds; ++s) {
    const auto r = mardia_test(gaussian(5000, 3, 900 + static_cast<std::uint64_t>(s)));
    accepted += r.p_skew > 0.05 && r.p_kurt > 0.05;
  }
  const double accept_rate = static_cast<double>(accepted) / seeds;
  const double lognormal = mardia_test(gaussian(5000, 3, 77).array().exp().matrix()).p_skew;
  return {worst <= 1e-12 && accept_rate >= 0.9 && lognormal < 0.01,
          fmt("Wilcoxon exact vs enumeration max |dp| %.1e over %d cases (K=5..10); Mardia joint "
              "acceptance %.3f over %d Gaussian seeds; lognormal pSkew %.1e",
              worst, cases, accept_rate, seeds, lognormal)};
}

Outcome sweep_stability() {
  const auto plant = gen_plant(PlantSpec{4, 2, 3, 0.9, 0.01, 0.01, 501});
  const auto filter = build_filter(plant);
  const auto clean = simulate_run(plant, 30000, InputPolicy::kExcitation, {}, 502);
  std::vector<AttackScenario> attacks;
  for (int k = 0; k < 5; ++k) {
    attacks.push_back(bias_injection({k % 3}, 3000 + 7000L * k, 4000 + 7000L * k, 5.0));
  }
  const auto val = simulate_run(plant, 36000, InputPolicy::kExcitation, attacks, 503);
  const std::vector<int> windows{30, 60, 120};
  const SweepResult r = sweep_window(filter, Stream{clean.U, clean.Y}, Stream{val.U, val.Y},
                                     val.labels, windows, 0.01, 1e-4, 60, ReferenceKind::kTheoretical);
  double lo = 1.0, hi = 0.0;
  std::string rows;
  for (const auto& row : r.rows) {
    lo = std::min(lo, row.f1);
    hi = std::max(hi, row.f1);
    rows += fmt(" W=%d:%.4f", row.window, row.f1);
  }
  return {hi - lo <= 0.05, fmt("F1%s, spread %.4f", rows.c_str(), hi - lo)};
}

Outcome determinism() {
  const fs::path dir = scratch_dir("pipeline");
  {
    std::ofstream c(dir / "pipeline.conf");
    c << "seed = 7\nhorizon = 10\nsim.attack = bias\nsim.channels = 0\nsim.start = 10000\n"
         "sim.end = 11000\n";
  }
  std::ostringstream log;
  std::string bytes[2];
  for (int k = 0; k < 2; ++k) {
    cli::Config cfg = cli::Config::load((dir / "pipeline.conf").string());
    cfg.set("output_dir", "run" + std::to_string(k));
    cli::cmd_pipeline(cfg, log);
    std::ifstream in(dir / ("run" + std::to_string(k)) / "test.scores.csv", std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    bytes[k] = ss.str();
  }
  std::ifstream ev(dir / "run0" / "eval_report.json");
  const auto doc = nlohmann::json::parse(ev);
  const bool same = !bytes[0].empty() && bytes[0] == bytes[1];
  fs::remove_all(dir);
  return {same, fmt("two pipeline runs: %zu-byte score files %s (F1 %.4f)", bytes[0].size(),
                    same ? "identical" : "differ", doc["f1"].get<double>())};
}

}  // namespace

int main(int argc, char** argv) {
  // Optional arguments select criteria by number.
  std::vector<int> only;
  for (int k = 1; k < argc; ++k) only.push_back(std::atoi(argv[k]));
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"KL analytic oracles", kl_oracles},
      {"stealth covariance attack", stealth},
      {"false-alarm calibration", far},
      {"DARE certificate", dare},
      {"identification recovery", identification},
      {"per-step latency", latency},
      {"detection delay harness", delay},
      {"statistical test oracles", stat_tests},
      {"window sweep stability", sweep_stability},
      {"end-to-end determinism", determinism},
  };
  int failed = 0;
  int ran = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    if (!only.empty() && std::find(only.begin(), only.end(), static_cast<int>(k) + 1) == only.end()) {
      continue;
    }
    ++ran;
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << k + 1 << "] " << criteria[k].first << ": "
              << o.detail << std::endl;
  }
  fs::remove_all(fs::temp_directory_path() / ("itdt_acceptance_" + std::to_string(::getpid())));
  std::cout << ran - failed << "/" << ran << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
