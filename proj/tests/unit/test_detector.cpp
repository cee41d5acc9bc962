#include <doctest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "itdt/calibrate.hpp"
#include "itdt/detector.hpp"
#include "itdt/error.hpp"
#include "itdt/simulate.hpp"

using namespace itdt;
using itdt::test::m1;
using itdt::test::v1;

TEST_CASE("ResidualWindow push and eviction") {
  ResidualWindow w(3, 2);
  const Vector r = Eigen::Vector2d(1.0, -2.0);
  w.push(r);
  CHECK(w.size() == 1);
  CHECK(w.running_sum() == r);

  const Vector v = Eigen::Vector2d(0.5, 0.25);
  const Vector x = Eigen::Vector2d(-4.0, 8.0);
  ResidualWindow full(3, 2);
  for (int k = 0; k < 3; ++k) full.push(v);
  full.push(x);
  CHECK(full.full());
  CHECK(max_abs(full.running_sum() - (2.0 * v + x)) <= 1e-15);
  CHECK(full.at(0) == v);
  CHECK(full.at(2) == x);

  try {
    w.push(Vector::Zero(3));
    FAIL("expected DimensionMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDimensionMismatch);
  }
}

TEST_CASE("ResidualWindow running sums track a two-pass recomputation") {
  const Matrix data = itdt::test::gaussian(3, 20000, 9) * 5.0;
  ResidualWindow w(60, 3);
  for (Eigen::Index t = 0; t < data.cols(); ++t) w.push(data.col(t) + Vector::Constant(3, 1e3));
  const Vector sum = w.running_sum();
  const Matrix outer = w.running_outer_sum();
  w.recompute();
  CHECK(near_rel(sum, w.running_sum(), 1e-10));
  CHECK(near_rel(outer, w.running_outer_sum(), 1e-10));
}

TEST_CASE("window_stats") {
  ResidualWindow w(4, 2);
  CHECK_THROWS_AS(window_stats(w), Error);
  const Vector v = Eigen::Vector2d(3.0, -1.0);
  for (int k = 0; k < 4; ++k) w.push(v);
  const WindowStats s = window_stats(w);
  CHECK(max_abs(s.mean - v) <= 1e-15);
  CHECK(max_abs(s.covariance) <= 1e-14);

  ResidualWindow two(2, 1);
  two.push(v1(0.0));
  two.push(v1(2.0));
  const WindowStats t = window_stats(two);
  CHECK(t.mean(0) == 1.0);
  CHECK(t.covariance(0, 0) == 1.0);
}

TEST_CASE("window_stats matches a two-pass oracle") {
  const Matrix data = itdt::test::gaussian(3, 200, 17);
  ResidualWindow w(60, 3);
  for (Eigen::Index t = 0; t < data.cols(); ++t) w.push(data.col(t));
  const Matrix last = data.rightCols(60);
  const Vector mean = last.rowwise().mean();
  const Matrix centered = last.colwise() - mean;
  const Matrix cov = centered * centered.transpose() / 60.0;
  const WindowStats s = window_stats(w);
  CHECK(max_abs(s.mean - mean) <= 1e-10);
  CHECK(max_abs(s.covariance - cov) <= 1e-10);
}

TEST_CASE("regularize") {
  CHECK(max_abs(regularize(Matrix::Zero(3, 3), 1e-4) - 1e-4 * Matrix::Identity(3, 3)) == 0.0);
  CHECK(max_abs(regularize(Matrix::Identity(2, 2), 1e-4) - 1.0001 * Matrix::Identity(2, 2)) <=
        1e-15);
  const Vector v = Eigen::Vector3d(1.0, 2.0, -1.0);
  const Matrix r = regularize(v * v.transpose(), 1e-4);
  CHECK(cholesky(r).diagonal().minCoeff() > 0.0);
  try {
    regularize(-Matrix::Identity(2, 2), 1e-4);
    FAIL("expected StillNotPositiveDefinite");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kStillNotPositiveDefinite);
  }
}

TEST_CASE("kl_divergence closed forms") {
  Matrix sigma(2, 2);
  sigma << 2, 1, 1, 2;
  const ReferenceDistribution ref(sigma);
  CHECK(std::abs(kl_divergence(Vector::Zero(2), sigma, ref).value) <= 1e-12);

  const ReferenceDistribution unit(m1(1.0));
  CHECK(std::abs(kl_divergence(v1(1.0), m1(1.0), unit).value - 0.5) <= 1e-12);
  CHECK(std::abs(kl_divergence(v1(0.0), m1(2.0), unit).value - 0.5 * (1.0 - std::log(2.0))) <=
        1e-12);
}

TEST_CASE("kl_divergence matches a generic formula on random inputs") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const Matrix s = itdt::test::random_spd(4, seed);
    const Matrix sh = itdt::test::random_spd(4, seed + 50);
    const Vector mu = itdt::test::gaussian(4, 1, seed + 99);
    const Matrix si = s.inverse();
    const double oracle = 0.5 * ((si * sh).trace() - 4.0 + mu.dot(si * mu) +
                                 std::log(s.determinant() / sh.determinant()));
    const double kl = kl_divergence(mu, sh, ReferenceDistribution(s)).value;
    CHECK(kl == doctest::Approx(oracle).epsilon(1e-10));
    CHECK(kl >= 0.0);
  }
}

TEST_CASE("kl_divergence agrees with Monte Carlo") {
  Matrix sigma(2, 2);
  sigma << 2, 1, 1, 2;
  const Vector mu = Eigen::Vector2d(1.0, 0.0);
  const double analytic = kl_divergence(mu, Matrix::Identity(2, 2), ReferenceDistribution(sigma)).value;
  std::mt19937_64 rng(42);
  std::normal_distribution<double> nd;
  const SpdFactor fs(sigma);
  const long n = 200000;
  double acc = 0.0;
  for (long k = 0; k < n; ++k) {
    const Vector z = Eigen::Vector2d(nd(rng), nd(rng));
    const Vector x = mu + z;
    const double log_p = -0.5 * z.squaredNorm() - std::log(2.0 * M_PI);
    const double log_q = -0.5 * fs.quad_form(x) - 0.5 * fs.log_det() - std::log(2.0 * M_PI);
    acc += log_p - log_q;
  }
  CHECK(acc / n == doctest::Approx(analytic).epsilon(0.02));
}

TEST_CASE("DetectorConfig::check") {
  DetectorConfig c;
  CHECK_NOTHROW(c.check());
  c.window = 1;
  CHECK_THROWS_AS(c.check(), Error);
  c = DetectorConfig{};
  c.epsilon = -1.0;
  CHECK_THROWS_AS(c.check(), Error);
  c = DetectorConfig{};
  c.consecutive = 0;
  CHECK_THROWS_AS(c.check(), Error);
}

namespace {

struct Fixture {
  StateSpaceModel model = gen_plant(PlantSpec{3, 1, 2, 0.8, 0.02, 0.02, 21});
  SteadyStateFilter filter = build_filter(model);
};

}  // namespace

TEST_CASE("detector emits no score before the window fills") {
  Fixture fx;
  DetectorConfig cfg;
  cfg.window = 20;
  cfg.warmup = 5;
  cfg.tau = 0.0;
  Detector d(fx.filter, ReferenceDistribution(fx.filter.sigma()), cfg);
  const auto run = simulate_run(fx.model, 60, InputPolicy::kExcitation, {}, 3);
  for (int t = 0; t < 60; ++t) {
    const Decision dec = d.process(run.U.row(t).transpose(), run.Y.row(t).transpose());
    if (t < cfg.warmup + cfg.window - 1) {
      CHECK_FALSE(dec.score.has_value());
      CHECK_FALSE(dec.alarm);
    } else {
      REQUIRE(dec.score.has_value());
      CHECK(dec.alarm);
    }
  }
}

TEST_CASE("consecutive crossings gate the alarm") {
  Fixture fx;
  DetectorConfig cfg;
  cfg.window = 10;
  cfg.tau = 0.0;
  cfg.consecutive = 3;
  Detector d(fx.filter, ReferenceDistribution(fx.filter.sigma()), cfg);
  const auto run = simulate_run(fx.model, 30, InputPolicy::kExcitation, {}, 4);
  for (int t = 0; t < 30; ++t) {
    const Decision dec = d.process(run.U.row(t).transpose(), run.Y.row(t).transpose());
    CHECK(dec.alarm == (t >= 9 + 2));
  }
}

TEST_CASE("large bias raises an alarm within one window") {
  Fixture fx;
  const ReferenceDistribution ref(fx.filter.sigma());
  DetectorConfig cfg;
  const auto clean = simulate_run(fx.model, 20000, InputPolicy::kExcitation, {}, 5);
  cfg.tau = calibrate(fx.filter, Stream{clean.U, clean.Y}, cfg, 0.01, ReferenceKind::kTheoretical)
                .threshold.tau;
  const long onset = 3000;
  const std::vector<AttackScenario> attack{bias_injection({0}, onset, 4000, 10.0)};
  const auto run = simulate_run(fx.model, 5000, InputPolicy::kExcitation, attack, 6);
  const ScoredStream s = score_stream(fx.filter, ref, cfg, Stream{run.U, run.Y});
  long first = -1;
  for (long t = onset; t < 4000; ++t) {
    if (s.alarm[static_cast<std::size_t>(t)]) {
      first = t;
      break;
    }
  }
  REQUIRE(first >= 0);
  CHECK(first - onset <= cfg.window);
}

TEST_CASE("process rejects bad samples") {
  Fixture fx;
  Detector d(fx.filter, ReferenceDistribution(fx.filter.sigma()), DetectorConfig{});
  CHECK_THROWS_AS(d.process(Vector::Zero(1), Vector::Zero(3)), Error);
  CHECK_THROWS_AS(d.process(v1(std::nan("")), Vector::Zero(2)), Error);
}

TEST_CASE("score_stream equals the streaming detector") {
  Fixture fx;
  DetectorConfig cfg;
  cfg.window = 30;
  cfg.warmup = 10;
  cfg.tau = 0.2;
  const ReferenceDistribution ref(fx.filter.sigma());
  const auto run = simulate_run(fx.model, 500, InputPolicy::kExcitation, {}, 8);
  const ScoredStream s = score_stream(fx.filter, ref, cfg, Stream{run.U, run.Y});
  Detector d(fx.filter, ref, cfg);
  for (int t = 0; t < 500; ++t) {
    const Decision dec = d.process(run.U.row(t).transpose(), run.Y.row(t).transpose());
    const auto k = static_cast<std::size_t>(t);
    CHECK(dec.score.has_value() == s.scored(k));
    if (dec.score) CHECK(dec.score->value == s.kl[k]);
    CHECK(dec.alarm == static_cast<bool>(s.alarm[k]));
  }
}
