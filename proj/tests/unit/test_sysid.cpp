#include <doctest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "itdt/calibrate.hpp"
#include "itdt/error.hpp"
#include "itdt/simulate.hpp"
#include "itdt/sysid.hpp"

using namespace itdt;

namespace {

TrainingLog make_log(const Matrix& U, const Matrix& Y) {
  TrainingLog log;
  log.U = U;
  log.Y = Y;
  for (Eigen::Index t = 0; t < Y.rows(); ++t) log.timestamps.push_back(static_cast<double>(t));
  return log;
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kInternalConsistency;
}

}  // namespace

TEST_CASE("build_hankel shift structure") {
  Matrix y(5, 1);
  y << 1, 2, 3, 4, 5;
  const auto h = build_hankel(make_log(Matrix(5, 0), y), 2);
  Matrix past(2, 2), future(2, 2);
  past << 1, 2, 2, 3;
  future << 3, 4, 4, 5;
  CHECK(h.past_y == past);
  CHECK(h.future_y == future);
  CHECK(h.past_u.rows() == 0);

  CHECK(code_of([&] { build_hankel(make_log(Matrix(3, 0), y.topRows(3)), 2); }) ==
        ErrorCode::kInsufficientData);

  const Matrix flat = Matrix::Constant(40, 1, 3.0);
  const auto c = build_hankel(make_log(Matrix(40, 0), flat), 5);
  Matrix stacked(10, c.past_y.cols());
  stacked << c.past_y, c.future_y;
  const Vector s = svd(stacked).s;
  CHECK(s(0) > 1.0);
  CHECK(s(1) <= 1e-10);
}

TEST_CASE("check_training_log") {
  TrainingLog log = make_log(Matrix(10, 0), Matrix::Ones(10, 1));
  CHECK_NOTHROW(check_training_log(log));
  log.timestamps[4] = log.timestamps[3];
  CHECK(code_of([&] { check_training_log(log); }) == ErrorCode::kInvalidArgument);
  log = make_log(Matrix(10, 0), Matrix::Ones(10, 1));
  log.timestamps[4] += 0.3;
  CHECK(code_of([&] { check_training_log(log); }) == ErrorCode::kInvalidArgument);
  log = make_log(Matrix(10, 0), Matrix::Ones(10, 1));
  log.Y(2, 0) = std::nan("");
  CHECK(code_of([&] { check_training_log(log); }) == ErrorCode::kNonFiniteInput);
}

TEST_CASE("select_order") {
  Vector s(4);
  s << 10, 5, 1e-6, 1e-7;
  const auto r = select_order(s, OrderStrategy::max_gap_ratio());
  CHECK(r.order == 2);
  CHECK_FALSE(r.low_confidence);

  const Vector twenty = Vector::LinSpaced(20, 20.0, 1.0);
  CHECK(select_order(twenty, OrderStrategy::fixed_order(12)).order == 12);

  const auto flat = select_order(Vector::Ones(4), OrderStrategy::max_gap_ratio());
  CHECK(flat.order == 1);
  CHECK(flat.low_confidence);

  Vector e(3);
  e << 3, 2, 1;  // energies 9, 4, 1 of 14
  CHECK(select_order(e, OrderStrategy::energy_threshold(0.9)).order == 2);
  CHECK(select_order(e, OrderStrategy::energy_threshold(0.95)).order == 3);

  CHECK(code_of([] { select_order(Vector::Zero(3), OrderStrategy::max_gap_ratio()); }) ==
        ErrorCode::kDegenerateSpectrum);
}

TEST_CASE("ljung_box on white noise has the nominal per-lag size") {
  int rejections = 0, tests = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto r = ljung_box(itdt::test::gaussian(5000, 1, seed), 20);
    REQUIRE(r.p_value.size() == 20);
    for (double p : r.p_value) {
      rejections += p <= 0.05;
      ++tests;
    }
  }
  const double rate = static_cast<double>(rejections) / tests;
  CHECK(rate >= 0.02);
  CHECK(rate <= 0.09);
}

TEST_CASE("ljung_box detects AR(1)") {
  const Matrix e = itdt::test::gaussian(5000, 1, 3);
  Matrix x(5000, 1);
  x(0, 0) = e(0, 0);
  for (int t = 1; t < 5000; ++t) x(t, 0) = 0.9 * x(t - 1, 0) + e(t, 0);
  const auto r = ljung_box(x, 20);
  CHECK(r.p_value[0] < 0.01);
  const double rho1 = [&] {
    const Eigen::ArrayXd c = x.col(0).array() - x.mean();
    return (c.head(4999) * c.tail(4999)).sum() / c.square().sum();
  }();
  CHECK(r.statistic[0] == doctest::Approx(5000.0 * 5002.0 * rho1 * rho1 / 4999.0).epsilon(1e-10));
  CHECK(code_of([] { ljung_box(Matrix::Constant(500, 1, 2.0), 20); }) ==
        ErrorCode::kInsufficientData);
}

TEST_CASE("identify recovers a scalar pole") {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> nd(0.0, 0.1);
  Matrix y(20000, 1);
  double x = 0.0;
  for (int t = 0; t < 20000; ++t) {
    y(t, 0) = x + nd(rng);
    x = 0.5 * x + nd(rng);
  }
  IdentifyOptions opt;
  opt.horizon = 10;
  const auto r = identify(make_log(Matrix(20000, 0), y), opt);
  CHECK(r.order == 1);
  CHECK(std::abs(r.model.A(0, 0) - 0.5) <= 0.05);
  CHECK(passes(validate(r.model)));
}

TEST_CASE("identify a 2-state oscillatory plant") {
  StateSpaceModel base;
  base.A.resize(2, 2);
  base.A << 0.8 * std::cos(0.4), -0.8 * std::sin(0.4), 0.8 * std::sin(0.4), 0.8 * std::cos(0.4);
  base.B = Eigen::Vector2d(1.0, 0.5);
  base.C = Eigen::RowVector2d(1.0, 0.0);
  base.Q = 0.01 * Matrix::Identity(2, 2);
  base.R = 0.01 * Matrix::Identity(1, 1);
  const auto plant = with_output_snr(base, 20.0);
  const auto run = simulate_run(plant, 50000, InputPolicy::kExcitation, {}, 17);
  const long train = 40000;
  IdentifyOptions opt;
  opt.horizon = 10;
  const auto r = identify(make_log(run.U.topRows(train), run.Y.topRows(train)), opt);
  CHECK(r.order == 2);
  const Vector& s = r.hankel_singular_values;
  CHECK(s(1) / s(2) >= 10.0);

  // Held-out tail, replayed in standardized coordinates from a burn-in.
  const Matrix u = scale_rows(r.input_scaling, run.U.bottomRows(10000));
  const Matrix yy = scale_rows(r.output_scaling, run.Y.bottomRows(10000));
  const Vector vaf = variance_accounted_for(r.model, u, yy, Vector(), 200);
  CHECK(vaf.minCoeff() >= 0.95);
  CHECK(r.fit_score.minCoeff() >= 0.95);
}

TEST_CASE("identify rejects white noise") {
  const Matrix y = itdt::test::gaussian(5000, 2, 4);
  IdentifyOptions opt;
  opt.horizon = 8;
  const auto code = code_of([&] { identify(make_log(Matrix(5000, 0), y), opt); });
  CHECK(code == ErrorCode::kDegenerateSpectrum);
}

TEST_CASE("identified filter gives near-white residuals on its own data") {
  const auto plant =
      with_output_snr(gen_plant(PlantSpec{3, 1, 2, 0.85, 0.01, 0.01, 8}), 20.0);
  const auto run = simulate_run(plant, 20000, InputPolicy::kExcitation, {}, 9);
  IdentifyOptions opt;
  opt.horizon = 10;
  const auto r = identify(make_log(run.U, run.Y), opt);
  const auto f = build_filter(r.model);
  const Matrix res = filter_residuals(
      f, Stream{scale_rows(r.input_scaling, run.U), scale_rows(r.output_scaling, run.Y)});
  const Matrix tail = res.bottomRows(15000);
  const Matrix c = tail.rowwise() - tail.colwise().mean();
  const Matrix cov = c.transpose() * c / 15000.0;
  // One-step prediction error stays near the filter's own Sigma.
  CHECK(near_rel(cov, f.sigma(), 0.25));
}
