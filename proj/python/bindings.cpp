#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>

#include "itdt/calibrate.hpp"
#include "itdt/detector.hpp"
#include "itdt/error.hpp"
#include "itdt/eval.hpp"
#include "itdt/kalman.hpp"
#include "itdt/model.hpp"
#include "itdt/simulate.hpp"
#include "itdt/sysid.hpp"

namespace py = pybind11;
using namespace itdt;

namespace {

std::vector<std::uint8_t> as_flags(const std::vector<int>& v) {
  return std::vector<std::uint8_t>(v.begin(), v.end());
}

py::dict metrics_dict(const PointMetrics& m) {
  py::dict d;
  d["tp"] = m.tp;
  d["fp"] = m.fp;
  d["fn"] = m.fn;
  d["tn"] = m.tn;
  d["precision"] = m.precision;
  d["recall"] = m.recall;
  d["f1"] = m.f1;
  d["false_alarm_rate"] = m.false_alarm_rate;
  return d;
}

DetectorConfig make_config(int window, double epsilon, double tau, int warmup, int consecutive) {
  DetectorConfig c;
  c.window = window;
  c.epsilon = epsilon;
  c.tau = tau;
  c.warmup = warmup;
  c.consecutive = consecutive;
  c.check();
  return c;
}

}  // namespace

PYBIND11_MODULE(_itdt, m) {
  m.doc() = "Steady-state Kalman digital twin with a sliding-window KL anomaly score";

  py::register_exception<itdt::Error>(m, "Error", PyExc_RuntimeError);

  py::class_<StateSpaceModel>(m, "StateSpaceModel")
      .def(py::init([](Matrix A, Matrix B, Matrix C, Matrix Q, Matrix R) {
             return StateSpaceModel{std::move(A), std::move(B), std::move(C), std::move(Q),
                                    std::move(R)};
           }),
           py::arg("A"), py::arg("B"), py::arg("C"), py::arg("Q"), py::arg("R"))
      .def_readwrite("A", &StateSpaceModel::A)
      .def_readwrite("B", &StateSpaceModel::B)
      .def_readwrite("C", &StateSpaceModel::C)
      .def_readwrite("Q", &StateSpaceModel::Q)
      .def_readwrite("R", &StateSpaceModel::R)
      .def_property_readonly("n", &StateSpaceModel::n)
      .def_property_readonly("m", &StateSpaceModel::m)
      .def_property_readonly("p", &StateSpaceModel::p);

  m.def("validate", [](const StateSpaceModel& model) {
    py::list out;
    for (const auto& v : validate(model)) {
      out.append(py::make_tuple(std::string(to_string(v.code)), v.message, v.is_warning()));
    }
    return out;
  }, "List of (code, message, is_warning); empty when the model is valid.");

  m.def("solve_dare", [](const StateSpaceModel& model, double tol, long max_iter) {
    return solve_dare(model, DareOptions{tol, max_iter});
  }, py::arg("model"), py::arg("tol") = 1e-10, py::arg("max_iter") = 100000);

  py::class_<SteadyStateFilter>(m, "SteadyStateFilter")
      .def_property_readonly("model", &SteadyStateFilter::model)
      .def_property_readonly("P", &SteadyStateFilter::P)
      .def_property_readonly("K", &SteadyStateFilter::K)
      .def_property_readonly("sigma", &SteadyStateFilter::sigma);

  m.def("build_filter", [](const StateSpaceModel& model) { return build_filter(model); });

  m.def("filter_residuals", [](const SteadyStateFilter& f, Matrix U, Matrix Y) {
    return filter_residuals(f, Stream{std::move(U), std::move(Y)});
  }, py::arg("filter"), py::arg("U"), py::arg("Y"));

  m.def("kl_divergence",
        [](const Vector& mu_hat, const Matrix& sigma_hat, const Matrix& sigma) {
          return kl_divergence(mu_hat, sigma_hat, ReferenceDistribution(sigma)).value;
        },
        py::arg("mu_hat"), py::arg("sigma_hat"), py::arg("sigma"),
        "KL(N(mu_hat, sigma_hat) || N(0, sigma)).");

  py::class_<Detector>(m, "Detector")
      .def(py::init([](const SteadyStateFilter& f, const Matrix& reference_sigma, int window,
                       double epsilon, double tau, int warmup, int consecutive) {
             return Detector(f, ReferenceDistribution(reference_sigma),
                             make_config(window, epsilon, tau, warmup, consecutive));
           }),
           py::arg("filter"), py::arg("reference_sigma"), py::arg("window") = 60,
           py::arg("epsilon") = 1e-4, py::arg("tau") = std::numeric_limits<double>::infinity(),
           py::arg("warmup") = 0, py::arg("consecutive") = 1)
      .def("process", [](Detector& d, const Vector& u, const Vector& y) {
        const Decision out = d.process(u, y);
        py::object score = out.score ? py::cast(out.score->value) : py::none();
        return py::make_tuple(score, out.alarm);
      }, "Returns (kl or None while the window fills, alarm).");

  m.def("score_stream",
        [](const SteadyStateFilter& f, const Matrix& reference_sigma, Matrix U, Matrix Y,
           int window, double epsilon, double tau, int warmup, int consecutive) {
          const ScoredStream s =
              score_stream(f, ReferenceDistribution(reference_sigma),
                           make_config(window, epsilon, tau, warmup, consecutive),
                           Stream{std::move(U), std::move(Y)});
          std::vector<int> alarm(s.alarm.begin(), s.alarm.end());
          return py::make_tuple(s.kl, alarm);
        },
        py::arg("filter"), py::arg("reference_sigma"), py::arg("U"), py::arg("Y"),
        py::arg("window") = 60, py::arg("epsilon") = 1e-4,
        py::arg("tau") = std::numeric_limits<double>::infinity(), py::arg("warmup") = 0,
        py::arg("consecutive") = 1);

  m.def("fit_threshold", [](const std::vector<double>& scores, double alpha) {
    return fit_threshold(scores, alpha).tau;
  }, py::arg("scores"), py::arg("alpha") = 0.01);

  m.def("bootstrap_threshold",
        [](const std::vector<double>& scores, double alpha, int iterations, std::uint64_t seed) {
          const Threshold t = bootstrap_threshold(scores, alpha, iterations, seed);
          return py::make_tuple(t.tau, t.ci95->first, t.ci95->second);
        },
        py::arg("scores"), py::arg("alpha") = 0.01, py::arg("iterations") = 100,
        py::arg("seed") = 0, "Returns (tau, ci_low, ci_high).");

  m.def("gen_plant",
        [](int n, int m_in, int p, double rho, double process_noise, double measurement_noise,
           std::uint64_t seed) {
          return gen_plant(PlantSpec{n, m_in, p, rho, process_noise, measurement_noise, seed});
        },
        py::arg("n"), py::arg("m"), py::arg("p"), py::arg("spectral_radius") = 0.9,
        py::arg("process_noise") = 0.01, py::arg("measurement_noise") = 0.01,
        py::arg("seed") = 0);

  m.def("with_output_snr", &with_output_snr, py::arg("model"), py::arg("snr_db"));

  m.def("simulate",
        [](const StateSpaceModel& model, long length, std::uint64_t seed, bool excitation,
           std::vector<int> bias_channels, long bias_start, long bias_end, double bias) {
          std::vector<AttackScenario> attacks;
          if (!bias_channels.empty()) {
            attacks.push_back(bias_injection(bias_channels, bias_start, bias_end, bias));
          }
          const LabeledRun run =
              simulate_run(model, length,
                           excitation ? InputPolicy::kExcitation : InputPolicy::kZero, attacks,
                           seed);
          py::dict d;
          d["U"] = run.U;
          d["Y"] = run.Y;
          d["X"] = run.X;
          d["labels"] = std::vector<int>(run.labels.begin(), run.labels.end());
          return d;
        },
        py::arg("model"), py::arg("length"), py::arg("seed"), py::arg("excitation") = true,
        py::arg("bias_channels") = std::vector<int>{}, py::arg("bias_start") = 0,
        py::arg("bias_end") = 0, py::arg("bias") = 0.0);

  m.def("identify",
        [](Matrix U, Matrix Y, int horizon, int order, int max_order) {
          TrainingLog log;
          log.U = std::move(U);
          log.Y = std::move(Y);
          log.timestamps.resize(static_cast<std::size_t>(log.Y.rows()));
          for (std::size_t t = 0; t < log.timestamps.size(); ++t) {
            log.timestamps[t] = static_cast<double>(t);
          }
          IdentifyOptions opt;
          opt.horizon = horizon;
          opt.max_order = max_order;
          if (order > 0) opt.order = OrderStrategy::fixed_order(order);
          const IdentificationResult r = identify(log, opt);
          py::dict d;
          d["model"] = r.model;
          d["order"] = r.order;
          d["low_confidence"] = r.low_confidence;
          d["singular_values"] = r.hankel_singular_values;
          d["fit"] = r.fit_score;
          d["ljung_box_p"] = r.residual_diagnostics.p_value;
          d["input_mean"] = r.input_scaling.mean;
          d["input_scale"] = r.input_scaling.scale;
          d["output_mean"] = r.output_scaling.mean;
          d["output_scale"] = r.output_scaling.scale;
          return d;
        },
        py::arg("U"), py::arg("Y"), py::arg("horizon") = 60, py::arg("order") = 0,
        py::arg("max_order") = 30,
        "Subspace identification on standardized data; order 0 selects it automatically.");

  m.def("ljung_box", [](const Matrix& residuals, int max_lag) {
    const LjungBoxReport r = ljung_box(residuals, max_lag);
    return py::make_tuple(r.statistic, r.p_value);
  }, py::arg("residuals"), py::arg("max_lag") = 20);

  m.def("point_metrics",
        [](const std::vector<int>& alarms, const std::vector<int>& labels) {
          return metrics_dict(point_metrics(as_flags(alarms), as_flags(labels)));
        },
        py::arg("alarms"), py::arg("labels"));

  m.def("wilcoxon_signed_rank",
        [](const std::vector<double>& a, const std::vector<double>& b) {
          const WilcoxonResult r = wilcoxon_signed_rank(a, b);
          return py::make_tuple(r.statistic, r.p_value, r.exact);
        },
        py::arg("a"), py::arg("b"), "Returns (statistic, two-sided p, exact).");

  m.def("mardia_test", [](const Matrix& samples) {
    const MardiaResult r = mardia_test(samples);
    return py::make_tuple(r.p_skew, r.p_kurt);
  }, "Returns (p_skew, p_kurt).");

  m.def("write_model", [](const std::string& path, const SteadyStateFilter& f) {
    write_model_file(path, ModelFile{f, Provenance{}});
  });
  m.def("read_model", [](const std::string& path) { return read_model_file(path).filter; });
}
