#include "itdt/model.hpp"

#include <fstream>
#include <sstream>

#include "itdt/error.hpp"
#include "text_util.hpp"

namespace itdt {

std::string_view to_string(ViolationCode code) {
  switch (code) {
    case ViolationCode::kDimensionMismatch: return "DimensionMismatch";
    case ViolationCode::kNonFiniteEntry: return "NonFiniteEntry";
    case ViolationCode::kUnstableA: return "UnstableA";
    case ViolationCode::kMarginallyStable: return "MarginallyStable";
    case ViolationCode::kQNotSymmetric: return "QNotSymmetric";
    case ViolationCode::kQNotPositiveDefinite: return "QNotPositiveDefinite";
    case ViolationCode::kRNotSymmetric: return "RNotSymmetric";
    case ViolationCode::kRNotPositiveDefinite: return "RNotPositiveDefinite";
  }
  return "Unknown";
}

namespace {

std::string shape(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

bool spd(const Matrix& m) {
  Eigen::LLT<Matrix> llt(m);
  return llt.info() == Eigen::Success && (llt.matrixLLT().diagonal().array() > 0).all();
}

}  // namespace

std::vector<Violation> validate(const StateSpaceModel& model) {
  std::vector<Violation> out;
  const auto n = model.A.rows();
  const auto p = model.C.rows();
  auto dim_error = [&](const std::string& msg) {
    out.push_back({ViolationCode::kDimensionMismatch, msg});
  };
  if (n < 1 || model.A.cols() != n) dim_error("A must be square and non-empty, got " + shape(model.A));
  if (model.B.rows() != n) dim_error("B must have n rows, got " + shape(model.B));
  if (p < 1 || model.C.cols() != n) dim_error("C must be p x n, got " + shape(model.C));
  if (model.Q.rows() != n || model.Q.cols() != n) dim_error("Q must be n x n, got " + shape(model.Q));
  if (model.R.rows() != p || model.R.cols() != p) dim_error("R must be p x p, got " + shape(model.R));
  if (!out.empty()) return out;

  for (const Matrix* m : {&model.A, &model.B, &model.C, &model.Q, &model.R}) {
    if (!m->allFinite()) {
      out.push_back({ViolationCode::kNonFiniteEntry, "model contains NaN or Inf"});
      return out;
    }
  }

  const double rho = spectral_radius(model.A);
  if (rho >= 1.0) {
    out.push_back({ViolationCode::kUnstableA,
                   "spectral radius of A is " + text::format_double(rho)});
  } else if (rho >= 0.999) {
    out.push_back({ViolationCode::kMarginallyStable,
                   "spectral radius of A is " + text::format_double(rho)});
  }

  if (!is_symmetric(model.Q)) {
    out.push_back({ViolationCode::kQNotSymmetric, "Q is not symmetric"});
  } else if (!spd(model.Q)) {
    out.push_back({ViolationCode::kQNotPositiveDefinite, "Q is not positive definite"});
  }
  if (!is_symmetric(model.R)) {
    out.push_back({ViolationCode::kRNotSymmetric, "R is not symmetric"});
  } else if (!spd(model.R)) {
    out.push_back({ViolationCode::kRNotPositiveDefinite, "R is not positive definite"});
  }
  return out;
}

bool passes(const std::vector<Violation>& violations) {
  for (const auto& v : violations) {
    if (!v.is_warning()) return false;
  }
  return true;
}

SteadyStateFilter::SteadyStateFilter(StateSpaceModel model, Matrix P, Matrix K,
                                     Matrix sigma, double rel_tol)
    : model_(std::move(model)), P_(std::move(P)), K_(std::move(K)), sigma_(std::move(sigma)) {
  const auto n = model_.n();
  const auto p = model_.p();
  if (P_.rows() != n || P_.cols() != n || K_.rows() != n || K_.cols() != p ||
      sigma_.rows() != p || sigma_.cols() != p) {
    throw Error(ErrorCode::kDimensionMismatch, "filter matrices do not match model dimensions");
  }
  sigma_factor_ = SpdFactor(sigma_);
  const Matrix& C = model_.C;
  if (!near_rel(sigma_, C * P_ * C.transpose() + model_.R, rel_tol)) {
    throw Error(ErrorCode::kInternalConsistency, "Sigma != C P C' + R");
  }
  const Matrix k_expected = sigma_factor_.solve(C * P_).transpose();
  if (!near_rel(K_, k_expected, rel_tol)) {
    throw Error(ErrorCode::kInternalConsistency, "K != P C' Sigma^-1");
  }
}

Vector ChannelScaling::apply(const Eigen::Ref<const Vector>& x) const {
  if (empty()) return x;
  return (x - mean).cwiseQuotient(scale);
}

// ---------------------------------------------------------------------------
// Text format
//
//   itdt-model 1
//   dims <n> <m> <p>
//   matrix <name> <rows> <cols>      followed by <rows> lines of <cols> reals
//   provenance
//   <key> <value...>                 scalars, `vector <name> <len> <values>`,
//                                    `matrix ...`, `sweep <W> <tau> <f1>`
//   end
//
// Lines starting with '#' and blank lines are ignored.
// ---------------------------------------------------------------------------

namespace {

std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == '%') out += "%25";
    else if (c == ' ') out += "%20";
    else if (c == '\t') out += "%09";
    else out += c;
  }
  return out;
}

std::string unescape(std::string_view s) {
  std::string out;
  for (size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '%' && i + 2 < s.size()) {
      const auto code = s.substr(i + 1, 2);
      if (code == "25") { out += '%'; i += 2; continue; }
      if (code == "20") { out += ' '; i += 2; continue; }
      if (code == "09") { out += '\t'; i += 2; continue; }
    }
    out += s[i];
  }
  return out;
}

void write_matrix(std::ostream& os, std::string_view name, const Matrix& m) {
  os << "matrix " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) os << ' ';
      os << text::format_double(m(i, j));
    }
    os << '\n';
  }
}

void write_vector(std::ostream& os, std::string_view name, const Vector& v) {
  os << "vector " << name << ' ' << v.size();
  for (Eigen::Index i = 0; i < v.size(); ++i) os << ' ' << text::format_double(v(i));
  os << '\n';
}

void write_names(std::ostream& os, std::string_view key, const std::vector<std::string>& names) {
  os << key;
  for (const auto& n : names) os << ' ' << escape(n);
  os << '\n';
}

class LineReader {
 public:
  explicit LineReader(std::string_view text) : text_(text) {}

  // Next significant line, or nullopt at end of input.
  std::optional<std::string_view> next() {
    while (pos_ < text_.size()) {
      auto end = text_.find('\n', pos_);
      if (end == std::string_view::npos) end = text_.size();
      auto line = text::trim(text_.substr(pos_, end - pos_));
      pos_ = end + 1;
      ++line_no_;
      if (line.empty() || line.front() == '#') continue;
      return line;
    }
    return std::nullopt;
  }

  // Next raw line (matrix rows may be empty when cols == 0).
  std::string_view require_row() {
    if (pos_ >= text_.size()) fail("unexpected end of file inside matrix");
    auto end = text_.find('\n', pos_);
    if (end == std::string_view::npos) end = text_.size();
    auto line = text::trim(text_.substr(pos_, end - pos_));
    pos_ = end + 1;
    ++line_no_;
    return line;
  }

  std::string_view require() {
    auto line = next();
    if (!line) fail("unexpected end of file");
    return *line;
  }

  [[noreturn]] void fail(const std::string& reason) const {
    throw Error(ErrorCode::kParseError, "line " + std::to_string(line_no_) + ": " + reason);
  }

 private:
  std::string_view text_;
  size_t pos_ = 0;
  long line_no_ = 0;
};

double to_double(LineReader& r, std::string_view tok) {
  auto v = text::parse_double(tok);
  if (!v || !std::isfinite(*v)) r.fail("invalid real '" + std::string(tok) + "'");
  return *v;
}

long to_long(LineReader& r, std::string_view tok) {
  auto v = text::parse_long(tok);
  if (!v) r.fail("invalid integer '" + std::string(tok) + "'");
  return *v;
}

Matrix read_matrix_body(LineReader& r, const std::vector<std::string_view>& head) {
  if (head.size() != 4) r.fail("matrix header needs name, rows, cols");
  const long rows = to_long(r, head[2]);
  const long cols = to_long(r, head[3]);
  if (rows < 0 || cols < 0) r.fail("negative matrix dimension");
  Matrix m(rows, cols);
  for (long i = 0; i < rows; ++i) {
    auto toks = text::split_ws(r.require_row());
    if (static_cast<long>(toks.size()) != cols) {
      r.fail("matrix " + std::string(head[1]) + " row " + std::to_string(i) + " has " +
             std::to_string(toks.size()) + " entries, expected " + std::to_string(cols));
    }
    for (long j = 0; j < cols; ++j) m(i, j) = to_double(r, toks[j]);
  }
  return m;
}

Vector read_vector(LineReader& r, const std::vector<std::string_view>& toks) {
  if (toks.size() < 3) r.fail("vector needs name and length");
  const long len = to_long(r, toks[2]);
  if (len < 0 || static_cast<long>(toks.size()) != 3 + len) r.fail("vector length mismatch");
  Vector v(len);
  for (long i = 0; i < len; ++i) v(i) = to_double(r, toks[3 + i]);
  return v;
}

}  // namespace

std::string serialize(const ModelFile& file) {
  const auto& f = file.filter;
  const auto& mdl = f.model();
  const auto& pv = file.provenance;
  std::ostringstream os;
  os << "itdt-model " << ModelFile::kVersion << '\n';
  os << "dims " << mdl.n() << ' ' << mdl.m() << ' ' << mdl.p() << '\n';
  write_matrix(os, "A", mdl.A);
  write_matrix(os, "B", mdl.B);
  write_matrix(os, "C", mdl.C);
  write_matrix(os, "Q", mdl.Q);
  write_matrix(os, "R", mdl.R);
  write_matrix(os, "P", f.P());
  write_matrix(os, "K", f.K());
  write_matrix(os, "Sigma", f.sigma());
  os << "provenance\n";
  if (!pv.created.empty()) os << "created " << escape(pv.created) << '\n';
  if (!pv.training_hash.empty()) os << "training_hash " << escape(pv.training_hash) << '\n';
  os << "order " << pv.order << '\n';
  os << "horizon " << pv.horizon << '\n';
  write_names(os, "input_columns", pv.input_columns);
  write_names(os, "output_columns", pv.output_columns);
  if (!pv.input_scaling.empty()) {
    write_vector(os, "u_mean", pv.input_scaling.mean);
    write_vector(os, "u_scale", pv.input_scaling.scale);
  }
  if (!pv.output_scaling.empty()) {
    write_vector(os, "y_mean", pv.output_scaling.mean);
    write_vector(os, "y_scale", pv.output_scaling.scale);
  }
  os << "reference " << pv.reference << '\n';
  if (pv.reference_sigma) write_matrix(os, "reference_sigma", *pv.reference_sigma);
  if (pv.tau) os << "tau " << text::format_double(*pv.tau) << '\n';
  if (pv.alpha) os << "alpha " << text::format_double(*pv.alpha) << '\n';
  if (pv.calibration_samples) os << "calibration_samples " << *pv.calibration_samples << '\n';
  if (pv.tau_ci95) {
    os << "tau_ci95 " << text::format_double(pv.tau_ci95->first) << ' '
       << text::format_double(pv.tau_ci95->second) << '\n';
  }
  if (pv.window) os << "window " << *pv.window << '\n';
  if (pv.epsilon) os << "epsilon " << text::format_double(*pv.epsilon) << '\n';
  if (pv.warmup) os << "warmup " << *pv.warmup << '\n';
  if (pv.consecutive) os << "consecutive " << *pv.consecutive << '\n';
  for (const auto& row : pv.sweep) {
    os << "sweep " << row.window << ' ' << text::format_double(row.tau) << ' '
       << text::format_double(row.f1) << '\n';
  }
  os << "end\n";
  return os.str();
}

ModelFile parse(std::string_view text) {
  LineReader r(text);
  auto head = text::split_ws(r.require());
  if (head.size() != 2 || head[0] != "itdt-model") r.fail("missing 'itdt-model <version>' header");
  const long version = to_long(r, head[1]);
  if (version != ModelFile::kVersion) {
    throw Error(ErrorCode::kVersionMismatch, "model file version " + std::to_string(version) +
                                                 " is not supported (expected " +
                                                 std::to_string(ModelFile::kVersion) + ")");
  }
  auto dims = text::split_ws(r.require());
  if (dims.size() != 4 || dims[0] != "dims") r.fail("expected 'dims <n> <m> <p>'");
  const long n = to_long(r, dims[1]);
  const long m = to_long(r, dims[2]);
  const long p = to_long(r, dims[3]);

  auto expect_matrix = [&](std::string_view name, long rows, long cols) {
    auto toks = text::split_ws(r.require());
    if (toks.size() < 2 || toks[0] != "matrix" || toks[1] != name) {
      r.fail("expected matrix " + std::string(name));
    }
    Matrix mat = read_matrix_body(r, toks);
    if (mat.rows() != rows || mat.cols() != cols) {
      r.fail("matrix " + std::string(name) + " has wrong shape");
    }
    return mat;
  };

  StateSpaceModel mdl;
  mdl.A = expect_matrix("A", n, n);
  mdl.B = expect_matrix("B", n, m);
  mdl.C = expect_matrix("C", p, n);
  mdl.Q = expect_matrix("Q", n, n);
  mdl.R = expect_matrix("R", p, p);
  Matrix P = expect_matrix("P", n, n);
  Matrix K = expect_matrix("K", n, p);
  Matrix sigma = expect_matrix("Sigma", p, p);
  if (r.require() != "provenance") r.fail("expected 'provenance'");

  Provenance pv;
  bool ended = false;
  while (auto line = r.next()) {
    auto toks = text::split_ws(*line);
    const auto key = toks[0];
    auto one = [&]() {
      if (toks.size() != 2) r.fail("'" + std::string(key) + "' takes one value");
      return toks[1];
    };
    if (key == "end") {
      ended = true;
      break;
    } else if (key == "created") {
      pv.created = unescape(one());
    } else if (key == "training_hash") {
      pv.training_hash = unescape(one());
    } else if (key == "order") {
      pv.order = static_cast<int>(to_long(r, one()));
    } else if (key == "horizon") {
      pv.horizon = static_cast<int>(to_long(r, one()));
    } else if (key == "input_columns" || key == "output_columns") {
      auto& dst = key == "input_columns" ? pv.input_columns : pv.output_columns;
      for (size_t i = 1; i < toks.size(); ++i) dst.push_back(unescape(toks[i]));
    } else if (key == "vector") {
      Vector v = read_vector(r, toks);
      if (toks[1] == "u_mean") pv.input_scaling.mean = v;
      else if (toks[1] == "u_scale") pv.input_scaling.scale = v;
      else if (toks[1] == "y_mean") pv.output_scaling.mean = v;
      else if (toks[1] == "y_scale") pv.output_scaling.scale = v;
      else r.fail("unknown vector '" + std::string(toks[1]) + "'");
    } else if (key == "reference") {
      pv.reference = std::string(one());
      if (pv.reference != "empirical" && pv.reference != "theoretical") {
        r.fail("reference must be 'empirical' or 'theoretical'");
      }
    } else if (key == "matrix") {
      if (toks.size() < 2 || toks[1] != "reference_sigma") r.fail("unknown provenance matrix");
      Matrix ref = read_matrix_body(r, toks);
      if (ref.rows() != p || ref.cols() != p) r.fail("reference_sigma must be p x p");
      pv.reference_sigma = std::move(ref);
    } else if (key == "tau") {
      pv.tau = to_double(r, one());
    } else if (key == "alpha") {
      pv.alpha = to_double(r, one());
    } else if (key == "calibration_samples") {
      pv.calibration_samples = to_long(r, one());
    } else if (key == "tau_ci95") {
      if (toks.size() != 3) r.fail("tau_ci95 takes two values");
      pv.tau_ci95 = std::make_pair(to_double(r, toks[1]), to_double(r, toks[2]));
    } else if (key == "window") {
      pv.window = static_cast<int>(to_long(r, one()));
    } else if (key == "epsilon") {
      pv.epsilon = to_double(r, one());
    } else if (key == "warmup") {
      pv.warmup = static_cast<int>(to_long(r, one()));
    } else if (key == "consecutive") {
      pv.consecutive = static_cast<int>(to_long(r, one()));
    } else if (key == "sweep") {
      if (toks.size() != 4) r.fail("sweep takes W, tau, f1");
      pv.sweep.push_back({static_cast<int>(to_long(r, toks[1])), to_double(r, toks[2]),
                          to_double(r, toks[3])});
    } else {
      r.fail("unknown provenance key '" + std::string(key) + "'");
    }
  }
  if (!ended) r.fail("truncated file: missing 'end'");
  if ((pv.input_scaling.mean.size() != pv.input_scaling.scale.size()) ||
      (pv.output_scaling.mean.size() != pv.output_scaling.scale.size())) {
    r.fail("scaling mean/scale length mismatch");
  }
  if ((!pv.input_scaling.empty() && pv.input_scaling.mean.size() != m) ||
      (!pv.output_scaling.empty() && pv.output_scaling.mean.size() != p)) {
    r.fail("scaling vectors do not match model dimensions");
  }

  return ModelFile{SteadyStateFilter(std::move(mdl), std::move(P), std::move(K), std::move(sigma)),
                   std::move(pv)};
}

ModelFile read_model_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kParseError, "cannot open model file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void write_model_file(const std::string& path, const ModelFile& file) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kInvalidArgument, "cannot write model file '" + path + "'");
  out << serialize(file);
  if (!out) throw Error(ErrorCode::kInvalidArgument, "failed writing '" + path + "'");
}

}  // namespace itdt
