#include "itdt/sysid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "itdt/error.hpp"
#include "itdt/kalman.hpp"
#include "stats_util.hpp"
#include "text_util.hpp"

namespace itdt {

namespace {

using Index = Eigen::Index;

// Σ_{c=0}^{j-1} z_{a+c} z_{b+c}ᵀ for every pair of block rows (a, b) of the
// 2i-block Hankel matrix of z, from lagged full-range products minus the
// few boundary terms. Avoids materializing the (2iq) x j Hankel matrix.
Matrix hankel_gram(const Matrix& z, int blocks, Index cols) {
  const Index t_len = z.rows();
  const Index q = z.cols();
  Matrix gram(blocks * q, blocks * q);
  for (int d = 0; d < blocks; ++d) {
    const Matrix full = z.topRows(t_len - d).transpose() * z.bottomRows(t_len - d);
    for (int a = 0; a + d < blocks; ++a) {
      const int b = a + d;
      Matrix g = full;
      for (Index t = 0; t < a; ++t) g.noalias() -= z.row(t).transpose() * z.row(t + d);
      for (Index t = a + cols; t <= t_len - 1 - d; ++t) {
        g.noalias() -= z.row(t).transpose() * z.row(t + d);
      }
      gram.block(a * q, b * q, q, q) = g;
      if (d > 0) gram.block(b * q, a * q, q, q) = g.transpose();
    }
  }
  return gram;
}

ChannelScaling fit_scaling(const Matrix& data) {
  ChannelScaling s;
  const Index t_len = data.rows();
  s.mean = data.colwise().mean();
  s.scale.resize(data.cols());
  for (Index c = 0; c < data.cols(); ++c) {
    const double var = (data.col(c).array() - s.mean(c)).square().sum() / static_cast<double>(t_len);
    s.scale(c) = var > 1e-24 ? std::sqrt(var) : 1.0;
  }
  return s;
}

ChannelScaling identity_scaling(Index dim) {
  return ChannelScaling{Vector::Zero(dim), Vector::Ones(dim)};
}

Matrix simulate_open_loop(const StateSpaceModel& model, const Matrix& U, const Vector& x0) {
  const Index t_len = U.rows();
  Matrix out(t_len, model.p());
  Vector x = x0.size() ? x0 : Vector::Zero(model.n());
  for (Index t = 0; t < t_len; ++t) {
    out.row(t) = (model.C * x).transpose();
    x = model.A * x;
    if (model.m() > 0) x.noalias() += model.B * U.row(t).transpose();
  }
  return out;
}

// Least squares for vec(B) and x₀ in y_t = C Aᵗ x₀ + Σ_{k<t} C A^{t-1-k} B u_k.
void estimate_b_x0(const Matrix& A, const Matrix& C, const Matrix& U, const Matrix& Y, Matrix& B,
                   Vector& x0) {
  const Index n = A.rows(), m = U.cols(), p = C.rows();
  const Index params = n + n * m;
  Matrix sens = Matrix::Zero(n, params);
  sens.leftCols(n).setIdentity();
  Matrix normal = Matrix::Zero(params, params);
  Vector rhs = Vector::Zero(params);
  Matrix phi(p, params);
  for (Index t = 0; t < Y.rows(); ++t) {
    phi.noalias() = C * sens;
    normal.noalias() += phi.transpose() * phi;
    rhs.noalias() += phi.transpose() * Y.row(t).transpose();
    Matrix next = A * sens;
    for (Index c = 0; c < m; ++c) next.block(0, n + c * n, n, n).diagonal().array() += U(t, c);
    sens.swap(next);
  }
  normal.diagonal().array() += 1e-12 * std::max(1.0, normal.diagonal().maxCoeff());
  const Vector theta = normal.ldlt().solve(rhs);
  x0 = theta.head(n);
  B = Eigen::Map<const Matrix>(theta.data() + n, n, m);
}

// Q(M) = P_post(M) + K_f Σe K_fᵀ − A P_post(M) Aᵀ with
// P_post(M) = G (C G)⁻¹ Gᵀ + Z M Zᵀ, Z spanning null(C). Every M ⪰ 0 keeps the
// filter gain and innovation covariance; alternating projections look for
// one that also makes Q positive semidefinite.
Matrix posterior_covariance(const Matrix& A, const Matrix& C, const Matrix& base,
                            const Matrix& fixed) {
  const Index n = A.rows();
  const Eigen::JacobiSVD<Matrix> dec(C, Eigen::ComputeFullV);
  const Index rank = dec.rank();
  const Index d = n - rank;
  auto q_of = [&](const Matrix& pp) { return symmetrized(pp + fixed - A * pp * A.transpose()); };
  auto min_eig = [](const Matrix& m) {
    return Eigen::SelfAdjointEigenSolver<Matrix>(m, Eigen::EigenvaluesOnly).eigenvalues()(0);
  };
  if (d == 0 || min_eig(q_of(base)) >= 0.0) return base;

  const Matrix Z = dec.matrixV().rightCols(d);
  const Index unknowns = d * (d + 1) / 2;
  Matrix design(n * n, unknowns);
  std::vector<std::pair<Index, Index>> slots;
  for (Index a = 0; a < d; ++a) {
    for (Index b = a; b < d; ++b) {
      Matrix e = Matrix::Zero(d, d);
      e(a, b) = 1.0;
      e(b, a) = 1.0;
      const Matrix zez = Z * e * Z.transpose();
      const Matrix term = zez - A * zez * A.transpose();
      design.col(static_cast<Index>(slots.size())) = Eigen::Map<const Vector>(term.data(), n * n);
      slots.emplace_back(a, b);
    }
  }
  const auto solver = design.colPivHouseholderQr();
  const Matrix q_base = q_of(base);
  const double floor = 1e-6 * std::max(q_base.trace() / static_cast<double>(n), 1e-300);
  Matrix M = Matrix::Zero(d, d);
  Matrix best = base;
  for (int it = 0; it < 500; ++it) {
    const Matrix pp = base + Z * M * Z.transpose();
    const Matrix q = q_of(pp);
    if (min_eig(q) >= 0.0) return pp;
    const Matrix target = clip_to_spd(q, floor) - q_base;
    const Vector coef = solver.solve(Eigen::Map<const Vector>(target.data(), n * n));
    Matrix next = Matrix::Zero(d, d);
    for (std::size_t k = 0; k < slots.size(); ++k) {
      next(slots[k].first, slots[k].second) = coef(static_cast<Index>(k));
      next(slots[k].second, slots[k].first) = coef(static_cast<Index>(k));
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(next);
    M = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).asDiagonal() *
        es.eigenvectors().transpose();
    best = base + Z * M * Z.transpose();
  }
  return best;
}

}  // namespace

void check_training_log(const TrainingLog& log) {
  const Index t_len = log.length();
  if (log.U.rows() != t_len || static_cast<Index>(log.timestamps.size()) != t_len) {
    throw Error(ErrorCode::kLengthMismatch, "timestamps, U and Y must have the same length");
  }
  if (!log.U.allFinite() || !log.Y.allFinite()) {
    throw Error(ErrorCode::kNonFiniteInput, "training log has missing or non-finite values");
  }
  if (t_len < 2) return;
  std::vector<double> dt(static_cast<std::size_t>(t_len - 1));
  for (Index t = 1; t < t_len; ++t) {
    dt[static_cast<std::size_t>(t - 1)] = log.timestamps[t] - log.timestamps[t - 1];
    if (!(dt[static_cast<std::size_t>(t - 1)] > 0.0)) {
      throw Error(ErrorCode::kInvalidArgument,
                  "timestamps not strictly increasing at row " + std::to_string(t));
    }
  }
  std::vector<double> sorted = dt;
  std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
  const double period = sorted[sorted.size() / 2];
  for (std::size_t k = 0; k < dt.size(); ++k) {
    if (std::abs(dt[k] - period) > 0.01 * period) {
      throw Error(ErrorCode::kInvalidArgument,
                  "non-uniform sampling at row " + std::to_string(k + 1));
    }
  }
}

HankelBlocks build_hankel(const TrainingLog& log, int horizon) {
  if (horizon < 1) throw Error(ErrorCode::kInvalidArgument, "horizon must be positive");
  const Index t_len = log.length();
  if (t_len < 2 * static_cast<Index>(horizon)) {
    throw Error(ErrorCode::kInsufficientData, "need at least " + std::to_string(2 * horizon) +
                                                  " samples, got " + std::to_string(t_len));
  }
  const Index cols = t_len - 2 * horizon + 1;
  auto blocks = [&](const Matrix& data, Index first_block) {
    const Index dim = data.cols();
    Matrix h(horizon * dim, cols);
    for (Index r = 0; r < horizon; ++r) {
      h.middleRows(r * dim, dim) = data.middleRows(first_block + r, cols).transpose();
    }
    return h;
  };
  return HankelBlocks{blocks(log.U, 0), blocks(log.U, horizon), blocks(log.Y, 0),
                      blocks(log.Y, horizon)};
}

OrderSelection select_order(const Eigen::Ref<const Vector>& s, const OrderStrategy& strategy) {
  const Index len = s.size();
  if (len == 0) throw Error(ErrorCode::kInvalidArgument, "no singular values");
  for (Index k = 1; k < len; ++k) {
    if (s(k) > s(k - 1) || s(k) < 0.0) {
      throw Error(ErrorCode::kInvalidArgument, "singular values must be descending, nonnegative");
    }
  }
  if (s(0) < 1e-12) {
    throw Error(ErrorCode::kDegenerateSpectrum, "all singular values below 1e-12");
  }
  OrderSelection out;
  switch (strategy.kind) {
    case OrderStrategy::Kind::kFixed:
      if (strategy.fixed < 1 || strategy.fixed > len) {
        throw Error(ErrorCode::kInvalidArgument, "fixed order " + std::to_string(strategy.fixed) +
                                                     " outside [1, " + std::to_string(len) + "]");
      }
      out.order = strategy.fixed;
      return out;
    case OrderStrategy::Kind::kEnergyThreshold: {
      if (!(strategy.energy > 0.0 && strategy.energy <= 1.0)) {
        throw Error(ErrorCode::kInvalidArgument, "energy fraction must lie in (0, 1]");
      }
      const double total = s.squaredNorm();
      double acc = 0.0;
      for (Index k = 0; k < len; ++k) {
        acc += s(k) * s(k);
        if (acc >= strategy.energy * total * (1.0 - 1e-12)) {
          out.order = static_cast<int>(k + 1);
          return out;
        }
      }
      out.order = static_cast<int>(len);
      return out;
    }
    case OrderStrategy::Kind::kMaxGapRatio:
      break;
  }
  if (len == 1) return OrderSelection{1, true};
  double best = -1.0;
  int best_k = 1;
  bool tie = false;
  for (Index k = 0; k + 1 < len; ++k) {
    if (s(k) < 1e-8 * s(0)) break;
    const double ratio = s(k + 1) > 0.0 ? s(k) / s(k + 1) : std::numeric_limits<double>::infinity();
    if (ratio > best * (1.0 + 1e-12)) {
      best = ratio;
      best_k = static_cast<int>(k + 1);
      tie = false;
    } else if (ratio >= best * (1.0 - 1e-12)) {
      tie = true;
    }
  }
  return OrderSelection{best_k, tie};
}

LjungBoxReport ljung_box(const Eigen::Ref<const Matrix>& residuals, int max_lag) {
  const Index t_len = residuals.rows();
  const Index p = residuals.cols();
  if (max_lag < 1 || t_len < 5 * static_cast<Index>(max_lag) || p < 1) {
    throw Error(ErrorCode::kInsufficientData, "Ljung-Box needs T >= 5 * maxLag");
  }
  LjungBoxReport rep;
  rep.channel_statistic.resize(max_lag, p);
  Matrix pvals(max_lag, p);
  const double tt = static_cast<double>(t_len);
  for (Index c = 0; c < p; ++c) {
    const Eigen::ArrayXd x = residuals.col(c).array() - residuals.col(c).mean();
    const double denom = x.square().sum();
    if (!(denom > 1e-300)) {
      throw Error(ErrorCode::kInsufficientData,
                  "Ljung-Box: channel " + std::to_string(c) + " has zero variance");
    }
    double q = 0.0;
    for (int k = 1; k <= max_lag; ++k) {
      const double rho = (x.head(t_len - k) * x.tail(t_len - k)).sum() / denom;
      q += rho * rho / (tt - k);
      const double stat = tt * (tt + 2.0) * q;
      rep.channel_statistic(k - 1, c) = stat;
      pvals(k - 1, c) = stats::chi_squared_sf(stat, k);
    }
  }
  for (int k = 1; k <= max_lag; ++k) {
    Index worst = 0;
    pvals.row(k - 1).minCoeff(&worst);
    rep.lags.push_back(k);
    rep.p_value.push_back(pvals(k - 1, worst));
    rep.statistic.push_back(rep.channel_statistic(k - 1, worst));
  }
  return rep;
}

Matrix scale_rows(const ChannelScaling& scaling, const Eigen::Ref<const Matrix>& data) {
  if (scaling.empty()) return data;
  if (scaling.mean.size() != data.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "scaling does not match column count");
  }
  return ((data.rowwise() - scaling.mean.transpose()).array().rowwise() /
          scaling.scale.transpose().array())
      .matrix();
}

Vector variance_accounted_for(const StateSpaceModel& model, const Eigen::Ref<const Matrix>& U,
                              const Eigen::Ref<const Matrix>& Y, const Vector& x0, long burn_in) {
  if (U.rows() != Y.rows() || Y.cols() != model.p() || U.cols() != model.m()) {
    throw Error(ErrorCode::kDimensionMismatch, "variance_accounted_for: shape mismatch");
  }
  if (burn_in < 0 || burn_in >= Y.rows() - 1) {
    throw Error(ErrorCode::kInsufficientData, "burn-in leaves no samples");
  }
  const Matrix yhat = simulate_open_loop(model, U, x0);
  const Index used = Y.rows() - burn_in;
  Vector vaf(model.p());
  for (Index c = 0; c < model.p(); ++c) {
    const Eigen::ArrayXd y = Y.col(c).tail(used).array();
    const Eigen::ArrayXd e = y - yhat.col(c).tail(used).array();
    const double var_y = (y - y.mean()).square().mean();
    const double var_e = (e - e.mean()).square().mean();
    vaf(c) = var_y > 0.0 ? 1.0 - var_e / var_y : -std::numeric_limits<double>::infinity();
  }
  return vaf;
}

IdentificationResult identify(const TrainingLog& log, const IdentifyOptions& options) {
  check_training_log(log);
  const int i = options.horizon;
  const Index m = log.U.cols();
  const Index p = log.Y.cols();
  const Index q = m + p;
  const Index t_len = log.length();
  if (i < 2) throw Error(ErrorCode::kInvalidArgument, "horizon must be >= 2");
  if (p < 1) throw Error(ErrorCode::kInvalidArgument, "at least one output channel is required");
  const Index needed = std::max<Index>(2 * i * q + i, 2 * i * q + 2 * i);
  if (t_len < needed) {
    throw Error(ErrorCode::kInsufficientData,
                "identification needs " + std::to_string(needed) + " samples, got " +
                    std::to_string(t_len));
  }

  IdentificationResult res;
  res.input_scaling = options.standardize ? fit_scaling(log.U) : identity_scaling(m);
  res.output_scaling = options.standardize ? fit_scaling(log.Y) : identity_scaling(p);
  const Matrix U = scale_rows(res.input_scaling, log.U);
  const Matrix Y = scale_rows(res.output_scaling, log.Y);

  // z_t = [u_t; y_t]; Gram of the 2i-block Hankel matrix, reordered to
  // [Uf; Up; Yp; Yf] and normalized by the column count.
  Matrix z(t_len, q);
  z << U, Y;
  const Index j = t_len - 2 * i + 1;
  const Matrix gram_z = hankel_gram(z, 2 * i, j);
  std::vector<Index> perm;
  for (Index b = i; b < 2 * i; ++b) for (Index c = 0; c < m; ++c) perm.push_back(b * q + c);
  for (Index b = 0; b < i; ++b) for (Index c = 0; c < m; ++c) perm.push_back(b * q + c);
  for (Index b = 0; b < i; ++b) for (Index c = m; c < q; ++c) perm.push_back(b * q + c);
  for (Index b = i; b < 2 * i; ++b) for (Index c = m; c < q; ++c) perm.push_back(b * q + c);
  const Index dim = static_cast<Index>(perm.size());
  Matrix gram(dim, dim);
  for (Index r = 0; r < dim; ++r) {
    for (Index c = 0; c < dim; ++c) gram(r, c) = gram_z(perm[r], perm[c]);
  }
  gram /= static_cast<double>(j);
  gram.diagonal().array() += 1e-12 * gram.diagonal().mean();
  Eigen::LLT<Matrix> llt(gram);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::kNumericalFailure, "Hankel data matrix is rank deficient");
  }
  const Matrix L = llt.matrixL();

  const Index r_uf = m * i, r_wp = q * i, r_yf = p * i;
  const Matrix L21 = L.block(r_uf, 0, r_wp, r_uf);
  const Matrix L22 = L.block(r_uf, r_uf, r_wp, r_wp);
  const Matrix L32 = L.block(r_uf + r_wp, r_uf, r_yf, r_wp);
  // Oblique projection Yf /_{Uf} Wp = (L32 L22⁻¹) Wp.
  const Matrix proj = L22.transpose().triangularView<Eigen::Upper>().solve(L32.transpose()).transpose();
  Matrix coeff(r_yf, r_uf + r_wp);
  coeff << proj * L21, L32;
  const SvdResult dec = svd(coeff);
  res.hankel_singular_values = dec.s;

  // Order selection over the singular values that rise above the noise floor.
  const Index cap = std::min<Index>({options.max_order, i, p * (i - 1), dec.s.size()});
  Index considered = std::min<Index>(dec.s.size(), cap + 1);
  if (options.noise_floor_factor > 0.0) {
    // Largest singular value expected from projecting pure noise of the
    // unexplained Yf level (rms of L33) onto r_wp regressors over j columns.
    const Matrix L33 = L.block(r_uf + r_wp, r_uf + r_wp, r_yf, r_yf);
    const double noise_rms = L33.norm() / std::sqrt(static_cast<double>(r_yf));
    res.noise_floor = options.noise_floor_factor * noise_rms *
                      (std::sqrt(static_cast<double>(r_yf)) + std::sqrt(static_cast<double>(r_wp))) /
                      std::sqrt(static_cast<double>(j));
    Index above = 0;
    while (above < dec.s.size() && dec.s(above) > res.noise_floor) ++above;
    if (above == 0 && options.order.kind != OrderStrategy::Kind::kFixed) {
      throw Error(ErrorCode::kDegenerateSpectrum,
                  "no singular value rises above the noise floor " +
                      text::format_double(res.noise_floor));
    }
    if (options.order.kind != OrderStrategy::Kind::kFixed) {
      considered = std::min(considered, above + 1);
    }
  }
  OrderSelection sel;
  if (options.order.kind == OrderStrategy::Kind::kFixed) {
    if (options.order.fixed > cap) {
      throw Error(ErrorCode::kInvalidArgument, "fixed order exceeds horizon limits");
    }
    sel = select_order(dec.s, options.order);
  } else {
    sel = select_order(dec.s.head(considered), options.order);
    sel.order = std::min<int>(sel.order, static_cast<int>(cap));
  }
  const Index n = sel.order;
  res.order = sel.order;
  res.low_confidence = sel.low_confidence;

  const Vector sqrt_s = dec.s.head(n).cwiseSqrt();
  const Matrix gamma = dec.u.leftCols(n) * sqrt_s.asDiagonal();
  StateSpaceModel& mdl = res.model;
  mdl.C = gamma.topRows(p);
  mdl.A = gamma.topRows(p * (i - 1)).colPivHouseholderQr().solve(gamma.bottomRows(p * (i - 1)));
  if (!mdl.A.allFinite()) throw Error(ErrorCode::kNumericalFailure, "shift-invariance solve failed");
  const double rho = spectral_radius(mdl.A);
  if (rho >= 1.0) {
    mdl.A *= 0.999 / rho;
    res.stabilized = true;
  }

  if (m > 0) {
    estimate_b_x0(mdl.A, mdl.C, U, Y, mdl.B, res.initial_state);
  } else {
    mdl.B = Matrix::Zero(n, 0);
    res.initial_state = Vector::Zero(n);
  }

  // Estimated state sequence X = Γ† (L32 L22⁻¹) Wp; column k ≈ x̂ at time i+k.
  const Matrix state_map =
      sqrt_s.cwiseInverse().asDiagonal() * dec.u.leftCols(n).transpose() * proj;
  const Index steps = j - 1;
  Matrix see = Matrix::Zero(p, p);
  Matrix swe = Matrix::Zero(n, p);
  Matrix sww = Matrix::Zero(n, n);
  Vector wp(r_wp);
  auto state_at = [&](Index k) {
    for (Index b = 0; b < i; ++b) {
      if (m > 0) wp.segment(b * m, m) = U.row(k + b).transpose();
      wp.segment(m * i + b * p, p) = Y.row(k + b).transpose();
    }
    return Vector(state_map * wp);
  };
  Vector x = state_at(0);
  for (Index k = 0; k < steps; ++k) {
    const Index t = i + k;
    const Vector x_next = state_at(k + 1);
    const Vector e = Y.row(t).transpose() - mdl.C * x;
    Vector w = x_next - mdl.A * x;
    if (m > 0) w.noalias() -= mdl.B * U.row(t).transpose();
    see.noalias() += e * e.transpose();
    swe.noalias() += w * e.transpose();
    sww.noalias() += w * w.transpose();
    x = x_next;
  }
  const double inv_steps = 1.0 / static_cast<double>(steps);
  const Matrix sigma_e = symmetrized(see * inv_steps);
  const Matrix k_pred = SpdFactor(sigma_e).solve(swe.transpose() * inv_steps).transpose();

  // Two candidate noise models; the one whose filter gives the smaller
  // innovation negative log-likelihood on the training data wins.
  std::vector<std::pair<Matrix, Matrix>> candidates;
  // Filtered-form gain with A·K_f = K_pred, then a (Q, R) pair without
  // cross-covariance whose steady-state filter has gain K_f and innovation
  // covariance sigma_e, as closely as Q ⪰ 0 allows. (C G)⁻¹ is applied on
  // its dominant eigenvalues only, at two truncation levels.
  const Matrix k_filt = mdl.A.colPivHouseholderQr().solve(k_pred);
  const Matrix r_map = clip_to_spd(sigma_e - mdl.C * k_filt * sigma_e, 1e-10);
  const Matrix g = k_filt * r_map;
  const Matrix gain_term = symmetrized(k_filt * sigma_e * k_filt.transpose());
  const Eigen::SelfAdjointEigenSolver<Matrix> cg_eig(symmetrized(mdl.C * g));
  for (double cutoff : {1e-12, 1e-3}) {
    const Vector& lam = cg_eig.eigenvalues();
    const double top = lam.maxCoeff();
    if (!(top > 0.0)) break;
    Vector inv = Vector::Zero(lam.size());
    for (Index k = 0; k < lam.size(); ++k) {
      if (lam(k) > cutoff * top) inv(k) = 1.0 / lam(k);
    }
    const Matrix gv = g * cg_eig.eigenvectors();
    const Matrix base = symmetrized(gv * inv.asDiagonal() * gv.transpose());
    const Matrix p_post = posterior_covariance(mdl.A, mdl.C, base, gain_term);
    const Matrix q_map =
        clip_to_spd(p_post + gain_term - mdl.A * p_post * mdl.A.transpose(), 1e-10);
    if (q_map.allFinite() && r_map.allFinite()) candidates.emplace_back(q_map, r_map);
  }
  candidates.emplace_back(clip_to_spd(symmetrized(sww * inv_steps), 1e-10),
                          clip_to_spd(sigma_e, 1e-10));

  const Index skip = std::min<Index>(t_len / 10, 10 * i);
  double best_nll = std::numeric_limits<double>::infinity();
  std::optional<SteadyStateFilter> chosen;
  Matrix chosen_resid;
  std::string last_problem = "no admissible noise model";
  for (const auto& [q, r] : candidates) {
    StateSpaceModel trial = mdl;
    trial.Q = q;
    trial.R = r;
    const auto violations = validate(trial);
    if (!passes(violations)) {
      for (const auto& v : violations) {
        if (v.code == ViolationCode::kUnstableA) {
          throw Error(ErrorCode::kUnstableModel, "identified A is unstable: " + v.message);
        }
      }
      last_problem = violations.front().message;
      continue;
    }
    try {
      SteadyStateFilter filter = build_filter(trial);
      Matrix resid(t_len, p);
      FilterState st = initial_state(filter);
      Vector innov;
      Vector u_prev = Vector::Zero(m);
      for (Index t = 0; t < t_len; ++t) {
        advance(filter, st, u_prev, Y.row(t).transpose(), innov);
        resid.row(t) = innov.transpose();
        u_prev = U.row(t).transpose();
      }
      const Matrix used = resid.bottomRows(t_len - skip);
      const Matrix whitened = filter.sigma_factor().lower().triangularView<Eigen::Lower>().solve(
          used.transpose());
      const double nll = filter.log_det_sigma() +
                         whitened.squaredNorm() / static_cast<double>(used.rows());
      if (nll < best_nll) {
        best_nll = nll;
        chosen.emplace(std::move(filter));
        chosen_resid = resid;
      }
    } catch (const Error& e) {
      last_problem = e.detail();
    }
  }
  if (!chosen) {
    throw Error(ErrorCode::kNumericalFailure, "identified model is invalid: " + last_problem);
  }
  mdl = chosen->model();

  res.fit_score = variance_accounted_for(mdl, U, Y, res.initial_state, 0);
  const int lags = std::min<int>(options.ljung_box_lags, static_cast<int>((t_len - skip) / 5));
  if (lags >= 1) res.residual_diagnostics = ljung_box(chosen_resid.bottomRows(t_len - skip), lags);
  return res;
}

}  // namespace itdt
