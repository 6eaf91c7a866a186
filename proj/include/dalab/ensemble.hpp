#pragma once

#include "dalab/core.hpp"
#include "dalab/forward_model.hpp"
#include "dalab/localization.hpp"
#include "dalab/prior.hpp"
#include "dalab/random.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <cmath>
#include <iostream>
#include <vector>

namespace dalab {

/// Augmented ensemble z = (u, v, w); column j is member j.
struct EnsembleZ {
  Matrix u;
  Matrix v;
  Matrix w;
  std::size_t dropped = 0;  // members removed after forward failures

  Eigen::Index size() const { return u.cols(); }
};

/// Members drawn from the prior with v set to the model's initial state.
inline EnsembleZ initial_ensemble(const PriorModel& prior, const ForwardModel& model, std::size_t n, Rng& rng) {
  require(n >= 2, "initial_ensemble: need at least two members");
  EnsembleZ ens;
  ens.u.resize(prior.dimension(), Eigen::Index(n));
  for (Eigen::Index j = 0; j < Eigen::Index(n); ++j) ens.u.col(j) = prior.sample_vector(rng);
  const Vector v0 = model.initial_state(ens.u.col(0));
  ens.v.resize(v0.size(), Eigen::Index(n));
  ens.v.col(0) = v0;
  for (Eigen::Index j = 1; j < Eigen::Index(n); ++j) ens.v.col(j) = model.initial_state(ens.u.col(j));
  ens.w.resize(model.window_observation_size(), Eigen::Index(n));
  ens.w.setZero();
  return ens;
}

/// Prediction step: v <- Psi_n(v, u), w <- M_n(v); u unchanged. Members whose
/// forward solve fails are removed and counted in `dropped`.
inline EnsembleZ enkf_predict(EnsembleZ ens, const ForwardModel& model, std::size_t window) {
  std::vector<Eigen::Index> keep;
  Matrix v(ens.v.rows(), ens.size());
  Matrix w(model.window_observation_size(), ens.size());
  for (Eigen::Index j = 0; j < ens.size(); ++j) {
    try {
      auto [next, obs] = model.advance(ens.u.col(j), ens.v.col(j), window);
      v.col(j) = next;
      w.col(j) = obs;
      keep.push_back(j);
    } catch (const Error& e) {
      std::clog << "warning: ensemble member " << j << " dropped: " << e.what() << '\n';
    }
  }
  if (keep.size() < 2) throw SolverError("enkf_predict: fewer than two members survived the forecast");
  EnsembleZ out;
  out.dropped = ens.dropped + std::size_t(ens.size()) - keep.size();
  out.u.resize(ens.u.rows(), Eigen::Index(keep.size()));
  out.v.resize(v.rows(), Eigen::Index(keep.size()));
  out.w.resize(w.rows(), Eigen::Index(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k) {
    out.u.col(Eigen::Index(k)) = ens.u.col(keep[k]);
    out.v.col(Eigen::Index(k)) = v.col(keep[k]);
    out.w.col(Eigen::Index(k)) = w.col(keep[k]);
  }
  return out;
}

struct EnsembleMoments {
  Vector u_mean;
  Vector v_mean;
  Vector w_mean;
  Matrix c_uw;
  Matrix c_vw;
  Matrix c_ww;
};

/// Centered unbiased sample moments; only the w-facing blocks are formed.
inline EnsembleMoments sample_moments(const EnsembleZ& ens) {
  require(ens.size() >= 2, "sample_moments: need at least two members");
  const double scale = 1.0 / double(ens.size() - 1);
  EnsembleMoments m;
  m.u_mean = ens.u.rowwise().mean();
  m.v_mean = ens.v.rowwise().mean();
  m.w_mean = ens.w.rowwise().mean();
  const Matrix du = ens.u.colwise() - m.u_mean;
  const Matrix dv = ens.v.colwise() - m.v_mean;
  const Matrix dw = ens.w.colwise() - m.w_mean;
  m.c_uw = scale * du * dw.transpose();
  m.c_vw = scale * dv * dw.transpose();
  m.c_ww = scale * dw * dw.transpose();
  return m;
}

namespace detail {

// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with sign fix).
inline Matrix haar_orthogonal(Eigen::Index n, Rng& rng) {
  if (n == 0) return Matrix(0, 0);
  const Matrix g = rng.normal_matrix(n, n);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ();
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index k = 0; k < n; ++k)
    if (r(k, k) < 0.0) q.col(k) *= -1.0;
  return q;
}

// X H with H the Householder reflection that swaps e_1 and ones/sqrt(n).
inline Matrix reflect_columns(const Matrix& x) {
  const Eigen::Index n = x.cols();
  Vector v = Vector::Constant(n, 1.0 / std::sqrt(double(n)));
  v[0] -= 1.0;
  const double vv = v.squaredNorm();
  if (vv == 0.0) return x;
  return x - (2.0 / vv) * (x * v) * v.transpose();
}

inline Matrix symmetric_function(const Matrix& a, double power) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (a + a.transpose()));
  if (eig.info() != Eigen::Success || eig.eigenvalues().minCoeff() <= 0.0)
    throw SolverError("ensrf: matrix square root of a non-SPD matrix");
  const Vector d = eig.eigenvalues().array().pow(power).matrix();
  return eig.eigenvectors() * d.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace detail

/// Theta = H diag(1, R) H with R Haar on O(n-1) and H the reflection taking
/// e_1 to ones/sqrt(n): orthogonal, Theta 1 = 1, Haar on the ones-complement.
inline Matrix mean_preserving_rotation(Eigen::Index n, Rng& rng) {
  require(n >= 2, "mean_preserving_rotation: need n >= 2");
  Matrix d = Matrix::Zero(n, n);
  d(0, 0) = 1.0;
  d.bottomRightCorner(n - 1, n - 1) = detail::haar_orthogonal(n - 1, rng);
  const Matrix hd = detail::reflect_columns(d.transpose()).transpose();  // H D
  return detail::reflect_columns(hd);                                    // H D H
}

/// X Theta for a fresh mean-preserving rotation. For large ensembles only the
/// action of R on the row space of X is sampled (a Haar frame of matching
/// rank), which has the same distribution without forming Theta.
inline Matrix apply_mean_preserving_rotation(const Matrix& x, Rng& rng, Eigen::Index dense_limit = 512) {
  const Eigen::Index n = x.cols();
  if (n <= dense_limit) return x * mean_preserving_rotation(n, rng);
  Matrix y = detail::reflect_columns(x);
  const Matrix tail = y.rightCols(n - 1);
  Eigen::JacobiSVD<Matrix> svd(tail, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const double tol = 1e-14 * std::max(1.0, svd.singularValues().size() ? svd.singularValues()[0] : 0.0);
  Eigen::Index rank = 0;
  while (rank < svd.singularValues().size() && svd.singularValues()[rank] > tol) ++rank;
  if (rank > 0) {
    // rows of F: orthonormal Haar r-frame in R^{n-1}
    Matrix g = rng.normal_matrix(n - 1, rank);
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix f = qr.householderQ() * Matrix::Identity(n - 1, rank);
    const Matrix r = qr.matrixQR().topRows(rank).triangularView<Eigen::Upper>();
    for (Eigen::Index k = 0; k < rank; ++k)
      if (r(k, k) < 0.0) f.col(k) *= -1.0;
    const Matrix xv = tail * svd.matrixV().leftCols(rank);
    y.rightCols(n - 1) = xv * f.transpose();
  } else {
    y.rightCols(n - 1).setZero();
  }
  return detail::reflect_columns(y);
}

struct AnalysisOptions {
  const LocalizationSpec* localization = nullptr;
};

namespace detail {

inline Matrix spd_inverse(const Matrix& s) {
  Eigen::LLT<Matrix> llt(s);
  if (llt.info() != Eigen::Success) throw SolverError("ensemble analysis: innovation covariance not SPD");
  return llt.solve(Matrix::Identity(s.rows(), s.cols()));
}

inline void check_analysis_inputs(const EnsembleZ& ens, const Vector& y, const Vector& sigma,
                                  const LocalizationSpec* loc) {
  require(ens.size() >= 2, "ensemble analysis: need at least two members");
  require(y.size() == ens.w.rows() && sigma.size() == y.size(), "ensemble analysis: data size mismatch");
  require((sigma.array() > 0.0).all(), "ensemble analysis: noise deviations must be positive");
  if (loc)
    require(loc->rho_uw.rows() == ens.u.rows() && loc->rho_uw.cols() == y.size() &&
                loc->rho_ww.rows() == y.size(),
            "ensemble analysis: localization shape mismatch");
}

}  // namespace detail

/// Perturbed-observation EnKF analysis. With localization the u-row gain is
/// (rho_uw o C_uw)(rho_ww o C_ww + Gamma)^{-1}; the v and w rows are not
/// localized.
inline EnsembleZ enkf_analyze(EnsembleZ ens, const Vector& y, const Vector& sigma, Rng& rng,
                              const AnalysisOptions& opts = {}) {
  const LocalizationSpec* loc = opts.localization;
  detail::check_analysis_inputs(ens, y, sigma, loc);
  const EnsembleMoments m = sample_moments(ens);
  const Matrix gamma = sigma.cwiseAbs2().asDiagonal();

  const Matrix eta = sigma.asDiagonal() * rng.normal_matrix(y.size(), ens.size());
  const Matrix innovation = (eta.colwise() + y) - ens.w;

  const Matrix x = detail::spd_inverse(m.c_ww + gamma) * innovation;
  if (loc) {
    const Matrix xl = detail::spd_inverse(loc->rho_ww.cwiseProduct(m.c_ww) + gamma) * innovation;
    ens.u += loc->rho_uw.cwiseProduct(m.c_uw) * xl;
  } else {
    ens.u += m.c_uw * x;
  }
  ens.v += m.c_vw * x;
  ens.w += m.c_ww * x;
  return ens;
}

/// Deterministic square-root analysis:
///   mean  <- mean + K (y - w_mean),
///   dZ    <- (I - K~ H) dZ Theta,
///   K~    = C^{zw} S^{-1/2} (S^{1/2} + Gamma^{1/2})^{-1},  S = C^{ww} + Gamma.
inline EnsembleZ ensrf_analyze(EnsembleZ ens, const Vector& y, const Vector& sigma, Rng& rng,
                               const AnalysisOptions& opts = {}) {
  const LocalizationSpec* loc = opts.localization;
  detail::check_analysis_inputs(ens, y, sigma, loc);
  const EnsembleMoments m = sample_moments(ens);
  const Matrix gamma = sigma.cwiseAbs2().asDiagonal();
  const Matrix gamma_half = sigma.asDiagonal();

  auto gains = [&](const Matrix& s) {
    const Matrix inv = detail::spd_inverse(s);
    const Matrix s_half = detail::symmetric_function(s, 0.5);
    const Matrix s_inv_half = detail::symmetric_function(s, -0.5);
    const Matrix tilde = s_inv_half * detail::spd_inverse(s_half + gamma_half);
    return std::pair<Matrix, Matrix>(inv, tilde);  // K = C^{zw} inv, K~ = C^{zw} tilde
  };

  const auto [inv, tilde] = gains(m.c_ww + gamma);
  const Vector innovation = y - m.w_mean;
  const Matrix du = ens.u.colwise() - m.u_mean;
  const Matrix dv = ens.v.colwise() - m.v_mean;
  const Matrix dw = ens.w.colwise() - m.w_mean;

  Vector u_mean, u_gain_dw;
  Matrix du_a;
  if (loc) {
    const Matrix c_uw = loc->rho_uw.cwiseProduct(m.c_uw);
    const auto [inv_l, tilde_l] = gains(loc->rho_ww.cwiseProduct(m.c_ww) + gamma);
    u_mean = m.u_mean + c_uw * (inv_l * innovation);
    du_a = du - c_uw * (tilde_l * dw);
  } else {
    u_mean = m.u_mean + m.c_uw * (inv * innovation);
    du_a = du - m.c_uw * (tilde * dw);
  }
  const Vector v_mean = m.v_mean + m.c_vw * (inv * innovation);
  const Vector w_mean = m.w_mean + m.c_ww * (inv * innovation);
  const Matrix dv_a = dv - m.c_vw * (tilde * dw);
  const Matrix dw_a = dw - m.c_ww * (tilde * dw);

  // one rotation shared by all blocks
  const Eigen::Index nu = du_a.rows(), nv = dv_a.rows(), nwr = dw_a.rows();
  Matrix stacked(nu + nv + nwr, ens.size());
  stacked << du_a, dv_a, dw_a;
  stacked = apply_mean_preserving_rotation(stacked, rng);

  ens.u = stacked.topRows(nu).colwise() + u_mean;
  ens.v = stacked.middleRows(nu, nv).colwise() + v_mean;
  ens.w = stacked.bottomRows(nwr).colwise() + w_mean;
  return ens;
}

enum class FilterKind { enkf, ensrf };

struct FilterResult {
  EnsembleZ ensemble;
  double forward_runs = 0.0;
};

/// Assimilates every window of the model sequentially. y and sigma stack the
/// windows time-major. The final u-ensemble approximates the posterior.
inline FilterResult run_filter(const ForwardModel& model, const PriorModel& prior, const Vector& y,
                               const Vector& sigma, std::size_t n_members, FilterKind kind, Rng& rng,
                               const LocalizationSpec* loc = nullptr) {
  require(y.size() == model.observation_size() && sigma.size() == y.size(), "run_filter: data size mismatch");
  const auto before = model.window_evaluations();
  EnsembleZ ens = initial_ensemble(prior, model, n_members, rng);
  const auto nw = model.window_observation_size();
  AnalysisOptions opts;
  opts.localization = loc;
  for (std::size_t n = 0; n < model.window_count(); ++n) {
    ens = enkf_predict(std::move(ens), model, n);
    const Vector yn = y.segment(Eigen::Index(n) * nw, nw);
    const Vector sn = sigma.segment(Eigen::Index(n) * nw, nw);
    ens = kind == FilterKind::enkf ? enkf_analyze(std::move(ens), yn, sn, rng, opts)
                                   : ensrf_analyze(std::move(ens), yn, sn, rng, opts);
    for (Eigen::Index j = 0; j < ens.size(); ++j) {
      Vector col = ens.v.col(j);
      model.constrain_state(col);
      ens.v.col(j) = col;
    }
  }
  FilterResult out;
  out.forward_runs = double(model.window_evaluations() - before) / double(model.window_count());
  out.ensemble = std::move(ens);
  return out;
}

}  // namespace dalab
