#pragma once

#include "dalab/core.hpp"
#include "dalab/likelihood.hpp"
#include "dalab/parallel.hpp"
#include "dalab/prior.hpp"
#include "dalab/random.hpp"
#include "dalab/single_phase.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <iostream>
#include <vector>

namespace dalab {

struct LMOptions {
  double initial_damping = 1.0;
  double damping_up = 10.0;
  double damping_down = 10.0;
  int max_iterations = 20;
  int max_retries = 10;              // consecutive rejected trial steps
  double objective_tolerance = 1e-4;  // relative decrease of J
  double step_tolerance = 1e-3;       // relative change of the whitened parameter
  double gradient_tolerance = 1e-6;   // relative to the initial gradient norm
  double fd_step = 1e-3;              // Jacobian finite-difference step in u
  bool final_jacobian = true;         // recompute the Jacobian at the accepted point

  void validate() const {
    require(initial_damping > 0.0 && damping_up > 1.0 && damping_down > 1.0, "LMOptions: bad damping factors");
    require(max_iterations >= 1 && max_retries >= 1, "LMOptions: iteration limits must be positive");
    require(objective_tolerance > 0.0 && step_tolerance > 0.0 && gradient_tolerance > 0.0 && fd_step > 0.0,
            "LMOptions: thresholds must be positive");
  }
};

struct MapResult {
  Vector u;
  Vector xi;         // whitened coordinates of u
  Matrix jacobian;   // Gamma^{-1/2} DG(u) S at the returned point
  double objective = 0.0;
  double initial_objective = 0.0;
  double gradient_norm = 0.0;
  double gradient_threshold = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Jacobian of Gamma^{-1/2} G with respect to the whitened coordinates,
/// built from central differences in the cell basis: (Gamma^{-1/2} Q) S.
inline Matrix whitened_jacobian(const PriorModel& prior, const Likelihood& lik, const Vector& u, double h) {
  const ForwardModel& model = lik.model();
  const Matrix q = jacobian_fd([&](const Vector& x) { return model.evaluate(x); }, u, h);
  Matrix out(q.rows(), prior.whitened_dimension());
  for (Eigen::Index r = 0; r < q.rows(); ++r)
    out.row(r) = prior.color_transpose(q.row(r).transpose() / lik.sigma()[r]).transpose();
  return out;
}

/// Levenberg-Marquardt minimization of
///   J(u) = 1/2 ||y - G(u)||^2_Gamma + 1/2 ||u - center||^2_C
/// in whitened coordinates, starting at `start`. Each iteration solves
/// (A^T A + (1 + mu) I) d = -g through an N x N system.
inline MapResult minimize_lm(const PriorModel& prior, const Likelihood& lik, const Vector& center,
                             const Vector& start, const LMOptions& opts = {}) {
  opts.validate();
  const Vector& mean = prior.mean_vector();
  const Vector xi_center = prior.whiten(center - mean);
  // keep the part of center outside the range of S (the fixed spatial mean)
  const Vector offset = center - prior.color(xi_center);
  Vector xi = prior.whiten(start - mean);

  auto to_u = [&](const Vector& x) { return Vector(offset + prior.color(x)); };
  auto objective = [&](const Vector& x, Vector& residual) {
    residual = lik.whitened_residual(lik.model().evaluate(to_u(x)));
    return 0.5 * residual.squaredNorm() + 0.5 * (x - xi_center).squaredNorm();
  };

  MapResult res;
  Vector r;
  double j = objective(xi, r);
  res.initial_objective = j;
  double mu = opts.initial_damping;
  double g0 = -1.0;

  for (int it = 0;; ++it) {
    const Matrix a = whitened_jacobian(prior, lik, to_u(xi), opts.fd_step);
    const Vector g = a.transpose() * r + (xi - xi_center);
    const double gnorm = g.norm();
    if (g0 < 0.0) g0 = gnorm;
    res.jacobian = a;
    res.gradient_norm = gnorm;
    res.gradient_threshold = opts.gradient_tolerance * std::max(1.0, g0);
    res.iterations = it;
    if (gnorm <= res.gradient_threshold) {
      res.converged = true;
      break;
    }
    if (it == opts.max_iterations) break;

    const Matrix aat = a * a.transpose();
    const Vector ag = a * g;
    bool accepted = false;
    double step_rel = 0.0, decrease_rel = 0.0;
    for (int retry = 0; retry < opts.max_retries; ++retry) {
      const double damp = 1.0 + mu;
      Matrix s = aat;
      s.diagonal().array() += damp;
      const Vector d = -(g - a.transpose() * s.llt().solve(ag)) / damp;
      const Vector trial = xi + d;
      Vector r_trial;
      double j_trial = std::numeric_limits<double>::infinity();
      try {
        j_trial = objective(trial, r_trial);
      } catch (const Error& e) {
        std::clog << "warning: LM trial step failed: " << e.what() << '\n';
      }
      if (std::isfinite(j_trial) && j_trial < j) {
        decrease_rel = (j - j_trial) / std::max(j, std::numeric_limits<double>::min());
        step_rel = d.norm() / std::max(1.0, xi.norm());
        xi = trial;
        r = r_trial;
        j = j_trial;
        mu /= opts.damping_down;
        accepted = true;
        break;
      }
      mu *= opts.damping_up;
    }
    if (!accepted) {
      // no descent possible at this damping: stationary to working precision
      if (gnorm <= 1e-3 * std::max(1.0, g0)) {
        res.converged = true;
        break;
      }
      throw ConvergenceError("LM: objective failed to decrease after " + std::to_string(opts.max_retries) +
                             " damped retries");
    }
    if (decrease_rel < opts.objective_tolerance && step_rel < opts.step_tolerance) {
      res.iterations = it + 1;
      res.converged = true;
      if (opts.final_jacobian) {
        res.jacobian = whitened_jacobian(prior, lik, to_u(xi), opts.fd_step);
        res.gradient_norm = (res.jacobian.transpose() * r + (xi - xi_center)).norm();
      }
      break;
    }
  }
  res.xi = xi;
  res.u = to_u(xi);
  res.objective = j;
  return res;
}

/// MAP estimate: minimizer of Phi(u, y) + 1/2 ||u - ubar||_C^2 started at ubar.
inline MapResult map_estimate(const PriorModel& prior, const Likelihood& lik, const LMOptions& opts = {}) {
  return minimize_lm(prior, lik, prior.mean_vector(), prior.mean_vector(), opts);
}

/// C_MAP = C - C Q^T (Q C Q^T + Gamma)^{-1} Q C held as S M S^T with
/// M = (I + A^T A)^{-1}, A = Gamma^{-1/2} Q S. With the thin SVD A = U s V^T,
/// M^{1/2} = I - V diag(1 - 1/sqrt(1 + s^2)) V^T.
class CmapFactor {
public:
  CmapFactor(const PriorModel& prior, Vector u_map, const Matrix& whitened_jac)
      : prior_(&prior), mean_(std::move(u_map)) {
    require(whitened_jac.cols() == prior.whitened_dimension(), "cmap: Jacobian width does not match the prior");
    require(mean_.size() == prior.dimension(), "cmap: u_map has the wrong size");
    if (whitened_jac.rows() == 0 || whitened_jac.isZero(0.0)) {
      v_ = Matrix::Zero(prior.whitened_dimension(), 0);
      return;
    }
    Eigen::JacobiSVD<Matrix> svd(whitened_jac, Eigen::ComputeThinV);
    if (!svd.singularValues().allFinite()) throw SolverError("cmap: SVD failed");
    const Vector s2 = svd.singularValues().cwiseAbs2();
    v_ = svd.matrixV();
    sqrt_shrink_ = (1.0 - (1.0 + s2.array()).rsqrt()).matrix();
    shrink_ = (s2.array() / (1.0 + s2.array())).matrix();
  }

  const Vector& mean() const { return mean_; }

  /// M^{1/2} z in whitened coordinates.
  Vector whitened_sqrt(const Vector& z) const {
    if (v_.cols() == 0) return z;
    return z - v_ * sqrt_shrink_.cwiseProduct(v_.transpose() * z);
  }

  /// u_MAP + S M^{1/2} z.
  Vector sample(const Vector& z) const { return mean_ + prior_->color(whitened_sqrt(z)); }

  /// diag(C_MAP) = diag(C) - sum_k shrink_k (S v_k)^2.
  Vector pointwise_variance() const {
    Vector var = prior_->pointwise_variance();
    for (Eigen::Index k = 0; k < v_.cols(); ++k) var -= shrink_[k] * prior_->color(v_.col(k)).cwiseAbs2();
    return var.cwiseMax(0.0);
  }

  /// Dense C_MAP; only for small problems.
  Matrix dense_covariance() const {
    const Eigen::Index k = prior_->whitened_dimension();
    Matrix s(prior_->dimension(), k);
    for (Eigen::Index c = 0; c < k; ++c) s.col(c) = prior_->color(Vector::Unit(k, c));
    Matrix m = Matrix::Identity(k, k);
    if (v_.cols() > 0) m -= v_ * shrink_.asDiagonal() * v_.transpose();
    return s * m * s.transpose();
  }

private:
  const PriorModel* prior_;
  Vector mean_;
  Matrix v_;
  Vector sqrt_shrink_;
  Vector shrink_;
};

inline CmapFactor cmap(const MapResult& map, const PriorModel& prior) {
  return CmapFactor(prior, map.u, map.jacobian);
}

/// C_MAP from an explicit Jacobian Q (in u) and noise deviations.
inline CmapFactor cmap(const PriorModel& prior, const Vector& u_map, const Matrix& q, const Vector& sigma) {
  Matrix a(q.rows(), prior.whitened_dimension());
  for (Eigen::Index r = 0; r < q.rows(); ++r)
    a.row(r) = prior.color_transpose(q.row(r).transpose() / sigma[r]).transpose();
  return CmapFactor(prior, u_map, a);
}

/// u^{(j)} = u_MAP + S M^{1/2} z^{(j)} for each column of z.
inline std::vector<Vector> lmap_sample(const CmapFactor& factor, const Matrix& z) {
  std::vector<Vector> out;
  out.reserve(std::size_t(z.cols()));
  for (Eigen::Index j = 0; j < z.cols(); ++j) out.push_back(factor.sample(z.col(j)));
  return out;
}

inline std::vector<Vector> lmap_sample(const CmapFactor& factor, const PriorModel& prior, std::size_t n, Rng& rng) {
  return lmap_sample(factor, rng.normal_matrix(prior.whitened_dimension(), Eigen::Index(n)));
}

struct RmlMember {
  Vector u;
  int iterations = 0;
  bool converged = false;
  std::string failure;
};

struct RmlResult {
  std::vector<Vector> members;     // converged members only
  std::vector<RmlMember> reports;  // one per attempted member
  std::size_t excluded = 0;
  double mean_iterations() const {
    double s = 0.0;
    for (const auto& r : reports) s += r.iterations;
    return reports.empty() ? 0.0 : s / double(reports.size());
  }
};

/// One RML member: minimizer of Phi(u, y + eta) + 1/2 ||u - u_prior||_C^2,
/// started at u_prior.
inline RmlMember rml_member(const PriorModel& prior, const Likelihood& lik, const Vector& u_prior,
                            const Vector& y_perturbed, const LMOptions& opts) {
  RmlMember m;
  try {
    const MapResult r = minimize_lm(prior, lik.with_data(y_perturbed), u_prior, u_prior, opts);
    m.u = r.u;
    m.iterations = r.iterations;
    m.converged = r.converged;
    if (!r.converged) m.failure = "iteration cap reached";
  } catch (const Error& e) {
    m.failure = e.what();
  }
  return m;
}

/// Perturbations are drawn up front in member order, so the result does not
/// depend on how the minimizations are scheduled.
inline RmlResult rml_sample(const PriorModel& prior, const Likelihood& lik, std::size_t n, const LMOptions& opts,
                            Rng& rng, std::size_t workers = 1) {
  std::vector<Vector> u_prior(n), y(n);
  for (std::size_t j = 0; j < n; ++j) {
    u_prior[j] = prior.sample_vector(rng);
    y[j] = lik.data() + lik.sigma().cwiseProduct(rng.normal_vector(lik.size()));
  }
  RmlResult out;
  out.reports.resize(n);
  parallel_for(n, [&](std::size_t j) { out.reports[j] = rml_member(prior, lik, u_prior[j], y[j], opts); }, workers);
  for (const auto& m : out.reports) {
    if (m.converged)
      out.members.push_back(m.u);
    else
      ++out.excluded;
  }
  return out;
}

struct GaussianMoments {
  Vector mean;
  Matrix covariance;
};

/// Conditioning of N(m, C) on y = B u + eta, eta ~ N(0, Gamma).
inline GaussianMoments linear_gaussian_posterior(const Matrix& b, const Vector& mean, const Matrix& cov,
                                                 const Vector& y, const Matrix& gamma) {
  require(b.cols() == mean.size() && cov.rows() == mean.size() && cov.cols() == mean.size(),
          "linear_gaussian_posterior: prior dimension mismatch");
  require(b.rows() == y.size() && gamma.rows() == y.size() && gamma.cols() == y.size(),
          "linear_gaussian_posterior: data dimension mismatch");
  const Matrix s = b * cov * b.transpose() + gamma;
  Eigen::LDLT<Matrix> ldlt(s);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
    throw InvalidArgument("linear_gaussian_posterior: singular innovation covariance");
  const Matrix k = ldlt.solve(b * cov).transpose();  // C B^T S^{-1}
  GaussianMoments out;
  out.mean = mean + k * (y - b * mean);
  out.covariance = cov - k * b * cov;
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose()).eval();
  return out;
}

}  // namespace dalab
