#pragma once

#include "dalab/core.hpp"
#include "dalab/field.hpp"
#include "dalab/random.hpp"

#include <cmath>
#include <memory>

namespace dalab {

/// Gaussian measure N(m, S S^T) described through a whitening map.
/// Every sampler and optimizer works in the whitened coordinates xi, where
/// u = m + S xi and the prior is N(0, I).
class PriorModel {
public:
  virtual ~PriorModel() = default;

  virtual Eigen::Index dimension() const = 0;          // dim(u)
  virtual Eigen::Index whitened_dimension() const = 0;  // dim(xi)
  virtual const Vector& mean_vector() const = 0;

  /// S xi (no mean added).
  virtual Vector color(const Vector& xi) const = 0;
  /// S^T v.
  virtual Vector color_transpose(const Vector& v) const = 0;
  /// Least-squares inverse of color(); exact on the range of S.
  virtual Vector whiten(const Vector& deviation) const = 0;
  /// diag(C).
  virtual Vector pointwise_variance() const = 0;

  Vector from_whitened(const Vector& xi) const { return mean_vector() + color(xi); }

  Vector sample_vector(Rng& rng) const {
    return from_whitened(rng.normal_vector(whitened_dimension()));
  }

  /// ||u - m||_C^2, whitened squared norm.
  virtual double norm_sq(const Vector& deviation) const { return whiten(deviation).squaredNorm(); }
};

/// How the covariance operator kappa A^{-alpha} is scaled onto the grid.
enum class CovarianceScaling {
  /// A acts on the domain rescaled to the unit square; fields are sampled
  /// with unit-square normalization. Draws are independent of the physical
  /// side length.
  unit_square,
  /// A acts on the physical domain [0, L]^2 with eigenvalues (pi/L)^2 (i^2+j^2).
  physical,
};

/// Gaussian prior N(ubar, kappa A^{-alpha}) on log-permeability, where A is
/// the Neumann Laplacian restricted to zero-average functions. Diagonal in
/// the cosine basis.
class GaussianPrior final : public PriorModel {
public:
  GaussianPrior(Field mean, double kappa, double alpha,
                CovarianceScaling scaling = CovarianceScaling::unit_square)
      : GaussianPrior(std::make_shared<const SpectralBasis>(mean.grid()), std::move(mean), kappa,
                      alpha, scaling) {}

  GaussianPrior(std::shared_ptr<const SpectralBasis> basis, Field mean, double kappa, double alpha,
                CovarianceScaling scaling = CovarianceScaling::unit_square)
      : basis_(std::move(basis)), mean_(std::move(mean)), kappa_(kappa), alpha_(alpha),
        scaling_(scaling) {
    require(kappa > 0.0 && std::isfinite(kappa), "GaussianPrior: kappa must be positive");
    require(alpha > 1.0, "GaussianPrior: alpha must exceed 1 for a trace-class covariance");
    require(mean_.grid() == basis_->grid(), "GaussianPrior: mean grid does not match basis");
    require(mean_.all_finite(), "GaussianPrior: mean must be finite");

    const double length = basis_->grid().length;
    eigen_.resize(basis_->size());
    for (Eigen::Index k = 0; k < basis_->size(); ++k) {
      const double lam_a = basis_->mode(k).eigenvalue;
      eigen_[k] = scaling == CovarianceScaling::physical
                      ? kappa * std::pow(lam_a, -alpha)
                      : kappa * length * length * std::pow(lam_a * length * length, -alpha);
    }
    sqrt_eigen_ = eigen_.cwiseSqrt();
  }

  const SpectralBasis& basis() const { return *basis_; }
  std::shared_ptr<const SpectralBasis> basis_ptr() const { return basis_; }
  const Field& mean() const { return mean_; }
  const Grid2D& grid() const { return mean_.grid(); }
  double kappa() const { return kappa_; }
  double alpha() const { return alpha_; }
  CovarianceScaling scaling() const { return scaling_; }

  /// Covariance eigenvalues lambda_k along the sorted modes.
  const Vector& eigenvalues() const { return eigen_; }

  Eigen::Index dimension() const override { return mean_.grid().cell_count(); }
  Eigen::Index whitened_dimension() const override { return basis_->size(); }
  const Vector& mean_vector() const override { return mean_.values(); }

  Vector color(const Vector& xi) const override {
    return basis_->synthesize(sqrt_eigen_.cwiseProduct(xi));
  }

  Vector whiten(const Vector& deviation) const override {
    return basis_->analyze(deviation).cwiseQuotient(sqrt_eigen_);
  }

  Vector color_transpose(const Vector& v) const override {
    // analyze() is cell_area * Phi^T
    return sqrt_eigen_.cwiseProduct(basis_->analyze(v)) / grid().cell_area();
  }

  Vector pointwise_variance() const override {
    const Grid2D& g = grid();
    // separable accumulation of sum_k lambda_k e_k(x)^2
    Vector var = Vector::Zero(g.cell_count());
    for (Eigen::Index k = 0; k < basis_->size(); ++k) {
      const auto& m = basis_->mode(k);
      for (int b = 0; b < g.ny; ++b)
        for (int a = 0; a < g.nx; ++a) {
          const double e = basis_->basis_value(m.i, m.j, a, b);
          var[g.index(a, b)] += eigen_[k] * e * e;
        }
    }
    return var;
  }

  /// Draw from N(ubar, C).
  Field sample(Rng& rng) const { return Field(grid(), sample_vector(rng)); }

  /// ||f||_C^2 for a zero-average field f (typically u - ubar).
  double c_norm_sq(const Field& f) const {
    require(f.grid() == grid(), "c_norm_sq: grid mismatch");
    const double scale = std::max(1.0, f.values().cwiseAbs().maxCoeff());
    if (std::abs(f.mean()) > 1e-9 * scale)
      throw InvalidArgument("c_norm_sq: input has a nonzero spatial average (infinite prior energy)");
    const Vector c = basis_->analyze(f.values());
    return c.cwiseAbs2().cwiseQuotient(eigen_).sum();
  }

  double norm_sq(const Vector& deviation) const override {
    return c_norm_sq(Field(grid(), deviation));
  }

  /// Fraction of the (grid-truncated) prior energy carried by the first J modes.
  double energy_fraction(Eigen::Index modes) const {
    require(modes >= 1 && modes <= eigen_.size(), "energy_fraction: J out of range");
    return eigen_.head(modes).sum() / eigen_.sum();
  }

private:
  std::shared_ptr<const SpectralBasis> basis_;
  Field mean_;
  double kappa_;
  double alpha_;
  CovarianceScaling scaling_;
  Vector eigen_;
  Vector sqrt_eigen_;
};

/// Dense Gaussian N(m, C) with full-rank C; used for small linear problems.
class DenseGaussianPrior final : public PriorModel {
public:
  DenseGaussianPrior(Vector mean, const Matrix& covariance)
      : mean_(std::move(mean)), covariance_(covariance) {
    require(covariance.rows() == mean_.size() && covariance.cols() == mean_.size(),
            "DenseGaussianPrior: dimension mismatch");
    Eigen::LLT<Matrix> llt(covariance);
    if (llt.info() != Eigen::Success) throw InvalidArgument("DenseGaussianPrior: covariance not SPD");
    factor_ = llt.matrixL();
  }

  const Matrix& covariance() const { return covariance_; }
  const Matrix& factor() const { return factor_; }

  Eigen::Index dimension() const override { return mean_.size(); }
  Eigen::Index whitened_dimension() const override { return mean_.size(); }
  const Vector& mean_vector() const override { return mean_; }
  Vector color(const Vector& xi) const override { return factor_ * xi; }
  Vector color_transpose(const Vector& v) const override { return factor_.transpose() * v; }
  Vector whiten(const Vector& deviation) const override {
    return factor_.triangularView<Eigen::Lower>().solve(deviation);
  }
  Vector pointwise_variance() const override { return covariance_.diagonal(); }

private:
  Vector mean_;
  Matrix covariance_;
  Matrix factor_;
};

}  // namespace dalab
