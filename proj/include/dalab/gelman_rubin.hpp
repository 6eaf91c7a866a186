#pragma once

#include "dalab/core.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <vector>

namespace dalab {

/// Gelman-Rubin potential scale reduction factor for m chains of length n:
///   W = mean within-chain variance, B/n = variance of the chain means,
///   V = (n-1)/n W + (m+1)/m B/n,  R = sqrt(V / W).
inline double psrf(const std::vector<std::vector<double>>& chains) {
  const std::size_t m = chains.size();
  require(m >= 2, "psrf: need at least two chains");
  const std::size_t n = chains.front().size();
  require(n >= 2, "psrf: chains need at least two samples");
  for (const auto& c : chains) require(c.size() == n, "psrf: chains must have equal length");

  std::vector<double> means(m);
  double w = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    double s = 0.0;
    for (double x : chains[j]) s += x;
    means[j] = s / double(n);
    double v = 0.0;
    for (double x : chains[j]) v += (x - means[j]) * (x - means[j]);
    w += v / double(n - 1);
  }
  w /= double(m);
  if (!(w > 0.0)) throw InvalidArgument("psrf: zero within-chain variance");

  double grand = 0.0;
  for (double x : means) grand += x;
  grand /= double(m);
  double b_over_n = 0.0;
  for (double x : means) b_over_n += (x - grand) * (x - grand);
  b_over_n /= double(m - 1);

  const double v = double(n - 1) / double(n) * w + double(m + 1) / double(m) * b_over_n;
  return std::sqrt(v / w);
}

/// Brooks-Gelman multivariate PSRF. Each chain is an n x J matrix (one row
/// per sample):
///   MPSRF = (n-1)/n + (m+1)/m * lambda_max(W^{-1} B/n).
inline double mpsrf(const std::vector<Matrix>& chains) {
  const std::size_t m = chains.size();
  require(m >= 2, "mpsrf: need at least two chains");
  const Eigen::Index n = chains.front().rows();
  const Eigen::Index d = chains.front().cols();
  require(n >= 2 && d >= 1, "mpsrf: chains need at least two samples and one coordinate");
  for (const auto& c : chains) require(c.rows() == n && c.cols() == d, "mpsrf: chain shapes differ");

  Matrix w = Matrix::Zero(d, d);
  Matrix means(d, Eigen::Index(m));
  for (std::size_t j = 0; j < m; ++j) {
    const Vector mu = chains[j].colwise().mean().transpose();
    means.col(Eigen::Index(j)) = mu;
    const Matrix centered = chains[j].rowwise() - mu.transpose();
    w += centered.transpose() * centered / double(n - 1);
  }
  w /= double(m);
  const Vector grand = means.rowwise().mean();
  const Matrix dm = means.colwise() - grand;
  const Matrix b_over_n = dm * dm.transpose() / double(m - 1);

  Eigen::LLT<Matrix> llt(w);
  if (llt.info() != Eigen::Success) throw InvalidArgument("mpsrf: singular within-chain covariance");
  // eigenvalues of W^{-1} B/n via the symmetric form L^{-1} (B/n) L^{-T}
  const Matrix l_inv_b = llt.matrixL().solve(b_over_n);
  const Matrix sym = llt.matrixL().solve(l_inv_b.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (sym + sym.transpose()), Eigen::EigenvaluesOnly);
  const double lam = std::max(0.0, eig.eigenvalues().maxCoeff());
  return double(n - 1) / double(n) + double(m + 1) / double(m) * lam;
}

}  // namespace dalab
