#include "dalab/ensemble.hpp"
#include "dalab/gaussian.hpp"
#include "dalab/single_phase.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace dalab;

namespace {

SinglePhaseConfig four_wells() {
  SinglePhaseConfig cfg;
  int n = 1;
  for (double y : {300.0, 700.0})
    for (double x : {300.0, 700.0})
      cfg.wells.push_back({"P" + std::to_string(n++), x, y, Schedule::constant(85.0, 0.0, cfg.horizon)});
  return cfg;
}

SinglePhaseModel small_model(const Grid2D& g) {
  const auto cfg = four_wells();
  return SinglePhaseModel(g, cfg, measure_wells(cfg.wells, {10, 30, 50}));
}

GaussianPrior small_prior(const Grid2D& g) { return GaussianPrior(Field(g, std::log(5e-13)), 2.0, 1.3); }

// scalar u observed directly: w = u, no state
EnsembleZ scalar_ensemble(Eigen::Index n, Rng& rng, double mean = 0.0, double sd = 1.0) {
  EnsembleZ e;
  e.u = (rng.normal_matrix(1, n).array() * sd + mean).matrix();
  e.v = Matrix(0, n);
  e.w = e.u;
  return e;
}

Matrix covariance(const Matrix& x) {
  const Matrix d = x.colwise() - x.rowwise().mean();
  return d * d.transpose() / double(x.cols() - 1);
}

Matrix stack(const EnsembleZ& e) {
  Matrix z(e.u.rows() + e.v.rows() + e.w.rows(), e.size());
  z << e.u, e.v, e.w;
  return z;
}

}  // namespace

TEST(EnkfPredict, LeavesParametersAndMatchesForwardMap) {
  Grid2D g(8, 8, 1000.0);
  const auto model = small_model(g);
  const auto prior = small_prior(g);
  Rng rng(41);
  EnsembleZ ens = initial_ensemble(prior, model, 5, rng);
  const Matrix u0 = ens.u;
  Matrix stacked(model.observation_size(), 5);
  for (std::size_t n = 0; n < model.window_count(); ++n) {
    ens = enkf_predict(std::move(ens), model, n);
    EXPECT_EQ(ens.u, u0);
    stacked.middleRows(Eigen::Index(n) * 4, 4) = ens.w;
  }
  for (Eigen::Index j = 0; j < 5; ++j) EXPECT_EQ(Vector(stacked.col(j)), model.evaluate(u0.col(j)));
}

TEST(EnkfPredict, DropsFailingMembers) {
  FunctionModel model(1, 1, [](const Vector& u) -> Vector {
    if (u[0] > 0.0) throw SolverError("diverged");
    return u;
  });
  EnsembleZ e;
  e.u = Matrix(1, 5);
  e.u << -1, 2, -3, 4, -5;
  e.v = Matrix(0, 5);
  e.w = Matrix::Zero(1, 5);
  const auto out = enkf_predict(e, model, 0);
  EXPECT_EQ(out.size(), 3);
  EXPECT_EQ(out.dropped, 2u);
  EXPECT_EQ(out.u(0, 1), -3.0);
  e.u << 1, 2, -3, 4, 5;
  EXPECT_THROW(enkf_predict(e, model, 0), SolverError);
}

TEST(SampleMoments, TwoMemberHandCase) {
  EnsembleZ e;
  e.u = Matrix(1, 2);
  e.u << 0.0, 4.0;
  e.v = Matrix(0, 2);
  e.w = Matrix(1, 2);
  e.w << 1.0, 3.0;
  const auto m = sample_moments(e);
  EXPECT_DOUBLE_EQ(m.w_mean[0], 2.0);
  EXPECT_DOUBLE_EQ(m.c_ww(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(m.c_uw(0, 0), 4.0);
}

TEST(EnkfAnalyze, ZeroSpreadInObservationsLeavesParameters) {
  Rng rng(42);
  EnsembleZ e;
  e.u = rng.normal_matrix(3, 6);
  e.v = Matrix(0, 6);
  e.w = Matrix::Constant(2, 6, 1.5);
  const auto out = enkf_analyze(e, Vector::Constant(2, 3.0), Vector::Ones(2), rng);
  EXPECT_EQ(out.u, e.u);
}

TEST(EnkfAnalyze, HugeNoiseLeavesEnsemble) {
  Rng rng(43);
  EnsembleZ e = scalar_ensemble(50, rng);
  const auto out = enkf_analyze(e, Vector::Constant(1, 2.0), Vector::Constant(1, 1e6), rng);
  EXPECT_LT((out.u - e.u).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(EnkfAnalyze, ScalarKalmanUpdate) {
  // prior N(0,1), y = 1, noise variance 1: posterior N(0.5, 0.5)
  Rng rng(44);
  const auto out = enkf_analyze(scalar_ensemble(10000, rng), Vector::Ones(1), Vector::Ones(1), rng);
  const double mean = out.u.mean();
  const double var = covariance(out.u)(0, 0);
  EXPECT_NEAR(mean, 0.5, 0.02 * 0.5);
  EXPECT_NEAR(var / 0.5, 1.0, 0.02);
}

TEST(EnkfAnalyze, UpdateStaysInEnsembleSpan) {
  Rng rng(45);
  EnsembleZ e;
  e.u = rng.normal_matrix(50, 5);
  e.v = Matrix(0, 5);
  e.w = rng.normal_matrix(3, 5);
  const auto out = enkf_analyze(e, rng.normal_vector(3), Vector::Constant(3, 0.5), rng);
  const Vector mean = e.u.rowwise().mean();
  Matrix span(50, 10);
  span << (e.u.colwise() - mean), (out.u.colwise() - mean);
  Eigen::JacobiSVD<Matrix> svd(span);
  const Vector s = svd.singularValues();
  EXPECT_GT(s[3], 1e-8 * s[0]);
  EXPECT_LT(s[4], 1e-10 * s[0]);
}

TEST(EnkfAnalyze, UnitTaperMatchesUnlocalized) {
  Grid2D g(6, 6, 600.0);
  Rng rng(46);
  EnsembleZ e;
  e.u = rng.normal_matrix(36, 8);
  e.v = rng.normal_matrix(4, 8);
  e.w = rng.normal_matrix(3, 8);
  const auto loc = build_localization(g, {{100, 100}, {300, 300}, {500, 100}}, 1e12);
  AnalysisOptions opts;
  opts.localization = &loc;
  Rng a(47), b(47);
  const Vector y = Vector::Constant(3, 0.2), sigma = Vector::Constant(3, 0.7);
  const auto plain = enkf_analyze(e, y, sigma, a);
  const auto tapered = enkf_analyze(e, y, sigma, b, opts);
  EXPECT_LT((plain.u - tapered.u).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(plain.v, tapered.v);

  Rng c(48), d(48);
  const auto splain = ensrf_analyze(e, y, sigma, c);
  const auto stapered = ensrf_analyze(e, y, sigma, d, opts);
  EXPECT_LT((splain.u - stapered.u).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(EnkfAnalyze, ZeroTaperFreezesParameters) {
  Grid2D g(6, 6, 600.0);
  Rng rng(49);
  EnsembleZ e;
  e.u = rng.normal_matrix(36, 8);
  e.v = Matrix(0, 8);
  e.w = rng.normal_matrix(1, 8);
  LocalizationSpec loc = build_localization(g, {{100, 100}}, 50.0);
  loc.rho_uw.setZero();
  AnalysisOptions opts;
  opts.localization = &loc;
  const auto out = enkf_analyze(e, Vector::Zero(1), Vector::Ones(1), rng, opts);
  EXPECT_EQ(out.u, e.u);
}

TEST(EnsrfAnalyze, MeanAndCovarianceIdentities) {
  Rng rng(50);
  EnsembleZ e;
  e.u = rng.normal_matrix(6, 12);
  e.v = rng.normal_matrix(2, 12);
  e.w = rng.normal_matrix(3, 12) + 0.5 * e.u.topRows(3);
  const Vector y = rng.normal_vector(3), sigma = Vector::LinSpaced(3, 0.4, 0.9);
  const auto out = ensrf_analyze(e, y, sigma, rng);

  const Matrix z = stack(e);
  const Matrix c = covariance(z);
  const Eigen::Index nz = z.rows();
  const Matrix c_zw = c.rightCols(3);
  const Matrix s = c.bottomRightCorner(3, 3) + Matrix(sigma.cwiseAbs2().asDiagonal());
  const Matrix k = c_zw * s.inverse();
  const Vector mean = z.rowwise().mean() + k * (y - e.w.rowwise().mean());
  const Matrix c_a = c - k * c_zw.transpose();

  const Matrix za = stack(out);
  EXPECT_LT((Vector(za.rowwise().mean()) - mean).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((covariance(za) - c_a).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_EQ(za.rows(), nz);
}

TEST(EnsrfAnalyze, HugeNoiseKeepsCovariance) {
  Rng rng(51);
  EnsembleZ e;
  e.u = rng.normal_matrix(4, 10);
  e.v = Matrix(0, 10);
  e.w = rng.normal_matrix(2, 10);
  const auto out = ensrf_analyze(e, Vector::Zero(2), Vector::Constant(2, 1e8), rng);
  EXPECT_LT((covariance(out.u) - covariance(e.u)).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((Vector(out.u.rowwise().mean()) - Vector(e.u.rowwise().mean())).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(EnsrfAnalyze, ScalarKalmanUpdate) {
  Rng rng(52);
  const auto out = ensrf_analyze(scalar_ensemble(2000, rng, 0.0, 1.0), Vector::Ones(1), Vector::Ones(1), rng);
  // exact on the sample moments, so only the prior sampling error remains
  EXPECT_NEAR(out.u.mean(), 0.5, 0.05);
  EXPECT_NEAR(covariance(out.u)(0, 0) / 0.5, 1.0, 0.1);
}

TEST(MeanPreservingRotation, OrthogonalAndFixesOnes) {
  Rng rng(53);
  for (Eigen::Index n : {2, 3, 7, 40}) {
    const Matrix t = mean_preserving_rotation(n, rng);
    EXPECT_LE((t.transpose() * t - Matrix::Identity(n, n)).cwiseAbs().maxCoeff(), 1e-12) << n;
    EXPECT_LE((t * Vector::Ones(n) - Vector::Ones(n)).cwiseAbs().maxCoeff(), 1e-12) << n;
  }
  EXPECT_THROW(mean_preserving_rotation(1, rng), InvalidArgument);
}

TEST(MeanPreservingRotation, TwoMembersIdentityOrSwap) {
  Rng rng(54);
  Matrix swap(2, 2);
  swap << 0, 1, 1, 0;
  int identity = 0, swapped = 0;
  for (int k = 0; k < 200; ++k) {
    const Matrix t = mean_preserving_rotation(2, rng);
    if ((t - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-12)
      ++identity;
    else if ((t - swap).cwiseAbs().maxCoeff() < 1e-12)
      ++swapped;
  }
  EXPECT_EQ(identity + swapped, 200);
  EXPECT_GT(identity, 60);
  EXPECT_GT(swapped, 60);
}

TEST(MeanPreservingRotation, LowRankPathPreservesMeanAndGram) {
  Rng rng(55);
  for (Eigen::Index n : {12, 600}) {
    const Matrix x = rng.normal_matrix(3, n);
    const Matrix y = apply_mean_preserving_rotation(x, rng, 8);
    EXPECT_LT((Vector(y.rowwise().sum()) - Vector(x.rowwise().sum())).cwiseAbs().maxCoeff(), 1e-9) << n;
    EXPECT_LT((y * y.transpose() - x * x.transpose()).cwiseAbs().maxCoeff(), 1e-9) << n;
    EXPECT_GT((y - x).cwiseAbs().maxCoeff(), 1e-3) << n;
  }
}

TEST(MeanPreservingRotation, CenteredZeroInputStaysZero) {
  Rng rng(56);
  const Matrix y = apply_mean_preserving_rotation(Matrix::Zero(2, 700), rng);
  EXPECT_LT(y.cwiseAbs().maxCoeff(), 1e-14);
}

TEST(RunFilter, LinearGaussianEquivalence) {
  Rng rng(57);
  const Eigen::Index n = 16;
  const Matrix a = rng.normal_matrix(n, n);
  const Matrix c = a * a.transpose() / double(n) + 0.2 * Matrix::Identity(n, n);
  const DenseGaussianPrior prior(rng.normal_vector(n), c);
  const Matrix b = rng.normal_matrix(4, n);
  const LinearModel model(b);
  const Vector sigma = Vector::Constant(4, 0.5);
  const Vector y = b * prior.sample_vector(rng) + sigma.cwiseProduct(rng.normal_vector(4));
  const auto post = linear_gaussian_posterior(b, prior.mean_vector(), c, y, Matrix(sigma.cwiseAbs2().asDiagonal()));

  for (FilterKind kind : {FilterKind::enkf, FilterKind::ensrf}) {
    const auto r = run_filter(model, prior, y, sigma, 20000, kind, rng);
    const Vector mean = r.ensemble.u.rowwise().mean();
    const Vector var = covariance(r.ensemble.u).diagonal();
    for (Eigen::Index k = 0; k < n; ++k) {
      const double sd = std::sqrt(post.covariance(k, k));
      EXPECT_NEAR(mean[k], post.mean[k], 0.03 * sd) << "kind " << int(kind) << " cell " << k;
      EXPECT_NEAR(var[k] / post.covariance(k, k), 1.0, 0.03) << "kind " << int(kind) << " cell " << k;
    }
  }
}

TEST(RunFilter, CostIsOneForwardRunPerMember) {
  Grid2D g(8, 8, 1000.0);
  const auto model = small_model(g);
  const auto prior = small_prior(g);
  Rng rng(58);
  const Vector y = model.evaluate(prior.sample_vector(rng));
  const Vector sigma = Vector::Constant(y.size(), 4e5);
  const auto r = run_filter(model, prior, y, sigma, 50, FilterKind::enkf, rng);
  EXPECT_DOUBLE_EQ(r.forward_runs, 50.0);
  EXPECT_EQ(r.ensemble.size(), 50);
  EXPECT_THROW(run_filter(model, prior, Vector::Zero(3), Vector::Ones(3), 5, FilterKind::enkf, rng),
               InvalidArgument);
}

TEST(RunFilter, DeterministicForSeed) {
  Grid2D g(8, 8, 1000.0);
  const auto model = small_model(g);
  const auto prior = small_prior(g);
  Rng r0(59);
  const Vector y = model.evaluate(prior.sample_vector(r0));
  const Vector sigma = Vector::Constant(y.size(), 4e5);
  Rng a(60), b(60);
  EXPECT_EQ(run_filter(model, prior, y, sigma, 10, FilterKind::ensrf, a).ensemble.u,
            run_filter(model, prior, y, sigma, 10, FilterKind::ensrf, b).ensemble.u);
}
