#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "fisherpde/gaussian.hpp"

using namespace fisherpde;
using namespace fisherpde::gaussian;
using infoop::DesignMeasure;

namespace {

double heat_inverse_diag(double lam, double T = 1.0) {
  return lam == 0.0 ? 1.0 / T : 2 * lam / (1 - std::exp(-2 * lam * T));
}

InformationMatrix heat_matrix(int K) {
  const forward::HeatModel heat{1, 1.0, {}};
  spectral::FourierCoeffs zero(spectral::TorusGrid::make(1, 1));
  return infoop::assemble_information_matrix(heat, zero, noise::FisherMatrix::identity(1),
                                             DesignMeasure::uniform(1.0, 1), K);
}

InformationMatrix rd_matrix(int K) {
  const forward::ReactionDiffusionModel rd;
  return infoop::assemble_information_matrix(rd, forward::default_base_state(rd), noise::FisherMatrix::identity(1),
                                             DesignMeasure::uniform(1.0, 1), K);
}

}  // namespace

TEST(Sampling, ScalarVariance) {
  const spectral::EigenSystem es(1, 1, spectral::Subspace::full);
  Eigen::MatrixXd m(1, 1);
  m(0, 0) = 0.37;
  const InformationMatrix M(m, es);
  const auto b = sample_efficient_gaussian(M, 20000, 11);
  const double var = b.samples.row(0).squaredNorm() / b.m;
  // sd of the variance estimate of a centred normal: sqrt(2/m) * sigma^2
  EXPECT_NEAR(var, 1 / 0.37, 3.0 * std::sqrt(2.0 / b.m) / 0.37);
}

TEST(Sampling, EmpiricalCovarianceMatchesInverse) {
  const InformationMatrix M = rd_matrix(16);
  const int m = 20000;
  const auto b = sample_efficient_gaussian(M, m, 3);
  const Eigen::MatrixXd C = b.samples * b.samples.transpose() / m;
  const Eigen::MatrixXd Ci = M.inverse();
  double worst = 0.0;
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) {
      // Var(g_i g_j) = C_ii C_jj + C_ij^2 for a centred Gaussian pair
      const double sd = std::sqrt((Ci(i, i) * Ci(j, j) + Ci(i, j) * Ci(i, j)) / m);
      worst = std::max(worst, std::abs(C(i, j) - Ci(i, j)) / sd);
    }
  EXPECT_LT(worst, 4.5);  // max over 136 distinct entries
  // covariance restriction for f, g in span
  Eigen::VectorXd f = Eigen::VectorXd::LinSpaced(16, -1.0, 1.0), g = Eigen::VectorXd::Ones(16);
  const Eigen::VectorXd a = b.samples.transpose() * f, c = b.samples.transpose() * g;
  const double cov = a.dot(c) / m;
  const double exact = f.dot(Ci * g);
  const double sd = std::sqrt((f.dot(Ci * f) * g.dot(Ci * g) + exact * exact) / m);
  EXPECT_NEAR(cov, exact, 3.0 * sd);
}

TEST(Sampling, DeterministicAndRoundTrips) {
  const InformationMatrix M = rd_matrix(8);
  const auto a = sample_efficient_gaussian(M, 100, 9, Execution::serial);
  const auto b = sample_efficient_gaussian(M, 100, 9, Execution::parallel);
  EXPECT_EQ((a.samples - b.samples).cwiseAbs().maxCoeff(), 0.0);
  const auto dir = std::filesystem::temp_directory_path() / "fisherpde_batch_test";
  std::filesystem::create_directories(dir);
  a.write(dir / "batch", model_hash(forward::to_json(forward::ReactionDiffusionModel{})));
  const auto r = GaussianSampleBatch::read(dir / "batch");
  EXPECT_EQ(r.K, 8);
  EXPECT_EQ(r.seed, 9u);
  EXPECT_EQ((r.samples - a.samples).cwiseAbs().maxCoeff(), 0.0);
  std::filesystem::remove_all(dir);
  EXPECT_NE(model_hash({{"a", 1}}), model_hash({{"a", 2}}));
}

TEST(Support, HeatThresholdsAndMonteCarlo) {
  const InformationMatrix M = heat_matrix(512);
  SupportOptions o;
  o.betas = {1.0, 2.0};
  o.truncations = {64, 256, 512};
  o.mc_truncation = 64;
  o.mc_samples = 5000;
  o.seed = 4;
  const auto r = support_diagnostic(M, o);
  EXPECT_DOUBLE_EQ(r.threshold, 1.5);
  const auto& b1 = r.curves[0];
  const auto& b2 = r.curves[1];
  // exact oracle at K = 64 from the closed-form inverse diagonal
  double oracle = 0.0;
  for (int j = 0; j < 64; ++j) {
    const double lam = M.basis().mode(j).eigenvalue;
    oracle += heat_inverse_diag(lam) / (1 + lam);
  }
  EXPECT_NEAR(b1.moments[0], oracle, 1e-9 * oracle);
  EXPECT_FALSE(b1.predicted_convergent);
  EXPECT_GT(b1.moments[2] / b1.moments[0], 1.25);
  EXPECT_FALSE(b1.plateau);
  EXPECT_NEAR(b1.growth_exponent, b1.expected_exponent, 0.3);
  EXPECT_TRUE(b2.predicted_convergent);
  EXPECT_TRUE(b2.plateau);
  EXPECT_LT(b2.last_increment, 0.02);
  for (const auto& c : r.curves) EXPECT_NEAR(*c.mc_mean, *c.mc_exact, 3.0 * *c.mc_stderr);
}

TEST(Pushforward, HeatClosedFormAndDegeneratePower) {
  const int K = 32;
  const InformationMatrix M = heat_matrix(K);
  const auto b = sample_efficient_gaussian(M, 5000, 21);
  const forward::HeatModel heat{1, 1.0, {}};
  spectral::FourierCoeffs zero(spectral::TorusGrid::make(1, 1));
  PushforwardSpec spec;
  spec.t0 = 0.1;
  spec.t1 = 0.6;
  const auto r = functional_pushforward_bound(b, M, heat, zero, spec);
  double oracle = 0.0;
  for (int j = 0; j < K; ++j) {
    const double lam = M.basis().mode(j).eigenvalue;
    const double window = lam == 0.0 ? 0.5 : (std::exp(-2 * lam * 0.1) - std::exp(-2 * lam * 0.6)) / (2 * lam);
    oracle += heat_inverse_diag(lam) * window;
  }
  ASSERT_TRUE(r.exact.has_value());
  EXPECT_NEAR(*r.exact, oracle, 1e-9 * oracle);
  EXPECT_NEAR(r.mean, oracle, 3.0 * r.standard_error);

  spec.power = 0.0;
  EXPECT_EQ(functional_pushforward_bound(b, M, heat, zero, spec).mean, 1.0);
  spec.loss = Loss::sup_power;
  EXPECT_EQ(functional_pushforward_bound(b, M, heat, zero, spec).mean, 1.0);
  spec.t0 = 0.0;
  EXPECT_THROW(functional_pushforward_bound(b, M, heat, zero, spec), std::invalid_argument);
}

TEST(Pushforward, SupLossDominatesL2AndIsStableInK) {
  const forward::ReactionDiffusionModel rd;
  const auto theta0 = forward::default_base_state(rd);
  PushforwardSpec l2;
  l2.t0 = 0.1;
  l2.power = 1.0;
  PushforwardSpec sup = l2;
  sup.loss = Loss::sup_power;
  std::vector<double> means;
  for (int K : {16, 32}) {
    const InformationMatrix M = rd_matrix(K);
    const auto b = sample_efficient_gaussian(M, 4000, 5);
    const auto a = functional_pushforward_bound(b, M, rd, theta0, l2);
    const auto s = functional_pushforward_bound(b, M, rd, theta0, sup);
    // on [t0, 1] x T, ||f||_L2 <= sqrt(0.9) sup |f|
    EXPECT_LE(a.mean, std::sqrt(0.9) * s.mean * (1 + 1e-3));
    means.push_back(a.mean);
  }
  EXPECT_LT(std::abs(means[1] - means[0]) / means[0], 0.05);
}

TEST(Pushforward, NsNonlinearityAgreesWithProductOracle) {
  const forward::NavierStokesModel ns;
  const auto theta0 = forward::default_base_state(ns);
  const int K = 6;
  const auto M = infoop::assemble_information_matrix(ns, theta0, noise::FisherMatrix::identity(2),
                                                     DesignMeasure::uniform(1.0, 2), K);
  const auto b = sample_efficient_gaussian(M, 3, 2);
  PushforwardSpec spec;
  spec.functional = Functional::ns_nonlinearity;
  spec.t0 = 0.5;
  spec.t1 = 1.0;
  const auto r = functional_pushforward_bound(b, M, ns, theta0, spec);
  // oracle for sample 0: linearize along g, then form the convective term
  // with coefficient-space dealiased products on a doubled grid
  const auto& basis = M.basis();
  const spectral::FourierCoeffs g = basis.field(b.samples.col(0), basis.natural_grid());
  const auto grid = forward::solver_grid(ns, std::max(theta0.grid().max_wavenumber, basis.required_wavenumber()));
  const auto times = forward::time_grid(ns, grid, {0.5, 1.0});
  const auto U = forward::linearize(ns, theta0, g, times);
  const auto u = forward::solve(ns, theta0, times);
  const auto w = times.simpson_weights(0.5, 1.0);
  const auto big = spectral::TorusGrid::make(2, 2 * grid.max_wavenumber, 1);
  auto comp = [&](const spectral::FourierCoeffs& f, int c) {
    spectral::FourierCoeffs s(spectral::TorusGrid::make(2, f.grid().max_wavenumber, 1));
    std::copy(f.component(c).begin(), f.component(c).end(), s.component(0).begin());
    return s.resized(big);
  };
  auto d = [&](const spectral::FourierCoeffs& f, int axis) {
    spectral::FourierCoeffs out(f.grid());
    for (int i = 0; i < f.grid().box_size(); ++i)
      out.component(0)[i] = spectral::Complex(0, kTwoPi * f.grid().wavevector(i)[axis]) * f.component(0)[i];
    return out;
  };
  double q = 0.0;
  for (int n = 0; n < times.size(); ++n) {
    if (w[n] == 0.0) continue;
    for (int c = 0; c < 2; ++c) {
      const auto Uc = comp(U.at_node(n), c), uc = comp(u.at_node(n), c);
      spectral::FourierCoeffs f(big);
      for (int a = 0; a < 2; ++a) {
        f += spectral::dealiased_product(comp(U.at_node(n), a), d(uc, a));
        f += spectral::dealiased_product(comp(u.at_node(n), a), d(Uc, a));
      }
      q += w[n] * spectral::pairing(f, f);
    }
  }
  // one-sample "mean" is not available, so compare the exact trace path
  // through a batch holding only this sample twice
  GaussianSampleBatch one{K, 2, 0, Eigen::MatrixXd(K, 2)};
  one.samples.col(0) = b.samples.col(0);
  one.samples.col(1) = b.samples.col(0);
  EXPECT_NEAR(functional_pushforward_bound(one, M, ns, theta0, spec).mean, q, 1e-8 * q);
  EXPECT_GT(r.mean, 0.0);
}
