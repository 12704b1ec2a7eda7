#include <gtest/gtest.h>

#include <cmath>

#include "fisherpde/inference.hpp"

using namespace fisherpde;
using namespace fisherpde::inference;
using forward::HeatModel;
using spectral::EigenSystem;
using spectral::Subspace;

namespace {

const HeatModel kHeat{1, 1.0, {}};

FourierCoeffs heat_mode(int j, double scale = 1.0) {
  const EigenSystem es(1, 4, Subspace::full);
  FourierCoeffs u = es.basis_vector(j, es.natural_grid());
  u *= scale;
  return u;
}

// Closed-form heat solution sum_k c_k exp(-lambda_k t) exp(2 pi i k x)
double heat_value(const FourierCoeffs& c, double t, double x) {
  double v = 0.0;
  const int K = c.grid().max_wavenumber;
  for (int k = -K; k <= K; ++k)
    v += (c.at(0, {k, 0}) * std::exp(-4 * kPi * kPi * k * k * t) * std::polar(1.0, kTwoPi * k * x)).real();
  return v;
}

InformationMatrix heat_matrix(int K, double variance = 1.0) {
  FourierCoeffs zero(spectral::TorusGrid::make(1, 1));
  return infoop::assemble_information_matrix(kHeat, zero, noise::fisher_matrix(noise::NoiseModel::gaussian(variance)),
                                             DesignMeasure::uniform(1.0, 1), K);
}

}  // namespace

TEST(Simulate, NearNoiselessAndDesignLaw) {
  const FourierCoeffs theta = forward::default_base_state(kHeat);
  const auto d = simulate_dataset(kHeat, theta, DesignMeasure::uniform(1.0, 1), noise::NoiseModel::gaussian(1e-12),
                                  4000, 3);
  double s2 = 0.0, tm = 0.0;
  for (const auto& r : d.records) {
    const double res = r.y[0] - heat_value(theta, r.t, r.x[0]);
    s2 += res * res;
    tm += r.t;
  }
  EXPECT_LT(std::sqrt(s2 / d.size()), 1e-5);
  EXPECT_NEAR(tm / d.size(), 0.5, 3.0 * std::sqrt(1.0 / 12.0 / d.size()));
  EXPECT_EQ(d.seed, 3u);
}

TEST(Simulate, RegressionRecoversHeatCoefficient) {
  const FourierCoeffs e1 = heat_mode(1);
  const int N = 10000;
  const auto d = simulate_dataset(kHeat, e1, DesignMeasure::uniform(1.0, 1), noise::NoiseModel::gaussian(1.0), N, 8);
  const double lam = 4 * kPi * kPi;
  double sxy = 0.0, sxx = 0.0;
  for (const auto& r : d.records) {
    const double f = std::sqrt(2.0) * std::cos(kTwoPi * r.x[0]) * std::exp(-lam * r.t);
    sxy += f * r.y[0];
    sxx += f * f;
  }
  EXPECT_NEAR(sxy / sxx, 1.0, 3.0 / std::sqrt(sxx));
}

TEST(LogLikelihood, ZeroDirectionAndGaussianClosedForm) {
  const FourierCoeffs theta0 = forward::default_base_state(kHeat);
  const noise::NoiseModel gauss = noise::NoiseModel::gaussian(0.49);
  const auto d = simulate_dataset(kHeat, theta0, DesignMeasure::uniform(1.0, 1), gauss, 3000, 12);
  const FourierCoeffs zero(theta0.grid());
  EXPECT_EQ(log_likelihood_ratio(d, kHeat, theta0, zero, 3000, gauss), 0.0);

  FourierCoeffs h = forward::default_direction(kHeat);
  h *= 3.0;
  const int N = 3000;
  double closed = 0.0;
  for (const auto& r : d.records) {
    const double res = r.y[0] - heat_value(theta0, r.t, r.x[0]);
    const double delta = heat_value(h, r.t, r.x[0]) / std::sqrt(static_cast<double>(N));
    closed += (res * delta - 0.5 * delta * delta) / 0.49;
  }
  const double v = log_likelihood_ratio(d, kHeat, theta0, h, N, gauss);
  EXPECT_NEAR(v, closed, 1e-8 * std::max(1.0, std::abs(closed)));
}

TEST(LogLikelihood, SupportEscapeIsCounted) {
  const FourierCoeffs theta0 = forward::default_base_state(kHeat);
  FourierCoeffs h = forward::default_direction(kHeat);
  h *= 400.0;  // shifts of order 4 against noise supported on [-1, 1]
  LanOptions o;
  o.N = 100;
  o.replicates = 20;
  o.seed = 1;
  const auto r = lan_montecarlo(kHeat, theta0, h, noise::NoiseModel::cosine_bump(), DesignMeasure::uniform(1.0, 1), o);
  EXPECT_GT(r.minus_infinity, 0);
  EXPECT_EQ(r.aborted, 0);
  EXPECT_EQ(r.to_json().at("minus_infinity_count"), r.minus_infinity);
}

TEST(KolmogorovSmirnov, Extremes) {
  std::vector<double> exact, point;
  const int n = 400;
  for (int i = 0; i < n; ++i) {
    // normal quantiles by bisection on erfc
    const double p = (i + 0.5) / n;
    double lo = -10, hi = 10;
    for (int it = 0; it < 100; ++it) {
      const double mid = 0.5 * (lo + hi);
      (0.5 * std::erfc(-mid / std::sqrt(2.0)) < p ? lo : hi) = mid;
    }
    exact.push_back(lo);
    point.push_back(0.0);
  }
  const auto a = ks_normal(exact, 0.0, 1.0);
  EXPECT_NEAR(a.distance, 0.5 / n, 1e-9);
  EXPECT_GT(a.p_value, 0.999);
  EXPECT_LT(ks_normal(point, 0.0, 1.0).p_value, 1e-10);
  // Kolmogorov tail: P(sqrt(n) D > 1) ~ 0.27 for large n
  std::vector<double> shifted = exact;
  for (double& x : shifted) x += 1e-12;
  EXPECT_GT(ks_normal(shifted, 0.0, 1.0).p_value, 0.99);
}

TEST(Lan, HeatGaussianMomentsScalingAndContiguity) {
  const FourierCoeffs theta0 = forward::default_base_state(kHeat);
  const noise::NoiseModel gauss = noise::NoiseModel::gaussian(1.0);
  const DesignMeasure u = DesignMeasure::uniform(1.0, 1);
  FourierCoeffs h = forward::default_direction(kHeat);
  h *= 1.0 / infoop::lan_norm_direct(kHeat, theta0, h, noise::fisher_matrix(gauss), u);
  LanOptions o;
  o.N = 1000;
  o.replicates = 300;
  o.seed = 17;
  const auto null = lan_montecarlo(kHeat, theta0, h, gauss, u, o);
  EXPECT_NEAR(null.lan_norm_squared, 1.0, 1e-12);
  EXPECT_NEAR(null.mean, -0.5, 3.0 * null.standard_error);
  EXPECT_NEAR(null.variance, 1.0, 0.25);
  EXPECT_GT(null.ks.p_value, 0.01);
  EXPECT_LT(null.mean, 0.0);

  o.under = Hypothesis::alternative;
  const auto alt = lan_montecarlo(kHeat, theta0, h, gauss, u, o);
  EXPECT_NEAR(alt.mean, 0.5, 3.0 * alt.standard_error);
  EXPECT_NEAR(null.mean, -alt.mean, 3.0 * std::hypot(null.standard_error, alt.standard_error));

  o.under = Hypothesis::null;
  FourierCoeffs h2 = h;
  h2 *= 2.0;
  const auto twice = lan_montecarlo(kHeat, theta0, h2, gauss, u, o);
  EXPECT_NEAR(twice.target_mean, 4.0 * null.target_mean, 1e-12);
  EXPECT_NEAR(twice.mean, -2.0, 3.0 * twice.standard_error);

  const auto again = lan_montecarlo(kHeat, theta0, h, gauss, u, {1000, 300, Hypothesis::null, 17, Execution::serial});
  EXPECT_EQ(again.values, null.values);
}

TEST(Influence, ZeroTargetAndExactEfficiency) {
  const FourierCoeffs theta0 = forward::default_base_state(kHeat);
  const InformationMatrix M = heat_matrix(9);
  const noise::NoiseModel gauss = noise::NoiseModel::gaussian(1.0);
  const auto d = simulate_dataset(kHeat, theta0, DesignMeasure::uniform(1.0, 1), gauss, 500, 2);
  EXPECT_EQ(efficient_influence_estimate(Eigen::VectorXd::Zero(9), d, kHeat, theta0, M, gauss), 0.0);

  Eigen::VectorXd psi = Eigen::VectorXd::Zero(9);
  psi[1] = 1.0;
  EfficiencyOptions o;
  o.N = 500;
  o.replicates = 800;
  o.seed = 5;
  o.perturbations = {0.0, 1.0};
  const auto r = efficiency_report(kHeat, theta0, psi, gauss, DesignMeasure::uniform(1.0, 1), M, o);
  const double lam = 4 * kPi * kPi;
  EXPECT_NEAR(r.bound, 2 * lam / (1 - std::exp(-2 * lam)), 1e-8);
  // variance of the sample variance is about 2 sigma^4 / R
  EXPECT_NEAR(r.variance_ratio, 1.0, 3.0 * std::sqrt(2.0 / o.replicates));
  for (const auto& m : r.menu) EXPECT_NEAR(m.bias, 0.0, 3.0 * m.bias_standard_error);
  EXPECT_GT(r.menu[0].variance, r.bound - 3.0 * r.menu[0].variance_standard_error);
  EXPECT_FALSE(r.divergence.diverging);
}

TEST(Influence, LaplaceNoiseInLinearModel) {
  const FourierCoeffs theta0 = forward::default_base_state(kHeat);
  const noise::NoiseModel lap = noise::NoiseModel::laplace(0.8);
  FourierCoeffs zero(spectral::TorusGrid::make(1, 1));
  const auto M = infoop::assemble_information_matrix(kHeat, zero, noise::fisher_matrix(lap),
                                                     DesignMeasure::uniform(1.0, 1), 9);
  Eigen::VectorXd psi = Eigen::VectorXd::Zero(9);
  psi[0] = 0.5;
  psi[3] = 1.0;
  const auto r = efficiency_report(kHeat, theta0, psi, lap, DesignMeasure::uniform(1.0, 1), M, {400, 800, 9, {0.0}});
  EXPECT_NEAR(r.menu[0].bias, 0.0, 3.0 * r.menu[0].bias_standard_error);
  EXPECT_NEAR(r.menu[0].variance, r.bound, 3.0 * r.menu[0].variance_standard_error);
}

TEST(Efficiency, NoiseScalingAndDivergenceFlag) {
  const InformationMatrix M1 = heat_matrix(128), M4 = heat_matrix(128, 4.0);
  Eigen::VectorXd e1 = Eigen::VectorXd::Zero(128);
  e1[1] = 1.0;
  EXPECT_NEAR(infoop::s_norm_truncated(e1, M4).value(), 4.0 * infoop::s_norm_truncated(e1, M1).value(), 1e-8);

  Eigen::VectorXd rough(128);
  for (int j = 0; j < 128; ++j) rough[j] = 1.0 / std::sqrt((1.0 + M1.basis().mode(j).eigenvalue) * (j + 1.0));
  const auto trace = infoop::s_norm_truncated(rough, M1).values;
  const auto div = octave_divergence(trace);
  EXPECT_TRUE(div.diverging);
  EXPECT_FALSE(octave_divergence(infoop::s_norm_truncated(e1, M1).values).diverging);
  // a summable target in S
  Eigen::VectorXd smooth(128);
  for (int j = 0; j < 128; ++j) smooth[j] = 1.0 / ((1.0 + M1.basis().mode(j).eigenvalue) * (j + 1.0));
  EXPECT_FALSE(octave_divergence(infoop::s_norm_truncated(smooth, M1).values).diverging);
}
