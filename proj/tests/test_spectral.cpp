#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fisherpde/rng.hpp"
#include "fisherpde/spectral.hpp"

using namespace fisherpde;
using namespace fisherpde::spectral;

namespace {

FourierCoeffs random_field(const TorusGrid& g, std::uint64_t seed) {
  Rng rng(seed);
  FourierCoeffs u(g);
  for (auto& c : u.data()) c = {rng.normal(), rng.normal()};
  u.symmetrize();
  return u;
}

// Direct sum u(x) = sum_k c_k exp(2 pi i k.x), no FFT involved.
double direct_value(const FourierCoeffs& u, double x0, double x1) {
  const TorusGrid& g = u.grid();
  std::complex<double> s = 0.0;
  for (int i = 0; i < g.box_size(); ++i) {
    const auto k = g.wavevector(i);
    s += u.component(0)[i] * std::polar(1.0, kTwoPi * (k[0] * x0 + k[1] * x1));
  }
  return s.real();
}

}  // namespace

TEST(EigenSystem, OneDimensionalSpectrum) {
  const EigenSystem es(1, 2, Subspace::full);
  ASSERT_EQ(es.size(), 5);
  const double l1 = 4 * kPi * kPi, l2 = 16 * kPi * kPi;
  const double expect[] = {0.0, l1, l1, l2, l2};
  for (int j = 0; j < 5; ++j) {
    EXPECT_NEAR(es.mode(j).eigenvalue, expect[j], 1e-12);
    EXPECT_NEAR(es.mode(j).weight, 1.0 + expect[j], 1e-12);
  }
}

TEST(EigenSystem, DivergenceFreeSpectralGap) {
  const EigenSystem es(2, 1, Subspace::divergence_free);
  EXPECT_NEAR(es.mode(0).eigenvalue, 4 * kPi * kPi, 1e-12);
  for (const auto& m : es.modes()) {
    EXPECT_GT(m.eigenvalue, 0.0);
    EXPECT_DOUBLE_EQ(m.weight, m.eigenvalue);
  }
}

TEST(EigenSystem, WeylExponentTwoDimensions) {
  const EigenSystem es(2, 16, Subspace::full);
  // lattice-point enumeration done independently of the library
  std::vector<int> r2;
  for (int a = -16; a <= 16; ++a)
    for (int b = -16; b <= 16; ++b) r2.push_back(a * a + b * b);
  std::sort(r2.begin(), r2.end());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (int j = 50; j <= 500; ++j) {
    EXPECT_NEAR(es.mode(j).eigenvalue, 4 * kPi * kPi * r2[j], 1e-9);
    const double x = std::log(j), y = std::log(es.mode(j).eigenvalue);
    sx += x, sy += y, sxx += x * x, sxy += x * y, ++n;
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  EXPECT_NEAR(slope, 1.0, 0.1);
}

TEST(EigenSystem, OrderingIsDeterministic) {
  const EigenSystem a(2, 6, Subspace::divergence_free), b(2, 6, Subspace::divergence_free);
  ASSERT_EQ(a.size(), b.size());
  for (int j = 0; j < a.size(); ++j) {
    EXPECT_EQ(a.mode(j).k, b.mode(j).k);
    EXPECT_EQ(a.mode(j).kind, b.mode(j).kind);
    if (j > 0) EXPECT_LE(a.mode(j - 1).eigenvalue, a.mode(j).eigenvalue);
  }
}

TEST(EigenSystem, LeadingMatchesBox) {
  const EigenSystem box(1, 40, Subspace::full);
  const EigenSystem lead = EigenSystem::leading(1, Subspace::full, 33);
  ASSERT_EQ(lead.size(), 33);
  for (int j = 0; j < 33; ++j) EXPECT_EQ(lead.mode(j).k, box.mode(j).k);
}

TEST(EigenSystem, InvalidCombinationsThrow) {
  EXPECT_THROW(EigenSystem(1, 4, Subspace::divergence_free), std::invalid_argument);
  EXPECT_THROW(EigenSystem(3, 4, Subspace::full), std::invalid_argument);
  EXPECT_THROW(EigenSystem(1, 0, Subspace::full), std::invalid_argument);
}

TEST(SobolevNorm, SingleModeAndParseval) {
  const EigenSystem es(2, 3, Subspace::full);
  const TorusGrid g = es.natural_grid();
  for (int j : {0, 3, 11}) {
    for (double s : {-1.0, 0.0, 0.5, 2.0})
      EXPECT_NEAR(sobolev_norm(es.basis_vector(j, g), s, es), std::pow(es.mode(j).weight, s / 2), 1e-10);
  }
  const FourierCoeffs u = es.basis_vector(1, g) + es.basis_vector(2, g);
  EXPECT_NEAR(sobolev_norm(u, 0.0, es), std::sqrt(2.0), 1e-13);
}

TEST(SobolevNorm, BruteForceSum) {
  const EigenSystem es(1, 64, Subspace::full);
  Eigen::VectorXd c(es.size());
  double brute = 0.0;
  for (int j = 0; j < es.size(); ++j) {
    const double k = std::ceil(j / 2.0);
    const double tau = 1.0 + 4 * kPi * kPi * k * k;
    c[j] = 1.0 / tau;
    brute += 1.0 / tau;
  }
  const FourierCoeffs u = es.field(c, es.natural_grid());
  EXPECT_NEAR(sobolev_norm(u, 1.0, es), std::sqrt(brute), 1e-12);
}

TEST(SobolevNorm, RejectsMassOutsideSubspace) {
  const EigenSystem es(2, 3, Subspace::mean_zero);
  FourierCoeffs u(es.natural_grid());
  u.at(0, {0, 0}) = 1.0;
  EXPECT_THROW(sobolev_norm(u, 1.0, es), std::invalid_argument);
}

TEST(Pairing, Orthonormality) {
  const EigenSystem es(2, 2, Subspace::divergence_free);
  const TorusGrid g = es.natural_grid();
  for (int i = 0; i < es.size(); ++i)
    for (int j = 0; j < es.size(); ++j)
      EXPECT_NEAR(pairing(es.basis_vector(i, g), es.basis_vector(j, g)), i == j ? 1.0 : 0.0, 1e-13);
}

TEST(Pairing, MatchesGridQuadrature) {
  for (int d : {1, 2}) {
    const TorusGrid g = TorusGrid::make(d, 16);
    const FourierCoeffs u = random_field(g, 1), v = random_field(g, 2);
    const int n = g.points;
    double quad = 0.0;
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < (d == 2 ? n : 1); ++b)
        quad += direct_value(u, double(a) / n, double(b) / n) * direct_value(v, double(a) / n, double(b) / n);
    quad /= d == 2 ? n * n : n;
    EXPECT_NEAR(pairing(u, v), quad, 1e-10 * std::max(1.0, std::abs(quad)));
    const EigenSystem es(d, 16, Subspace::full);
    EXPECT_NEAR(pairing(u, u), std::pow(sobolev_norm(u, 0.0, es), 2), 1e-10 * pairing(u, u));
  }
  EXPECT_THROW(pairing(FourierCoeffs(TorusGrid::make(1, 4)), FourierCoeffs(TorusGrid::make(1, 5))),
               std::invalid_argument);
}

TEST(Transform, Roundtrip) {
  for (int d : {1, 2}) {
    // the even-n Nyquist mode is outside every box, so grid fields are
    // generated from coefficients with |k_i| <= n/2 - 1
    const TorusGrid g = TorusGrid::make(d, 7, 2, 16);
    const FourierCoeffs u = random_field(g, 5);
    const auto vals = to_values(u);
    const FourierCoeffs back = from_values(vals, g);
    EXPECT_LT((back - u).max_abs(), 1e-13);
    const auto again = to_values(back);
    for (std::size_t i = 0; i < vals.size(); ++i) EXPECT_NEAR(vals[i], again[i], 1e-12);
  }
}

TEST(Transform, CosineHasHalfCoefficients) {
  const TorusGrid g = TorusGrid::make(1, 4);
  std::vector<double> v(g.points);
  for (int i = 0; i < g.points; ++i) v[i] = std::cos(kTwoPi * i / g.points);
  const FourierCoeffs u = from_values(v, g);
  EXPECT_NEAR(std::abs(u.at(0, {1, 0}) - 0.5), 0.0, 1e-14);
  EXPECT_NEAR(std::abs(u.at(0, {-1, 0}) - 0.5), 0.0, 1e-14);
  EXPECT_NEAR(u.max_abs(), 0.5, 1e-14);
}

TEST(Transform, RejectsAliasingResolution) {
  const TorusGrid g = TorusGrid::make(1, 8);
  std::vector<double> v(10, 0.0);
  EXPECT_THROW(from_values(v, g), std::invalid_argument);
  EXPECT_THROW(TorusGrid::make(1, 8, 1, 12), std::invalid_argument);
}

TEST(Transform, DealiasedProductMatchesConvolution) {
  for (int d : {1, 2}) {
    const TorusGrid g = TorusGrid::make(d, 8);
    const FourierCoeffs u = random_field(g, 11), v = random_field(g, 12);
    const FourierCoeffs w = dealiased_product(u, v);
    double worst = 0.0;
    for (int i = 0; i < g.box_size(); ++i) {
      const auto k = g.wavevector(i);
      std::complex<double> s = 0.0;
      for (int a = 0; a < g.box_size(); ++a) {
        const auto p = g.wavevector(a);
        const Wavevector q{k[0] - p[0], k[1] - p[1]};
        if (std::abs(q[0]) > 8 || std::abs(q[1]) > 8) continue;
        s += u.at(0, p) * v.at(0, q);
      }
      worst = std::max(worst, std::abs(s - w.at(0, k)));
    }
    EXPECT_LT(worst, 1e-12);
  }
}

TEST(Evaluate, MatchesDirectSum) {
  const TorusGrid g = TorusGrid::make(2, 5);
  const FourierCoeffs u = random_field(g, 9);
  EXPECT_NEAR(evaluate(u, {0.123, 0.77})[0], direct_value(u, 0.123, 0.77), 1e-12);
}

TEST(CoeffsJson, Roundtrip) {
  const EigenSystem es(2, 3, Subspace::divergence_free);
  Eigen::VectorXd c = Eigen::VectorXd::LinSpaced(es.size(), -1.0, 1.0);
  const FourierCoeffs u = es.field(c, es.natural_grid());
  const auto j = to_json(u, es);
  EXPECT_EQ(j.at("subspace"), "divergence-free");
  const FourierCoeffs back = coeffs_from_json(j);
  EXPECT_LT((back - u).max_abs(), 1e-15);
  const Eigen::VectorXd c2 = es.coordinates(back);
  EXPECT_LT((c2 - c).cwiseAbs().maxCoeff(), 1e-13);
}
