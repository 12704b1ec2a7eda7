#pragma once

#include <array>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "fisherpde/common.hpp"
#include "fisherpde/rng.hpp"

namespace fisherpde::noise {

/// Point of R^p, p <= 2; unused entries are zero.
using Point = std::array<double, 2>;

enum class Family { gaussian, bivariate_gaussian, laplace, logistic, cosine_bump, uniform };

struct Interval {
  double lo;
  double hi;
};

/// Error density q with a chosen version g of grad sqrt(q) that vanishes on
/// {q = 0}. The support is all of R^p or a product of intervals.
class NoiseModel {
 public:
  static NoiseModel gaussian(double variance);
  static NoiseModel bivariate_gaussian(const Eigen::Matrix2d& covariance);
  static NoiseModel laplace(double scale);
  static NoiseModel logistic(double scale);
  /// q(y) = cos^2(pi y / 2) on [-1, 1].
  static NoiseModel cosine_bump();
  /// Uniform on [lo, hi]. sqrt(q) is not in H^1; shipped so the H^1 probe
  /// has a negative case.
  static NoiseModel uniform(double lo, double hi);

  /// {"family": ..., params...}; throws std::invalid_argument on unknown
  /// families, missing or unknown keys, or invalid parameters.
  static NoiseModel from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  Family family() const { return family_; }
  std::string name() const;
  int dim() const { return dim_; }
  const Eigen::Matrix2d& covariance() const { return cov_; }
  bool compact_support() const;

  double density(const Point& y) const;
  double log_density(const Point& y) const;
  double sqrt_density(const Point& y) const { return std::sqrt(density(y)); }
  /// The version of grad sqrt(q) used throughout (zero where q = 0).
  Point sqrt_gradient(const Point& y) const;
  /// -2 g(y) / sqrt(q(y)) where q(y) > 0, and 0 on the zero set.
  Point score(const Point& y) const;

  /// Finite integration window per axis (the support, or a scale-multiple
  /// window for unbounded support) and interior breakpoints (kinks).
  Interval window(int axis) const;
  std::vector<double> breakpoints(int axis) const;
  /// Closed-form CDF of a one-dimensional model.
  double cdf(double y) const;

 private:
  Family family_ = Family::gaussian;
  int dim_ = 1;
  double scale_ = 1.0;  // sigma, b, s
  double lo_ = 0.0, hi_ = 1.0;
  Eigen::Matrix2d cov_ = Eigen::Matrix2d::Identity();
  Eigen::Matrix2d precision_ = Eigen::Matrix2d::Identity();
  double log_norm2_ = 0.0;
};

/// p x p Fisher information 4 int g g^T with its symmetric square root and
/// inverse.
struct FisherMatrix {
  Eigen::MatrixXd information;
  Eigen::MatrixXd sqrt;
  Eigen::MatrixXd inverse;
  double min_eigenvalue = 0.0;

  static FisherMatrix from_matrix(const Eigen::MatrixXd& info);
  static FisherMatrix identity(int p) { return from_matrix(Eigen::MatrixXd::Identity(p, p)); }
  int dim() const { return static_cast<int>(information.rows()); }
};

/// Composite Gauss-Legendre quadrature over [a, b] split at `breaks`, with
/// panel doubling until two successive estimates agree to `rel_tol`.
/// Throws NumericalError if 2^16 panels per segment do not suffice.
double integrate(const std::function<double(double)>& f, double a, double b,
                 const std::vector<double>& breaks = {}, double rel_tol = 1e-13,
                 double abs_tol = 1e-15);

FisherMatrix fisher_matrix(const NoiseModel& noise);

/// 4 E[(g/sqrt q)(g/sqrt q)^T] by Monte Carlo with entrywise standard errors.
struct MonteCarloFisher {
  Eigen::MatrixXd mean;
  Eigen::MatrixXd standard_error;
};
MonteCarloFisher fisher_matrix_monte_carlo(const NoiseModel& noise, std::uint64_t seed,
                                           int samples);

struct H1Report {
  double h1_energy = 0.0;              // int |g|^2
  double zero_set_consistency = 0.0;   // max |g| over probed points with q = 0
  double boundary_mass = 0.0;          // max |sqrt q(b) - sqrt q(a) - int_a^b g|
  double normalization = 0.0;          // int q
  Point mean{0.0, 0.0};                // int y q
  bool accepted = false;
  std::string reason;
  nlohmann::json to_json() const;
};
H1Report sqrt_density_h1_check(const NoiseModel& noise);

/// Inverse-CDF sampler (tabulated CDF on 2^14 knots, monotone cubic
/// interpolation) for p = 1; Cholesky transform of standard normals for
/// the bivariate Gaussian. Immutable once built; share across workers and
/// give each worker its own Rng.
class NoiseSampler {
 public:
  explicit NoiseSampler(const NoiseModel& noise);
  ~NoiseSampler();
  NoiseSampler(NoiseSampler&&) noexcept;
  NoiseSampler& operator=(NoiseSampler&&) noexcept;

  Point draw(Rng& rng) const;
  const NoiseModel& model() const { return noise_; }

 private:
  struct Table;
  NoiseModel noise_;
  std::unique_ptr<Table> table_;
  Eigen::Matrix2d chol_ = Eigen::Matrix2d::Identity();
};

std::vector<Point> sample_noise(const NoiseModel& noise, std::uint64_t seed, int n);

}  // namespace fisherpde::noise
