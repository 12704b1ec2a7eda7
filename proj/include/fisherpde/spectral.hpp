#pragma once

#include <array>
#include <complex>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "fisherpde/common.hpp"

namespace fisherpde::spectral {

using Complex = std::complex<double>;
/// Wavevector on the unit torus; the second entry is 0 when d = 1.
using Wavevector = std::array<int, 2>;

/// Uniform grid on the unit torus T^d with `points` nodes per axis and
/// Fourier truncation |k_i| <= max_wavenumber.
struct TorusGrid {
  int dim = 1;
  int max_wavenumber = 1;
  int points = 8;
  int components = 1;

  /// Validating constructor; points = 0 selects the smallest admissible
  /// resolution max(8, 2K + 2).
  static TorusGrid make(int dim, int max_wavenumber, int components = 1, int points = 0);

  int box_width() const { return 2 * max_wavenumber + 1; }
  /// Coefficient count of one component (the full (2K+1)^d box).
  int box_size() const;
  /// Physical node count of one component.
  int node_count() const;
  /// Resolution of the 3/2-padded grid used for products (>= 3K + 1).
  int padded_points() const;
  int box_index(const Wavevector& k) const;
  Wavevector wavevector(int box_index) const;

  bool operator==(const TorusGrid&) const = default;
};

/// Truncated Fourier coefficients of a real field with `components`
/// components: u(x) = sum_k c_k exp(2 pi i k.x), c(-k) = conj(c(k)).
class FourierCoeffs {
 public:
  FourierCoeffs() = default;
  explicit FourierCoeffs(const TorusGrid& grid);

  const TorusGrid& grid() const { return grid_; }
  Complex& at(int component, const Wavevector& k) {
    return data_[component * grid_.box_size() + grid_.box_index(k)];
  }
  const Complex& at(int component, const Wavevector& k) const {
    return data_[component * grid_.box_size() + grid_.box_index(k)];
  }
  std::span<Complex> component(int c) {
    return {data_.data() + c * grid_.box_size(), static_cast<std::size_t>(grid_.box_size())};
  }
  std::span<const Complex> component(int c) const {
    return {data_.data() + c * grid_.box_size(), static_cast<std::size_t>(grid_.box_size())};
  }
  std::span<Complex> data() { return data_; }
  std::span<const Complex> data() const { return data_; }

  /// Largest |c(-k) - conj c(k)| over the box.
  double hermitian_defect() const;
  /// Replaces c(k) and c(-k) by the Hermitian average.
  void symmetrize();
  /// Copy onto another truncation of the same dimension and component
  /// count. Throws if nonzero modes would be dropped (beyond `tolerance`).
  FourierCoeffs resized(const TorusGrid& target, double tolerance = 0.0) const;
  double max_abs() const;

  FourierCoeffs& operator+=(const FourierCoeffs& other);
  FourierCoeffs& operator-=(const FourierCoeffs& other);
  FourierCoeffs& operator*=(double s);
  friend FourierCoeffs operator+(FourierCoeffs a, const FourierCoeffs& b) { return a += b; }
  friend FourierCoeffs operator-(FourierCoeffs a, const FourierCoeffs& b) { return a -= b; }
  friend FourierCoeffs operator*(double s, FourierCoeffs a) { return a *= s; }

 private:
  TorusGrid grid_{};
  std::vector<Complex> data_;
};

enum class Subspace { full, mean_zero, divergence_free };
enum class ModeKind { constant, cosine, sine };

std::string to_string(Subspace s);
Subspace subspace_from_string(const std::string& s);

/// One real eigenfunction of -Laplace. Scalar modes are sqrt(2) cos/sin of
/// 2 pi k.x (the constant mode is 1); divergence-free modes carry the
/// polarization k_perp / |k| with k_perp = (-k_2, k_1).
struct EigenMode {
  int index = 0;
  Wavevector k{0, 0};
  ModeKind kind = ModeKind::constant;
  double eigenvalue = 0.0;  // 4 pi^2 |k|^2
  double weight = 1.0;      // tau_j
};

/// Ordered real eigenbasis of the periodic Laplacian restricted to a
/// subspace, with the Sobolev-scale weights tau_j. Ordering: eigenvalue,
/// then wavevector lexicographically, cosine before sine.
class EigenSystem {
 public:
  /// All modes of the box |k_i| <= max_wavenumber.
  EigenSystem(int dim, int max_wavenumber, Subspace subspace);

  /// The first `count` modes of the untruncated system.
  static EigenSystem leading(int dim, Subspace subspace, int count);

  int dim() const { return dim_; }
  int max_wavenumber() const { return max_wavenumber_; }
  Subspace subspace() const { return subspace_; }
  int components() const { return subspace_ == Subspace::divergence_free ? 2 : 1; }
  int size() const { return static_cast<int>(modes_.size()); }
  const EigenMode& mode(int j) const { return modes_[j]; }
  const std::vector<EigenMode>& modes() const { return modes_; }
  /// Scale exponents: kappa = 1 and alpha = d/2 (full, mean-zero) or 1
  /// (divergence-free); overridable.
  double kappa() const { return kappa_; }
  double alpha() const { return alpha_; }
  void set_scale_exponents(double kappa, double alpha);

  /// Smallest grid truncation holding every mode.
  int required_wavenumber() const;
  Eigen::VectorXd weights() const;
  Eigen::VectorXd eigenvalues() const;

  /// Coordinates <u, e_j>. Throws std::invalid_argument when u has mass
  /// outside the span (mean in a mean-zero scale, divergence, modes past
  /// the truncation) beyond `tolerance` relative to its L2 norm.
  Eigen::VectorXd coordinates(const FourierCoeffs& u, double tolerance = 1e-10) const;
  /// Field sum_j c_j e_j on `grid` (c may be shorter than size()).
  FourierCoeffs field(const Eigen::Ref<const Eigen::VectorXd>& c, const TorusGrid& grid) const;
  FourierCoeffs basis_vector(int j, const TorusGrid& grid) const;
  /// A grid able to hold the whole system.
  TorusGrid natural_grid() const;

 private:
  EigenSystem() = default;
  void add_coordinate_contribution(const EigenMode& m, const FourierCoeffs& u, double& out) const;

  int dim_ = 1;
  int max_wavenumber_ = 1;
  Subspace subspace_ = Subspace::full;
  double kappa_ = 1.0;
  double alpha_ = 0.5;
  std::vector<EigenMode> modes_;
};

/// (sum_j tau_j^s u_j^2)^{1/2}.
double sobolev_norm(const FourierCoeffs& u, double s, const EigenSystem& es);
double sobolev_norm(const Eigen::Ref<const Eigen::VectorXd>& coords, double s, const EigenSystem& es);

/// L2(T^d) inner product by Parseval; throws on grid mismatch.
double pairing(const FourierCoeffs& u, const FourierCoeffs& v);

/// Real-to-box FFT pair on a `points`^d grid for coefficients |k_i| <= K.
/// Plans are shared and created once; execution is re-entrant.
class BoxTransform {
 public:
  BoxTransform(int dim, int max_wavenumber, int points);
  int dim() const { return dim_; }
  int points() const { return points_; }
  int node_count() const { return dim_ == 1 ? points_ : points_ * points_; }
  int box_size() const { return dim_ == 1 ? width_ : width_ * width_; }
  /// box (one component) -> physical values.
  void to_physical(std::span<const Complex> box, std::span<double> values) const;
  /// physical values -> box, discarding modes past the truncation.
  void to_box(std::span<const double> values, std::span<Complex> box) const;

 private:
  int dim_;
  int max_wavenumber_;
  int width_;
  int points_;
  int half_;
  void* forward_plan_;
  void* backward_plan_;
};

/// Grid values (component-major, x_1 slowest) <-> FourierCoeffs.
std::vector<double> to_values(const FourierCoeffs& u);
std::vector<double> to_values(const FourierCoeffs& u, int points);
/// Throws when the grid resolution cannot represent the truncation.
FourierCoeffs from_values(std::span<const double> values, const TorusGrid& grid);

/// Product of two scalar fields through a 3/2-padded grid, truncated back
/// to the grid of `u`; exact on retained modes.
FourierCoeffs dealiased_product(const FourierCoeffs& u, const FourierCoeffs& v);

/// Coordinates of the grid node with multi-index (i_1, ..., i_d).
std::array<double, 2> node_position(int dim, int points, int flat_index);

/// Pointwise field value from an exact Fourier sum.
std::array<double, 2> evaluate(const FourierCoeffs& u, const std::array<double, 2>& x);

/// JSON coefficient dump {d, K, subspace, components, entries:[{k, component, re, im}]},
/// one entry per wavevector of the eigensystem (index order) and component.
nlohmann::json to_json(const FourierCoeffs& u, const EigenSystem& es);
FourierCoeffs coeffs_from_json(const nlohmann::json& j);

}  // namespace fisherpde::spectral
