#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "fisherpde/forward.hpp"
#include "fisherpde/noise.hpp"
#include "fisherpde/rng.hpp"
#include "fisherpde/spectral.hpp"

namespace fisherpde::infoop {

using forward::ForwardModel;
using forward::Point;
using forward::SpaceTimeField;
using spectral::EigenSystem;
using spectral::FourierCoeffs;

/// Design density on [0, T] x T^d: lambda(t, x) = (1 + a cos(2 pi x_1)) / T
/// with |a| < 1; a = 0 is the uniform design.
class DesignMeasure {
 public:
  static DesignMeasure uniform(double horizon, int dim);
  static DesignMeasure cosine(double horizon, int dim, double amplitude);
  /// {"kind": "uniform"} or {"kind": "cosine", "amplitude": a}.
  static DesignMeasure from_json(const nlohmann::json& j, double horizon, int dim);
  nlohmann::json to_json() const;

  bool is_uniform() const { return amplitude_ == 0.0; }
  double horizon() const { return horizon_; }
  int dim() const { return dim_; }
  double amplitude() const { return amplitude_; }
  double density(double t, const Point& x) const;
  double lower_bound() const { return (1.0 - std::abs(amplitude_)) / horizon_; }
  double upper_bound() const { return (1.0 + std::abs(amplitude_)) / horizon_; }

  struct Location {
    double t;
    Point x;
  };
  /// Exact inverse-CDF draw (Newton on the x_1 marginal).
  Location draw(Rng& rng) const;

 private:
  double horizon_ = 1.0;
  int dim_ = 1;
  double amplitude_ = 0.0;
};

/// (int int |u|^2 dlambda)^{1/2}: Simpson in time; exact in space (Parseval,
/// plus the one-mode shift coupling of the cosine design).
double l2lambda_norm(const SpaceTimeField& field, const DesignMeasure& design);
double l2lambda_inner(const SpaceTimeField& a, const SpaceTimeField& b, const DesignMeasure& design);

/// Accumulates G += w * R^T R for a dense row block R (rows x cols). Exact
/// zeros are skipped row by row when R is sparse enough. The parallel path
/// splits output rows across workers; every entry is summed in the same
/// order on both paths.
void gram_update(const Eigen::MatrixXd& rows, double weight, Eigen::MatrixXd& gram, Execution exec);

/// Real coordinates of a real field in which the L2(T^d) inner product is
/// the Euclidean one: the constant coefficient, then sqrt(2) (Re, Im) over
/// half the lattice, one block per component.
class ParsevalRows {
 public:
  explicit ParsevalRows(const spectral::TorusGrid& grid);
  int block() const { return 1 + 2 * static_cast<int>(half_.size()); }
  int rows() const { return block() * grid_.components; }
  void fill(const FourierCoeffs& u, Eigen::Ref<Eigen::VectorXd> out) const;

 private:
  spectral::TorusGrid grid_;
  std::vector<int> half_;
  int center_ = 0;
};

/// K x K Galerkin matrix of I* I_eps I in the leading K eigenmodes, with its
/// Cholesky factor. Refuses matrices with condition number above 1e12.
class InformationMatrix {
 public:
  static constexpr double kMaxCondition = 1e12;

  InformationMatrix(Eigen::MatrixXd matrix, EigenSystem basis);

  int size() const { return static_cast<int>(matrix_.rows()); }
  const Eigen::MatrixXd& matrix() const { return matrix_; }
  const EigenSystem& basis() const { return basis_; }
  double condition() const { return condition_; }
  const Eigen::LLT<Eigen::MatrixXd>& cholesky() const { return llt_; }
  /// Lower-triangular L^{-1}; its leading blocks invert the leading blocks of L.
  const Eigen::MatrixXd& inverse_factor() const;

  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const { return llt_.solve(rhs); }
  Eigen::MatrixXd inverse() const;
  /// Coordinates in the basis; throws if u has mass outside the span.
  Eigen::VectorXd coordinates(const FourierCoeffs& u) const;
  FourierCoeffs field(const Eigen::VectorXd& c) const;

  /// JSON header plus row-major float64 payload.
  void write(const std::filesystem::path& stem, const nlohmann::json& provenance) const;

 private:
  Eigen::MatrixXd matrix_;
  EigenSystem basis_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  double condition_ = 0.0;
  mutable std::optional<Eigen::MatrixXd> inverse_factor_;
};

struct AssemblyOptions {
  Execution exec = Execution::parallel;
  /// Extra time-grid breakpoints (pushforward windows).
  std::vector<double> breakpoints;
};

/// Tangent responses I[e_j] for the leading K modes, realified per node and
/// reduced on the fly into the information Gram; never stores all fields.
InformationMatrix assemble_information_matrix(const ForwardModel& model, const FourierCoeffs& theta0,
                                              const noise::FisherMatrix& fisher, const DesignMeasure& design,
                                              int K, const AssemblyOptions& options = {});

/// Basis used for a model's parameter space.
EigenSystem parameter_basis(const ForwardModel& model, int K);

/// sqrt(h^T M h).
double lan_norm(const FourierCoeffs& h, const InformationMatrix& M);
double lan_norm(const Eigen::VectorXd& h, const InformationMatrix& M);
/// ||I_eps^{1/2} I[h]||_{L2_lambda} from one linearized solve.
double lan_norm_direct(const ForwardModel& model, const FourierCoeffs& theta0, const FourierCoeffs& h,
                       const noise::FisherMatrix& fisher, const DesignMeasure& design);

/// psi_{K'}^T M_{K'}^{-1} psi_{K'} for K' = 1..K, via y = L^{-1} psi.
struct SNormTrace {
  std::vector<double> values;  // values[K' - 1]
  double value() const { return values.empty() ? 0.0 : values.back(); }
  bool monotone() const;
};
SNormTrace s_norm_truncated(const Eigen::VectorXd& psi, const InformationMatrix& M);

/// Columns h_j with H^T M H = I (modified Gram-Schmidt in the M inner
/// product with one reorthogonalization pass).
struct HOrthonormalBasis {
  Eigen::MatrixXd H;
  double gram_residual = 0.0;
};
HOrthonormalBasis orthonormalize_H(const Eigen::MatrixXd& M);

struct NormEquivalenceLevel {
  int K = 0;
  double ratio_min = 0.0;  // over random unit D^{-kappa} directions
  double ratio_max = 0.0;
  double eig_min = 0.0;  // sqrt of extreme generalized eigenvalues of (M, W)
  double eig_max = 0.0;
  double condition = 0.0;
  std::vector<double> mode_ratios;  // sqrt(M_jj / W_jj)
  nlohmann::json to_json() const;
};

/// ||I[h]||_{L2_lambda} / ||h||_{D^{-kappa}} (unit noise information) at each
/// truncation in `levels`.
std::vector<NormEquivalenceLevel> norm_equivalence_diagnostic(const ForwardModel& model,
                                                              const FourierCoeffs& theta0,
                                                              const DesignMeasure& design,
                                                              const std::vector<int>& levels, int trials,
                                                              double kappa, std::uint64_t seed,
                                                              Execution exec = Execution::parallel);

}  // namespace fisherpde::infoop
