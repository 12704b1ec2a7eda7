#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "fisherpde/common.hpp"
#include "fisherpde/spectral.hpp"

namespace fisherpde::forward {

using spectral::FourierCoeffs;
using spectral::TorusGrid;
using Point = std::array<double, 2>;

/// Time nodes 0 = t_0 < ... < t_M = T. Steps come in pairs of equal length
/// so composite Simpson applies pair by pair. The first segment is graded
/// geometrically from `min_step` (resolving the fast initial decay of high
/// modes); later segments are uniform. Breakpoints are always nodes at a
/// pair boundary.
class TimeGrid {
 public:
  TimeGrid() = default;
  static TimeGrid graded(double horizon, double max_step, double min_step, double growth,
                         std::vector<double> breakpoints = {});
  static TimeGrid uniform(double horizon, int pairs);
  /// Verbatim node list (strictly increasing from 0, even interval count).
  static TimeGrid from_nodes(std::vector<double> nodes);

  const std::vector<double>& nodes() const { return nodes_; }
  int size() const { return static_cast<int>(nodes_.size()); }
  double horizon() const { return nodes_.back(); }
  double operator[](int i) const { return nodes_[i]; }
  /// Composite Simpson weights over [a, b]; a and b must be pair boundaries.
  std::vector<double> simpson_weights() const;
  std::vector<double> simpson_weights(double a, double b) const;
  int node_index(double t) const;  // exact node lookup, -1 if absent
  /// Interval i with t_i <= t <= t_{i+1}; throws when t is outside [0, T].
  int locate(double t) const;

 private:
  std::vector<double> nodes_;
};

struct SolverControls {
  double max_step = 1e-3;
  double min_step = 0.0;  // 0: 0.01 / (largest decay rate on the solver grid)
  double growth = 1.005;
  int max_wavenumber = 0;  // solver truncation; 0: from the inputs, at least 16 (d=1) / 8 (d=2)

  nlohmann::json to_json() const;
  static SolverControls from_json(const nlohmann::json& j);
};

/// f(u) = A u (1 - u^2) chi(u / R), chi(r) = exp(-r^2 / (1 - r^2)) on |r| < 1.
/// Smooth with compact support [-R, R]; derivatives are exact.
struct ReactionTerm {
  double amplitude = 1.0;
  double radius = 2.0;

  double value(double u) const;
  double first(double u) const;
  double second(double u) const;
  bool active() const { return amplitude != 0.0; }
};

struct HeatModel {
  int dim = 1;
  double horizon = 1.0;
  SolverControls controls;
};

struct ReactionDiffusionModel {
  int dim = 1;
  double horizon = 1.0;
  ReactionTerm reaction;
  SolverControls controls;
};

/// 2D incompressible Navier-Stokes on the unit torus, solved in
/// vorticity-streamfunction form; velocity is the observed field.
struct NavierStokesModel {
  double viscosity = 0.1;
  double horizon = 1.0;
  std::optional<FourierCoeffs> forcing;  // mean-zero, divergence-free velocity field
  SolverControls controls;
};

using ForwardModel = std::variant<HeatModel, ReactionDiffusionModel, NavierStokesModel>;

std::string kind_name(const ForwardModel& m);
int dim(const ForwardModel& m);
int components(const ForwardModel& m);
double horizon(const ForwardModel& m);
spectral::Subspace parameter_subspace(const ForwardModel& m);
const SolverControls& controls(const ForwardModel& m);
nlohmann::json to_json(const ForwardModel& m);
ForwardModel model_from_json(const nlohmann::json& j);

/// Fourier snapshots of a field at the nodes of a TimeGrid, with optional
/// time derivatives used for cubic Hermite interpolation.
class SpaceTimeField {
 public:
  SpaceTimeField() = default;
  SpaceTimeField(TimeGrid times, std::vector<FourierCoeffs> snapshots,
                 std::vector<FourierCoeffs> rates = {});

  const TimeGrid& times() const { return times_; }
  const TorusGrid& grid() const { return snapshots_.front().grid(); }
  const std::vector<FourierCoeffs>& snapshots() const { return snapshots_; }
  const std::vector<FourierCoeffs>& rates() const { return rates_; }
  const FourierCoeffs& at_node(int i) const { return snapshots_[i]; }
  int components() const { return grid().components; }

  /// Per-box-entry rates L of the linear part u' = L u + N (shared by all
  /// components). With rates stored, off-node times then use exponential
  /// interpolation: exact for the linear part, N linear across the step.
  void set_linear_symbol(std::vector<double> symbol);
  const std::vector<double>& linear_symbol() const { return symbol_; }

  /// Fourier coefficients at time t: exponential interpolation when rates
  /// and a linear symbol are stored, cubic Hermite with rates only, cubic
  /// Lagrange on four nodes otherwise.
  FourierCoeffs at_time(double t) const;
  /// Exact Fourier sum in space at the interpolated time.
  Point evaluate(double t, const Point& x) const;

  /// Binary little-endian float64 payload (node-major, component-major box,
  /// re/im interleaved; snapshots then rates) with a JSON sidecar header.
  void write(const std::filesystem::path& stem, const nlohmann::json& model) const;
  static SpaceTimeField read(const std::filesystem::path& stem);

 private:
  TimeGrid times_;
  std::vector<FourierCoeffs> snapshots_;
  std::vector<FourierCoeffs> rates_;
  std::vector<double> symbol_;
};

/// Solver truncation for inputs of truncation `input_wavenumber`.
TorusGrid solver_grid(const ForwardModel& m, int input_wavenumber);
/// Largest decay rate |L| of the linear part on `grid`.
double stiffness(const ForwardModel& m, const TorusGrid& grid);
/// Time grid used by every solve of `m` on `grid`.
TimeGrid time_grid(const ForwardModel& m, const TorusGrid& grid, std::vector<double> breakpoints = {});

/// Rates -nu 4 pi^2 |k|^2 of the linear part on `grid`, box order.
std::vector<double> linear_symbol(const ForwardModel& m, const TorusGrid& grid);

/// Coefficientwise heat semigroup u_k(t) = exp(-4 pi^2 |k|^2 t) theta_k.
SpaceTimeField solve_heat_exact(const FourierCoeffs& theta, const TimeGrid& times);

/// Observed fields at a time node handed to propagate() callbacks. Rates are
/// the time derivatives of the observed fields.
struct NodeView {
  int index;
  double time;
  const FourierCoeffs& base;
  const FourierCoeffs& base_rate;
  std::span<const FourierCoeffs> tangents;
  std::span<const FourierCoeffs> tangent_rates;
};

/// Integrates the base flow from theta0 together with the linearized flow
/// in each of `directions` (fourth-order exponential time differencing with
/// the diffusion term treated exactly; the tangent stages are the exact
/// derivative of the base stages). `on_node` sees every node in order.
/// Execution::parallel splits the per-direction work across OpenMP workers.
void propagate(const ForwardModel& model, const FourierCoeffs& theta0,
               std::span<const FourierCoeffs> directions, const TimeGrid& times,
               const std::function<void(const NodeView&)>& on_node,
               Execution exec = Execution::parallel);

SpaceTimeField solve(const ForwardModel& model, const FourierCoeffs& theta);
SpaceTimeField linearize(const ForwardModel& model, const FourierCoeffs& theta0,
                         const FourierCoeffs& direction);
/// Both fields on the grid of the first call; used when fields are compared.
SpaceTimeField solve(const ForwardModel& model, const FourierCoeffs& theta, const TimeGrid& times);
SpaceTimeField linearize(const ForwardModel& model, const FourierCoeffs& theta0,
                         const FourierCoeffs& direction, const TimeGrid& times);

SpaceTimeField solve_rd(const ReactionDiffusionModel& model, const FourierCoeffs& theta);
SpaceTimeField linearize_rd(const ReactionDiffusionModel& model, const FourierCoeffs& theta0,
                            const FourierCoeffs& h);
SpaceTimeField solve_ns(const NavierStokesModel& model, const FourierCoeffs& theta);
SpaceTimeField linearize_ns(const NavierStokesModel& model, const FourierCoeffs& theta0,
                            const FourierCoeffs& h);

/// Largest |k . c(k)| over the coefficients of a 2-component field.
double coefficient_divergence(const FourierCoeffs& u);
/// Vorticity coefficients d_1 u_2 - d_2 u_1 of a 2D velocity field.
FourierCoeffs vorticity(const FourierCoeffs& velocity);

/// ||u||_{L^2([a,b] x T^d)} by composite Simpson in time and Parseval in space.
double l2_norm(const SpaceTimeField& u, double a, double b);
double l2_norm(const SpaceTimeField& u);
SpaceTimeField difference(const SpaceTimeField& a, const SpaceTimeField& b, double scale_b = 1.0);

struct QmdReport {
  std::vector<double> s;
  std::vector<double> remainders;  // rho(s)
  std::vector<double> ratios;      // rho(s) / s
  double slope = 0.0;              // least-squares slope of log rho vs log s; NaN if rho vanishes
  double max_remainder = 0.0;
  nlohmann::json to_json() const;
};

/// rho(s) = ||G(theta0 + s h) - G(theta0) - s I[h]||_{L^2([0,T] x Omega)} over `s_grid`.
QmdReport qmd_remainder_slope(const ForwardModel& model, const FourierCoeffs& theta0,
                              const FourierCoeffs& h, const std::vector<double>& s_grid);

/// Default smooth base states (a handful of low modes) for each model kind.
FourierCoeffs default_base_state(const ForwardModel& m);
/// Default perturbation direction used by diagnostics.
FourierCoeffs default_direction(const ForwardModel& m);

}  // namespace fisherpde::forward
