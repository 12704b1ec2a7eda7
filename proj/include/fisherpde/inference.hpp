#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "fisherpde/infoop.hpp"
#include "fisherpde/noise.hpp"

namespace fisherpde::inference {

using forward::ForwardModel;
using forward::SpaceTimeField;
using infoop::DesignMeasure;
using infoop::InformationMatrix;
using spectral::FourierCoeffs;

struct Record {
  double t = 0.0;
  forward::Point x{0.0, 0.0};
  noise::Point y{0.0, 0.0};
};

struct Dataset {
  std::vector<Record> records;
  std::uint64_t seed = 0;
  nlohmann::json theta;  // label of the generating parameter
  int size() const { return static_cast<int>(records.size()); }
};

/// N records with (t, x) drawn from the design and y = field(t, x) + eps.
Dataset simulate_dataset(const SpaceTimeField& field, const DesignMeasure& design, const noise::NoiseSampler& noise,
                         int N, std::uint64_t seed);
Dataset simulate_dataset(const ForwardModel& model, const FourierCoeffs& theta, const DesignMeasure& design,
                         const noise::NoiseModel& noise, int N, std::uint64_t seed);

/// sum_i log q(y_i - Gh(t_i, x_i)) - log q(y_i - G0(t_i, x_i)). Returns
/// -infinity when a numerator density vanishes; throws NumericalError when
/// both vanish at a record.
double log_likelihood_ratio(const Dataset& data, const SpaceTimeField& G0, const SpaceTimeField& Gh,
                            const noise::NoiseModel& noise);
/// Solves G(theta0) and G(theta0 + h / sqrt(N)) on a common grid first.
double log_likelihood_ratio(const Dataset& data, const ForwardModel& model, const FourierCoeffs& theta0,
                            const FourierCoeffs& h, int N, const noise::NoiseModel& noise);

/// sup_x |F_n(x) - Phi((x - mean) / sd)| and its asymptotic p-value.
struct KsResult {
  double distance = 0.0;
  double p_value = 0.0;
};
KsResult ks_normal(std::vector<double> values, double mean, double sd);

enum class Hypothesis { null, alternative };

struct LanOptions {
  int N = 5000;
  int replicates = 400;
  Hypothesis under = Hypothesis::null;
  std::uint64_t seed = 0;
  Execution exec = Execution::parallel;
};

struct LanReport {
  int N = 0;
  int replicates = 0;
  Hypothesis under = Hypothesis::null;
  std::uint64_t seed = 0;
  double lan_norm_squared = 0.0;
  std::vector<double> values;  // -inf entries kept, aborted replicates NaN
  std::vector<std::uint64_t> seeds;
  int minus_infinity = 0;
  int aborted = 0;
  std::vector<std::string> diagnostics;
  double mean = 0.0;  // over finite values
  double variance = 0.0;
  double standard_error = 0.0;
  double target_mean = 0.0;  // -+ |h|^2 / 2
  double target_variance = 0.0;
  KsResult ks;
  nlohmann::json to_json() const;
};

/// Replicate r draws its data from stream split_seed(seed, r) under theta0
/// (null) or theta0 + h / sqrt(N) (alternative); both forward fields are
/// solved once.
LanReport lan_montecarlo(const ForwardModel& model, const FourierCoeffs& theta0, const FourierCoeffs& h,
                         const noise::NoiseModel& noise, const DesignMeasure& design, const LanOptions& options);

/// <psi, theta0> + (1/N) sum_i score(y_i - G0(x_i)) . I[M^{-1} psi](x_i),
/// with psi in e-basis coordinates of M.
class InfluenceEstimator {
 public:
  InfluenceEstimator(const ForwardModel& model, const FourierCoeffs& theta0, const InformationMatrix& M,
                     const Eigen::VectorXd& psi, const noise::NoiseModel& noise);
  double estimate(const Dataset& data) const;
  /// Single-record influence value.
  double influence(const Record& r) const;
  double target(const Eigen::VectorXd& theta_coordinates) const { return psi_.dot(theta_coordinates); }
  double offset() const { return offset_; }
  const SpaceTimeField& base() const { return base_; }

 private:
  Eigen::VectorXd psi_;
  noise::NoiseModel noise_;
  SpaceTimeField base_;
  SpaceTimeField response_;
  double offset_ = 0.0;
};

double efficient_influence_estimate(const Eigen::VectorXd& psi, const Dataset& data, const ForwardModel& model,
                                    const FourierCoeffs& theta0, const InformationMatrix& M,
                                    const noise::NoiseModel& noise);

/// Per-octave increments of a truncated bound trace and the divergence
/// flag: the last three increments agree within `spread` relative to their
/// maximum and the last one is not negligible.
struct OctaveDivergence {
  std::vector<int> octaves;  // K' = 1, 2, 4, ...
  std::vector<double> increments;
  bool diverging = false;
};
OctaveDivergence octave_divergence(const std::vector<double>& trace, double spread = 0.3);

struct EfficiencyOptions {
  int N = 2000;
  int replicates = 2000;
  std::uint64_t seed = 0;
  /// Local alternatives theta0 + s h / sqrt(N), h of unit LAN norm.
  std::vector<double> perturbations{0.0};
  Execution exec = Execution::parallel;
};

struct PerturbationResult {
  double scale = 0.0;
  double bias = 0.0;  // mean of sqrt(N) (estimate - <psi, theta>)
  double bias_standard_error = 0.0;
  double risk = 0.0;  // N E (estimate - <psi, theta>)^2
  double variance = 0.0;  // N Var(estimate)
  double variance_standard_error = 0.0;
};

struct EfficiencyReport {
  Eigen::VectorXd psi;
  std::vector<double> bound_trace;
  double bound = 0.0;
  OctaveDivergence divergence;
  std::vector<PerturbationResult> menu;
  double variance_ratio = 0.0;  // N Var / bound at the first menu entry
  double max_risk_ratio = 0.0;
  double seconds = 0.0;
  nlohmann::json to_json() const;  // without the runtime
};

EfficiencyReport efficiency_report(const ForwardModel& model, const FourierCoeffs& theta0,
                                   const Eigen::VectorXd& psi, const noise::NoiseModel& noise,
                                   const DesignMeasure& design, const InformationMatrix& M,
                                   const EfficiencyOptions& options);

}  // namespace fisherpde::inference
