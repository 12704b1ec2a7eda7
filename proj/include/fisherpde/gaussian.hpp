#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "fisherpde/infoop.hpp"

namespace fisherpde::gaussian {

using infoop::InformationMatrix;

/// m draws of the efficient Gaussian N(0, M^{-1}) in e-basis coordinates,
/// one column per draw.
struct GaussianSampleBatch {
  int K = 0;
  int m = 0;
  std::uint64_t seed = 0;
  Eigen::MatrixXd samples;

  /// JSON header {K, m, seed, model_hash} plus column-major float64 payload.
  void write(const std::filesystem::path& stem, const std::string& model_hash) const;
  static GaussianSampleBatch read(const std::filesystem::path& stem);
};

/// FNV-1a digest of the compact JSON dump, as 16 hex digits.
std::string model_hash(const nlohmann::json& model);

/// Column i is L^{-T} z_i, with z_i the first K normals of stream
/// split_seed(seed, i). Draws at two truncations from the same seed share
/// their leading normals.
GaussianSampleBatch sample_efficient_gaussian(const InformationMatrix& M, int m, std::uint64_t seed,
                                              Execution exec = Execution::parallel);

struct SupportOptions {
  std::vector<double> betas;
  std::vector<int> truncations;
  int mc_truncation = 0;  // 0 skips the Monte Carlo cross-check
  int mc_samples = 0;
  std::uint64_t seed = 0;
  double plateau_tolerance = 0.02;
  Execution exec = Execution::parallel;
};

struct SupportCurve {
  double beta = 0.0;
  bool predicted_convergent = false;  // beta > kappa + alpha
  std::vector<int> truncations;
  std::vector<double> moments;  // E ||G_K||^2 in D^{-beta}, exact
  double last_increment = 0.0;  // relative, between the last two truncations
  bool plateau = false;
  double growth_exponent = 0.0;  // log-log slope over the last two truncations
  double expected_exponent = 0.0;
  std::optional<double> mc_mean, mc_stderr, mc_exact;
};

struct SupportReport {
  double kappa = 0.0;
  double alpha = 0.0;
  double threshold = 0.0;
  std::vector<SupportCurve> curves;
  nlohmann::json to_json() const;
};

/// sum_{j<K} tau_j^{-beta} (M_K^{-1})_jj for each beta and K <= M.size().
SupportReport support_diagnostic(const InformationMatrix& M, const SupportOptions& options);

enum class Functional { trajectory, ns_nonlinearity };
enum class Loss { l2_power, sup_power };

Functional functional_from_string(const std::string& s);
Loss loss_from_string(const std::string& s);
std::string to_string(Functional f);
std::string to_string(Loss l);

struct PushforwardSpec {
  Functional functional = Functional::trajectory;
  Loss loss = Loss::l2_power;
  double power = 2.0;
  double t0 = 0.1;
  double t1 = 1.0;
  int max_time_nodes = 64;  // sup loss: time nodes sampled in [t0, t1]
};

struct PushforwardReport {
  int K = 0;
  int m = 0;
  double mean = 0.0;
  double standard_error = 0.0;
  /// E ||F'[G]||^2 = trace(Q M^{-1}) for the squared L2 loss.
  std::optional<double> exact;
  nlohmann::json to_json() const;
};

/// Monte Carlo estimate of E ||F'[G]||^s. F'[g] = sum_j g_j F'[e_j] with the
/// responses F'[e_j] from one batched linearized solve; the L2 loss uses
/// the Gram Q of the responses over [t0, t1] x T^d, the sup loss their grid
/// values at up to `max_time_nodes` time nodes.
PushforwardReport functional_pushforward_bound(const GaussianSampleBatch& batch, const InformationMatrix& M,
                                               const forward::ForwardModel& model,
                                               const spectral::FourierCoeffs& theta0,
                                               const PushforwardSpec& spec,
                                               Execution exec = Execution::parallel);

}  // namespace fisherpde::gaussian
