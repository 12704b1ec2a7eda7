#include "fisherpde/gaussian.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "fisherpde/rng.hpp"

namespace fisherpde::gaussian {

using spectral::Complex;
using spectral::FourierCoeffs;
using spectral::TorusGrid;

std::string model_hash(const nlohmann::json& model) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : model.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void GaussianSampleBatch::write(const std::filesystem::path& stem, const std::string& hash) const {
  if constexpr (std::endian::native != std::endian::little)
    throw std::runtime_error("sample dumps support little-endian hosts only");
  const nlohmann::json header{{"format", "fisherpde-gaussian-batch-v1"},
                              {"K", K},
                              {"m", m},
                              {"seed", seed},
                              {"model_hash", hash},
                              {"layout", "column-major float64 little-endian, one column per sample"},
                              {"payload", stem.filename().string() + ".bin"}};
  std::ofstream js(stem.string() + ".json");
  js << header.dump(2) << '\n';
  std::ofstream bin(stem.string() + ".bin", std::ios::binary);
  bin.write(reinterpret_cast<const char*>(samples.data()),
            static_cast<std::streamsize>(samples.size() * sizeof(double)));
  if (!js || !bin) throw std::runtime_error("failed to write sample batch " + stem.string());
}

GaussianSampleBatch GaussianSampleBatch::read(const std::filesystem::path& stem) {
  std::ifstream js(stem.string() + ".json");
  if (!js) throw std::runtime_error("cannot open " + stem.string() + ".json");
  const auto header = nlohmann::json::parse(js);
  GaussianSampleBatch b;
  b.K = header.at("K");
  b.m = header.at("m");
  b.seed = header.at("seed");
  b.samples.resize(b.K, b.m);
  std::ifstream bin(stem.parent_path() / header.at("payload").get<std::string>(), std::ios::binary);
  bin.read(reinterpret_cast<char*>(b.samples.data()), static_cast<std::streamsize>(b.samples.size() * sizeof(double)));
  if (!bin) throw std::runtime_error("truncated sample payload for " + stem.string());
  return b;
}

GaussianSampleBatch sample_efficient_gaussian(const InformationMatrix& M, int m, std::uint64_t seed, Execution exec) {
  if (m < 1) throw std::invalid_argument("sample count must be >= 1");
  const int K = M.size();
  GaussianSampleBatch b{K, m, seed, Eigen::MatrixXd(K, m)};
#pragma omp parallel for schedule(static) if (exec == Execution::parallel)
  for (int i = 0; i < m; ++i) {
    Rng rng(split_seed(seed, static_cast<std::uint64_t>(i)));
    for (int j = 0; j < K; ++j) b.samples(j, i) = rng.normal();
  }
  // L^T g = z
  const Eigen::MatrixXd L = M.cholesky().matrixL();
  L.transpose().triangularView<Eigen::Upper>().solveInPlace(b.samples);
  return b;
}

// ---------------------------------------------------------------------------

nlohmann::json SupportReport::to_json() const {
  nlohmann::json curves_json = nlohmann::json::array();
  for (const auto& c : curves) {
    nlohmann::json j{{"beta", c.beta},
                     {"predicted_convergent", c.predicted_convergent},
                     {"truncations", c.truncations},
                     {"moments", c.moments},
                     {"last_increment", c.last_increment},
                     {"plateau", c.plateau},
                     {"growth_exponent", c.growth_exponent},
                     {"expected_exponent", c.expected_exponent}};
    if (c.mc_mean) j["monte_carlo"] = {{"mean", *c.mc_mean}, {"standard_error", *c.mc_stderr}, {"exact", *c.mc_exact}};
    curves_json.push_back(j);
  }
  return {{"kappa", kappa}, {"alpha", alpha}, {"threshold", threshold}, {"curves", curves_json}};
}

SupportReport support_diagnostic(const InformationMatrix& M, const SupportOptions& o) {
  if (o.betas.empty() || o.truncations.empty()) throw std::invalid_argument("support diagnostic needs betas and truncations");
  for (int K : o.truncations)
    if (K < 1 || K > M.size()) throw std::invalid_argument("truncation outside [1, " + std::to_string(M.size()) + "]");
  if (o.mc_truncation > M.size()) throw std::invalid_argument("Monte Carlo truncation exceeds the matrix size");
  std::vector<int> Ks = o.truncations;
  std::sort(Ks.begin(), Ks.end());
  Ks.erase(std::unique(Ks.begin(), Ks.end()), Ks.end());

  const auto& es = M.basis();
  const Eigen::VectorXd tau = es.weights();
  const Eigen::MatrixXd& Li = M.inverse_factor();
  // (M_K^{-1})_jj = sum_{j <= i < K} (L^{-1})_ij^2: accumulate row by row in K
  auto diag_inverse = [&](int K) {
    Eigen::VectorXd d = Eigen::VectorXd::Zero(K);
    for (int i = 0; i < K; ++i)
      for (int j = 0; j <= i; ++j) d[j] += Li(i, j) * Li(i, j);
    return d;
  };

  SupportReport r;
  r.kappa = es.kappa();
  r.alpha = es.alpha();
  r.threshold = r.kappa + r.alpha;
  std::vector<Eigen::VectorXd> diags;
  for (int K : Ks) diags.push_back(diag_inverse(K));

  std::optional<GaussianSampleBatch> batch;
  std::optional<InformationMatrix> Mmc;
  if (o.mc_truncation > 0 && o.mc_samples > 1) {
    Mmc.emplace(M.matrix().topLeftCorner(o.mc_truncation, o.mc_truncation), es);
    batch = sample_efficient_gaussian(*Mmc, o.mc_samples, o.seed, o.exec);
  }

  for (double beta : o.betas) {
    SupportCurve c;
    c.beta = beta;
    c.predicted_convergent = beta > r.threshold;
    c.truncations = Ks;
    for (std::size_t l = 0; l < Ks.size(); ++l) {
      double s = 0.0;
      for (int j = 0; j < Ks[l]; ++j) s += std::pow(tau[j], -beta) * diags[l][j];
      c.moments.push_back(s);
    }
    const std::size_t n = c.moments.size();
    if (n >= 2) {
      c.last_increment = (c.moments[n - 1] - c.moments[n - 2]) / c.moments[n - 2];
      c.growth_exponent = std::log(c.moments[n - 1] / c.moments[n - 2]) /
                          std::log(static_cast<double>(Ks[n - 1]) / Ks[n - 2]);
    }
    c.plateau = n >= 2 && c.last_increment < o.plateau_tolerance;
    c.expected_exponent = std::max(0.0, (r.threshold - beta) / r.alpha);
    if (batch) {
      const int K = batch->K;
      std::vector<double> v(batch->m);
      for (int i = 0; i < batch->m; ++i) {
        double s = 0.0;
        for (int j = 0; j < K; ++j) s += std::pow(tau[j], -beta) * batch->samples(j, i) * batch->samples(j, i);
        v[i] = s;
      }
      double mean = 0.0;
      for (double x : v) mean += x;
      mean /= batch->m;
      double var = 0.0;
      for (double x : v) var += (x - mean) * (x - mean);
      var /= batch->m - 1;
      const Eigen::VectorXd d = diag_inverse(K);
      double exact = 0.0;
      for (int j = 0; j < K; ++j) exact += std::pow(tau[j], -beta) * d[j];
      c.mc_mean = mean;
      c.mc_stderr = std::sqrt(var / batch->m);
      c.mc_exact = exact;
    }
    r.curves.push_back(std::move(c));
  }
  return r;
}

// ---------------------------------------------------------------------------

Functional functional_from_string(const std::string& s) {
  if (s == "positive-time-trajectory" || s == "trajectory") return Functional::trajectory;
  if (s == "ns-nonlinearity") return Functional::ns_nonlinearity;
  throw std::invalid_argument("unknown functional '" + s + "'");
}

Loss loss_from_string(const std::string& s) {
  if (s == "l2-power") return Loss::l2_power;
  if (s == "sup-power") return Loss::sup_power;
  throw std::invalid_argument("unknown loss '" + s + "'");
}

std::string to_string(Functional f) {
  return f == Functional::trajectory ? "positive-time-trajectory" : "ns-nonlinearity";
}
std::string to_string(Loss l) { return l == Loss::l2_power ? "l2-power" : "sup-power"; }

nlohmann::json PushforwardReport::to_json() const {
  nlohmann::json j{{"K", K}, {"m", m}, {"mean", mean}, {"standard_error", standard_error}};
  j["exact"] = exact ? nlohmann::json(*exact) : nlohmann::json(nullptr);
  return j;
}

namespace {

FourierCoeffs derivative(const FourierCoeffs& u, int axis) {
  FourierCoeffs out(u.grid());
  const TorusGrid& g = u.grid();
  for (int c = 0; c < g.components; ++c) {
    const auto src = u.component(c);
    auto dst = out.component(c);
    for (int i = 0; i < g.box_size(); ++i) dst[i] = Complex(0.0, kTwoPi * g.wavevector(i)[axis]) * src[i];
  }
  return out;
}

// Velocity and its gradient on an n x n grid: 6 blocks of n^2 values
// (u_0, u_1, d0 u_0, d1 u_0, d0 u_1, d1 u_1).
void velocity_jet(const FourierCoeffs& u, const spectral::BoxTransform& tr, std::vector<double>& out) {
  const int nn = tr.node_count();
  out.resize(6 * nn);
  const FourierCoeffs d0 = derivative(u, 0), d1 = derivative(u, 1);
  auto put = [&](std::span<const Complex> box, int slot) {
    tr.to_physical(box, std::span<double>(out).subspan(slot * nn, nn));
  };
  put(u.component(0), 0);
  put(u.component(1), 1);
  put(d0.component(0), 2);
  put(d1.component(0), 3);
  put(d0.component(1), 4);
  put(d1.component(1), 5);
}

// (U . grad) u + (u . grad) U, component-major.
void convective_linearization(const std::vector<double>& U, const std::vector<double>& u, int nn,
                              Eigen::Ref<Eigen::VectorXd> out, double scale) {
  for (int i = 0; i < nn; ++i) {
    const double U0 = U[i], U1 = U[nn + i], u0 = u[i], u1 = u[nn + i];
    out[i] = scale * (U0 * u[2 * nn + i] + U1 * u[3 * nn + i] + u0 * U[2 * nn + i] + u1 * U[3 * nn + i]);
    out[nn + i] = scale * (U0 * u[4 * nn + i] + U1 * u[5 * nn + i] + u0 * U[4 * nn + i] + u1 * U[5 * nn + i]);
  }
}

}  // namespace

PushforwardReport functional_pushforward_bound(const GaussianSampleBatch& batch, const InformationMatrix& M,
                                               const forward::ForwardModel& model, const FourierCoeffs& theta0,
                                               const PushforwardSpec& spec, Execution exec) {
  const double T = forward::horizon(model);
  if (!(spec.t0 > 0.0)) throw std::invalid_argument("pushforward window must start at t0 > 0");
  if (!(spec.t1 > spec.t0 && spec.t1 <= T)) throw std::invalid_argument("pushforward window needs t0 < t1 <= T");
  if (!(spec.power >= 0.0)) throw std::invalid_argument("loss power must be nonnegative");
  if (batch.K != M.size()) throw std::invalid_argument("sample batch and information matrix truncations differ");
  if (batch.m < 2) throw std::invalid_argument("pushforward needs at least two samples");
  const bool ns = std::holds_alternative<forward::NavierStokesModel>(model);
  if (spec.functional == Functional::ns_nonlinearity && !ns)
    throw std::invalid_argument("the ns-nonlinearity functional needs the Navier-Stokes model");

  const int K = M.size();
  const auto& basis = M.basis();
  const int p = forward::components(model);
  const int kin = std::max(theta0.grid().max_wavenumber, basis.required_wavenumber());
  const TorusGrid input = TorusGrid::make(forward::dim(model), kin, p);
  std::vector<FourierCoeffs> dirs;
  for (int j = 0; j < K; ++j) dirs.push_back(basis.basis_vector(j, input));
  const TorusGrid solver = forward::solver_grid(model, kin);
  const forward::TimeGrid times = forward::time_grid(model, solver, {spec.t0, spec.t1});
  const std::vector<double> w = times.simpson_weights(spec.t0, spec.t1);
  const bool par = exec == Execution::parallel;

  std::vector<int> sup_nodes;
  if (spec.loss == Loss::sup_power) {
    const int a = times.node_index(spec.t0), b = times.node_index(spec.t1);
    const int count = std::min(std::max(spec.max_time_nodes, 2), b - a + 1);
    for (int i = 0; i < count; ++i)
      sup_nodes.push_back(a + static_cast<int>(std::lround(static_cast<double>(i) * (b - a) / (count - 1))));
  }
  // physical grid exact for the squared L2 norm of products of two fields
  const int n = spec.functional == Functional::ns_nonlinearity ? 4 * solver.max_wavenumber + 2
                                                                 : 2 * solver.max_wavenumber + 2;
  const spectral::BoxTransform tr(solver.dim, solver.max_wavenumber, n);
  const int nn = tr.node_count();
  const infoop::ParsevalRows parseval(solver);
  const bool physical = spec.functional == Functional::ns_nonlinearity || spec.loss == Loss::sup_power;
  const int rows = physical ? nn * p : parseval.rows();

  Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(K, K);
  Eigen::MatrixXd R(rows, K);
  std::vector<Eigen::MatrixXd> values;  // sup loss: one block per sampled node
  std::vector<double> base_jet;

  forward::propagate(model, theta0.resized(input), dirs, times, [&](const forward::NodeView& v) {
    const bool in_sup = std::binary_search(sup_nodes.begin(), sup_nodes.end(), v.index);
    if (spec.loss == Loss::l2_power ? w[v.index] == 0.0 : !in_sup) return;
    if (spec.functional == Functional::ns_nonlinearity) {
      velocity_jet(v.base, tr, base_jet);
#pragma omp parallel for schedule(static) if (par)
      for (int j = 0; j < K; ++j) {
        thread_local std::vector<double> jet;
        velocity_jet(v.tangents[j], tr, jet);
        convective_linearization(jet, base_jet, nn, R.col(j), 1.0);
      }
    } else if (physical) {
#pragma omp parallel for schedule(static) if (par)
      for (int j = 0; j < K; ++j)
        for (int c = 0; c < p; ++c) {
          thread_local std::vector<double> vals;
          vals.resize(nn);
          tr.to_physical(v.tangents[j].component(c), vals);
          for (int i = 0; i < nn; ++i) R(c * nn + i, j) = vals[i];
        }
    } else {
#pragma omp parallel for schedule(static) if (par)
      for (int j = 0; j < K; ++j) parseval.fill(v.tangents[j], R.col(j));
    }
    if (spec.loss == Loss::sup_power) {
      values.push_back(R);
    } else {
      infoop::gram_update(R, physical ? w[v.index] / nn : w[v.index], Q, exec);
    }
  }, exec);

  std::vector<double> loss(batch.m);
#pragma omp parallel for schedule(static) if (par)
  for (int i = 0; i < batch.m; ++i) {
    const Eigen::VectorXd g = batch.samples.col(i);
    if (spec.loss == Loss::l2_power) {
      const double q = g.dot(Q.selfadjointView<Eigen::Lower>() * g);
      loss[i] = std::pow(std::max(0.0, q), spec.power / 2.0);
    } else {
      double sup = 0.0;
      for (const auto& V : values) sup = std::max(sup, (V * g).cwiseAbs().maxCoeff());
      loss[i] = std::pow(sup, spec.power);
    }
  }
  PushforwardReport r;
  r.K = K;
  r.m = batch.m;
  for (double x : loss) r.mean += x;
  r.mean /= batch.m;
  double var = 0.0;
  for (double x : loss) var += (x - r.mean) * (x - r.mean);
  r.standard_error = std::sqrt(var / (batch.m - 1) / batch.m);
  if (spec.loss == Loss::l2_power && spec.power == 2.0) {
    const Eigen::MatrixXd Qs = Q.selfadjointView<Eigen::Lower>();
    r.exact = (Qs.cwiseProduct(M.inverse())).sum();
  }
  return r;
}

}  // namespace fisherpde::gaussian
