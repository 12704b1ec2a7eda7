#include "fisherpde/infoop.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <Eigen/Eigenvalues>

namespace fisherpde::infoop {

using spectral::Complex;
using spectral::TorusGrid;

// ---------------------------------------------------------------------------
// Design measure

DesignMeasure DesignMeasure::uniform(double horizon, int dim) { return cosine(horizon, dim, 0.0); }

DesignMeasure DesignMeasure::cosine(double horizon, int dim, double amplitude) {
  if (!(horizon > 0.0)) throw std::invalid_argument("design horizon must be positive");
  if (dim != 1 && dim != 2) throw std::invalid_argument("design dimension must be 1 or 2");
  if (!(std::abs(amplitude) < 1.0)) throw std::invalid_argument("cosine design amplitude must satisfy |a| < 1");
  DesignMeasure d;
  d.horizon_ = horizon;
  d.dim_ = dim;
  d.amplitude_ = amplitude;
  return d;
}

DesignMeasure DesignMeasure::from_json(const nlohmann::json& j, double horizon, int dim) {
  if (!j.is_object() || !j.contains("kind") || !j.at("kind").is_string())
    throw std::invalid_argument("design block needs a string 'kind'");
  const std::string kind = j.at("kind");
  for (const auto& [key, value] : j.items()) {
    if (key != "kind" && !(kind == "cosine" && key == "amplitude"))
      throw std::invalid_argument("unknown key '" + key + "' in design block");
  }
  if (kind == "uniform") return uniform(horizon, dim);
  if (kind == "cosine") {
    if (!j.contains("amplitude") || !j.at("amplitude").is_number())
      throw std::invalid_argument("cosine design needs a numeric 'amplitude'");
    return cosine(horizon, dim, j.at("amplitude").get<double>());
  }
  throw std::invalid_argument("unknown design kind '" + kind + "'");
}

nlohmann::json DesignMeasure::to_json() const {
  if (is_uniform()) return {{"kind", "uniform"}};
  return {{"kind", "cosine"}, {"amplitude", amplitude_}};
}

double DesignMeasure::density(double t, const Point& x) const {
  if (t < 0.0 || t > horizon_) return 0.0;
  return (1.0 + amplitude_ * std::cos(kTwoPi * x[0])) / horizon_;
}

DesignMeasure::Location DesignMeasure::draw(Rng& rng) const {
  Location loc{horizon_ * rng.uniform(), {0.0, 0.0}};
  const double u = rng.uniform();
  double x = u;
  if (amplitude_ != 0.0) {
    double lo = 0.0, hi = 1.0;
    for (int it = 0; it < 60; ++it) {
      const double f = x + amplitude_ * std::sin(kTwoPi * x) / kTwoPi - u;
      if (std::abs(f) < 1e-15) break;
      (f > 0.0 ? hi : lo) = x;
      const double step = f / (1.0 + amplitude_ * std::cos(kTwoPi * x));
      const double next = x - step;
      x = (next > lo && next < hi) ? next : 0.5 * (lo + hi);
    }
  }
  loc.x[0] = x;
  if (dim_ == 2) loc.x[1] = rng.uniform();
  return loc;
}

// ---------------------------------------------------------------------------
// L2_lambda

namespace {

// Re sum_k a_k conj(b_{k + e_1}) over all components: int a b cos(2 pi x_1).
double cosine_coupling(const FourierCoeffs& a, const FourierCoeffs& b) {
  const TorusGrid& g = a.grid();
  const int K = g.max_wavenumber;
  double s = 0.0;
  for (int c = 0; c < g.components; ++c) {
    const auto ac = a.component(c), bc = b.component(c);
    for (int i = 0; i < g.box_size(); ++i) {
      const auto k = g.wavevector(i);
      if (k[0] + 1 > K) continue;
      const int j = g.box_index({k[0] + 1, k[1]});
      s += (ac[i] * std::conj(bc[j])).real();
    }
  }
  return s;
}

}  // namespace

double l2lambda_inner(const SpaceTimeField& a, const SpaceTimeField& b, const DesignMeasure& design) {
  if (a.times().nodes() != b.times().nodes() || !(a.grid() == b.grid()))
    throw std::invalid_argument("l2lambda_inner: fields on different grids");
  if (std::abs(a.times().horizon() - design.horizon()) > 1e-12 * design.horizon())
    throw std::invalid_argument("l2lambda: field horizon differs from the design horizon");
  const auto w = a.times().simpson_weights();
  double sum = 0.0;
  for (int n = 0; n < a.times().size(); ++n) {
    double v = spectral::pairing(a.at_node(n), b.at_node(n));
    if (!design.is_uniform())
      v += design.amplitude() * 0.5 * (cosine_coupling(a.at_node(n), b.at_node(n)) +
                                       cosine_coupling(b.at_node(n), a.at_node(n)));
    sum += w[n] * v;
  }
  return sum / design.horizon();
}

double l2lambda_norm(const SpaceTimeField& field, const DesignMeasure& design) {
  return std::sqrt(std::max(0.0, l2lambda_inner(field, field, design)));
}

// ---------------------------------------------------------------------------
// Gram kernel

void gram_update(const Eigen::MatrixXd& R, double weight, Eigen::MatrixXd& G, Execution exec) {
  const Eigen::Index rows = R.rows(), cols = R.cols();
  if (G.rows() != cols || G.cols() != cols) throw std::invalid_argument("gram_update: size mismatch");
  Eigen::Index nnz = 0;
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index r = 0; r < rows; ++r) nnz += R(r, j) != 0.0;
  if (nnz * 16 < rows * cols) {
    std::vector<std::pair<Eigen::Index, double>> entries;
    for (Eigen::Index r = 0; r < rows; ++r) {
      entries.clear();
      for (Eigen::Index j = 0; j < cols; ++j)
        if (R(r, j) != 0.0) entries.emplace_back(j, R(r, j));
      for (const auto& [a, va] : entries)
        for (const auto& [b, vb] : entries)
          if (b <= a) G(a, b) += weight * va * vb;
    }
  } else {
    const bool par = exec == Execution::parallel;
#pragma omp parallel for schedule(dynamic, 4) if (par)
    for (Eigen::Index a = 0; a < cols; ++a) {
      const auto ca = R.col(a);
      for (Eigen::Index b = 0; b <= a; ++b) {
        const auto cb = R.col(b);
        double s = 0.0;
        for (Eigen::Index r = 0; r < rows; ++r) s += ca[r] * cb[r];
        G(a, b) += weight * s;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Information matrix

InformationMatrix::InformationMatrix(Eigen::MatrixXd matrix, EigenSystem basis)
    : matrix_(std::move(matrix)), basis_(std::move(basis)) {
  if (matrix_.rows() != matrix_.cols() || matrix_.rows() == 0)
    throw std::invalid_argument("information matrix must be square and nonempty");
  if (matrix_.rows() > basis_.size()) throw std::invalid_argument("information matrix larger than its basis");
  const double scale = matrix_.cwiseAbs().maxCoeff();
  if (!((matrix_ - matrix_.transpose()).cwiseAbs().maxCoeff() <= 1e-10 * scale))
    throw std::invalid_argument("information matrix is not symmetric");
  llt_.compute(matrix_);
  if (llt_.info() != Eigen::Success)
    throw NumericalError("Cholesky of the information matrix failed: evidence against injectivity at K = " +
                         std::to_string(size()));
  const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(matrix_, Eigen::EigenvaluesOnly).eigenvalues();
  condition_ = ev[0] > 0.0 ? ev[ev.size() - 1] / ev[0] : std::numeric_limits<double>::infinity();
  if (!(condition_ <= kMaxCondition))
    throw NumericalError("information matrix condition number " + std::to_string(condition_) +
                         " exceeds 1e12 at K = " + std::to_string(size()));
}

const Eigen::MatrixXd& InformationMatrix::inverse_factor() const {
  if (!inverse_factor_) {
    const Eigen::MatrixXd L = llt_.matrixL();
    inverse_factor_ = L.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(size(), size()));
  }
  return *inverse_factor_;
}

Eigen::MatrixXd InformationMatrix::inverse() const {
  const Eigen::MatrixXd& Li = inverse_factor();
  return Li.transpose() * Li;
}

Eigen::VectorXd InformationMatrix::coordinates(const FourierCoeffs& u) const {
  const Eigen::VectorXd full = basis_.coordinates(u.resized(TorusGrid::make(
      u.grid().dim, std::max(u.grid().max_wavenumber, basis_.required_wavenumber()), u.grid().components)));
  const double total = full.norm();
  const double tail = full.tail(full.size() - size()).norm();
  if (tail > 1e-10 * std::max(1.0, total))
    throw std::invalid_argument("field has mass outside the span of the first " + std::to_string(size()) + " modes");
  return full.head(size());
}

FourierCoeffs InformationMatrix::field(const Eigen::VectorXd& c) const {
  if (c.size() != size()) throw std::invalid_argument("coefficient vector has the wrong length");
  return basis_.field(c, basis_.natural_grid());
}

void InformationMatrix::write(const std::filesystem::path& stem, const nlohmann::json& provenance) const {
  nlohmann::json basis = nlohmann::json::array();
  for (int j = 0; j < size(); ++j) {
    const auto& m = basis_.mode(j);
    basis.push_back({{"k", m.k}, {"kind", m.kind == spectral::ModeKind::constant ? "constant"
                                         : m.kind == spectral::ModeKind::cosine ? "cos" : "sin"}});
  }
  const nlohmann::json header{{"format", "fisherpde-matrix-v1"},
                              {"rows", size()},
                              {"cols", size()},
                              {"layout", "row-major float64 little-endian"},
                              {"condition", condition_},
                              {"subspace", spectral::to_string(basis_.subspace())},
                              {"basis", basis},
                              {"provenance", provenance},
                              {"payload", stem.filename().string() + ".bin"}};
  std::ofstream js(stem.string() + ".json");
  js << header.dump(2) << '\n';
  std::ofstream bin(stem.string() + ".bin", std::ios::binary);
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = matrix_;
  bin.write(reinterpret_cast<const char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(double)));
  if (!js || !bin) throw std::runtime_error("failed to write matrix dump " + stem.string());
}

EigenSystem parameter_basis(const ForwardModel& model, int K) {
  if (K < 1) throw std::invalid_argument("truncation K must be >= 1");
  return EigenSystem::leading(forward::dim(model), forward::parameter_subspace(model), K);
}

ParsevalRows::ParsevalRows(const TorusGrid& g) : grid_(g) {
  for (int i = 0; i < g.box_size(); ++i) {
    const auto k = g.wavevector(i);
    if (k[0] > 0 || (k[0] == 0 && k[1] > 0)) half_.push_back(i);
  }
  center_ = g.box_index({0, 0});
}

void ParsevalRows::fill(const FourierCoeffs& u, Eigen::Ref<Eigen::VectorXd> out) const {
  const double r2 = std::sqrt(2.0);
  for (int c = 0; c < grid_.components; ++c) {
    const auto src = u.component(c);
    const int base = c * block();
    out[base] = src[center_].real();
    for (std::size_t m = 0; m < half_.size(); ++m) {
      out[base + 1 + 2 * m] = r2 * src[half_[m]].real();
      out[base + 2 + 2 * m] = r2 * src[half_[m]].imag();
    }
  }
}

namespace {

// Mixes component blocks of a row block by the symmetric square root S of
// the noise information: row (c, r) <- sum_c' S(c, c') row (c', r).
void mix_components(Eigen::MatrixXd& R, const Eigen::MatrixXd& S, int block) {
  const int p = static_cast<int>(S.rows());
  if (p == 1) {
    if (S(0, 0) != 1.0) R *= S(0, 0);
    return;
  }
  const Eigen::MatrixXd copy = R;
  for (int c = 0; c < p; ++c) {
    auto dst = R.middleRows(c * block, block);
    dst.setZero();
    for (int d = 0; d < p; ++d) dst += S(c, d) * copy.middleRows(d * block, block);
  }
}

}  // namespace

InformationMatrix assemble_information_matrix(const ForwardModel& model, const FourierCoeffs& theta0,
                                              const noise::FisherMatrix& fisher, const DesignMeasure& design,
                                              int K, const AssemblyOptions& options) {
  const int p = forward::components(model);
  if (fisher.dim() != p)
    throw std::invalid_argument("noise dimension " + std::to_string(fisher.dim()) +
                                " does not match the observation dimension " + std::to_string(p));
  if (design.dim() != forward::dim(model) ||
      std::abs(design.horizon() - forward::horizon(model)) > 1e-12 * forward::horizon(model))
    throw std::invalid_argument("design measure does not match the model cylinder");
  const EigenSystem basis = parameter_basis(model, K);
  const int kin = std::max(theta0.grid().max_wavenumber, basis.required_wavenumber());
  const TorusGrid input = TorusGrid::make(forward::dim(model), kin, p);
  std::vector<FourierCoeffs> dirs;
  dirs.reserve(K);
  for (int j = 0; j < K; ++j) dirs.push_back(basis.basis_vector(j, input));

  const TorusGrid solver = forward::solver_grid(model, kin);
  const forward::TimeGrid times = forward::time_grid(model, solver, options.breakpoints);
  const std::vector<double> w = times.simpson_weights();
  const bool par = options.exec == Execution::parallel;

  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(K, K);
  if (design.is_uniform()) {
    const ParsevalRows real(solver);
    Eigen::MatrixXd R(real.rows(), K);
    forward::propagate(model, theta0.resized(input), dirs, times, [&](const forward::NodeView& v) {
      if (w[v.index] == 0.0) return;
#pragma omp parallel for schedule(static) if (par)
      for (int j = 0; j < K; ++j) real.fill(v.tangents[j], R.col(j));
      mix_components(R, fisher.sqrt, real.block());
      gram_update(R, w[v.index] / design.horizon(), G, options.exec);
    }, options.exec);
  } else {
    // grid quadrature on n = 2K + 2 points is exact for (degree 2K) x (degree 1)
    spectral::BoxTransform tr(solver.dim, solver.max_wavenumber, solver.points);
    const int nodes = tr.node_count();
    std::vector<double> scale(nodes);
    for (int i = 0; i < nodes; ++i) {
      const auto x = spectral::node_position(solver.dim, solver.points, i);
      scale[i] = std::sqrt((1.0 + design.amplitude() * std::cos(kTwoPi * x[0])) / nodes);
    }
    Eigen::MatrixXd R(nodes * p, K);
    forward::propagate(model, theta0.resized(input), dirs, times, [&](const forward::NodeView& v) {
      if (w[v.index] == 0.0) return;
#pragma omp parallel for schedule(static) if (par)
      for (int j = 0; j < K; ++j) {
        thread_local std::vector<double> vals;
        vals.resize(nodes);
        for (int c = 0; c < p; ++c) {
          tr.to_physical(v.tangents[j].component(c), vals);
          for (int i = 0; i < nodes; ++i) R(c * nodes + i, j) = scale[i] * vals[i];
        }
      }
      mix_components(R, fisher.sqrt, nodes);
      gram_update(R, w[v.index] / design.horizon(), G, options.exec);
    }, options.exec);
  }
  G.triangularView<Eigen::StrictlyUpper>() = G.transpose();
  return InformationMatrix(std::move(G), basis);
}

// ---------------------------------------------------------------------------
// Norms

double lan_norm(const Eigen::VectorXd& h, const InformationMatrix& M) {
  if (h.size() != M.size()) throw std::invalid_argument("lan_norm: coefficient length mismatch");
  return std::sqrt(std::max(0.0, h.dot(M.matrix() * h)));
}

double lan_norm(const FourierCoeffs& h, const InformationMatrix& M) { return lan_norm(M.coordinates(h), M); }

double lan_norm_direct(const ForwardModel& model, const FourierCoeffs& theta0, const FourierCoeffs& h,
                       const noise::FisherMatrix& fisher, const DesignMeasure& design) {
  const SpaceTimeField U = forward::linearize(model, theta0, h);
  const int p = U.components();
  if (fisher.dim() != p) throw std::invalid_argument("lan_norm_direct: noise dimension mismatch");
  double sum = 0.0;
  std::vector<SpaceTimeField> comps;
  for (int c = 0; c < p; ++c) {
    std::vector<FourierCoeffs> snaps;
    const TorusGrid g = TorusGrid::make(U.grid().dim, U.grid().max_wavenumber, 1, U.grid().points);
    for (const auto& s : U.snapshots()) {
      FourierCoeffs one(g);
      std::copy(s.component(c).begin(), s.component(c).end(), one.component(0).begin());
      snaps.push_back(std::move(one));
    }
    comps.emplace_back(U.times(), std::move(snaps));
  }
  for (int a = 0; a < p; ++a)
    for (int b = 0; b < p; ++b) sum += fisher.information(a, b) * l2lambda_inner(comps[a], comps[b], design);
  return std::sqrt(std::max(0.0, sum));
}

bool SNormTrace::monotone() const {
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] < values[i - 1]) return false;
  return true;
}

SNormTrace s_norm_truncated(const Eigen::VectorXd& psi, const InformationMatrix& M) {
  if (psi.size() != M.size()) throw std::invalid_argument("s_norm: coefficient length mismatch");
  const Eigen::MatrixXd L = M.cholesky().matrixL();
  const Eigen::VectorXd y = L.triangularView<Eigen::Lower>().solve(psi);
  SNormTrace t;
  t.values.resize(psi.size());
  double acc = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    acc += y[i] * y[i];
    t.values[i] = acc;
  }
  return t;
}

HOrthonormalBasis orthonormalize_H(const Eigen::MatrixXd& M) {
  const Eigen::Index K = M.rows();
  if (M.cols() != K) throw std::invalid_argument("orthonormalize_H: matrix must be square");
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(K, K);
  Eigen::MatrixXd MH = Eigen::MatrixXd::Zero(K, K);
  for (Eigen::Index j = 0; j < K; ++j) {
    Eigen::VectorXd v = Eigen::VectorXd::Unit(K, j);
    for (int pass = 0; pass < 2; ++pass) {
      for (Eigen::Index i = 0; i < j; ++i) v -= MH.col(i).dot(v) * H.col(i);
    }
    const Eigen::VectorXd Mv = M * v;
    const double nrm2 = v.dot(Mv);
    if (!(nrm2 > 1e-13 * std::abs(M(j, j))))
      throw NumericalError("H-orthonormalization lost rank at column " + std::to_string(j));
    const double nrm = std::sqrt(nrm2);
    H.col(j) = v / nrm;
    MH.col(j) = Mv / nrm;
  }
  HOrthonormalBasis out;
  out.H = std::move(H);
  out.gram_residual =
      (out.H.transpose() * M * out.H - Eigen::MatrixXd::Identity(K, K)).cwiseAbs().maxCoeff();
  return out;
}

// ---------------------------------------------------------------------------
// Norm equivalence

nlohmann::json NormEquivalenceLevel::to_json() const {
  return {{"K", K},
          {"ratio_min", ratio_min},
          {"ratio_max", ratio_max},
          {"eig_min", eig_min},
          {"eig_max", eig_max},
          {"cond", condition}};
}

std::vector<NormEquivalenceLevel> norm_equivalence_diagnostic(const ForwardModel& model,
                                                              const FourierCoeffs& theta0,
                                                              const DesignMeasure& design,
                                                              const std::vector<int>& levels, int trials,
                                                              double kappa, std::uint64_t seed, Execution exec) {
  if (trials < 10) throw std::invalid_argument("norm equivalence needs at least 10 trials");
  if (levels.empty()) throw std::invalid_argument("norm equivalence needs at least one truncation level");
  const noise::FisherMatrix unit = noise::FisherMatrix::identity(forward::components(model));
  std::vector<NormEquivalenceLevel> out;
  for (int K : levels) {
    const InformationMatrix M = assemble_information_matrix(model, theta0, unit, design, K, {exec, {}});
    Eigen::VectorXd inv_sqrt_w(K);
    for (int j = 0; j < K; ++j) inv_sqrt_w[j] = std::pow(M.basis().mode(j).weight, kappa / 2.0);
    NormEquivalenceLevel lvl;
    lvl.K = K;
    lvl.condition = M.condition();
    const Eigen::MatrixXd A = inv_sqrt_w.asDiagonal() * M.matrix() * inv_sqrt_w.asDiagonal();
    const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(A, Eigen::EigenvaluesOnly).eigenvalues();
    lvl.eig_min = std::sqrt(std::max(0.0, ev[0]));
    lvl.eig_max = std::sqrt(ev[K - 1]);
    for (int j = 0; j < K; ++j) lvl.mode_ratios.push_back(std::sqrt(A(j, j)));
    std::vector<double> ratios(trials);
    for (int t = 0; t < trials; ++t) {
      Rng rng(split_seed(seed, static_cast<std::uint64_t>(t)));
      Eigen::VectorXd z(K);
      for (int j = 0; j < K; ++j) z[j] = rng.normal();
      z /= z.norm();
      ratios[t] = std::sqrt(std::max(0.0, z.dot(A * z)));
    }
    lvl.ratio_min = *std::min_element(ratios.begin(), ratios.end());
    lvl.ratio_max = *std::max_element(ratios.begin(), ratios.end());
    out.push_back(std::move(lvl));
  }
  return out;
}

}  // namespace fisherpde::infoop
