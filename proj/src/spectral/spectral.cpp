#include "fisherpde/spectral.hpp"

#include <fftw3.h>

#include <algorithm>
#include <map>
#include <mutex>
#include <set>
#include <tuple>

namespace fisherpde::spectral {

namespace {

constexpr double kSqrt2 = std::numbers::sqrt2;

int positive_mod(int a, int m) { return ((a % m) + m) % m; }

bool in_half_lattice(const Wavevector& k, int dim) {
  if (dim == 1) return k[0] > 0;
  return k[0] > 0 || (k[0] == 0 && k[1] > 0);
}

int norm2(const Wavevector& k) { return k[0] * k[0] + k[1] * k[1]; }

std::array<double, 2> polarization(const Wavevector& k) {
  const double len = std::sqrt(static_cast<double>(norm2(k)));
  return {-k[1] / len, k[0] / len};
}

}  // namespace

// ---------------------------------------------------------------------------
// TorusGrid

TorusGrid TorusGrid::make(int dim, int max_wavenumber, int components, int points) {
  if (dim != 1 && dim != 2) throw std::invalid_argument("torus dimension must be 1 or 2");
  if (max_wavenumber < 1) throw std::invalid_argument("max wavenumber must be >= 1");
  if (components < 1) throw std::invalid_argument("component count must be >= 1");
  if (points == 0) points = std::max(8, 2 * max_wavenumber + 2);
  if (points % 2 != 0 || points < 8)
    throw std::invalid_argument("grid points per axis must be even and >= 8");
  if (points < 2 * max_wavenumber + 2)
    throw std::invalid_argument("grid resolution aliases the retained modes (need n >= 2K + 2)");
  TorusGrid g;
  g.dim = dim;
  g.max_wavenumber = max_wavenumber;
  g.points = points;
  g.components = components;
  return g;
}

int TorusGrid::box_size() const { return dim == 1 ? box_width() : box_width() * box_width(); }

int TorusGrid::node_count() const { return dim == 1 ? points : points * points; }

int TorusGrid::padded_points() const {
  int m = (3 * points + 1) / 2;
  return m % 2 == 0 ? m : m + 1;
}

int TorusGrid::box_index(const Wavevector& k) const {
  const int w = box_width();
  if (dim == 1) return k[0] + max_wavenumber;
  return (k[0] + max_wavenumber) * w + (k[1] + max_wavenumber);
}

Wavevector TorusGrid::wavevector(int idx) const {
  const int w = box_width();
  if (dim == 1) return {idx - max_wavenumber, 0};
  return {idx / w - max_wavenumber, idx % w - max_wavenumber};
}

// ---------------------------------------------------------------------------
// FourierCoeffs

FourierCoeffs::FourierCoeffs(const TorusGrid& grid)
    : grid_(grid), data_(static_cast<std::size_t>(grid.components * grid.box_size())) {}

double FourierCoeffs::hermitian_defect() const {
  double worst = 0.0;
  const int n = grid_.box_size();
  for (int c = 0; c < grid_.components; ++c) {
    for (int i = 0; i < n; ++i) {
      // box index of -k is the mirror index
      const Complex a = data_[c * n + i];
      const Complex b = data_[c * n + (n - 1 - i)];
      worst = std::max(worst, std::abs(b - std::conj(a)));
    }
  }
  return worst;
}

void FourierCoeffs::symmetrize() {
  const int n = grid_.box_size();
  for (int c = 0; c < grid_.components; ++c) {
    for (int i = 0; i <= (n - 1) / 2; ++i) {
      Complex& a = data_[c * n + i];
      Complex& b = data_[c * n + (n - 1 - i)];
      const Complex avg = 0.5 * (a + std::conj(b));
      a = avg;
      b = std::conj(avg);
    }
  }
}

FourierCoeffs FourierCoeffs::resized(const TorusGrid& target, double tolerance) const {
  if (target.dim != grid_.dim || target.components != grid_.components)
    throw std::invalid_argument("resize: dimension or component count mismatch");
  FourierCoeffs out(target);
  const int n = grid_.box_size();
  for (int c = 0; c < grid_.components; ++c) {
    for (int i = 0; i < n; ++i) {
      const Wavevector k = grid_.wavevector(i);
      const Complex v = data_[c * n + i];
      if (std::abs(k[0]) <= target.max_wavenumber && std::abs(k[1]) <= target.max_wavenumber) {
        out.at(c, k) = v;
      } else if (std::abs(v) > tolerance) {
        throw std::invalid_argument("resize would drop nonzero Fourier modes");
      }
    }
  }
  return out;
}

double FourierCoeffs::max_abs() const {
  double m = 0.0;
  for (const auto& v : data_) m = std::max(m, std::abs(v));
  return m;
}

FourierCoeffs& FourierCoeffs::operator+=(const FourierCoeffs& other) {
  if (!(other.grid_ == grid_)) throw std::invalid_argument("FourierCoeffs: grid mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

FourierCoeffs& FourierCoeffs::operator-=(const FourierCoeffs& other) {
  if (!(other.grid_ == grid_)) throw std::invalid_argument("FourierCoeffs: grid mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

FourierCoeffs& FourierCoeffs::operator*=(double s) {
  for (auto& v : data_) v *= s;
  return *this;
}

// ---------------------------------------------------------------------------
// EigenSystem

std::string to_string(Subspace s) {
  switch (s) {
    case Subspace::full: return "full";
    case Subspace::mean_zero: return "mean-zero";
    case Subspace::divergence_free: return "divergence-free";
  }
  return "full";
}

Subspace subspace_from_string(const std::string& s) {
  if (s == "full") return Subspace::full;
  if (s == "mean-zero") return Subspace::mean_zero;
  if (s == "divergence-free") return Subspace::divergence_free;
  throw std::invalid_argument("unknown subspace '" + s + "'");
}

EigenSystem::EigenSystem(int dim, int max_wavenumber, Subspace subspace)
    : dim_(dim), max_wavenumber_(max_wavenumber), subspace_(subspace) {
  if (dim != 1 && dim != 2) throw std::invalid_argument("eigensystem dimension must be 1 or 2");
  if (max_wavenumber < 1) throw std::invalid_argument("eigensystem truncation must be >= 1");
  if (subspace == Subspace::divergence_free && dim != 2)
    throw std::invalid_argument("divergence-free subspace requires d = 2");
  kappa_ = 1.0;
  alpha_ = subspace == Subspace::divergence_free ? 1.0 : 0.5 * dim;

  const double four_pi2 = 4.0 * kPi * kPi;
  auto weight_of = [&](double lambda) {
    return subspace_ == Subspace::full ? 1.0 + lambda : lambda;
  };
  if (subspace == Subspace::full) modes_.push_back({0, {0, 0}, ModeKind::constant, 0.0, 1.0});
  const int K = max_wavenumber;
  const int lo1 = dim == 2 ? -K : 0;
  const int hi1 = dim == 2 ? K : 0;
  for (int k0 = -K; k0 <= K; ++k0) {
    for (int k1 = lo1; k1 <= hi1; ++k1) {
      const Wavevector k{k0, k1};
      if (!in_half_lattice(k, dim)) continue;
      const double lambda = four_pi2 * norm2(k);
      modes_.push_back({0, k, ModeKind::cosine, lambda, weight_of(lambda)});
      modes_.push_back({0, k, ModeKind::sine, lambda, weight_of(lambda)});
    }
  }
  std::stable_sort(modes_.begin(), modes_.end(), [](const EigenMode& a, const EigenMode& b) {
    const int na = norm2(a.k), nb = norm2(b.k);
    if (na != nb) return na < nb;
    if (a.k != b.k) return a.k < b.k;
    return static_cast<int>(a.kind) < static_cast<int>(b.kind);
  });
  for (std::size_t j = 0; j < modes_.size(); ++j) modes_[j].index = static_cast<int>(j);
}

EigenSystem EigenSystem::leading(int dim, Subspace subspace, int count) {
  if (count < 1) throw std::invalid_argument("leading eigensystem needs count >= 1");
  for (int w = 1;; w *= 2) {
    EigenSystem es(dim, w, subspace);
    if (es.size() < count) continue;
    const int r2 = norm2(es.modes_[count - 1].k);
    if (r2 > w * w) continue;
    es.modes_.resize(count);
    es.max_wavenumber_ = es.required_wavenumber();
    return es;
  }
}

void EigenSystem::set_scale_exponents(double kappa, double alpha) {
  if (!(kappa > 0.0) || !(alpha > 0.0)) throw std::invalid_argument("scale exponents must be positive");
  kappa_ = kappa;
  alpha_ = alpha;
}

int EigenSystem::required_wavenumber() const {
  int k = 1;
  for (const auto& m : modes_) k = std::max({k, std::abs(m.k[0]), std::abs(m.k[1])});
  return k;
}

Eigen::VectorXd EigenSystem::weights() const {
  Eigen::VectorXd w(size());
  for (int j = 0; j < size(); ++j) w[j] = modes_[j].weight;
  return w;
}

Eigen::VectorXd EigenSystem::eigenvalues() const {
  Eigen::VectorXd w(size());
  for (int j = 0; j < size(); ++j) w[j] = modes_[j].eigenvalue;
  return w;
}

TorusGrid EigenSystem::natural_grid() const {
  return TorusGrid::make(dim_, required_wavenumber(), components());
}

void EigenSystem::add_coordinate_contribution(const EigenMode& m, const FourierCoeffs& u,
                                              double& out) const {
  const TorusGrid& g = u.grid();
  if (std::abs(m.k[0]) > g.max_wavenumber || std::abs(m.k[1]) > g.max_wavenumber) return;
  if (m.kind == ModeKind::constant) {
    out += u.at(0, m.k).real();
    return;
  }
  if (subspace_ == Subspace::divergence_free) {
    const auto pol = polarization(m.k);
    for (int a = 0; a < 2; ++a) {
      const Complex c = u.at(a, m.k);
      out += pol[a] * kSqrt2 * (m.kind == ModeKind::cosine ? c.real() : -c.imag());
    }
  } else {
    const Complex c = u.at(0, m.k);
    out += kSqrt2 * (m.kind == ModeKind::cosine ? c.real() : -c.imag());
  }
}

Eigen::VectorXd EigenSystem::coordinates(const FourierCoeffs& u, double tolerance) const {
  if (u.grid().dim != dim_ || u.grid().components != components())
    throw std::invalid_argument("field does not live in this eigensystem's space");
  Eigen::VectorXd c = Eigen::VectorXd::Zero(size());
  for (int j = 0; j < size(); ++j) add_coordinate_contribution(modes_[j], u, c[j]);
  // residual outside the span
  const FourierCoeffs back = field(c, u.grid());
  const double unorm = std::sqrt(std::max(pairing(u, u), 0.0));
  FourierCoeffs diff = u;
  diff -= back;
  const double rnorm = std::sqrt(std::max(pairing(diff, diff), 0.0));
  if (rnorm > tolerance * unorm + 1e-300 && rnorm > 1e-14 * std::max(unorm, 1.0))
    throw std::invalid_argument("field has components outside the eigensystem span (residual " +
                                std::to_string(rnorm) + ")");
  return c;
}

FourierCoeffs EigenSystem::field(const Eigen::Ref<const Eigen::VectorXd>& c,
                                 const TorusGrid& grid) const {
  if (grid.dim != dim_ || grid.components != components())
    throw std::invalid_argument("grid does not match the eigensystem");
  if (c.size() > size()) throw std::invalid_argument("more coordinates than modes");
  FourierCoeffs u(grid);
  const Complex i_unit(0.0, 1.0);
  for (int j = 0; j < c.size(); ++j) {
    if (c[j] == 0.0) continue;
    const auto& m = modes_[j];
    if (std::abs(m.k[0]) > grid.max_wavenumber || std::abs(m.k[1]) > grid.max_wavenumber)
      throw std::invalid_argument("grid truncation cannot hold eigenmode " + std::to_string(j));
    if (m.kind == ModeKind::constant) {
      u.at(0, m.k) += c[j];
      continue;
    }
    const Wavevector mk{-m.k[0], -m.k[1]};
    const Complex plus = m.kind == ModeKind::cosine ? Complex(c[j] / kSqrt2, 0.0)
                                                    : -i_unit * (c[j] / kSqrt2);
    if (subspace_ == Subspace::divergence_free) {
      const auto pol = polarization(m.k);
      for (int a = 0; a < 2; ++a) {
        u.at(a, m.k) += pol[a] * plus;
        u.at(a, mk) += pol[a] * std::conj(plus);
      }
    } else {
      u.at(0, m.k) += plus;
      u.at(0, mk) += std::conj(plus);
    }
  }
  return u;
}

FourierCoeffs EigenSystem::basis_vector(int j, const TorusGrid& grid) const {
  if (j < 0 || j >= size()) throw std::out_of_range("eigenmode index out of range");
  Eigen::VectorXd c = Eigen::VectorXd::Zero(j + 1);
  c[j] = 1.0;
  return field(c, grid);
}

// ---------------------------------------------------------------------------
// Norms and pairing

double sobolev_norm(const Eigen::Ref<const Eigen::VectorXd>& coords, double s,
                    const EigenSystem& es) {
  if (coords.size() > es.size()) throw std::invalid_argument("more coordinates than modes");
  double sum = 0.0;
  for (int j = 0; j < coords.size(); ++j) sum += std::pow(es.mode(j).weight, s) * coords[j] * coords[j];
  return std::sqrt(sum);
}

double sobolev_norm(const FourierCoeffs& u, double s, const EigenSystem& es) {
  return sobolev_norm(es.coordinates(u), s, es);
}

double pairing(const FourierCoeffs& u, const FourierCoeffs& v) {
  if (!(u.grid() == v.grid())) throw std::invalid_argument("pairing: grid mismatch");
  double sum = 0.0;
  const auto a = u.data();
  const auto b = v.data();
  for (std::size_t i = 0; i < a.size(); ++i) sum += a[i].real() * b[i].real() + a[i].imag() * b[i].imag();
  return sum;
}

// ---------------------------------------------------------------------------
// Transforms

namespace {

std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct PlanPair {
  fftw_plan forward;
  fftw_plan backward;
};

PlanPair plans_for(int dim, int points) {
  static std::map<std::pair<int, int>, PlanPair> cache;
  std::lock_guard lock(planner_mutex());
  const auto key = std::make_pair(dim, points);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  const int nodes = dim == 1 ? points : points * points;
  const int half = points / 2 + 1;
  const int spec = dim == 1 ? half : points * half;
  double* real = fftw_alloc_real(nodes);
  fftw_complex* cplx = fftw_alloc_complex(spec);
  const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
  PlanPair p{};
  if (dim == 1) {
    p.forward = fftw_plan_dft_r2c_1d(points, real, cplx, flags);
    p.backward = fftw_plan_dft_c2r_1d(points, cplx, real, flags);
  } else {
    p.forward = fftw_plan_dft_r2c_2d(points, points, real, cplx, flags);
    p.backward = fftw_plan_dft_c2r_2d(points, points, cplx, real, flags);
  }
  fftw_free(real);
  fftw_free(cplx);
  cache.emplace(key, p);
  return p;
}

std::vector<Complex>& spectrum_scratch(std::size_t n) {
  thread_local std::vector<Complex> buf;
  if (buf.size() < n) buf.resize(n);
  return buf;
}

}  // namespace

BoxTransform::BoxTransform(int dim, int max_wavenumber, int points)
    : dim_(dim), max_wavenumber_(max_wavenumber), width_(2 * max_wavenumber + 1),
      points_(points), half_(points / 2 + 1) {
  if (points < 2 * max_wavenumber + 1)
    throw std::invalid_argument("transform resolution cannot represent the truncation");
  const PlanPair p = plans_for(dim, points);
  forward_plan_ = p.forward;
  backward_plan_ = p.backward;
}

void BoxTransform::to_physical(std::span<const Complex> box, std::span<double> values) const {
  const int K = max_wavenumber_;
  const std::size_t spec = dim_ == 1 ? half_ : static_cast<std::size_t>(points_) * half_;
  auto& buf = spectrum_scratch(spec);
  std::fill(buf.begin(), buf.begin() + spec, Complex(0.0, 0.0));
  if (dim_ == 1) {
    for (int k = 0; k <= K; ++k) buf[k] = box[k + K];
  } else {
    for (int k0 = -K; k0 <= K; ++k0) {
      const int row = positive_mod(k0, points_);
      for (int k1 = 0; k1 <= K; ++k1) buf[row * half_ + k1] = box[(k0 + K) * width_ + (k1 + K)];
    }
  }
  fftw_execute_dft_c2r(static_cast<fftw_plan>(backward_plan_),
                       reinterpret_cast<fftw_complex*>(buf.data()), values.data());
}

void BoxTransform::to_box(std::span<const double> values, std::span<Complex> box) const {
  const int K = max_wavenumber_;
  const std::size_t spec = dim_ == 1 ? half_ : static_cast<std::size_t>(points_) * half_;
  auto& buf = spectrum_scratch(spec);
  thread_local std::vector<double> in;
  in.assign(values.begin(), values.end());
  fftw_execute_dft_r2c(static_cast<fftw_plan>(forward_plan_), in.data(),
                       reinterpret_cast<fftw_complex*>(buf.data()));
  const double scale = 1.0 / node_count();
  if (dim_ == 1) {
    for (int k = 0; k <= K; ++k) {
      box[k + K] = buf[k] * scale;
      box[K - k] = std::conj(buf[k]) * scale;
    }
  } else {
    for (int k0 = -K; k0 <= K; ++k0) {
      const int row = positive_mod(k0, points_);
      for (int k1 = 0; k1 <= K; ++k1) {
        box[(k0 + K) * width_ + (k1 + K)] = buf[row * half_ + k1] * scale;
        box[(-k0 + K) * width_ + (-k1 + K)] = std::conj(buf[row * half_ + k1]) * scale;
      }
    }
  }
}

std::vector<double> to_values(const FourierCoeffs& u, int points) {
  const TorusGrid& g = u.grid();
  BoxTransform tr(g.dim, g.max_wavenumber, points);
  const int nodes = tr.node_count();
  std::vector<double> out(static_cast<std::size_t>(nodes) * g.components);
  for (int c = 0; c < g.components; ++c)
    tr.to_physical(u.component(c), std::span<double>(out.data() + c * nodes, nodes));
  return out;
}

std::vector<double> to_values(const FourierCoeffs& u) { return to_values(u, u.grid().points); }

FourierCoeffs from_values(std::span<const double> values, const TorusGrid& grid) {
  const int nodes = grid.node_count();
  if (static_cast<int>(values.size()) != nodes * grid.components)
    throw std::invalid_argument("value count does not match the grid");
  if (grid.points < 2 * grid.max_wavenumber + 2)
    throw std::invalid_argument("grid resolution aliases the retained modes");
  BoxTransform tr(grid.dim, grid.max_wavenumber, grid.points);
  FourierCoeffs u(grid);
  for (int c = 0; c < grid.components; ++c)
    tr.to_box(values.subspan(static_cast<std::size_t>(c) * nodes, nodes), u.component(c));
  return u;
}

FourierCoeffs dealiased_product(const FourierCoeffs& u, const FourierCoeffs& v) {
  if (!(u.grid() == v.grid())) throw std::invalid_argument("product: grid mismatch");
  if (u.grid().components != 1) throw std::invalid_argument("product: scalar fields only");
  const TorusGrid& g = u.grid();
  const int m = g.padded_points();
  BoxTransform tr(g.dim, g.max_wavenumber, m);
  std::vector<double> a(tr.node_count()), b(tr.node_count());
  tr.to_physical(u.component(0), a);
  tr.to_physical(v.component(0), b);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] *= b[i];
  FourierCoeffs out(g);
  tr.to_box(a, out.component(0));
  return out;
}

std::array<double, 2> node_position(int dim, int points, int flat_index) {
  if (dim == 1) return {static_cast<double>(flat_index) / points, 0.0};
  return {static_cast<double>(flat_index / points) / points,
          static_cast<double>(flat_index % points) / points};
}

std::array<double, 2> evaluate(const FourierCoeffs& u, const std::array<double, 2>& x) {
  const TorusGrid& g = u.grid();
  const int K = g.max_wavenumber;
  const int w = g.box_width();
  thread_local std::vector<Complex> p0, p1;
  p0.resize(w);
  p1.resize(w);
  auto powers = [&](double xi, std::vector<Complex>& p) {
    const Complex z = std::polar(1.0, kTwoPi * xi);
    p[K] = 1.0;
    for (int k = 1; k <= K; ++k) {
      p[K + k] = p[K + k - 1] * z;
      p[K - k] = std::conj(p[K + k]);
    }
  };
  powers(x[0], p0);
  if (g.dim == 2) powers(x[1], p1);
  std::array<double, 2> out{0.0, 0.0};
  for (int c = 0; c < g.components; ++c) {
    const auto box = u.component(c);
    double sum = 0.0;
    if (g.dim == 1) {
      for (int i = 0; i < w; ++i) sum += (box[i] * p0[i]).real();
    } else {
      for (int i0 = 0; i0 < w; ++i0) {
        Complex row(0.0, 0.0);
        for (int i1 = 0; i1 < w; ++i1) row += box[i0 * w + i1] * p1[i1];
        sum += (row * p0[i0]).real();
      }
    }
    out[c] = sum;
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON dump

nlohmann::json to_json(const FourierCoeffs& u, const EigenSystem& es) {
  const TorusGrid& g = u.grid();
  if (g.dim != es.dim() || g.components != es.components())
    throw std::invalid_argument("coefficient dump: eigensystem does not match field");
  nlohmann::json j;
  j["d"] = g.dim;
  j["K"] = g.max_wavenumber;
  j["subspace"] = to_string(es.subspace());
  j["components"] = g.components;
  auto entries = nlohmann::json::array();
  std::set<Wavevector> seen;
  for (const auto& m : es.modes()) {
    if (std::abs(m.k[0]) > g.max_wavenumber || std::abs(m.k[1]) > g.max_wavenumber) continue;
    if (!seen.insert(m.k).second) continue;
    for (int c = 0; c < g.components; ++c) {
      const Complex v = u.at(c, m.k);
      nlohmann::json e;
      e["k"] = g.dim == 1 ? nlohmann::json::array({m.k[0]}) : nlohmann::json::array({m.k[0], m.k[1]});
      e["component"] = c;
      e["re"] = v.real();
      e["im"] = v.imag();
      entries.push_back(std::move(e));
    }
  }
  j["entries"] = std::move(entries);
  return j;
}

FourierCoeffs coeffs_from_json(const nlohmann::json& j) {
  const int d = j.at("d").get<int>();
  const TorusGrid g = TorusGrid::make(d, j.at("K").get<int>(), j.at("components").get<int>());
  (void)subspace_from_string(j.at("subspace").get<std::string>());
  FourierCoeffs u(g);
  for (const auto& e : j.at("entries")) {
    const auto& kk = e.at("k");
    if (static_cast<int>(kk.size()) != d) throw std::invalid_argument("coefficient entry has wrong k length");
    Wavevector k{kk[0].get<int>(), d == 2 ? kk[1].get<int>() : 0};
    if (std::abs(k[0]) > g.max_wavenumber || std::abs(k[1]) > g.max_wavenumber)
      throw std::invalid_argument("coefficient entry outside the truncation");
    const int c = e.at("component").get<int>();
    if (c < 0 || c >= g.components) throw std::invalid_argument("coefficient entry has bad component");
    const Complex v(e.at("re").get<double>(), e.at("im").get<double>());
    u.at(c, k) = v;
    u.at(c, {-k[0], -k[1]}) = std::conj(v);
  }
  return u;
}

}  // namespace fisherpde::spectral
