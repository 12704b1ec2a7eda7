#include "fisherpde/noise.hpp"

#include <algorithm>
#include <limits>
#include <set>

#include <cmath>
// pchip.hpp calls isnan unqualified.
using std::isnan;
#include <boost/math/interpolators/pchip.hpp>
#include <boost/math/quadrature/gauss.hpp>

namespace fisherpde::noise {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double sign(double y) { return y > 0.0 ? 1.0 : (y < 0.0 ? -1.0 : 0.0); }

void require_positive(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument(std::string(what) + " must be positive");
}

double gauss_legendre_panel(const std::function<double(double)>& f, double a, double b) {
  using Rule = boost::math::quadrature::gauss<double, 20>;
  static const auto& x = Rule::abscissa();
  static const auto& w = Rule::weights();
  const double mid = 0.5 * (a + b);
  const double half = 0.5 * (b - a);
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] == 0.0) {
      sum += w[i] * f(mid);
    } else {
      sum += w[i] * (f(mid - half * x[i]) + f(mid + half * x[i]));
    }
  }
  return sum * half;
}

double composite(const std::function<double(double)>& f, double a, double b, int panels) {
  const double h = (b - a) / panels;
  double sum = 0.0;
  for (int i = 0; i < panels; ++i) sum += gauss_legendre_panel(f, a + i * h, a + (i + 1) * h);
  return sum;
}

}  // namespace

double integrate(const std::function<double(double)>& f, double a, double b,
                 const std::vector<double>& breaks, double rel_tol, double abs_tol) {
  std::vector<double> edges{a};
  for (double c : breaks)
    if (c > a && c < b) edges.push_back(c);
  edges.push_back(b);
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  double total = 0.0;
  for (std::size_t s = 0; s + 1 < edges.size(); ++s) {
    const double lo = edges[s], hi = edges[s + 1];
    double prev = composite(f, lo, hi, 2);
    bool converged = false;
    for (int panels = 4; panels <= (1 << 16); panels *= 2) {
      const double cur = composite(f, lo, hi, panels);
      if (!std::isfinite(cur)) throw NumericalError("quadrature produced a non-finite value");
      if (std::abs(cur - prev) <= std::max(rel_tol * std::abs(cur), abs_tol)) {
        prev = cur;
        converged = true;
        break;
      }
      prev = cur;
    }
    if (!converged) throw NumericalError("quadrature did not converge");
    total += prev;
  }
  return total;
}

// ---------------------------------------------------------------------------
// NoiseModel

NoiseModel NoiseModel::gaussian(double variance) {
  require_positive(variance, "gaussian variance");
  NoiseModel m;
  m.family_ = Family::gaussian;
  m.scale_ = std::sqrt(variance);
  return m;
}

NoiseModel NoiseModel::bivariate_gaussian(const Eigen::Matrix2d& covariance) {
  if ((covariance - covariance.transpose()).cwiseAbs().maxCoeff() > 1e-14 * covariance.cwiseAbs().maxCoeff())
    throw std::invalid_argument("covariance must be symmetric");
  Eigen::LLT<Eigen::Matrix2d> llt(covariance);
  if (llt.info() != Eigen::Success || covariance.determinant() <= 0.0)
    throw std::invalid_argument("covariance must be positive definite");
  NoiseModel m;
  m.family_ = Family::bivariate_gaussian;
  m.dim_ = 2;
  m.cov_ = covariance;
  m.precision_ = covariance.inverse();
  m.scale_ = std::sqrt(covariance.diagonal().maxCoeff());
  m.log_norm2_ = -std::log(kTwoPi) - 0.5 * std::log(covariance.determinant());
  return m;
}

NoiseModel NoiseModel::laplace(double scale) {
  require_positive(scale, "laplace scale");
  NoiseModel m;
  m.family_ = Family::laplace;
  m.scale_ = scale;
  return m;
}

NoiseModel NoiseModel::logistic(double scale) {
  require_positive(scale, "logistic scale");
  NoiseModel m;
  m.family_ = Family::logistic;
  m.scale_ = scale;
  return m;
}

NoiseModel NoiseModel::cosine_bump() {
  NoiseModel m;
  m.family_ = Family::cosine_bump;
  m.lo_ = -1.0;
  m.hi_ = 1.0;
  return m;
}

NoiseModel NoiseModel::uniform(double lo, double hi) {
  if (!(hi > lo)) throw std::invalid_argument("uniform noise needs lo < hi");
  NoiseModel m;
  m.family_ = Family::uniform;
  m.lo_ = lo;
  m.hi_ = hi;
  return m;
}

namespace {

void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw std::invalid_argument("noise block must be an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = key == "family";
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw std::invalid_argument("unknown key '" + key + "' in noise block");
  }
}

double number(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw std::invalid_argument(std::string("noise block is missing '") + key + "'");
  if (!j.at(key).is_number()) throw std::invalid_argument(std::string("noise '") + key + "' must be a number");
  return j.at(key).get<double>();
}

}  // namespace

NoiseModel NoiseModel::from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("family") || !j.at("family").is_string())
    throw std::invalid_argument("noise block needs a string 'family'");
  const std::string family = j.at("family").get<std::string>();
  if (family == "gaussian") {
    check_keys(j, {"variance", "sigma"});
    if (j.contains("variance") == j.contains("sigma"))
      throw std::invalid_argument("gaussian noise needs exactly one of 'variance' or 'sigma'");
    if (j.contains("sigma")) {
      const double s = number(j, "sigma");
      require_positive(s, "gaussian sigma");
      return gaussian(s * s);
    }
    return gaussian(number(j, "variance"));
  }
  if (family == "bivariate-gaussian") {
    check_keys(j, {"covariance"});
    const auto& c = j.at("covariance");
    if (!c.is_array() || c.size() != 2 || c[0].size() != 2 || c[1].size() != 2)
      throw std::invalid_argument("covariance must be a 2x2 array");
    Eigen::Matrix2d cov;
    cov << c[0][0].get<double>(), c[0][1].get<double>(), c[1][0].get<double>(), c[1][1].get<double>();
    return bivariate_gaussian(cov);
  }
  if (family == "laplace") {
    check_keys(j, {"scale"});
    return laplace(number(j, "scale"));
  }
  if (family == "logistic") {
    check_keys(j, {"scale"});
    return logistic(number(j, "scale"));
  }
  if (family == "cosine-bump") {
    check_keys(j, {});
    return cosine_bump();
  }
  if (family == "uniform") {
    check_keys(j, {"lo", "hi"});
    return uniform(number(j, "lo"), number(j, "hi"));
  }
  throw std::invalid_argument("unknown noise family '" + family + "'");
}

nlohmann::json NoiseModel::to_json() const {
  nlohmann::json j;
  j["family"] = name();
  switch (family_) {
    case Family::gaussian: j["variance"] = scale_ * scale_; break;
    case Family::bivariate_gaussian:
      j["covariance"] = {{cov_(0, 0), cov_(0, 1)}, {cov_(1, 0), cov_(1, 1)}};
      break;
    case Family::laplace:
    case Family::logistic: j["scale"] = scale_; break;
    case Family::cosine_bump: break;
    case Family::uniform:
      j["lo"] = lo_;
      j["hi"] = hi_;
      break;
  }
  return j;
}

std::string NoiseModel::name() const {
  switch (family_) {
    case Family::gaussian: return "gaussian";
    case Family::bivariate_gaussian: return "bivariate-gaussian";
    case Family::laplace: return "laplace";
    case Family::logistic: return "logistic";
    case Family::cosine_bump: return "cosine-bump";
    case Family::uniform: return "uniform";
  }
  return "gaussian";
}

bool NoiseModel::compact_support() const {
  return family_ == Family::cosine_bump || family_ == Family::uniform;
}

double NoiseModel::log_density(const Point& y) const {
  const double v = y[0];
  switch (family_) {
    case Family::gaussian: {
      const double z = v / scale_;
      return -0.5 * z * z - std::log(scale_) - 0.5 * std::log(kTwoPi);
    }
    case Family::bivariate_gaussian: {
      const Eigen::Vector2d yy(y[0], y[1]);
      return log_norm2_ - 0.5 * yy.dot(precision_ * yy);
    }
    case Family::laplace: return -std::abs(v) / scale_ - std::log(2.0 * scale_);
    case Family::logistic: {
      const double z = std::abs(v) / scale_;
      return -z - std::log(scale_) - 2.0 * std::log1p(std::exp(-z));
    }
    case Family::cosine_bump: {
      if (std::abs(v) >= 1.0) return -kInf;
      const double c = std::cos(0.5 * kPi * v);
      return c > 0.0 ? 2.0 * std::log(c) : -kInf;
    }
    case Family::uniform:
      return (v >= lo_ && v <= hi_) ? -std::log(hi_ - lo_) : -kInf;
  }
  return -kInf;
}

double NoiseModel::density(const Point& y) const {
  if (family_ == Family::cosine_bump) {
    if (std::abs(y[0]) >= 1.0) return 0.0;
    const double c = std::cos(0.5 * kPi * y[0]);
    return c * c;
  }
  return std::exp(log_density(y));
}

Point NoiseModel::sqrt_gradient(const Point& y) const {
  const double v = y[0];
  switch (family_) {
    case Family::gaussian: return {-v / (2.0 * scale_ * scale_) * sqrt_density(y), 0.0};
    case Family::bivariate_gaussian: {
      const Eigen::Vector2d g = -0.5 * (precision_ * Eigen::Vector2d(y[0], y[1])) * sqrt_density(y);
      return {g[0], g[1]};
    }
    case Family::laplace: return {-sign(v) * sqrt_density(y) / (2.0 * scale_), 0.0};
    case Family::logistic: return {-std::tanh(v / (2.0 * scale_)) * sqrt_density(y) / (2.0 * scale_), 0.0};
    case Family::cosine_bump:
      if (std::abs(v) >= 1.0) return {0.0, 0.0};
      return {-0.5 * kPi * std::sin(0.5 * kPi * v), 0.0};
    case Family::uniform: return {0.0, 0.0};
  }
  return {0.0, 0.0};
}

Point NoiseModel::score(const Point& y) const {
  const double v = y[0];
  // closed forms of -2 g / sqrt(q); they agree with the definition and avoid
  // underflow of sqrt(q) in the tails
  switch (family_) {
    case Family::gaussian: return {v / (scale_ * scale_), 0.0};
    case Family::bivariate_gaussian: {
      const Eigen::Vector2d s = precision_ * Eigen::Vector2d(y[0], y[1]);
      return {s[0], s[1]};
    }
    case Family::laplace: return {sign(v) / scale_, 0.0};
    case Family::logistic: return {std::tanh(v / (2.0 * scale_)) / scale_, 0.0};
    case Family::cosine_bump: {
      if (std::abs(v) >= 1.0) return {0.0, 0.0};
      const double c = std::cos(0.5 * kPi * v);
      if (c <= 0.0) return {0.0, 0.0};
      return {kPi * std::sin(0.5 * kPi * v) / c, 0.0};
    }
    case Family::uniform: return {0.0, 0.0};
  }
  return {0.0, 0.0};
}

Interval NoiseModel::window(int axis) const {
  switch (family_) {
    case Family::gaussian: return {-12.0 * scale_, 12.0 * scale_};
    case Family::bivariate_gaussian: {
      const double s = std::sqrt(cov_(axis, axis));
      return {-12.0 * s, 12.0 * s};
    }
    // exponential tails: e^{-40} is below double resolution of the mass
    case Family::laplace:
    case Family::logistic: return {-40.0 * scale_, 40.0 * scale_};
    case Family::cosine_bump:
    case Family::uniform: return {lo_, hi_};
  }
  return {-1.0, 1.0};
}

std::vector<double> NoiseModel::breakpoints(int) const {
  if (family_ == Family::laplace) return {0.0};
  return {};
}

double NoiseModel::cdf(double y) const {
  switch (family_) {
    case Family::gaussian: return 0.5 * std::erfc(-y / (scale_ * std::numbers::sqrt2));
    case Family::laplace:
      return y < 0.0 ? 0.5 * std::exp(y / scale_) : 1.0 - 0.5 * std::exp(-y / scale_);
    case Family::logistic: return 1.0 / (1.0 + std::exp(-y / scale_));
    case Family::cosine_bump:
      if (y <= -1.0) return 0.0;
      if (y >= 1.0) return 1.0;
      return 0.5 * (y + 1.0) + std::sin(kPi * y) / (2.0 * kPi);
    case Family::uniform:
      return std::clamp((y - lo_) / (hi_ - lo_), 0.0, 1.0);
    case Family::bivariate_gaussian: break;
  }
  throw std::invalid_argument("cdf is defined for one-dimensional noise only");
}

// ---------------------------------------------------------------------------
// Fisher matrix

FisherMatrix FisherMatrix::from_matrix(const Eigen::MatrixXd& info) {
  if (info.rows() != info.cols() || info.rows() < 1) throw std::invalid_argument("Fisher matrix must be square");
  FisherMatrix f;
  f.information = 0.5 * (info + info.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(f.information);
  const Eigen::VectorXd ev = eig.eigenvalues();
  f.min_eigenvalue = ev.minCoeff();
  if (!(f.min_eigenvalue > 1e-12 * std::max(ev.cwiseAbs().maxCoeff(), 1e-300)))
    throw NumericalError("Fisher information matrix is numerically singular");
  const Eigen::MatrixXd& v = eig.eigenvectors();
  f.sqrt = v * ev.cwiseSqrt().asDiagonal() * v.transpose();
  f.inverse = v * ev.cwiseInverse().asDiagonal() * v.transpose();
  return f;
}

namespace {

double integrate_model(const NoiseModel& noise, const std::function<double(const Point&)>& f) {
  const Interval w0 = noise.window(0);
  if (noise.dim() == 1) {
    return integrate([&](double y) { return f({y, 0.0}); }, w0.lo, w0.hi, noise.breakpoints(0));
  }
  const Interval w1 = noise.window(1);
  return integrate(
      [&](double y0) {
        return integrate([&](double y1) { return f({y0, y1}); }, w1.lo, w1.hi, noise.breakpoints(1), 1e-12,
                         1e-300);
      },
      w0.lo, w0.hi, noise.breakpoints(0), 1e-12, 1e-15);
}

}  // namespace

FisherMatrix fisher_matrix(const NoiseModel& noise) {
  const int p = noise.dim();
  Eigen::MatrixXd info(p, p);
  for (int a = 0; a < p; ++a) {
    for (int b = a; b < p; ++b) {
      info(a, b) = 4.0 * integrate_model(noise, [&](const Point& y) {
        const Point g = noise.sqrt_gradient(y);
        return g[a] * g[b];
      });
      info(b, a) = info(a, b);
    }
  }
  return FisherMatrix::from_matrix(info);
}

MonteCarloFisher fisher_matrix_monte_carlo(const NoiseModel& noise, std::uint64_t seed, int samples) {
  if (samples < 2) throw std::invalid_argument("Monte Carlo Fisher needs >= 2 samples");
  const int p = noise.dim();
  NoiseSampler sampler(noise);
  Rng rng(seed);
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(p, p), sum2 = Eigen::MatrixXd::Zero(p, p);
  for (int i = 0; i < samples; ++i) {
    const Point s = noise.score(sampler.draw(rng));
    for (int a = 0; a < p; ++a)
      for (int b = 0; b < p; ++b) {
        const double v = s[a] * s[b];
        sum(a, b) += v;
        sum2(a, b) += v * v;
      }
  }
  MonteCarloFisher out;
  out.mean = sum / samples;
  const Eigen::MatrixXd var = (sum2 / samples - out.mean.cwiseProduct(out.mean)) * samples / (samples - 1.0);
  out.standard_error = (var.cwiseMax(0.0) / samples).cwiseSqrt();
  return out;
}

// ---------------------------------------------------------------------------
// H^1 probe

nlohmann::json H1Report::to_json() const {
  return {{"h1_energy", h1_energy},
          {"zero_set_consistency", zero_set_consistency},
          {"boundary_mass", boundary_mass},
          {"normalization", normalization},
          {"mean", {mean[0], mean[1]}},
          {"accepted", accepted},
          {"reason", reason}};
}

H1Report sqrt_density_h1_check(const NoiseModel& noise) {
  H1Report r;
  const int p = noise.dim();
  r.normalization = integrate_model(noise, [&](const Point& y) { return noise.density(y); });
  for (int a = 0; a < p; ++a)
    r.mean[a] = integrate_model(noise, [&](const Point& y) { return y[a] * noise.density(y); });
  bool energy_ok = true;
  try {
    r.h1_energy = integrate_model(noise, [&](const Point& y) {
      const Point g = noise.sqrt_gradient(y);
      return g[0] * g[0] + g[1] * g[1];
    });
    energy_ok = std::isfinite(r.h1_energy) && r.h1_energy < 1e12;
  } catch (const NumericalError&) {
    energy_ok = false;
    r.h1_energy = kInf;
  }

  // probes along each axis through the origin; a jump of sqrt(q) shows up as
  // a gap between its increment and the integral of g over a short interval
  for (int axis = 0; axis < p; ++axis) {
    const Interval w = noise.window(axis);
    const double width = w.hi - w.lo;
    std::set<double> centers{w.lo, w.hi};
    for (double b : noise.breakpoints(axis)) centers.insert(b);
    const int partition = 64;
    const double ext_lo = w.lo - 0.25 * width, ext_hi = w.hi + 0.25 * width;
    for (int i = 0; i <= partition; ++i) centers.insert(ext_lo + (ext_hi - ext_lo) * i / partition);
    auto point = [&](double t) {
      Point y{0.0, 0.0};
      y[axis] = t;
      return y;
    };
    const double delta = 1e-3 * width;
    for (double c : centers) {
      const double a = c - delta, b = c + delta;
      const double inc = noise.sqrt_density(point(b)) - noise.sqrt_density(point(a));
      std::vector<double> brk{c};
      for (double bp : noise.breakpoints(axis)) brk.push_back(bp);
      double integral = 0.0;
      try {
        integral = integrate([&](double t) { return noise.sqrt_gradient(point(t))[axis]; }, a, b,
                             brk, 1e-12, 1e-15);
      } catch (const NumericalError&) {
        integral = kInf;
      }
      r.boundary_mass = std::max(r.boundary_mass, std::abs(inc - integral));
    }
    const int probes = 4001;
    for (int i = 0; i < probes; ++i) {
      const double t = ext_lo + (ext_hi - ext_lo) * i / (probes - 1);
      for (double y : {t, w.lo, w.hi}) {
        const Point pt = point(y);
        if (noise.density(pt) == 0.0) {
          const Point g = noise.sqrt_gradient(pt);
          r.zero_set_consistency = std::max(r.zero_set_consistency, std::hypot(g[0], g[1]));
        }
      }
    }
  }

  if (!energy_ok) {
    r.reason = "infinite H1 energy of sqrt(q)";
  } else if (r.boundary_mass > 1e-6) {
    r.reason = "sqrt(q) jumps: its distributional gradient carries point mass (not in H1)";
  } else if (r.zero_set_consistency != 0.0) {
    r.reason = "gradient version does not vanish on {q = 0}";
  } else if (std::abs(r.normalization - 1.0) > 1e-8) {
    r.reason = "density does not integrate to one";
  } else if (std::abs(r.mean[0]) > 1e-8 || std::abs(r.mean[1]) > 1e-8) {
    r.reason = "noise is not centred";
  }
  r.accepted = r.reason.empty();
  return r;
}

// ---------------------------------------------------------------------------
// Sampling

struct NoiseSampler::Table {
  boost::math::interpolators::pchip<std::vector<double>> quantile;
  double f_lo;
  double f_hi;
};

NoiseSampler::NoiseSampler(const NoiseModel& noise) : noise_(noise) {
  if (noise.dim() == 2) {
    chol_ = Eigen::LLT<Eigen::Matrix2d>(noise.covariance()).matrixL();
    return;
  }
  constexpr int kKnots = 1 << 14;
  const Interval w = noise.window(0);
  std::vector<double> f, y;
  f.reserve(kKnots);
  y.reserve(kKnots);
  for (int i = 0; i < kKnots; ++i) {
    const double yi = w.lo + (w.hi - w.lo) * i / (kKnots - 1);
    const double fi = noise.cdf(yi);
    if (!f.empty() && !(fi > f.back())) continue;
    f.push_back(fi);
    y.push_back(yi);
  }
  const double lo = f.front(), hi = f.back();
  table_ = std::make_unique<Table>(
      Table{boost::math::interpolators::pchip<std::vector<double>>(std::move(f), std::move(y)), lo, hi});
}

NoiseSampler::~NoiseSampler() = default;
NoiseSampler::NoiseSampler(NoiseSampler&&) noexcept = default;
NoiseSampler& NoiseSampler::operator=(NoiseSampler&&) noexcept = default;

Point NoiseSampler::draw(Rng& rng) const {
  if (noise_.dim() == 2) {
    const double z0 = rng.normal();
    const double z1 = rng.normal();
    const Eigen::Vector2d v = chol_ * Eigen::Vector2d(z0, z1);
    return {v[0], v[1]};
  }
  const double u = std::clamp(rng.uniform(), table_->f_lo, table_->f_hi);
  return {table_->quantile(u), 0.0};
}

std::vector<Point> sample_noise(const NoiseModel& noise, std::uint64_t seed, int n) {
  if (n < 1) throw std::invalid_argument("sample count must be >= 1");
  NoiseSampler sampler(noise);
  Rng rng(seed);
  std::vector<Point> out(static_cast<std::size_t>(n));
  for (auto& v : out) v = sampler.draw(rng);
  return out;
}

}  // namespace fisherpde::noise
