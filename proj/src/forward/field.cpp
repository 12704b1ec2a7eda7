#include <algorithm>
#include <bit>
#include <limits>
#include <cmath>
#include <fstream>

#include "fisherpde/forward.hpp"

namespace fisherpde::forward {

SpaceTimeField::SpaceTimeField(TimeGrid times, std::vector<FourierCoeffs> snapshots,
                               std::vector<FourierCoeffs> rates)
    : times_(std::move(times)), snapshots_(std::move(snapshots)), rates_(std::move(rates)) {
  if (snapshots_.empty() || static_cast<int>(snapshots_.size()) != times_.size())
    throw std::invalid_argument("SpaceTimeField: one snapshot per time node required");
  if (!rates_.empty() && rates_.size() != snapshots_.size())
    throw std::invalid_argument("SpaceTimeField: rates must match the snapshots");
  for (const auto& s : snapshots_)
    if (!(s.grid() == grid())) throw std::invalid_argument("SpaceTimeField: snapshots on different grids");
  for (const auto& r : rates_)
    if (!(r.grid() == grid())) throw std::invalid_argument("SpaceTimeField: rates on a different grid");
}

void SpaceTimeField::set_linear_symbol(std::vector<double> symbol) {
  if (!symbol.empty() && static_cast<int>(symbol.size()) != grid().box_size())
    throw std::invalid_argument("SpaceTimeField: linear symbol must have one entry per box index");
  symbol_ = std::move(symbol);
}

namespace {

// phi_1(z), phi_2(z) for z <= 0
std::pair<double, double> phi12(double z) {
  if (std::abs(z) < 1e-2) {
    return {1.0 + z / 2.0 + z * z / 6.0 + z * z * z / 24.0 + z * z * z * z / 120.0,
            0.5 + z / 6.0 + z * z / 24.0 + z * z * z / 120.0 + z * z * z * z / 720.0};
  }
  const double em1 = std::expm1(z);
  return {em1 / z, (em1 - z) / (z * z)};
}

}  // namespace

FourierCoeffs SpaceTimeField::at_time(double t) const {
  const int i = times_.locate(t);
  FourierCoeffs out(grid());
  auto dst = out.data();
  if (!rates_.empty() && !symbol_.empty()) {
    const double h = times_[i + 1] - times_[i];
    const double s = t - times_[i];
    const auto u0 = snapshots_[i].data(), u1 = snapshots_[i + 1].data();
    const auto r0 = rates_[i].data(), r1 = rates_[i + 1].data();
    const std::size_t box = symbol_.size();
    for (std::size_t k = 0; k < dst.size(); ++k) {
      const double L = symbol_[k % box];
      const auto [p1, p2] = phi12(L * s);
      const spectral::Complex n0 = r0[k] - L * u0[k];
      const spectral::Complex n1 = r1[k] - L * u1[k];
      dst[k] = std::exp(L * s) * u0[k] + s * p1 * n0 + s * s / h * p2 * (n1 - n0);
    }
    return out;
  }
  if (!rates_.empty()) {
    const double h = times_[i + 1] - times_[i];
    const double s = (t - times_[i]) / h;
    const double s2 = s * s, s3 = s2 * s;
    const double h00 = 2 * s3 - 3 * s2 + 1, h10 = (s3 - 2 * s2 + s) * h;
    const double h01 = -2 * s3 + 3 * s2, h11 = (s3 - s2) * h;
    const auto u0 = snapshots_[i].data(), u1 = snapshots_[i + 1].data();
    const auto r0 = rates_[i].data(), r1 = rates_[i + 1].data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = h00 * u0[k] + h10 * r0[k] + h01 * u1[k] + h11 * r1[k];
    return out;
  }
  const int n = times_.size();
  if (n < 4) {
    const double s = (t - times_[i]) / (times_[i + 1] - times_[i]);
    const auto u0 = snapshots_[i].data(), u1 = snapshots_[i + 1].data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = (1 - s) * u0[k] + s * u1[k];
    return out;
  }
  const int first = std::clamp(i - 1, 0, n - 4);
  for (int a = first; a < first + 4; ++a) {
    double l = 1.0;
    for (int b = first; b < first + 4; ++b)
      if (b != a) l *= (t - times_[b]) / (times_[a] - times_[b]);
    const auto src = snapshots_[a].data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += l * src[k];
  }
  return out;
}

Point SpaceTimeField::evaluate(double t, const Point& x) const {
  const int node = times_.node_index(t);
  if (node >= 0) return spectral::evaluate(snapshots_[node], x);
  return spectral::evaluate(at_time(t), x);
}

namespace {

void require_little_endian() {
  if constexpr (std::endian::native != std::endian::little)
    throw std::runtime_error("SpaceTimeField IO supports little-endian hosts only");
}

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
  return std::filesystem::path(stem.string() + suffix);
}

}  // namespace

void SpaceTimeField::write(const std::filesystem::path& stem, const nlohmann::json& model) const {
  require_little_endian();
  const TorusGrid& g = grid();
  nlohmann::json header{{"format", "fisherpde-spacetime-v1"},
                        {"model", model},
                        {"T", times_.horizon()},
                        {"M", times_.size() - 1},
                        {"times", times_.nodes()},
                        {"grid", {{"d", g.dim}, {"K", g.max_wavenumber}, {"points", g.points}, {"components", g.components}}},
                        {"has_rates", !rates_.empty()},
                        {"linear_symbol", symbol_},
                        {"payload", with_suffix(stem, ".bin").filename().string()}};
  std::ofstream js(with_suffix(stem, ".json"));
  js << header.dump(2) << '\n';
  std::ofstream bin(with_suffix(stem, ".bin"), std::ios::binary);
  auto dump = [&](const std::vector<FourierCoeffs>& v) {
    for (const auto& s : v)
      bin.write(reinterpret_cast<const char*>(s.data().data()),
                static_cast<std::streamsize>(s.data().size() * sizeof(spectral::Complex)));
  };
  dump(snapshots_);
  dump(rates_);
  if (!js || !bin) throw std::runtime_error("failed to write " + stem.string());
}

SpaceTimeField SpaceTimeField::read(const std::filesystem::path& stem) {
  require_little_endian();
  std::ifstream js(with_suffix(stem, ".json"));
  if (!js) throw std::runtime_error("cannot open " + with_suffix(stem, ".json").string());
  const nlohmann::json header = nlohmann::json::parse(js);
  const auto& gj = header.at("grid");
  const TorusGrid g = TorusGrid::make(gj.at("d"), gj.at("K"), gj.at("components"), gj.at("points"));
  const auto nodes = header.at("times").get<std::vector<double>>();
  std::ifstream bin(stem.parent_path() / header.at("payload").get<std::string>(), std::ios::binary);
  if (!bin) throw std::runtime_error("cannot open payload of " + stem.string());
  auto load = [&](std::size_t count) {
    std::vector<FourierCoeffs> v(count, FourierCoeffs(g));
    for (auto& s : v)
      bin.read(reinterpret_cast<char*>(s.data().data()),
               static_cast<std::streamsize>(s.data().size() * sizeof(spectral::Complex)));
    return v;
  };
  auto snaps = load(nodes.size());
  auto rates = header.at("has_rates").get<bool>() ? load(nodes.size()) : std::vector<FourierCoeffs>{};
  if (!bin) throw std::runtime_error("truncated payload for " + stem.string());
  SpaceTimeField f(TimeGrid::from_nodes(nodes), std::move(snaps), std::move(rates));
  if (header.contains("linear_symbol")) f.set_linear_symbol(header.at("linear_symbol").get<std::vector<double>>());
  return f;
}

// ---------------------------------------------------------------------------

double coefficient_divergence(const FourierCoeffs& u) {
  const TorusGrid& g = u.grid();
  if (g.components != 2 || g.dim != 2) throw std::invalid_argument("divergence needs a 2D velocity field");
  double worst = 0.0;
  const auto u0 = u.component(0), u1 = u.component(1);
  for (int i = 0; i < g.box_size(); ++i) {
    const auto k = g.wavevector(i);
    worst = std::max(worst, std::abs(static_cast<double>(k[0]) * u0[i] + static_cast<double>(k[1]) * u1[i]));
  }
  return worst;
}

FourierCoeffs vorticity(const FourierCoeffs& velocity) {
  const TorusGrid& g = velocity.grid();
  if (g.components != 2 || g.dim != 2) throw std::invalid_argument("vorticity needs a 2D velocity field");
  FourierCoeffs w(TorusGrid::make(2, g.max_wavenumber, 1, g.points));
  const auto u0 = velocity.component(0), u1 = velocity.component(1);
  auto dst = w.component(0);
  for (int i = 0; i < g.box_size(); ++i) {
    const auto k = g.wavevector(i);
    dst[i] = spectral::Complex(0.0, kTwoPi) * (static_cast<double>(k[0]) * u1[i] - static_cast<double>(k[1]) * u0[i]);
  }
  return w;
}

double l2_norm(const SpaceTimeField& u, double a, double b) {
  const auto w = u.times().simpson_weights(a, b);
  double sum = 0.0;
  for (int n = 0; n < u.times().size(); ++n)
    if (w[n] != 0.0) sum += w[n] * spectral::pairing(u.at_node(n), u.at_node(n));
  return std::sqrt(std::max(0.0, sum));
}

double l2_norm(const SpaceTimeField& u) { return l2_norm(u, 0.0, u.times().horizon()); }

SpaceTimeField difference(const SpaceTimeField& a, const SpaceTimeField& b, double scale_b) {
  if (a.times().nodes() != b.times().nodes()) throw std::invalid_argument("difference: time grids differ");
  if (!(a.grid() == b.grid())) throw std::invalid_argument("difference: spatial grids differ");
  std::vector<FourierCoeffs> snaps, rates;
  snaps.reserve(a.times().size());
  for (int n = 0; n < a.times().size(); ++n) {
    FourierCoeffs s = b.at_node(n);
    s *= -scale_b;
    s += a.at_node(n);
    snaps.push_back(std::move(s));
  }
  if (!a.rates().empty() && !b.rates().empty()) {
    for (int n = 0; n < a.times().size(); ++n) {
      FourierCoeffs r = b.rates()[n];
      r *= -scale_b;
      r += a.rates()[n];
      rates.push_back(std::move(r));
    }
  }
  SpaceTimeField out(a.times(), std::move(snaps), std::move(rates));
  if (!out.rates().empty() && a.linear_symbol() == b.linear_symbol()) out.set_linear_symbol(a.linear_symbol());
  return out;
}

// ---------------------------------------------------------------------------

nlohmann::json QmdReport::to_json() const {
  return {{"s", s}, {"remainders", remainders}, {"ratios", ratios},
          {"slope", std::isfinite(slope) ? nlohmann::json(slope) : nlohmann::json(nullptr)},
          {"max_remainder", max_remainder}};
}

QmdReport qmd_remainder_slope(const ForwardModel& model, const FourierCoeffs& theta0, const FourierCoeffs& h,
                              const std::vector<double>& s_grid) {
  if (s_grid.size() < 4) throw std::invalid_argument("qmd: s grid needs at least 4 points");
  for (double s : s_grid)
    if (!(s > 0.0)) throw std::invalid_argument("qmd: s values must be positive");
  const int k = std::max(theta0.grid().max_wavenumber, h.grid().max_wavenumber);
  const TorusGrid in = TorusGrid::make(theta0.grid().dim, k, theta0.grid().components);
  const FourierCoeffs t0 = theta0.resized(in), hh = h.resized(in);
  const TorusGrid grid = solver_grid(model, k);
  const TimeGrid times = time_grid(model, grid);
  const SpaceTimeField base = solve(model, t0, times);
  const SpaceTimeField lin = linearize(model, t0, hh, times);

  QmdReport r;
  r.s = s_grid;
  for (double s : s_grid) {
    FourierCoeffs shifted = hh;
    shifted *= s;
    shifted += t0;
    const SpaceTimeField moved = solve(model, shifted, times);
    const double rho = l2_norm(difference(difference(moved, base), lin, s));
    r.remainders.push_back(rho);
    r.ratios.push_back(rho / s);
    r.max_remainder = std::max(r.max_remainder, rho);
  }
  const bool degenerate = std::any_of(r.remainders.begin(), r.remainders.end(), [](double v) { return !(v > 0.0); }) ||
                          r.max_remainder < 1e-14;
  if (degenerate) {
    r.slope = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(s_grid.size());
  for (std::size_t i = 0; i < s_grid.size(); ++i) {
    const double x = std::log(s_grid[i]), y = std::log(r.remainders[i]);
    sx += x, sy += y, sxx += x * x, sxy += x * y;
  }
  r.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  return r;
}

}  // namespace fisherpde::forward
