#include <algorithm>
#include <cmath>
#include <memory>

#include "fisherpde/forward.hpp"

namespace fisherpde::forward {

namespace {

using spectral::BoxTransform;
using spectral::Complex;
using State = std::vector<Complex>;

// Semi-discrete system u' = L u + N(u) on the scalar box of the solver grid,
// with L diagonal. The observed field is a fixed linear image of the state.
class Dynamics {
 public:
  explicit Dynamics(const TorusGrid& observed, double diffusivity)
      : observed_(observed),
        padded_(observed.dim, observed.max_wavenumber, observed.padded_points()),
        symbol_(observed.box_size()) {
    for (int i = 0; i < observed.box_size(); ++i) {
      const auto k = observed.wavevector(i);
      symbol_[i] = -diffusivity * 4.0 * kPi * kPi * (k[0] * k[0] + k[1] * k[1]);
    }
  }
  virtual ~Dynamics() = default;

  int size() const { return observed_.box_size(); }
  const std::vector<double>& symbol() const { return symbol_; }
  const TorusGrid& observed_grid() const { return observed_; }

  virtual bool linear() const { return false; }
  virtual void nonlinear(const State& u, State& out) const = 0;
  /// Base-dependent physical fields needed by tangent().
  virtual void prepare(const State& base, std::vector<double>& cache) const = 0;
  /// Frechet derivative of nonlinear() at the prepared base, applied to w.
  virtual void tangent(const std::vector<double>& cache, const State& w, State& out) const = 0;
  virtual void observe(const State& u, FourierCoeffs& out) const = 0;
  virtual State state_of(const FourierCoeffs& observed) const = 0;

 protected:
  int nodes() const { return padded_.node_count(); }

  TorusGrid observed_;
  BoxTransform padded_;
  std::vector<double> symbol_;
};

class ScalarDynamics : public Dynamics {
 public:
  using Dynamics::Dynamics;
  void observe(const State& u, FourierCoeffs& out) const override {
    std::copy(u.begin(), u.end(), out.component(0).begin());
  }
  State state_of(const FourierCoeffs& observed) const override {
    const auto c = observed.component(0);
    return State(c.begin(), c.end());
  }
};

class HeatDynamics final : public ScalarDynamics {
 public:
  explicit HeatDynamics(const TorusGrid& g) : ScalarDynamics(g, 1.0) {}
  bool linear() const override { return true; }
  void nonlinear(const State&, State& out) const override { std::fill(out.begin(), out.end(), Complex{}); }
  void prepare(const State&, std::vector<double>& cache) const override { cache.clear(); }
  void tangent(const std::vector<double>&, const State&, State& out) const override {
    std::fill(out.begin(), out.end(), Complex{});
  }
};

class ReactionDynamics final : public ScalarDynamics {
 public:
  ReactionDynamics(const TorusGrid& g, const ReactionTerm& f) : ScalarDynamics(g, 1.0), f_(f) {}

  void nonlinear(const State& u, State& out) const override {
    thread_local std::vector<double> phys;
    phys.resize(nodes());
    padded_.to_physical(u, phys);
    for (double& v : phys) v = f_.value(v);
    padded_.to_box(phys, out);
  }
  void prepare(const State& base, std::vector<double>& cache) const override {
    cache.resize(nodes());
    padded_.to_physical(base, cache);
    for (double& v : cache) v = f_.first(v);
  }
  void tangent(const std::vector<double>& cache, const State& w, State& out) const override {
    thread_local std::vector<double> phys;
    phys.resize(nodes());
    padded_.to_physical(w, phys);
    for (std::size_t i = 0; i < phys.size(); ++i) phys[i] *= cache[i];
    padded_.to_box(phys, out);
  }

 private:
  ReactionTerm f_;
};

// Vorticity form: w' = nu Lap w - u . grad w + curl f, u = grad^perp psi,
// -Lap psi = w.
class VorticityDynamics final : public Dynamics {
 public:
  VorticityDynamics(const TorusGrid& g, const NavierStokesModel& m)
      : Dynamics(g, m.viscosity), i0_(size()), i1_(size()), inv_lap_(size()), forcing_(size()) {
    for (int i = 0; i < size(); ++i) {
      const auto k = g.wavevector(i);
      i0_[i] = Complex(0.0, kTwoPi * k[0]);
      i1_[i] = Complex(0.0, kTwoPi * k[1]);
      const double lam = 4.0 * kPi * kPi * (k[0] * k[0] + k[1] * k[1]);
      inv_lap_[i] = lam > 0.0 ? 1.0 / lam : 0.0;
    }
    center_ = g.box_index({0, 0});
    if (m.forcing) forcing_ = curl(m.forcing->resized(g));
  }

  void nonlinear(const State& w, State& out) const override {
    thread_local std::vector<double> p;
    fields(w, p);
    const int n = nodes();
    thread_local std::vector<double> prod;
    prod.resize(n);
    for (int i = 0; i < n; ++i) prod[i] = p[i] * p[2 * n + i] + p[n + i] * p[3 * n + i];
    padded_.to_box(prod, out);
    for (int i = 0; i < size(); ++i) out[i] = forcing_[i] - out[i];
    out[center_] = 0.0;
  }
  void prepare(const State& base, std::vector<double>& cache) const override { fields(base, cache); }
  void tangent(const std::vector<double>& c, const State& w, State& out) const override {
    thread_local std::vector<double> p;
    fields(w, p);
    const int n = nodes();
    thread_local std::vector<double> prod;
    prod.resize(n);
    for (int i = 0; i < n; ++i) {
      prod[i] = c[i] * p[2 * n + i] + c[n + i] * p[3 * n + i] + p[i] * c[2 * n + i] + p[n + i] * c[3 * n + i];
    }
    padded_.to_box(prod, out);
    for (auto& v : out) v = -v;
    out[center_] = 0.0;
  }
  void observe(const State& w, FourierCoeffs& out) const override {
    auto u0 = out.component(0);
    auto u1 = out.component(1);
    for (int i = 0; i < size(); ++i) {
      const Complex psi = w[i] * inv_lap_[i];
      u0[i] = i1_[i] * psi;
      u1[i] = -i0_[i] * psi;
    }
  }
  State state_of(const FourierCoeffs& u) const override { return curl(u); }

 private:
  State curl(const FourierCoeffs& u) const {
    State w(size());
    const auto u0 = u.component(0);
    const auto u1 = u.component(1);
    for (int i = 0; i < size(); ++i) w[i] = i0_[i] * u1[i] - i1_[i] * u0[i];
    return w;
  }
  // Physical u_1, u_2, d_1 w, d_2 w on the padded grid, stacked.
  void fields(const State& w, std::vector<double>& out) const {
    const int n = nodes();
    out.resize(4 * static_cast<std::size_t>(n));
    thread_local State box;
    box.resize(size());
    auto span_of = [&](int slot) { return std::span<double>(out.data() + slot * n, n); };
    for (int i = 0; i < size(); ++i) box[i] = i1_[i] * w[i] * inv_lap_[i];
    padded_.to_physical(box, span_of(0));
    for (int i = 0; i < size(); ++i) box[i] = -i0_[i] * w[i] * inv_lap_[i];
    padded_.to_physical(box, span_of(1));
    for (int i = 0; i < size(); ++i) box[i] = i0_[i] * w[i];
    padded_.to_physical(box, span_of(2));
    for (int i = 0; i < size(); ++i) box[i] = i1_[i] * w[i];
    padded_.to_physical(box, span_of(3));
  }

  std::vector<Complex> i0_, i1_;
  std::vector<double> inv_lap_;
  State forcing_;
  int center_ = 0;
};

std::unique_ptr<Dynamics> make_dynamics(const ForwardModel& model, const TorusGrid& grid) {
  if (const auto* rd = std::get_if<ReactionDiffusionModel>(&model))
    return std::make_unique<ReactionDynamics>(grid, rd->reaction);
  if (const auto* ns = std::get_if<NavierStokesModel>(&model)) return std::make_unique<VorticityDynamics>(grid, *ns);
  return std::make_unique<HeatDynamics>(grid);
}

// phi_1, phi_2, phi_3 of z.
std::array<double, 3> phi(double z) {
  if (std::abs(z) < 1.0) {
    std::array<double, 3> out{};
    for (int k = 1; k <= 3; ++k) {
      double term = 1.0;
      for (int j = 2; j <= k; ++j) term /= j;
      double sum = 0.0;
      for (int n = 0; n < 30; ++n) {
        sum += term;
        term *= z / (n + k + 1);
      }
      out[k - 1] = sum;
    }
    return out;
  }
  const double em1 = std::expm1(z);
  return {em1 / z, (em1 - z) / (z * z), (em1 - z - 0.5 * z * z) / (z * z * z)};
}

struct EtdCoefficients {
  double step = -1.0;
  std::vector<double> e, e2, q, f1, f2, f3;

  void update(double h, const std::vector<double>& symbol) {
    if (h == step) return;
    step = h;
    const std::size_t n = symbol.size();
    e.resize(n), e2.resize(n), q.resize(n), f1.resize(n), f2.resize(n), f3.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double z = symbol[i] * h;
      const auto p = phi(z);
      const auto ph = phi(0.5 * z);
      e[i] = std::exp(z);
      e2[i] = std::exp(0.5 * z);
      q[i] = 0.5 * h * ph[0];
      f1[i] = h * (p[0] - 3.0 * p[1] + 4.0 * p[2]);
      f2[i] = h * (p[1] - 2.0 * p[2]);
      f3[i] = h * (4.0 * p[2] - p[1]);
    }
  }
};

// Stage values of one exponential RK4 step shared by the base flow and its
// tangents; `apply` evaluates the (possibly linearized) nonlinearity at a
// given stage.
template <class Apply>
void etd_step(const EtdCoefficients& c, const State& u, const State& nu, State& out, Apply&& apply) {
  const std::size_t n = u.size();
  thread_local State a, b, cc, na, nb, nc;
  a.resize(n), b.resize(n), cc.resize(n), na.resize(n), nb.resize(n), nc.resize(n);
  for (std::size_t i = 0; i < n; ++i) a[i] = c.e2[i] * u[i] + c.q[i] * nu[i];
  apply(0, a, na);
  for (std::size_t i = 0; i < n; ++i) b[i] = c.e2[i] * u[i] + c.q[i] * na[i];
  apply(1, b, nb);
  for (std::size_t i = 0; i < n; ++i) cc[i] = c.e2[i] * a[i] + c.q[i] * (2.0 * nb[i] - nu[i]);
  apply(2, cc, nc);
  out.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = c.e[i] * u[i] + c.f1[i] * nu[i] + 2.0 * c.f2[i] * (na[i] + nb[i]) + c.f3[i] * nc[i];
}

bool finite(const State& s) {
  return std::all_of(s.begin(), s.end(), [](const Complex& v) { return std::isfinite(v.real()) && std::isfinite(v.imag()); });
}

void add_linear(const std::vector<double>& symbol, const State& u, State& inout) {
  for (std::size_t i = 0; i < u.size(); ++i) inout[i] += symbol[i] * u[i];
}

}  // namespace

void propagate(const ForwardModel& model, const FourierCoeffs& theta0, std::span<const FourierCoeffs> directions,
               const TimeGrid& times, const std::function<void(const NodeView&)>& on_node, Execution exec) {
  int input_k = theta0.grid().max_wavenumber;
  for (const auto& d : directions) {
    if (d.grid().dim != theta0.grid().dim || d.grid().components != theta0.grid().components)
      throw std::invalid_argument("propagate: direction incompatible with the base state");
    input_k = std::max(input_k, d.grid().max_wavenumber);
  }
  if (theta0.grid().dim != dim(model) || theta0.grid().components != components(model))
    throw std::invalid_argument("propagate: initial state does not match the model dimension");
  if (std::abs(times.horizon() - horizon(model)) > 1e-12 * horizon(model))
    throw std::invalid_argument("propagate: time grid does not end at the model horizon");

  const TorusGrid grid = solver_grid(model, input_k);
  const auto dyn = make_dynamics(model, grid);
  const int ndir = static_cast<int>(directions.size());
  const std::vector<double>& sym = dyn->symbol();
  const bool par = exec == Execution::parallel;

  State u = dyn->state_of(theta0.resized(grid));
  std::vector<State> w(ndir);
  for (int j = 0; j < ndir; ++j) w[j] = dyn->state_of(directions[j].resized(grid));

  FourierCoeffs base(grid), base_rate(grid);
  std::vector<FourierCoeffs> tan(ndir, FourierCoeffs(grid)), tan_rate(ndir, FourierCoeffs(grid));

  if (dyn->linear()) {
    const State u0 = u;
    const std::vector<State> w0 = w;
    std::vector<double> decay(sym.size());
    State rate(sym.size());
    for (int n = 0; n < times.size(); ++n) {
      const double t = times[n];
      for (std::size_t i = 0; i < sym.size(); ++i) decay[i] = std::exp(sym[i] * t);
      for (std::size_t i = 0; i < sym.size(); ++i) {
        u[i] = decay[i] * u0[i];
        rate[i] = sym[i] * u[i];
      }
      dyn->observe(u, base);
      dyn->observe(rate, base_rate);
#pragma omp parallel for schedule(static) if (par)
      for (int j = 0; j < ndir; ++j) {
        thread_local State s, r;
        s.resize(sym.size()), r.resize(sym.size());
        for (std::size_t i = 0; i < sym.size(); ++i) {
          s[i] = decay[i] * w0[j][i];
          r[i] = sym[i] * s[i];
        }
        dyn->observe(s, tan[j]);
        dyn->observe(r, tan_rate[j]);
      }
      on_node({n, t, base, base_rate, tan, tan_rate});
    }
    return;
  }

  EtdCoefficients coeff;
  State nu(u.size()), rate(u.size());
  std::vector<State> dnu(ndir, State(u.size()));
  std::array<std::vector<double>, 3> stage_cache;
  std::vector<double> cache_u;

  // Nonlinear terms and observed rates at the current node.
  auto refresh = [&]() {
    dyn->nonlinear(u, nu);
    dyn->prepare(u, cache_u);
    rate = nu;
    add_linear(sym, u, rate);
    dyn->observe(u, base);
    dyn->observe(rate, base_rate);
    bool ok = true;
#pragma omp parallel for schedule(static) if (par) reduction(&& : ok)
    for (int j = 0; j < ndir; ++j) {
      dyn->tangent(cache_u, w[j], dnu[j]);
      thread_local State r;
      r = dnu[j];
      add_linear(sym, w[j], r);
      dyn->observe(w[j], tan[j]);
      dyn->observe(r, tan_rate[j]);
      ok = ok && finite(w[j]);
    }
    if (!ok || !finite(u)) throw NumericalError("forward solve produced non-finite values (blow-up)");
  };

  refresh();
  on_node({0, times[0], base, base_rate, tan, tan_rate});
  State next;
  for (int n = 0; n + 1 < times.size(); ++n) {
    coeff.update(times[n + 1] - times[n], sym);
    etd_step(coeff, u, nu, next, [&](int stage, const State& s, State& out) {
      dyn->nonlinear(s, out);
      if (ndir > 0) dyn->prepare(s, stage_cache[stage]);
    });
#pragma omp parallel for schedule(static) if (par)
    for (int j = 0; j < ndir; ++j) {
      thread_local State wn;
      etd_step(coeff, w[j], dnu[j], wn, [&](int stage, const State& s, State& out) {
        dyn->tangent(stage_cache[stage], s, out);
      });
      w[j].swap(wn);
    }
    u.swap(next);
    refresh();
    on_node({n + 1, times[n + 1], base, base_rate, tan, tan_rate});
  }
}

SpaceTimeField solve_heat_exact(const FourierCoeffs& theta, const TimeGrid& times) {
  const TorusGrid& g = theta.grid();
  std::vector<FourierCoeffs> snaps, rates;
  snaps.reserve(times.size());
  rates.reserve(times.size());
  for (int n = 0; n < times.size(); ++n) {
    FourierCoeffs u(g), r(g);
    for (int c = 0; c < g.components; ++c) {
      const auto src = theta.component(c);
      auto dst = u.component(c);
      auto drt = r.component(c);
      for (int i = 0; i < g.box_size(); ++i) {
        const auto k = g.wavevector(i);
        const double lam = 4.0 * kPi * kPi * (k[0] * k[0] + k[1] * k[1]);
        dst[i] = std::exp(-lam * times[n]) * src[i];
        drt[i] = -lam * dst[i];
      }
    }
    snaps.push_back(std::move(u));
    rates.push_back(std::move(r));
  }
  SpaceTimeField out(times, std::move(snaps), std::move(rates));
  out.set_linear_symbol(linear_symbol(HeatModel{g.dim, times.horizon(), {}}, g));
  return out;
}

SpaceTimeField solve(const ForwardModel& model, const FourierCoeffs& theta, const TimeGrid& times) {
  std::vector<FourierCoeffs> snaps, rates;
  snaps.reserve(times.size());
  rates.reserve(times.size());
  propagate(model, theta, {}, times, [&](const NodeView& v) {
    snaps.push_back(v.base);
    rates.push_back(v.base_rate);
  });
  SpaceTimeField out(times, std::move(snaps), std::move(rates));
  out.set_linear_symbol(linear_symbol(model, out.grid()));
  return out;
}

SpaceTimeField linearize(const ForwardModel& model, const FourierCoeffs& theta0, const FourierCoeffs& direction,
                         const TimeGrid& times) {
  std::vector<FourierCoeffs> snaps, rates;
  snaps.reserve(times.size());
  rates.reserve(times.size());
  propagate(model, theta0, std::span(&direction, 1), times, [&](const NodeView& v) {
    snaps.push_back(v.tangents[0]);
    rates.push_back(v.tangent_rates[0]);
  });
  SpaceTimeField out(times, std::move(snaps), std::move(rates));
  out.set_linear_symbol(linear_symbol(model, out.grid()));
  return out;
}

SpaceTimeField solve(const ForwardModel& model, const FourierCoeffs& theta) {
  const TorusGrid grid = solver_grid(model, theta.grid().max_wavenumber);
  return solve(model, theta, time_grid(model, grid));
}

SpaceTimeField linearize(const ForwardModel& model, const FourierCoeffs& theta0, const FourierCoeffs& direction) {
  const TorusGrid grid =
      solver_grid(model, std::max(theta0.grid().max_wavenumber, direction.grid().max_wavenumber));
  return linearize(model, theta0, direction, time_grid(model, grid));
}

namespace {

void require_solenoidal(const FourierCoeffs& u, const char* what) {
  if (u.grid().dim != 2 || u.grid().components != 2)
    throw std::invalid_argument(std::string(what) + " must be a 2D velocity field");
  const double scale = std::max(1.0, u.max_abs());
  if (coefficient_divergence(u) > 1e-10 * scale || std::abs(u.at(0, {0, 0})) > 1e-12 * scale ||
      std::abs(u.at(1, {0, 0})) > 1e-12 * scale)
    throw std::invalid_argument(std::string(what) + " must be mean-zero and divergence-free");
}

}  // namespace

SpaceTimeField solve_rd(const ReactionDiffusionModel& model, const FourierCoeffs& theta) {
  return solve(ForwardModel(model), theta);
}

SpaceTimeField linearize_rd(const ReactionDiffusionModel& model, const FourierCoeffs& theta0,
                            const FourierCoeffs& h) {
  return linearize(ForwardModel(model), theta0, h);
}

SpaceTimeField solve_ns(const NavierStokesModel& model, const FourierCoeffs& theta) {
  require_solenoidal(theta, "initial velocity");
  return solve(ForwardModel(model), theta);
}

SpaceTimeField linearize_ns(const NavierStokesModel& model, const FourierCoeffs& theta0, const FourierCoeffs& h) {
  require_solenoidal(theta0, "base velocity");
  require_solenoidal(h, "perturbation");
  return linearize(ForwardModel(model), theta0, h);
}

}  // namespace fisherpde::forward
