#include <algorithm>
#include <cmath>

#include "fisherpde/forward.hpp"

namespace fisherpde::forward {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> allowed, const char* block) {
  if (!j.is_object()) throw std::invalid_argument(std::string(block) + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      throw std::invalid_argument("unknown key '" + key + "' in " + block);
  }
}

template <class T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if constexpr (std::is_same_v<T, int>) {
    if (!v.is_number_integer()) throw std::invalid_argument(std::string("'") + key + "' must be an integer");
  } else {
    if (!v.is_number()) throw std::invalid_argument(std::string("'") + key + "' must be a number");
  }
  return v.get<T>();
}

}  // namespace

// ---------------------------------------------------------------------------
// Reaction term

namespace {

struct Bump {
  double chi, d1, d2;  // chi(u), chi'(u), chi''(u)
};

Bump bump(double u, double radius) {
  const double r = u / radius;
  if (std::abs(r) >= 1.0) return {0.0, 0.0, 0.0};
  const double q = 1.0 - r * r;
  const double chi = std::exp(-r * r / q);
  const double g1 = 2.0 * r / (q * q);                 // d/dr of r^2 / (1 - r^2)
  const double g2 = (2.0 + 6.0 * r * r) / (q * q * q);  // second derivative
  return {chi, -g1 * chi / radius, (g1 * g1 - g2) * chi / (radius * radius)};
}

}  // namespace

double ReactionTerm::value(double u) const {
  const Bump b = bump(u, radius);
  return amplitude * u * (1.0 - u * u) * b.chi;
}

double ReactionTerm::first(double u) const {
  const Bump b = bump(u, radius);
  const double p = u - u * u * u, p1 = 1.0 - 3.0 * u * u;
  return amplitude * (p1 * b.chi + p * b.d1);
}

double ReactionTerm::second(double u) const {
  const Bump b = bump(u, radius);
  const double p = u - u * u * u, p1 = 1.0 - 3.0 * u * u, p2 = -6.0 * u;
  return amplitude * (p2 * b.chi + 2.0 * p1 * b.d1 + p * b.d2);
}

// ---------------------------------------------------------------------------
// Model accessors

std::string kind_name(const ForwardModel& m) {
  return std::visit(overloaded{[](const HeatModel&) { return std::string("heat"); },
                               [](const ReactionDiffusionModel&) { return std::string("rd"); },
                               [](const NavierStokesModel&) { return std::string("ns"); }},
                    m);
}

int dim(const ForwardModel& m) {
  return std::visit(overloaded{[](const HeatModel& h) { return h.dim; },
                               [](const ReactionDiffusionModel& r) { return r.dim; },
                               [](const NavierStokesModel&) { return 2; }},
                    m);
}

int components(const ForwardModel& m) { return std::holds_alternative<NavierStokesModel>(m) ? 2 : 1; }

double horizon(const ForwardModel& m) {
  return std::visit([](const auto& x) { return x.horizon; }, m);
}

const SolverControls& controls(const ForwardModel& m) {
  return std::visit([](const auto& x) -> const SolverControls& { return x.controls; }, m);
}

spectral::Subspace parameter_subspace(const ForwardModel& m) {
  return std::holds_alternative<NavierStokesModel>(m) ? spectral::Subspace::divergence_free
                                                      : spectral::Subspace::full;
}

nlohmann::json SolverControls::to_json() const {
  return {{"max_step", max_step}, {"min_step", min_step}, {"growth", growth}, {"max_wavenumber", max_wavenumber}};
}

SolverControls SolverControls::from_json(const nlohmann::json& j) {
  reject_unknown(j, {"max_step", "min_step", "growth", "max_wavenumber"}, "solver controls");
  SolverControls c;
  c.max_step = get_or(j, "max_step", c.max_step);
  c.min_step = get_or(j, "min_step", c.min_step);
  c.growth = get_or(j, "growth", c.growth);
  c.max_wavenumber = get_or(j, "max_wavenumber", c.max_wavenumber);
  if (!(c.max_step > 0.0) || c.min_step < 0.0 || !(c.growth >= 1.0) || c.max_wavenumber < 0)
    throw std::invalid_argument("invalid solver controls");
  return c;
}

nlohmann::json to_json(const ForwardModel& m) {
  return std::visit(
      overloaded{
          [](const HeatModel& h) {
            return nlohmann::json{{"kind", "heat"}, {"dim", h.dim}, {"horizon", h.horizon},
                                  {"controls", h.controls.to_json()}};
          },
          [](const ReactionDiffusionModel& r) {
            return nlohmann::json{{"kind", "rd"},
                                  {"dim", r.dim},
                                  {"horizon", r.horizon},
                                  {"reaction", {{"amplitude", r.reaction.amplitude}, {"radius", r.reaction.radius}}},
                                  {"controls", r.controls.to_json()}};
          },
          [](const NavierStokesModel& n) {
            nlohmann::json j{{"kind", "ns"},
                             {"viscosity", n.viscosity},
                             {"horizon", n.horizon},
                             {"controls", n.controls.to_json()}};
            if (n.forcing) {
              const spectral::EigenSystem es(2, n.forcing->grid().max_wavenumber, spectral::Subspace::divergence_free);
              j["forcing"] = spectral::to_json(*n.forcing, es);
            }
            return j;
          }},
      m);
}

ForwardModel model_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("kind") || !j.at("kind").is_string())
    throw std::invalid_argument("model block needs a string 'kind'");
  const std::string kind = j.at("kind").get<std::string>();
  const SolverControls ctl = j.contains("controls") ? SolverControls::from_json(j.at("controls")) : SolverControls{};
  if (kind == "heat") {
    reject_unknown(j, {"kind", "dim", "horizon", "controls"}, "model block");
    HeatModel h{get_or(j, "dim", 1), get_or(j, "horizon", 1.0), ctl};
    if (h.dim != 1 && h.dim != 2) throw std::invalid_argument("heat model dimension must be 1 or 2");
    if (!(h.horizon > 0.0)) throw std::invalid_argument("horizon must be positive");
    return h;
  }
  if (kind == "rd") {
    reject_unknown(j, {"kind", "dim", "horizon", "reaction", "controls"}, "model block");
    ReactionDiffusionModel r;
    r.dim = get_or(j, "dim", 1);
    r.horizon = get_or(j, "horizon", 1.0);
    r.controls = ctl;
    if (j.contains("reaction")) {
      reject_unknown(j.at("reaction"), {"amplitude", "radius"}, "reaction block");
      r.reaction.amplitude = get_or(j.at("reaction"), "amplitude", r.reaction.amplitude);
      r.reaction.radius = get_or(j.at("reaction"), "radius", r.reaction.radius);
    }
    if (r.dim != 1 && r.dim != 2)
      throw std::invalid_argument("reaction-diffusion dimension must be 1 or 2 (d = 3 is not implemented)");
    if (!(r.horizon > 0.0) || !(r.reaction.radius > 0.0)) throw std::invalid_argument("invalid rd parameters");
    return r;
  }
  if (kind == "ns") {
    reject_unknown(j, {"kind", "viscosity", "horizon", "forcing", "controls"}, "model block");
    NavierStokesModel n;
    n.viscosity = get_or(j, "viscosity", n.viscosity);
    n.horizon = get_or(j, "horizon", 1.0);
    n.controls = ctl;
    if (!(n.viscosity > 0.0) || !(n.horizon > 0.0)) throw std::invalid_argument("invalid ns parameters");
    if (j.contains("forcing")) {
      n.forcing = spectral::coeffs_from_json(j.at("forcing"));
      if (n.forcing->grid().components != 2 || n.forcing->grid().dim != 2)
        throw std::invalid_argument("ns forcing must be a 2D velocity field");
      if (coefficient_divergence(*n.forcing) > 1e-12 || std::abs(n.forcing->at(0, {0, 0})) > 1e-14 ||
          std::abs(n.forcing->at(1, {0, 0})) > 1e-14)
        throw std::invalid_argument("ns forcing must be mean-zero and divergence-free");
    }
    return n;
  }
  throw std::invalid_argument("unknown model kind '" + kind + "'");
}

// ---------------------------------------------------------------------------
// Grids

TorusGrid solver_grid(const ForwardModel& m, int input_wavenumber) {
  const int d = dim(m);
  int k = controls(m).max_wavenumber;
  if (k == 0) k = d == 1 ? 16 : 8;
  k = std::max(k, input_wavenumber);
  if (const auto* ns = std::get_if<NavierStokesModel>(&m); ns && ns->forcing)
    k = std::max(k, ns->forcing->grid().max_wavenumber);
  return TorusGrid::make(d, k, components(m));
}

double stiffness(const ForwardModel& m, const TorusGrid& grid) {
  const double kmax2 = static_cast<double>(grid.dim) * grid.max_wavenumber * grid.max_wavenumber;
  const double lam = 4.0 * kPi * kPi * kmax2;
  if (const auto* ns = std::get_if<NavierStokesModel>(&m)) return ns->viscosity * lam;
  return lam;
}

std::vector<double> linear_symbol(const ForwardModel& m, const TorusGrid& grid) {
  const auto* ns = std::get_if<NavierStokesModel>(&m);
  const double nu = ns ? ns->viscosity : 1.0;
  std::vector<double> out(grid.box_size());
  for (int i = 0; i < grid.box_size(); ++i) {
    const auto k = grid.wavevector(i);
    out[i] = -nu * 4.0 * kPi * kPi * (k[0] * k[0] + k[1] * k[1]);
  }
  return out;
}

TimeGrid time_grid(const ForwardModel& m, const TorusGrid& grid, std::vector<double> breakpoints) {
  const SolverControls& c = controls(m);
  const double min_step = c.min_step > 0.0 ? c.min_step : 0.01 / stiffness(m, grid);
  return TimeGrid::graded(horizon(m), c.max_step, min_step, c.growth, std::move(breakpoints));
}

// ---------------------------------------------------------------------------
// Defaults

FourierCoeffs default_base_state(const ForwardModel& m) {
  const int d = dim(m);
  if (std::holds_alternative<NavierStokesModel>(m)) {
    const spectral::EigenSystem es(2, 2, spectral::Subspace::divergence_free);
    Eigen::VectorXd c = Eigen::VectorXd::Zero(es.size());
    // |k|^2 = 1, 1, 2, 5: distinct shells keep the advection term active
    c[0] = 1.0;
    c[3] = 0.8;
    c[4] = 0.5;
    c[10] = 0.3;
    return es.field(c, es.natural_grid());
  }
  const spectral::EigenSystem es(d, 2, spectral::Subspace::full);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(es.size());
  c[0] = 0.5;
  c[1] = 0.6;
  c[d == 1 ? 4 : 6] = 0.3;
  return es.field(c, es.natural_grid());
}

FourierCoeffs default_direction(const ForwardModel& m) {
  const int d = dim(m);
  if (std::holds_alternative<NavierStokesModel>(m)) {
    const spectral::EigenSystem es(2, 2, spectral::Subspace::divergence_free);
    Eigen::VectorXd c = Eigen::VectorXd::Zero(es.size());
    c[1] = 0.7;
    c[2] = 0.5;
    c[7] = 0.4;
    return es.field(c, es.natural_grid());
  }
  const spectral::EigenSystem es(d, 3, spectral::Subspace::full);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(es.size());
  c[0] = 0.2;
  c[2] = 0.5;
  c[d == 1 ? 5 : 9] = 0.4;
  return es.field(c, es.natural_grid());
}

}  // namespace fisherpde::forward
