#include "fisherpde/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "fisherpde/gaussian.hpp"
#include "fisherpde/inference.hpp"

namespace fisherpde::cli {

using nlohmann::json;
using spectral::FourierCoeffs;
using spectral::TorusGrid;
namespace fs = std::filesystem;

Overrides overrides_from_environment() {
  Overrides o;
  auto parse = [](const char* name) -> std::optional<long long> {
    const char* v = std::getenv(name);
    if (!v || !*v) return std::nullopt;
    char* end = nullptr;
    const long long x = std::strtoll(v, &end, 10);
    if (*end != '\0') throw SchemaError(std::string(name) + " must be an integer, got '" + v + "'");
    return x;
  };
  if (auto s = parse("FISHERPDE_SEED")) {
    if (*s < 0) throw SchemaError("FISHERPDE_SEED must be nonnegative");
    o.seed = static_cast<std::uint64_t>(*s);
  }
  if (auto w = parse("FISHERPDE_WORKERS")) {
    if (*w < 0) throw SchemaError("FISHERPDE_WORKERS must be nonnegative");
    o.workers = static_cast<int>(*w);
  }
  return o;
}

Overrides merge(const Overrides& base, const Overrides& top) {
  return {top.seed ? top.seed : base.seed, top.workers ? top.workers : base.workers};
}

const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names{"fisher", "qmd-check", "norm-equiv", "info-matrix", "snorm", "lan",
                                              "gaussian-support", "pushforward-bound", "efficiency", "ns-diagnostics"};
  return names;
}

json load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open config file " + path.string());
  try {
    return json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw SchemaError("config " + path.string() + " is not valid JSON: " + e.what());
  }
}

namespace {

// ---------------------------------------------------------------------------
// Output pieces

struct Csv {
  std::string name;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

struct TaskOutput {
  json results = json::object();
  json claims = json::object();
  std::vector<Csv> csv;
  std::function<void(const fs::path&)> extra;
};

json claim(double value, const json& tolerance, bool pass, const std::string& test,
           std::optional<double> reference = std::nullopt) {
  json c{{"value", value}, {"tolerance", tolerance}, {"pass", pass && !std::isnan(value)}, {"test", test}};
  if (reference) c["reference"] = *reference;
  return c;
}

std::string beta_tag(double beta) {
  std::ostringstream s;
  s << beta;
  return s.str();
}

// ---------------------------------------------------------------------------
// Config resolution

struct Context {
  json resolved;
  json params;
  std::uint64_t seed = 0;
  std::optional<forward::ForwardModel> model;
  std::optional<noise::NoiseModel> noise;
  std::optional<infoop::DesignMeasure> design;
  std::optional<FourierCoeffs> theta0;
  std::optional<int> K;

  const forward::ForwardModel& m() const { return *model; }
  const infoop::DesignMeasure& d() const { return *design; }
  const FourierCoeffs& th() const { return *theta0; }
  int truncation(int fallback) const { return K.value_or(fallback); }
};

void reject_unknown(const json& j, const std::vector<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw SchemaError(where + " must be an object");
  for (const auto& [key, value] : j.items())
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw SchemaError("unknown key '" + key + "' in " + where);
}

bool nonnegative_integer(const json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

bool compatible(const json& def, const json& v) {
  if (def.is_null()) return true;
  if (def.is_number_integer()) return v.is_number_integer();
  if (def.is_number()) return v.is_number();
  return def.type() == v.type();
}

json task_defaults(const std::string& name, double horizon) {
  if (name == "fisher") return {{"expected", nullptr}, {"tolerance", 1e-8}, {"relative", true},
                                {"mc_samples", 200000}, {"mc_sigmas", 4.0}};
  if (name == "qmd-check")
    return {{"s", {1e-3, 2.154434690031884e-3, 4.641588833612779e-3, 1e-2, 2.154434690031884e-2,
                   4.641588833612779e-2, 1e-1}},
            {"expected_slope", 2.0}, {"slope_tolerance", 0.15}, {"zero_tolerance", 1e-12}};
  if (name == "norm-equiv")
    return {{"levels", {32, 64}}, {"trials", 200}, {"kappa", 1.0}, {"band_limit", 20.0},
            {"growth_limit", 0.10}, {"mode_tolerance", 1e-8}};
  if (name == "info-matrix") return {{"closed_form_tolerance", 1e-10}, {"write_matrix", true}};
  if (name == "snorm") return {{"psi", {{"kind", "mode"}, {"index", 1}}}, {"tolerance", 1e-8}};
  if (name == "lan")
    return {{"N", 5000}, {"replicates", 400}, {"under", "null"}, {"lan_norm", 1.0}, {"mean_sigmas", 3.0},
            {"variance_tolerance", 0.15}, {"ks_min_p", 0.01}};
  if (name == "gaussian-support")
    return {{"betas", {1.0, 2.0}}, {"truncations", {64, 256, 512}}, {"mc_truncation", 64}, {"mc_samples", 5000},
            {"plateau_tolerance", 0.02}, {"growth_threshold", 0.25}, {"mc_sigmas", 3.0}};
  if (name == "pushforward-bound")
    return {{"functional", "positive-time-trajectory"}, {"loss", "l2-power"}, {"power", 2.0}, {"t0", 0.1},
            {"t1", horizon}, {"truncations", {32, 64}}, {"samples", 5000}, {"stability_tolerance", 0.05},
            {"mc_sigmas", 3.0}, {"max_time_nodes", 64}};
  if (name == "efficiency")
    return {{"psi", {{"kind", "mode"}, {"index", 1}}}, {"N", 2000}, {"replicates", 2000}, {"perturbations", {0.0}},
            {"ratio_min", 0.9}, {"ratio_max", 1.15}, {"bias_sigmas", 3.0}, {"expect_divergence", nullptr},
            {"octave_spread", 0.3}};
  if (name == "ns-diagnostics")
    return {{"divergence_tolerance", 1e-12}, {"decay_tolerance", 1e-8}, {"energy_tolerance", 1e-6},
            {"slope_tolerance", 0.2}, {"decay_mode", 0},
            {"s", {1e-3, 2.154434690031884e-3, 4.641588833612779e-3, 1e-2, 2.154434690031884e-2,
                   4.641588833612779e-2, 1e-1}}};
  throw SchemaError("unknown subcommand '" + name + "'");
}

FourierCoeffs resolve_theta0(const json& spec, const forward::ForwardModel& model) {
  if (spec.is_string()) {
    if (spec == "default") return forward::default_base_state(model);
    if (spec == "zero") return FourierCoeffs(TorusGrid::make(forward::dim(model), 1, forward::components(model)));
    throw SchemaError("theta0 must be \"default\", \"zero\" or a coefficient object");
  }
  FourierCoeffs c = spectral::coeffs_from_json(spec);
  if (c.grid().dim != forward::dim(model) || c.grid().components != forward::components(model))
    throw SchemaError("theta0 does not match the model dimension");
  return c;
}

Context resolve(const std::string& subcommand, const json& config, const Overrides& ov) {
  reject_unknown(config, {"description", "seed", "workers", "model", "noise", "design", "numerics", "theta0", "task"},
                 "config");
  if (!config.contains("task")) throw SchemaError("config is missing the task block");
  const json& task = config.at("task");
  if (!task.is_object() || !task.contains("name") || !task.at("name").is_string())
    throw SchemaError("task block needs a string 'name'");
  const std::string name = task.at("name");
  if (!subcommand.empty() && subcommand != name)
    throw SchemaError("subcommand '" + subcommand + "' does not match task.name '" + name + "'");
  if (std::find(subcommands().begin(), subcommands().end(), name) == subcommands().end())
    throw SchemaError("unknown task '" + name + "'");
  if (!config.contains("noise")) throw SchemaError("config is missing the noise block");
  const bool needs_model = name != "fisher";
  if (needs_model && !config.contains("model")) throw SchemaError("config is missing the model block");

  Context ctx;
  try {
    std::uint64_t seed = 0;
    if (config.contains("seed")) {
      if (!nonnegative_integer(config.at("seed"))) throw SchemaError("seed must be a nonnegative integer");
      seed = config.at("seed").get<std::uint64_t>();
    }
    int workers = 0;
    if (config.contains("workers")) {
      if (!nonnegative_integer(config.at("workers"))) throw SchemaError("workers must be a nonnegative integer");
      workers = config.at("workers").get<int>();
    }
    if (ov.seed) seed = *ov.seed;
    if (ov.workers) workers = *ov.workers;
    ctx.seed = seed;

    ctx.noise = noise::NoiseModel::from_json(config.at("noise"));
    json numerics = config.value("numerics", json::object());
    reject_unknown(numerics, {"K", "max_step", "min_step", "growth", "max_wavenumber"}, "numerics block");
    if (numerics.contains("K")) {
      if (!numerics.at("K").is_number_integer() || numerics.at("K").get<int>() < 1)
        throw SchemaError("numerics.K must be a positive integer");
      ctx.K = numerics.at("K").get<int>();
    }
    double horizon = 1.0;
    if (needs_model) {
      json mj = config.at("model");
      if (!mj.is_object()) throw SchemaError("model block must be an object");
      for (const char* key : {"max_step", "min_step", "growth", "max_wavenumber"})
        if (numerics.contains(key)) mj["controls"][key] = numerics.at(key);
      ctx.model = forward::model_from_json(mj);
      horizon = forward::horizon(*ctx.model);
      ctx.design = infoop::DesignMeasure::from_json(config.value("design", json{{"kind", "uniform"}}), horizon,
                                                    forward::dim(*ctx.model));
      ctx.theta0 = resolve_theta0(config.value("theta0", json("default")), *ctx.model);
      if (ctx.noise->dim() != forward::components(*ctx.model))
        throw SchemaError("noise dimension does not match the observation dimension of the model");
    }

    const json defaults = task_defaults(name, horizon);
    json params = defaults;
    for (const auto& [key, value] : task.items()) {
      if (key == "name") continue;
      if (!defaults.contains(key)) throw SchemaError("unknown key '" + key + "' in task block '" + name + "'");
      if (!compatible(defaults.at(key), value))
        throw SchemaError("task." + key + " should be of type " + std::string(defaults.at(key).type_name()));
      params[key] = value;
    }
    ctx.params = params;

    ctx.resolved = {{"seed", seed}, {"workers", workers}, {"noise", ctx.noise->to_json()}, {"numerics", numerics}};
    if (needs_model) {
      ctx.resolved["model"] = forward::to_json(*ctx.model);
      ctx.resolved["design"] = ctx.design->to_json();
      ctx.resolved["theta0"] = config.value("theta0", json("default"));
    }
    json t = params;
    t["name"] = name;
    ctx.resolved["task"] = t;
    set_worker_count(workers);
  } catch (const SchemaError&) {
    throw;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw SchemaError(e.what());
  }
  return ctx;
}

Eigen::VectorXd resolve_psi(const json& spec, const infoop::InformationMatrix& M) {
  const int K = M.size();
  if (!spec.is_object() || !spec.contains("kind")) throw SchemaError("psi needs a 'kind'");
  const std::string kind = spec.at("kind");
  Eigen::VectorXd psi = Eigen::VectorXd::Zero(K);
  if (kind == "mode") {
    reject_unknown(spec, {"kind", "index"}, "psi");
    const int j = spec.value("index", 1);
    if (j < 0 || j >= K) throw SchemaError("psi.index outside the truncation");
    psi[j] = 1.0;
  } else if (kind == "rough") {
    // psi_j = (1 + lambda_j)^{-1/2} j^{-1/2} with 1-based j
    reject_unknown(spec, {"kind"}, "psi");
    for (int j = 0; j < K; ++j) psi[j] = 1.0 / std::sqrt((1.0 + M.basis().mode(j).eigenvalue) * (j + 1.0));
  } else if (kind == "coefficients") {
    reject_unknown(spec, {"kind", "values"}, "psi");
    const auto v = spec.at("values").get<std::vector<double>>();
    if (static_cast<int>(v.size()) > K) throw SchemaError("psi has more coefficients than the truncation");
    for (std::size_t j = 0; j < v.size(); ++j) psi[static_cast<int>(j)] = v[j];
  } else {
    throw SchemaError("unknown psi kind '" + kind + "'");
  }
  return psi;
}

bool heat_closed_form(const Context& c) {
  return std::holds_alternative<forward::HeatModel>(c.m()) && c.d().is_uniform() && c.noise->dim() == 1;
}

// M_jj of the heat model, uniform design, scalar noise information I
double heat_diagonal(double lambda, double T, double info) {
  return lambda == 0.0 ? info : info * -std::expm1(-2.0 * lambda * T) / (2.0 * lambda * T);
}

infoop::InformationMatrix assemble(const Context& c, int K) {
  return infoop::assemble_information_matrix(c.m(), c.th(), noise::fisher_matrix(*c.noise), c.d(), K);
}

// ---------------------------------------------------------------------------
// Tasks

TaskOutput task_fisher(const Context& c) {
  TaskOutput out;
  const auto F = noise::fisher_matrix(*c.noise);
  out.results["information"] = std::vector<std::vector<double>>();
  for (int i = 0; i < F.dim(); ++i) {
    std::vector<double> row;
    for (int j = 0; j < F.dim(); ++j) row.push_back(F.information(i, j));
    out.results["information"].push_back(row);
  }
  out.results["h1_check"] = noise::sqrt_density_h1_check(*c.noise).to_json();
  const json& expected = c.params.at("expected");
  const double tol = c.params.at("tolerance");
  const bool relative = c.params.at("relative");
  if (!expected.is_null()) {
    Eigen::MatrixXd E(F.dim(), F.dim());
    if (expected.is_number()) {
      if (F.dim() != 1) throw SchemaError("task.expected must be a matrix for bivariate noise");
      E(0, 0) = expected.get<double>();
    } else {
      if (!expected.is_array() || static_cast<int>(expected.size()) != F.dim())
        throw SchemaError("task.expected has the wrong shape");
      for (int i = 0; i < F.dim(); ++i)
        for (int j = 0; j < F.dim(); ++j) E(i, j) = expected.at(i).at(j).get<double>();
    }
    const double err = (F.information - E).cwiseAbs().maxCoeff();
    const double value = relative ? err / E.cwiseAbs().maxCoeff() : err;
    out.claims["fisher_information"] = claim(value, tol, value <= tol, relative ? "max relative error <= tolerance"
                                                                                 : "max abs error <= tolerance");
  } else {
    const auto mc = noise::fisher_matrix_monte_carlo(*c.noise, c.seed, c.params.at("mc_samples").get<int>());
    double worst = 0.0;
    for (int i = 0; i < F.dim(); ++i)
      for (int j = 0; j < F.dim(); ++j)
        worst = std::max(worst, std::abs(F.information(i, j) - mc.mean(i, j)) / mc.standard_error(i, j));
    const double sig = c.params.at("mc_sigmas");
    out.claims["quadrature_vs_monte_carlo"] = claim(worst, sig, worst <= sig, "max |quad - mc| / stderr <= tolerance");
  }
  return out;
}

TaskOutput task_qmd(const Context& c) {
  TaskOutput out;
  const auto s = c.params.at("s").get<std::vector<double>>();
  const auto r = forward::qmd_remainder_slope(c.m(), c.th(), forward::default_direction(c.m()), s);
  out.results = r.to_json();
  Csv csv{"qmd_remainder.csv", {"s", "remainder", "ratio"}, {}};
  for (std::size_t i = 0; i < s.size(); ++i) csv.rows.push_back({num(s[i]), num(r.remainders[i]), num(r.ratios[i])});
  out.csv.push_back(csv);
  if (std::holds_alternative<forward::HeatModel>(c.m())) {
    const double tol = c.params.at("zero_tolerance");
    out.claims["remainder_vanishes"] = claim(r.max_remainder, tol, r.max_remainder <= tol, "max rho <= tolerance");
  } else {
    const double expected = c.params.at("expected_slope"), tol = c.params.at("slope_tolerance");
    out.claims["slope"] = claim(r.slope, tol, std::abs(r.slope - expected) <= tol, "|slope - reference| <= tolerance",
                                expected);
  }
  return out;
}

TaskOutput task_norm_equiv(const Context& c) {
  TaskOutput out;
  const auto levels = c.params.at("levels").get<std::vector<int>>();
  const double kappa = c.params.at("kappa");
  const auto lv = infoop::norm_equivalence_diagnostic(c.m(), c.th(), c.d(), levels, c.params.at("trials"), kappa,
                                                      c.seed);
  out.results["levels"] = json::array();
  Csv csv{"norm_equivalence.csv", {"K", "ratio_min", "ratio_max", "eig_min", "eig_max"}, {}};
  const double band = c.params.at("band_limit");
  for (const auto& l : lv) {
    out.results["levels"].push_back(l.to_json());
    csv.rows.push_back({std::to_string(l.K), num(l.ratio_min), num(l.ratio_max), num(l.eig_min), num(l.eig_max)});
    const double b = l.ratio_max / l.ratio_min;
    out.claims["band_K" + std::to_string(l.K)] = claim(b, band, b < band, "ratio_max / ratio_min < tolerance");
  }
  out.csv.push_back(csv);
  if (lv.size() >= 2) {
    const double g = (lv.back().ratio_max - lv.front().ratio_max) / lv.front().ratio_max;
    const double lim = c.params.at("growth_limit");
    out.claims["max_growth"] = claim(g, lim, g < lim, "relative growth of ratio_max, first to last level < tolerance");
  }
  if (heat_closed_form(c)) {
    const double T = forward::horizon(c.m());
    double worst = 0.0;
    for (const auto& l : lv) {
      const auto es = infoop::parameter_basis(c.m(), l.K);
      for (int j = 0; j < l.K; ++j) {
        const double lam = es.mode(j).eigenvalue;
        const double exact = std::sqrt(std::pow(1.0 + lam, kappa) * heat_diagonal(lam, T, 1.0));
        worst = std::max(worst, std::abs(l.mode_ratios[j] - exact));
      }
    }
    const double tol = c.params.at("mode_tolerance");
    out.claims["heat_mode_ratios"] = claim(worst, tol, worst <= tol, "max |mode ratio - closed form| <= tolerance");
  }
  return out;
}

TaskOutput task_info_matrix(const Context& c, const json& config) {
  TaskOutput out;
  const int K = c.truncation(9);
  const auto M = assemble(c, K);
  out.results["K"] = K;
  out.results["condition"] = M.condition();
  std::vector<double> diag(M.matrix().diagonal().data(), M.matrix().diagonal().data() + K);
  out.results["diagonal"] = diag;
  out.claims["condition"] = claim(M.condition(), infoop::InformationMatrix::kMaxCondition,
                                  M.condition() <= infoop::InformationMatrix::kMaxCondition, "condition <= tolerance");
  if (heat_closed_form(c)) {
    const double T = forward::horizon(c.m());
    const double info = noise::fisher_matrix(*c.noise).information(0, 0);
    double dmax = 0.0, omax = 0.0;
    for (int i = 0; i < K; ++i)
      for (int j = 0; j < K; ++j) {
        if (i == j)
          dmax = std::max(dmax, std::abs(M.matrix()(i, i) - heat_diagonal(M.basis().mode(i).eigenvalue, T, info)));
        else
          omax = std::max(omax, std::abs(M.matrix()(i, j)));
      }
    const double tol = c.params.at("closed_form_tolerance");
    out.claims["heat_diagonal"] = claim(dmax, tol, dmax <= tol, "max |M_jj - closed form| <= tolerance");
    out.claims["heat_off_diagonal"] = claim(omax, tol, omax <= tol, "max |M_ij|, i != j, <= tolerance");
  }
  if (c.params.at("write_matrix").get<bool>()) {
    out.results["matrix"] = "information_matrix.json";
    out.extra = [M, config](const fs::path& dir) { M.write(dir / "information_matrix", config); };
  }
  return out;
}

TaskOutput task_snorm(const Context& c) {
  TaskOutput out;
  const int K = c.truncation(17);
  const auto M = assemble(c, K);
  const Eigen::VectorXd psi = resolve_psi(c.params.at("psi"), M);
  const auto t = infoop::s_norm_truncated(psi, M);
  const auto div = inference::octave_divergence(t.values);
  out.results = {{"K", K}, {"value", t.value()}, {"trace", t.values}, {"octave_increments", div.increments},
                 {"diverging", div.diverging}};
  Csv csv{"snorm_trace.csv", {"K", "value"}, {}};
  for (std::size_t i = 0; i < t.values.size(); ++i) csv.rows.push_back({std::to_string(i + 1), num(t.values[i])});
  out.csv.push_back(csv);
  double min_step = std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < t.values.size(); ++i) min_step = std::min(min_step, t.values[i] - t.values[i - 1]);
  if (t.values.size() < 2) min_step = 0.0;
  out.claims["monotone"] = claim(min_step, 0.0, t.monotone(), "smallest trace increment >= tolerance");
  const json& spec = c.params.at("psi");
  if (heat_closed_form(c) && spec.at("kind") == "mode") {
    const int j = spec.value("index", 1);
    const double info = noise::fisher_matrix(*c.noise).information(0, 0);
    const double exact = 1.0 / heat_diagonal(M.basis().mode(j).eigenvalue, forward::horizon(c.m()), info);
    const double tol = c.params.at("tolerance");
    out.claims["heat_closed_form"] = claim(t.value(), tol, std::abs(t.value() - exact) <= tol,
                                           "|value - reference| <= tolerance", exact);
  }
  return out;
}

TaskOutput task_lan(const Context& c) {
  TaskOutput out;
  const std::string under = c.params.at("under");
  if (under != "null" && under != "alternative") throw SchemaError("task.under must be \"null\" or \"alternative\"");
  const auto fisher = noise::fisher_matrix(*c.noise);
  FourierCoeffs h = forward::default_direction(c.m());
  h *= c.params.at("lan_norm").get<double>() / infoop::lan_norm_direct(c.m(), c.th(), h, fisher, c.d());
  inference::LanOptions o;
  o.N = c.params.at("N");
  o.replicates = c.params.at("replicates");
  o.under = under == "null" ? inference::Hypothesis::null : inference::Hypothesis::alternative;
  o.seed = c.seed;
  const auto r = inference::lan_montecarlo(c.m(), c.th(), h, *c.noise, c.d(), o);
  out.results = r.to_json();
  out.results.erase("values");
  out.results.erase("seeds");
  Csv csv{"lan_replicates.csv", {"replicate", "value", "seed"}, {}};
  for (int i = 0; i < o.replicates; ++i) csv.rows.push_back({std::to_string(i), num(r.values[i]), std::to_string(r.seeds[i])});
  out.csv.push_back(csv);
  const double sig = c.params.at("mean_sigmas");
  const double vt = c.params.at("variance_tolerance");
  const double pmin = c.params.at("ks_min_p");
  out.claims["mean"] = claim(r.mean, sig * r.standard_error, std::abs(r.mean - r.target_mean) <= sig * r.standard_error,
                             "|mean - reference| <= tolerance (mean_sigmas * stderr)", r.target_mean);
  const double rel = std::abs(r.variance - r.target_variance) / r.target_variance;
  out.claims["variance"] = claim(r.variance, vt, rel <= vt, "|variance / reference - 1| <= tolerance", r.target_variance);
  out.claims["ks_p_value"] = claim(r.ks.p_value, pmin, r.ks.p_value > pmin, "p > tolerance");
  return out;
}

TaskOutput task_support(const Context& c) {
  TaskOutput out;
  gaussian::SupportOptions o;
  o.betas = c.params.at("betas").get<std::vector<double>>();
  o.truncations = c.params.at("truncations").get<std::vector<int>>();
  o.mc_truncation = c.params.at("mc_truncation");
  o.mc_samples = c.params.at("mc_samples");
  o.seed = c.seed;
  o.plateau_tolerance = c.params.at("plateau_tolerance");
  if (o.truncations.empty() || o.betas.empty()) throw SchemaError("betas and truncations must be nonempty");
  const int K = std::max(*std::max_element(o.truncations.begin(), o.truncations.end()), o.mc_truncation);
  const auto M = assemble(c, K);
  const auto r = gaussian::support_diagnostic(M, o);
  out.results = r.to_json();
  Csv csv{"support_moments.csv", {"beta", "K", "moment"}, {}};
  const double growth = c.params.at("growth_threshold"), sig = c.params.at("mc_sigmas");
  for (const auto& cv : r.curves) {
    for (std::size_t i = 0; i < cv.truncations.size(); ++i)
      csv.rows.push_back({num(cv.beta), std::to_string(cv.truncations[i]), num(cv.moments[i])});
    const std::string tag = beta_tag(cv.beta);
    if (cv.predicted_convergent) {
      out.claims["plateau_beta_" + tag] = claim(cv.last_increment, o.plateau_tolerance, cv.plateau,
                                                "relative increment over the last two truncations < tolerance");
    } else {
      const double g = cv.moments.back() / cv.moments.front() - 1.0;
      out.claims["growth_beta_" + tag] = claim(g, growth, g > growth,
                                               "relative growth, first to last truncation > tolerance");
    }
    if (cv.mc_mean) {
      const double z = std::abs(*cv.mc_mean - *cv.mc_exact) / *cv.mc_stderr;
      out.claims["monte_carlo_beta_" + tag] = claim(z, sig, z <= sig, "|mc - exact| / stderr <= tolerance");
    }
  }
  out.csv.push_back(csv);
  return out;
}

TaskOutput task_pushforward(const Context& c) {
  TaskOutput out;
  gaussian::PushforwardSpec spec;
  spec.functional = gaussian::functional_from_string(c.params.at("functional"));
  spec.loss = gaussian::loss_from_string(c.params.at("loss"));
  spec.power = c.params.at("power");
  spec.t0 = c.params.at("t0");
  spec.t1 = c.params.at("t1");
  spec.max_time_nodes = c.params.at("max_time_nodes");
  const auto Ks = c.params.at("truncations").get<std::vector<int>>();
  if (Ks.empty()) throw SchemaError("truncations must be nonempty");
  const int m = c.params.at("samples");
  const double sig = c.params.at("mc_sigmas");
  out.results["levels"] = json::array();
  Csv csv{"pushforward.csv", {"K", "mean", "standard_error", "exact"}, {}};
  std::vector<double> means;
  for (int K : Ks) {
    const auto M = assemble(c, K);
    const auto b = gaussian::sample_efficient_gaussian(M, m, c.seed);
    const auto r = gaussian::functional_pushforward_bound(b, M, c.m(), c.th(), spec);
    out.results["levels"].push_back(r.to_json());
    csv.rows.push_back({std::to_string(K), num(r.mean), num(r.standard_error),
                        r.exact ? num(*r.exact) : std::string("")});
    means.push_back(r.mean);
    if (r.exact) {
      const double z = std::abs(r.mean - *r.exact) / r.standard_error;
      out.claims["monte_carlo_K" + std::to_string(K)] = claim(z, sig, z <= sig, "|mc - exact| / stderr <= tolerance");
    }
  }
  out.csv.push_back(csv);
  if (means.size() >= 2) {
    const double change = std::abs(means.back() - means.front()) / means.front();
    const double tol = c.params.at("stability_tolerance");
    out.claims["truncation_stability"] = claim(change, tol, change < tol,
                                               "relative change, first to last truncation < tolerance");
  }
  return out;
}

TaskOutput task_efficiency(const Context& c) {
  TaskOutput out;
  const int K = c.truncation(9);
  const auto M = assemble(c, K);
  const Eigen::VectorXd psi = resolve_psi(c.params.at("psi"), M);
  const int replicates = c.params.at("replicates");
  const json expect = c.params.at("expect_divergence");
  if (!expect.is_null() && !expect.is_boolean()) throw SchemaError("task.expect_divergence must be a boolean or null");
  const double spread = c.params.at("octave_spread");

  inference::EfficiencyReport rep;
  if (replicates > 0) {
    inference::EfficiencyOptions o;
    o.N = c.params.at("N");
    o.replicates = replicates;
    o.seed = c.seed;
    o.perturbations = c.params.at("perturbations").get<std::vector<double>>();
    rep = inference::efficiency_report(c.m(), c.th(), psi, *c.noise, c.d(), M, o);
  } else {
    rep.psi = psi;
    rep.bound_trace = infoop::s_norm_truncated(psi, M).values;
    rep.bound = rep.bound_trace.back();
  }
  rep.divergence = inference::octave_divergence(rep.bound_trace, spread);
  out.results = rep.to_json();
  out.results["K"] = K;
  Csv csv{"bound_trace.csv", {"K", "value"}, {}};
  for (std::size_t i = 0; i < rep.bound_trace.size(); ++i)
    csv.rows.push_back({std::to_string(i + 1), num(rep.bound_trace[i])});
  out.csv.push_back(csv);

  if (expect.is_boolean()) {
    const bool want = expect.get<bool>();
    const auto& inc = rep.divergence.increments;
    double s = std::numeric_limits<double>::quiet_NaN();
    if (inc.size() >= 3) {
      const auto [lo, hi] = std::minmax_element(inc.end() - 3, inc.end());
      s = *hi > 0.0 ? (*hi - *lo) / *hi : std::numeric_limits<double>::infinity();
    }
    out.claims["divergence_flag"] = claim(s, spread, rep.divergence.diverging == want,
                                          std::string("octave spread <= tolerance is ") + (want ? "expected" : "not expected"));
  }
  if (replicates > 0) {
    const double lo = c.params.at("ratio_min"), hi = c.params.at("ratio_max");
    if (!(expect.is_boolean() && expect.get<bool>()))
      out.claims["variance_ratio"] = claim(rep.variance_ratio, json::array({lo, hi}),
                                           rep.variance_ratio >= lo && rep.variance_ratio <= hi,
                                           "N Var / bound inside [tolerance]");
    const double sig = c.params.at("bias_sigmas");
    for (const auto& m : rep.menu) {
      const double z = std::abs(m.bias) / m.bias_standard_error;
      out.claims["bias_scale_" + num(m.scale)] = claim(z, sig, z <= sig, "|sqrt(N) bias| / stderr <= tolerance");
    }
    const auto& m0 = rep.menu.front();
    const double floor = rep.bound - sig * m0.variance_standard_error;
    out.claims["not_below_bound"] = claim(m0.variance, sig, m0.variance >= floor,
                                          "N Var >= bound - tolerance * stderr", rep.bound);
  }
  return out;
}

TaskOutput task_ns(const Context& c) {
  const auto* ns = std::get_if<forward::NavierStokesModel>(&c.m());
  if (!ns) throw SchemaError("ns-diagnostics needs the ns model");
  TaskOutput out;
  const auto u = forward::solve(c.m(), c.th());
  const auto& times = u.times();
  const spectral::EigenSystem es(2, u.grid().max_wavenumber, spectral::Subspace::divergence_free);
  std::optional<FourierCoeffs> f;
  if (ns->forcing) f = ns->forcing->resized(u.grid());
  std::vector<double> energy(times.size()), rate(times.size());
  double div = 0.0;
  for (int n = 0; n < times.size(); ++n) {
    const auto& s = u.at_node(n);
    energy[n] = 0.5 * spectral::pairing(s, s);
    rate[n] = -ns->viscosity * std::pow(spectral::sobolev_norm(s, 1.0, es), 2) + (f ? spectral::pairing(*f, s) : 0.0);
    div = std::max(div, forward::coefficient_divergence(s));
  }
  double worst = 0.0;
  for (int end = 2; end < times.size(); end += 2) {
    const auto w = times.simpson_weights(0.0, times[end]);
    double integral = 0.0;
    for (int n = 0; n <= end; ++n) integral += w[n] * rate[n];
    worst = std::max(worst, std::abs(energy[end] - energy[0] - integral));
  }
  const double energy_residual = worst / ns->horizon;

  forward::NavierStokesModel free = *ns;
  free.forcing.reset();
  const spectral::EigenSystem modes = spectral::EigenSystem::leading(2, spectral::Subspace::divergence_free,
                                                                    c.params.at("decay_mode").get<int>() + 1);
  const int j = c.params.at("decay_mode");
  const FourierCoeffs e = modes.basis_vector(j, modes.natural_grid());
  const auto v = forward::solve(forward::ForwardModel(free), e);
  const FourierCoeffs e_on = e.resized(v.grid());
  const double lam = modes.mode(j).eigenvalue;
  double decay = 0.0;
  for (int n = 0; n < v.times().size(); ++n) {
    FourierCoeffs exact = e_on;
    exact *= std::exp(-ns->viscosity * lam * v.times()[n]);
    decay = std::max(decay, (v.at_node(n) - exact).max_abs());
  }
  const auto q = forward::qmd_remainder_slope(c.m(), c.th(), forward::default_direction(c.m()),
                                              c.params.at("s").get<std::vector<double>>());
  out.results = {{"max_divergence", div}, {"decay_error", decay}, {"energy_residual_per_time", energy_residual},
                 {"qmd", q.to_json()}};
  Csv csv{"energy.csv", {"t", "energy", "energy_rate"}, {}};
  for (int n = 0; n < times.size(); ++n) csv.rows.push_back({num(times[n]), num(energy[n]), num(rate[n])});
  out.csv.push_back(csv);
  const double dt = c.params.at("divergence_tolerance"), kt = c.params.at("decay_tolerance");
  const double et = c.params.at("energy_tolerance"), st = c.params.at("slope_tolerance");
  out.claims["divergence"] = claim(div, dt, div <= dt, "max |k . u_k| over nodes <= tolerance");
  out.claims["single_mode_decay"] = claim(decay, kt, decay <= kt, "max |u - exp(-nu lambda t) e_j| <= tolerance");
  out.claims["energy_balance"] = claim(energy_residual, et, energy_residual < et, "residual per unit time < tolerance");
  out.claims["linearization_slope"] = claim(q.slope, st, std::abs(q.slope - 2.0) <= st,
                                            "|slope - reference| <= tolerance", 2.0);
  return out;
}

TaskOutput dispatch(const std::string& name, const Context& c, const json& config) {
  if (name == "fisher") return task_fisher(c);
  if (name == "qmd-check") return task_qmd(c);
  if (name == "norm-equiv") return task_norm_equiv(c);
  if (name == "info-matrix") return task_info_matrix(c, config);
  if (name == "snorm") return task_snorm(c);
  if (name == "lan") return task_lan(c);
  if (name == "gaussian-support") return task_support(c);
  if (name == "pushforward-bound") return task_pushforward(c);
  if (name == "efficiency") return task_efficiency(c);
  return task_ns(c);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  f << text;
  if (!f) throw std::runtime_error("failed to write " + path.string());
}

void write_csv(const fs::path& dir, const Csv& csv) {
  std::ostringstream s;
  for (std::size_t i = 0; i < csv.header.size(); ++i) s << (i ? "," : "") << csv.header[i];
  s << '\n';
  for (const auto& row : csv.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) s << (i ? "," : "") << row[i];
    s << '\n';
  }
  write_text(dir / csv.name, s.str());
}

}  // namespace

RunResult run(const std::string& subcommand, const json& config, const fs::path& out, const Overrides& overrides) {
  const auto start = std::chrono::steady_clock::now();
  RunResult result;
  Context ctx;
  std::string name;
  TaskOutput task;
  json report;
  try {
    ctx = resolve(subcommand, config, overrides);
    name = ctx.resolved.at("task").at("name");
    report = {{"schema", kReportSchema}, {"subcommand", name}, {"config", ctx.resolved}};
    task = dispatch(name, ctx, ctx.resolved);
  } catch (const SchemaError& e) {
    result.exit_code = kSchemaError;
    result.message = e.what();
    return result;
  } catch (const NumericalError& e) {
    result.exit_code = kNumericalFailure;
    result.message = e.what();
    report["error"] = {{"kind", "numerical"}, {"message", e.what()}};
    report["pass"] = false;
  } catch (const std::invalid_argument& e) {
    result.exit_code = kSchemaError;
    result.message = e.what();
    return result;
  } catch (const json::exception& e) {
    result.exit_code = kSchemaError;
    result.message = std::string("config: ") + e.what();
    return result;
  }

  if (result.exit_code == kPass) {
    bool pass = true;
    for (const auto& [key, c] : task.claims.items()) pass = pass && c.at("pass").get<bool>();
    report["results"] = task.results;
    report["claims"] = task.claims;
    report["pass"] = pass;
    result.exit_code = pass ? kPass : kToleranceFailure;
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  fs::create_directories(out);
  write_text(out / "report.json", report.dump(2) + "\n");
  write_text(out / "timing.json", json{{"seconds", result.seconds}}.dump(2) + "\n");
  for (const auto& csv : task.csv) write_csv(out, csv);
  if (task.extra) task.extra(out);
  result.report = std::move(report);
  return result;
}

}  // namespace fisherpde::cli
