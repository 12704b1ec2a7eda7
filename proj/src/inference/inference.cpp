#include "fisherpde/inference.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>

#include "fisherpde/rng.hpp"

namespace fisherpde::inference {

using spectral::TorusGrid;

namespace {

TorusGrid common_input(const ForwardModel& model, std::initializer_list<int> wavenumbers) {
  return TorusGrid::make(forward::dim(model), std::max(wavenumbers), forward::components(model));
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double variance_of(const std::vector<double>& v, double mean) {
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return s / static_cast<double>(v.size() - 1);
}

}  // namespace

Dataset simulate_dataset(const SpaceTimeField& field, const DesignMeasure& design, const noise::NoiseSampler& noise,
                         int N, std::uint64_t seed) {
  if (N < 1) throw std::invalid_argument("dataset size N must be >= 1");
  const int p = field.components();
  if (noise.model().dim() != p) throw std::invalid_argument("noise dimension does not match the observed field");
  Dataset d;
  d.seed = seed;
  d.records.resize(N);
  Rng rng(seed);
  for (auto& r : d.records) {
    const auto loc = design.draw(rng);
    const auto eps = noise.draw(rng);
    const auto g = field.evaluate(loc.t, loc.x);
    r.t = loc.t;
    r.x = loc.x;
    for (int c = 0; c < p; ++c) r.y[c] = g[c] + eps[c];
  }
  return d;
}

Dataset simulate_dataset(const ForwardModel& model, const FourierCoeffs& theta, const DesignMeasure& design,
                         const noise::NoiseModel& noise, int N, std::uint64_t seed) {
  const noise::NoiseSampler sampler(noise);
  Dataset d = simulate_dataset(forward::solve(model, theta), design, sampler, N, seed);
  const auto& g = theta.grid();
  d.theta = spectral::to_json(theta, spectral::EigenSystem(g.dim, g.max_wavenumber, forward::parameter_subspace(model)));
  return d;
}

double log_likelihood_ratio(const Dataset& data, const SpaceTimeField& G0, const SpaceTimeField& Gh,
                            const noise::NoiseModel& noise) {
  const int p = noise.dim();
  if (G0.components() != p || Gh.components() != p)
    throw std::invalid_argument("noise dimension does not match the observed fields");
  double sum = 0.0;
  bool escaped = false;
  for (const auto& r : data.records) {
    const auto a = Gh.evaluate(r.t, r.x), b = G0.evaluate(r.t, r.x);
    noise::Point ya{0.0, 0.0}, yb{0.0, 0.0};
    for (int c = 0; c < p; ++c) ya[c] = r.y[c] - a[c], yb[c] = r.y[c] - b[c];
    const double la = noise.log_density(ya), lb = noise.log_density(yb);
    if (std::isinf(lb) && std::isinf(la))
      throw NumericalError("both densities vanish at the record (t = " + std::to_string(r.t) +
                           ", x = " + std::to_string(r.x[0]) + ")");
    if (std::isinf(la)) {
      escaped = true;
      continue;
    }
    sum += la - lb;
  }
  return escaped ? -std::numeric_limits<double>::infinity() : sum;
}

double log_likelihood_ratio(const Dataset& data, const ForwardModel& model, const FourierCoeffs& theta0,
                            const FourierCoeffs& h, int N, const noise::NoiseModel& noise) {
  if (N < 1) throw std::invalid_argument("N must be >= 1");
  const TorusGrid g = common_input(model, {theta0.grid().max_wavenumber, h.grid().max_wavenumber});
  const FourierCoeffs t0 = theta0.resized(g);
  FourierCoeffs shifted = h.resized(g);
  shifted *= 1.0 / std::sqrt(static_cast<double>(N));
  shifted += t0;
  const SpaceTimeField G0 = forward::solve(model, t0);
  return log_likelihood_ratio(data, G0, forward::solve(model, shifted, G0.times()), noise);
}

// ---------------------------------------------------------------------------

KsResult ks_normal(std::vector<double> values, double mean, double sd) {
  if (values.empty() || !(sd > 0.0)) throw std::invalid_argument("KS test needs data and a positive sd");
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  KsResult r;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double F = 0.5 * std::erfc(-(values[i] - mean) / (sd * std::sqrt(2.0)));
    r.distance = std::max({r.distance, (i + 1) / n - F, F - i / n});
  }
  // Kolmogorov limit law with the Stephens small-sample correction
  const double lambda = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * r.distance;
  if (lambda < 1.18) {
    double s = 0.0;
    for (int k = 1; k <= 20; ++k) s += std::exp(-(2 * k - 1) * (2 * k - 1) * kPi * kPi / (8 * lambda * lambda));
    r.p_value = lambda > 0.0 ? 1.0 - std::sqrt(kTwoPi) / lambda * s : 1.0;
  } else {
    double s = 0.0;
    for (int k = 1; k <= 100; ++k) s += (k % 2 ? 2.0 : -2.0) * std::exp(-2.0 * k * k * lambda * lambda);
    r.p_value = s;
  }
  r.p_value = std::clamp(r.p_value, 0.0, 1.0);
  return r;
}

nlohmann::json LanReport::to_json() const {
  nlohmann::json vals = nlohmann::json::array();
  for (double v : values) {
    if (std::isnan(v))
      vals.push_back(nullptr);
    else if (std::isinf(v))
      vals.push_back("-inf");
    else
      vals.push_back(v);
  }
  return {{"N", N},
          {"replicates", replicates},
          {"under", under == Hypothesis::null ? "null" : "alternative"},
          {"seed", seed},
          {"lan_norm_squared", lan_norm_squared},
          {"minus_infinity_count", minus_infinity},
          {"aborted_replicates", aborted},
          {"diagnostics", diagnostics},
          {"mean", mean},
          {"variance", variance},
          {"standard_error", standard_error},
          {"target_mean", target_mean},
          {"target_variance", target_variance},
          {"ks_distance", ks.distance},
          {"ks_p_value", ks.p_value},
          {"values", vals},
          {"seeds", seeds}};
}

LanReport lan_montecarlo(const ForwardModel& model, const FourierCoeffs& theta0, const FourierCoeffs& h,
                         const noise::NoiseModel& noise, const DesignMeasure& design, const LanOptions& o) {
  if (o.N < 1 || o.replicates < 2) throw std::invalid_argument("LAN Monte Carlo needs N >= 1 and >= 2 replicates");
  const TorusGrid g = common_input(model, {theta0.grid().max_wavenumber, h.grid().max_wavenumber});
  const FourierCoeffs t0 = theta0.resized(g), hh = h.resized(g);
  FourierCoeffs shifted = hh;
  shifted *= 1.0 / std::sqrt(static_cast<double>(o.N));
  shifted += t0;
  const SpaceTimeField G0 = forward::solve(model, t0);
  const SpaceTimeField Gh = forward::solve(model, shifted, G0.times());
  const double lan = infoop::lan_norm_direct(model, t0, hh, noise::fisher_matrix(noise), design);
  const noise::NoiseSampler sampler(noise);
  const SpaceTimeField& truth = o.under == Hypothesis::null ? G0 : Gh;

  LanReport r;
  r.N = o.N;
  r.replicates = o.replicates;
  r.under = o.under;
  r.seed = o.seed;
  r.lan_norm_squared = lan * lan;
  r.values.assign(o.replicates, 0.0);
  r.seeds.resize(o.replicates);
  std::vector<std::string> notes(o.replicates);
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic) if (o.exec == Execution::parallel)
  for (int i = 0; i < o.replicates; ++i) {
    const std::uint64_t s = split_seed(o.seed, static_cast<std::uint64_t>(i));
    r.seeds[i] = s;
    try {
      r.values[i] = log_likelihood_ratio(simulate_dataset(truth, design, sampler, o.N, s), G0, Gh, noise);
    } catch (const NumericalError& e) {
      r.values[i] = std::numeric_limits<double>::quiet_NaN();
      notes[i] = "replicate " + std::to_string(i) + " aborted: " + e.what();
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  std::vector<double> finite;
  for (int i = 0; i < o.replicates; ++i) {
    if (std::isnan(r.values[i])) {
      ++r.aborted;
      r.diagnostics.push_back(notes[i]);
    } else if (std::isinf(r.values[i])) {
      ++r.minus_infinity;
    } else {
      finite.push_back(r.values[i]);
    }
  }
  r.target_mean = (o.under == Hypothesis::null ? -0.5 : 0.5) * r.lan_norm_squared;
  r.target_variance = r.lan_norm_squared;
  if (finite.size() >= 2) {
    r.mean = mean_of(finite);
    r.variance = variance_of(finite, r.mean);
    r.standard_error = std::sqrt(r.variance / static_cast<double>(finite.size()));
    if (r.lan_norm_squared > 0.0) r.ks = ks_normal(finite, r.target_mean, std::sqrt(r.target_variance));
  }
  return r;
}

// ---------------------------------------------------------------------------

InfluenceEstimator::InfluenceEstimator(const ForwardModel& model, const FourierCoeffs& theta0,
                                       const InformationMatrix& M, const Eigen::VectorXd& psi,
                                       const noise::NoiseModel& noise)
    : psi_(psi), noise_(noise) {
  if (psi.size() != M.size()) throw std::invalid_argument("psi length does not match the information matrix");
  if (noise.dim() != forward::components(model)) throw std::invalid_argument("noise dimension does not match the model");
  const FourierCoeffs psi_field = M.field(psi);
  const FourierCoeffs bar = M.field(M.solve(psi));
  const TorusGrid g = common_input(model, {theta0.grid().max_wavenumber, bar.grid().max_wavenumber});
  const FourierCoeffs t0 = theta0.resized(g);
  offset_ = spectral::pairing(psi_field.resized(g), t0);
  base_ = forward::solve(model, t0);
  response_ = forward::linearize(model, t0, bar.resized(g), base_.times());
}

double InfluenceEstimator::influence(const Record& r) const {
  const auto g = base_.evaluate(r.t, r.x);
  const auto v = response_.evaluate(r.t, r.x);
  const noise::Point eps{r.y[0] - g[0], r.y[1] - g[1]};
  const auto s = noise_.score(eps);
  double out = 0.0;
  for (int c = 0; c < noise_.dim(); ++c) out += s[c] * v[c];
  return out;
}

double InfluenceEstimator::estimate(const Dataset& data) const {
  if (data.records.empty()) throw std::invalid_argument("empty dataset");
  double s = 0.0;
  for (const auto& r : data.records) s += influence(r);
  return offset_ + s / data.size();
}

double efficient_influence_estimate(const Eigen::VectorXd& psi, const Dataset& data, const ForwardModel& model,
                                    const FourierCoeffs& theta0, const InformationMatrix& M,
                                    const noise::NoiseModel& noise) {
  return InfluenceEstimator(model, theta0, M, psi, noise).estimate(data);
}

// ---------------------------------------------------------------------------

OctaveDivergence octave_divergence(const std::vector<double>& trace, double spread) {
  OctaveDivergence d;
  for (std::size_t k = 1; k <= trace.size(); k *= 2) d.octaves.push_back(static_cast<int>(k));
  for (std::size_t i = 1; i < d.octaves.size(); ++i)
    d.increments.push_back(trace[d.octaves[i] - 1] - trace[d.octaves[i - 1] - 1]);
  const std::size_t n = d.increments.size();
  if (n < 3) return d;
  const auto last = std::span(d.increments).last(3);
  const double hi = *std::max_element(last.begin(), last.end());
  const double lo = *std::min_element(last.begin(), last.end());
  d.diverging = hi > 0.0 && (hi - lo) / hi <= spread && last.back() > 1e-6 * std::abs(trace.back());
  return d;
}

nlohmann::json EfficiencyReport::to_json() const {
  nlohmann::json menu_json = nlohmann::json::array();
  for (const auto& m : menu)
    menu_json.push_back({{"scale", m.scale},
                         {"bias", m.bias},
                         {"bias_standard_error", m.bias_standard_error},
                         {"risk", m.risk},
                         {"variance", m.variance},
                         {"variance_standard_error", m.variance_standard_error}});
  return {{"psi", std::vector<double>(psi.data(), psi.data() + psi.size())},
          {"bound", bound},
          {"bound_trace", bound_trace},
          {"octaves", divergence.octaves},
          {"octave_increments", divergence.increments},
          {"diverging", divergence.diverging},
          {"perturbations", menu_json},
          {"variance_ratio", variance_ratio},
          {"max_risk_ratio", max_risk_ratio}};
}

EfficiencyReport efficiency_report(const ForwardModel& model, const FourierCoeffs& theta0, const Eigen::VectorXd& psi,
                                   const noise::NoiseModel& noise, const DesignMeasure& design,
                                   const InformationMatrix& M, const EfficiencyOptions& o) {
  if (o.N < 1 || o.replicates < 2) throw std::invalid_argument("efficiency needs N >= 1 and >= 2 replicates");
  if (o.perturbations.empty()) throw std::invalid_argument("perturbation menu is empty");
  const auto start = std::chrono::steady_clock::now();
  EfficiencyReport rep;
  rep.psi = psi;
  rep.bound_trace = infoop::s_norm_truncated(psi, M).values;
  rep.bound = rep.bound_trace.back();
  rep.divergence = octave_divergence(rep.bound_trace);

  const FourierCoeffs dir = forward::default_direction(model);
  const TorusGrid g = common_input(model, {theta0.grid().max_wavenumber, dir.grid().max_wavenumber,
                                           M.basis().required_wavenumber()});
  const FourierCoeffs t0 = theta0.resized(g);
  FourierCoeffs h = dir.resized(g);
  h *= 1.0 / infoop::lan_norm_direct(model, t0, h, noise::fisher_matrix(noise), design);
  const InfluenceEstimator est(model, t0, M, psi, noise);
  const double psi_h = spectral::pairing(M.field(psi).resized(g), h);
  const noise::NoiseSampler sampler(noise);
  const double rootN = std::sqrt(static_cast<double>(o.N));

  for (std::size_t k = 0; k < o.perturbations.size(); ++k) {
    const double s = o.perturbations[k];
    FourierCoeffs theta = h;
    theta *= s / rootN;
    theta += t0;
    const SpaceTimeField truth = s == 0.0 ? est.base() : forward::solve(model, theta, est.base().times());
    const double target = est.offset() + s / rootN * psi_h;
    const std::uint64_t stream = split_seed(o.seed, k);
    std::vector<double> dev(o.replicates);
#pragma omp parallel for schedule(dynamic) if (o.exec == Execution::parallel)
    for (int r = 0; r < o.replicates; ++r) {
      const Dataset d = simulate_dataset(truth, design, sampler, o.N, split_seed(stream, static_cast<std::uint64_t>(r)));
      dev[r] = rootN * (est.estimate(d) - target);
    }
    PerturbationResult pr;
    pr.scale = s;
    pr.bias = mean_of(dev);
    pr.variance = variance_of(dev, pr.bias);
    pr.bias_standard_error = std::sqrt(pr.variance / o.replicates);
    double m4 = 0.0;
    for (double x : dev) {
      pr.risk += x * x;
      m4 += std::pow(x - pr.bias, 4);
    }
    pr.risk /= o.replicates;
    m4 /= o.replicates;
    pr.variance_standard_error = std::sqrt(std::max(0.0, m4 - pr.variance * pr.variance) / o.replicates);
    rep.menu.push_back(pr);
  }
  if (rep.bound > 0.0) {
    rep.variance_ratio = rep.menu.front().variance / rep.bound;
    for (const auto& m : rep.menu) rep.max_risk_ratio = std::max(rep.max_risk_ratio, m.risk / rep.bound);
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

}  // namespace fisherpde::inference
