// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Pass criterion numbers as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fisherpde/gaussian.hpp"
#include "fisherpde/inference.hpp"
#include "fisherpde/rng.hpp"
#include "fisherpde/runner.hpp"

using namespace fisherpde;
using forward::HeatModel;
using forward::NavierStokesModel;
using forward::ReactionDiffusionModel;
using infoop::DesignMeasure;
using spectral::EigenSystem;
using spectral::FourierCoeffs;
using spectral::Subspace;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    if (detail.tellp() > 0) detail << "; ";
    detail << what << (ok ? "" : " [fail]");
  }
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

// (1 - e^{-2 lambda T}) / (2 lambda T), 1 at lambda = 0
double heat_diag(double lambda, double T = 1.0) {
  return lambda == 0.0 ? 1.0 : -std::expm1(-2.0 * lambda * T) / (2.0 * lambda * T);
}

const HeatModel kHeat{1, 1.0, {}};
const ReactionDiffusionModel kRd{};
const NavierStokesModel kNs{};

FourierCoeffs zero_state(const forward::ForwardModel& m) {
  return FourierCoeffs(spectral::TorusGrid::make(forward::dim(m), 1, forward::components(m)));
}

const std::vector<double> kS{1e-3, 2.154434690031884e-3, 4.641588833612779e-3, 1e-2,
                             2.154434690031884e-2, 4.641588833612779e-2, 1e-1};

// ---------------------------------------------------------------------------

void fisher_matrices(Outcome& o) {
  const double g = noise::fisher_matrix(noise::NoiseModel::gaussian(0.25)).information(0, 0);
  o.check(rel(g, 4.0) <= 1e-8, "gaussian " + fmt(g));
  const double l = noise::fisher_matrix(noise::NoiseModel::laplace(1.0)).information(0, 0);
  o.check(rel(l, 1.0) <= 1e-6, "laplace " + fmt(l));
  const double c = noise::fisher_matrix(noise::NoiseModel::cosine_bump()).information(0, 0);
  o.check(rel(c, kPi * kPi) <= 1e-6, "cosine bump " + fmt(c));
  Eigen::Matrix2d sigma;
  sigma << 2.0, 0.6, 0.6, 1.0;
  const Eigen::MatrixXd b = noise::fisher_matrix(noise::NoiseModel::bivariate_gaussian(sigma)).information;
  const Eigen::Matrix2d inv = sigma.inverse();
  const double err = (b - inv).cwiseAbs().maxCoeff() / inv.cwiseAbs().maxCoeff();
  o.check(err <= 1e-6, "bivariate rel err " + fmt(err));
}

void heat_information_matrix(Outcome& o) {
  const auto M = infoop::assemble_information_matrix(kHeat, forward::default_base_state(kHeat),
                                                     noise::fisher_matrix(noise::NoiseModel::gaussian(1.0)),
                                                     DesignMeasure::uniform(1.0, 1), 9);
  double off = 0.0, diag = 0.0;
  for (int i = 0; i < 9; ++i)
    for (int j = 0; j < 9; ++j) {
      if (i == j)
        diag = std::max(diag, std::abs(M.matrix()(i, i) - heat_diag(M.basis().mode(i).eigenvalue)));
      else
        off = std::max(off, std::abs(M.matrix()(i, j)));
    }
  o.check(off < 1e-10, "max off-diagonal " + fmt(off));
  o.check(diag <= 1e-10, "max diagonal error " + fmt(diag));
}

void s_norm(Outcome& o) {
  const auto M = infoop::assemble_information_matrix(kHeat, forward::default_base_state(kHeat),
                                                     noise::fisher_matrix(noise::NoiseModel::gaussian(1.0)),
                                                     DesignMeasure::uniform(1.0, 1), 17);
  Eigen::VectorXd e1 = Eigen::VectorXd::Zero(17);
  e1[1] = 1.0;
  const double v = infoop::s_norm_truncated(e1, M).value();
  const double exact = 8 * kPi * kPi / -std::expm1(-8 * kPi * kPi);
  o.check(std::abs(v - exact) <= 1e-8, "psi=e_1 " + fmt(v) + " vs " + fmt(exact));
  int monotone = 0;
  for (int r = 0; r < 20; ++r) {
    Rng rng(split_seed(2024, r));
    Eigen::VectorXd psi(17);
    for (int j = 0; j < 17; ++j) psi[j] = rng.normal();
    const auto t = infoop::s_norm_truncated(psi, M);
    bool ok = true;
    for (std::size_t k = 1; k < t.values.size(); ++k) ok = ok && t.values[k] >= t.values[k - 1];
    monotone += ok;
  }
  o.check(monotone == 20, std::to_string(monotone) + "/20 traces monotone");
}

void qmd_remainder(Outcome& o) {
  const auto rd = forward::qmd_remainder_slope(kRd, forward::default_base_state(kRd),
                                               forward::default_direction(kRd), kS);
  o.check(std::abs(rd.slope - 2.0) <= 0.15, "rd slope " + fmt(rd.slope));
  const auto ns = forward::qmd_remainder_slope(kNs, forward::default_base_state(kNs),
                                               forward::default_direction(kNs), kS);
  o.check(std::abs(ns.slope - 2.0) <= 0.2, "ns slope " + fmt(ns.slope));
  const auto heat = forward::qmd_remainder_slope(kHeat, forward::default_base_state(kHeat),
                                                 forward::default_direction(kHeat), kS);
  o.check(heat.max_remainder <= 1e-12, "heat max rho " + fmt(heat.max_remainder));
}

void norm_equivalence(Outcome& o) {
  const std::vector<int> levels{32, 64};
  auto band = [&](const forward::ForwardModel& m, const std::string& name) {
    const auto lv = infoop::norm_equivalence_diagnostic(m, forward::default_base_state(m),
                                                        DesignMeasure::uniform(1.0, forward::dim(m)), levels, 200,
                                                        1.0, 77);
    double worst = 0.0;
    for (const auto& l : lv) worst = std::max(worst, l.ratio_max / l.ratio_min);
    const double growth = lv[1].ratio_max / lv[0].ratio_max - 1.0;
    o.check(worst < 20.0, name + " band " + fmt(worst));
    o.check(growth < 0.10, name + " max growth " + fmt(growth));
  };
  band(kRd, "rd");
  band(kNs, "ns");
  const auto lv = infoop::norm_equivalence_diagnostic(kHeat, forward::default_base_state(kHeat),
                                                      DesignMeasure::uniform(1.0, 1), levels, 200, 1.0, 77);
  double err = 0.0;
  for (const auto& l : lv) {
    const EigenSystem es(1, l.K, Subspace::full);
    for (int j = 0; j < static_cast<int>(l.mode_ratios.size()); ++j) {
      const double lam = es.mode(j).eigenvalue;
      err = std::max(err, std::abs(l.mode_ratios[j] - std::sqrt((1.0 + lam) * heat_diag(lam))));
    }
  }
  o.check(err <= 1e-8, "heat mode ratio error " + fmt(err));
}

void lan(Outcome& o) {
  auto one = [&](const forward::ForwardModel& m, const noise::NoiseModel& q, const std::string& name) {
    const auto theta0 = forward::default_base_state(m);
    const auto design = DesignMeasure::uniform(forward::horizon(m), forward::dim(m));
    FourierCoeffs h = forward::default_direction(m);
    h *= 1.0 / infoop::lan_norm_direct(m, theta0, h, noise::fisher_matrix(q), design);
    inference::LanOptions opt;
    opt.N = 5000;
    opt.replicates = 400;
    opt.seed = 31;
    const auto r = inference::lan_montecarlo(m, theta0, h, q, design, opt);
    const auto ks = inference::ks_normal(r.values, -0.5, 1.0);
    o.check(std::abs(r.mean + 0.5) <= 3.0 * r.standard_error,
            name + " mean " + fmt(r.mean) + " +- " + fmt(r.standard_error));
    o.check(std::abs(r.variance - 1.0) <= 0.15, name + " variance " + fmt(r.variance));
    o.check(ks.p_value > 0.01, name + " KS p " + fmt(ks.p_value));
  };
  one(kHeat, noise::NoiseModel::gaussian(1.0), "heat+gaussian");
  one(kRd, noise::NoiseModel::laplace(1.0), "rd+laplace");
}

void efficiency(Outcome& o) {
  const auto theta0 = forward::default_base_state(kHeat);
  const auto q = noise::NoiseModel::gaussian(1.0);
  const auto design = DesignMeasure::uniform(1.0, 1);
  const auto M = infoop::assemble_information_matrix(kHeat, theta0, noise::fisher_matrix(q), design, 9);
  Eigen::VectorXd e1 = Eigen::VectorXd::Zero(9);
  e1[1] = 1.0;
  inference::EfficiencyOptions opt;
  opt.N = 2000;
  opt.replicates = 2000;
  opt.seed = 53;
  const auto r = inference::efficiency_report(kHeat, theta0, e1, q, design, M, opt);
  o.check(r.variance_ratio >= 0.9 && r.variance_ratio <= 1.15, "variance ratio " + fmt(r.variance_ratio));

  const int K = 256;
  const auto big = infoop::assemble_information_matrix(kHeat, theta0, noise::fisher_matrix(q), design, K);
  Eigen::VectorXd rough(K);
  for (int j = 0; j < K; ++j) rough[j] = 1.0 / std::sqrt((1.0 + big.basis().mode(j).eigenvalue) * (j + 1.0));
  const auto trace = infoop::s_norm_truncated(rough, big).values;
  const auto div = inference::octave_divergence(trace, 0.3);
  const auto& inc = div.increments;
  const auto [lo, hi] = std::minmax_element(inc.end() - 3, inc.end());
  const double spread = (*hi - *lo) / *hi;
  o.check(div.diverging, std::string("divergence flag ") + (div.diverging ? "set" : "not set"));
  o.check(spread <= 0.3, "octave increment spread " + fmt(spread));
}

void gaussian_support(Outcome& o) {
  const auto M = infoop::assemble_information_matrix(kHeat, forward::default_base_state(kHeat),
                                                     noise::fisher_matrix(noise::NoiseModel::gaussian(1.0)),
                                                     DesignMeasure::uniform(1.0, 1), 512);
  gaussian::SupportOptions opt;
  opt.betas = {1.0, 2.0};
  opt.truncations = {64, 256, 512};
  opt.mc_truncation = 64;
  opt.mc_samples = 5000;
  opt.seed = 61;
  const auto rep = gaussian::support_diagnostic(M, opt);
  for (const auto& c : rep.curves) {
    const std::string b = c.beta == 1.0 ? "beta=1" : "beta=2";
    if (c.beta == 2.0) {
      const double inc = c.moments[2] / c.moments[1] - 1.0;
      o.check(inc < 0.02, b + " increment 256->512 " + fmt(inc));
    } else {
      const double growth = c.moments[2] / c.moments[0] - 1.0;
      o.check(growth > 0.25, b + " growth 64->512 " + fmt(growth));
    }
    const double z = std::abs(*c.mc_mean - *c.mc_exact) / *c.mc_stderr;
    o.check(z <= 3.0, b + " MC z " + fmt(z));
  }
}

void ns_solver(Outcome& o) {
  const auto u = forward::solve(kNs, forward::default_base_state(kNs));
  const auto& times = u.times();
  const EigenSystem es(2, u.grid().max_wavenumber, Subspace::divergence_free);
  double div = 0.0;
  std::vector<double> energy(times.size()), rate(times.size());
  for (int n = 0; n < times.size(); ++n) {
    const auto& s = u.at_node(n);
    div = std::max(div, forward::coefficient_divergence(s));
    energy[n] = 0.5 * spectral::pairing(s, s);
    rate[n] = -kNs.viscosity * std::pow(spectral::sobolev_norm(s, 1.0, es), 2);
  }
  o.check(div <= 1e-12, "max divergence " + fmt(div));

  double residual = 0.0;
  for (int end = 2; end < times.size(); end += 2) {
    const auto w = times.simpson_weights(0.0, times[end]);
    double integral = 0.0;
    for (int n = 0; n <= end; ++n) integral += w[n] * rate[n];
    residual = std::max(residual, std::abs(energy[end] - energy[0] - integral));
  }
  residual /= kNs.horizon;
  o.check(residual < 1e-6, "energy residual per unit time " + fmt(residual));

  const EigenSystem modes = EigenSystem::leading(2, Subspace::divergence_free, 3);
  double decay = 0.0;
  for (int j = 0; j < 3; ++j) {
    const FourierCoeffs e = modes.basis_vector(j, modes.natural_grid());
    const auto v = forward::solve(kNs, e);
    const FourierCoeffs e_on = e.resized(v.grid());
    for (int n = 0; n < v.times().size(); ++n) {
      FourierCoeffs exact = e_on;
      exact *= std::exp(-kNs.viscosity * modes.mode(j).eigenvalue * v.times()[n]);
      decay = std::max(decay, (v.at_node(n) - exact).max_abs());
    }
  }
  o.check(decay <= 1e-8, "single-mode decay error " + fmt(decay));

  const auto q = forward::qmd_remainder_slope(kNs, forward::default_base_state(kNs),
                                              forward::default_direction(kNs), kS);
  o.check(std::abs(q.slope - 2.0) <= 0.2, "linearization slope " + fmt(q.slope));
}

void pushforward(Outcome& o) {
  const auto q = noise::NoiseModel::gaussian(1.0);
  gaussian::PushforwardSpec spec;
  spec.t0 = 0.1;
  spec.t1 = 1.0;
  {
    const auto theta0 = forward::default_base_state(kRd);
    const auto design = DesignMeasure::uniform(1.0, 1);
    std::vector<double> means;
    for (int K : {32, 64}) {
      const auto M = infoop::assemble_information_matrix(kRd, theta0, noise::fisher_matrix(q), design, K);
      const auto batch = gaussian::sample_efficient_gaussian(M, 5000, 71);
      means.push_back(gaussian::functional_pushforward_bound(batch, M, kRd, theta0, spec).mean);
    }
    const double change = rel(means[1], means[0]);
    o.check(change < 0.05, "rd bound " + fmt(means[0]) + " -> " + fmt(means[1]) + " change " + fmt(change));
  }
  {
    const auto theta0 = zero_state(kHeat);
    const auto M = infoop::assemble_information_matrix(kHeat, theta0, noise::fisher_matrix(q),
                                                       DesignMeasure::uniform(1.0, 1), 32);
    const Eigen::MatrixXd Minv = M.matrix().inverse();
    double exact = 0.0;
    for (int j = 0; j < 32; ++j) {
      const double lam = M.basis().mode(j).eigenvalue;
      const double integral = lam == 0.0 ? spec.t1 - spec.t0
                                         : (std::exp(-2 * lam * spec.t0) - std::exp(-2 * lam * spec.t1)) / (2 * lam);
      exact += Minv(j, j) * integral;
    }
    const auto batch = gaussian::sample_efficient_gaussian(M, 5000, 73);
    const auto r = gaussian::functional_pushforward_bound(batch, M, kHeat, theta0, spec);
    const double z = std::abs(r.mean - exact) / r.standard_error;
    o.check(z <= 3.0, "heat theta0=0 mc " + fmt(r.mean) + " vs " + fmt(exact) + " (z " + fmt(z) + ")");
  }
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

void reproducibility(Outcome& o) {
  namespace fs = std::filesystem;
  const fs::path root = fs::temp_directory_path() / "fisherpde_acceptance_repro";
  const std::vector<nlohmann::json> configs{
      {{"seed", 5},
       {"model", {{"kind", "heat"}, {"dim", 1}}},
       {"noise", {{"family", "gaussian"}, {"sigma", 1.0}}},
       {"task", {{"name", "lan"}, {"N", 1000}, {"replicates", 100}}}},
      {{"seed", 5},
       {"model", {{"kind", "rd"}, {"dim", 1}}},
       {"noise", {{"family", "laplace"}, {"scale", 1.0}}},
       {"numerics", {{"K", 9}}},
       {"task", {{"name", "info-matrix"}}}},
      {{"seed", 5},
       {"model", {{"kind", "heat"}, {"dim", 1}}},
       {"noise", {{"family", "gaussian"}, {"sigma", 1.0}}},
       {"task", {{"name", "pushforward-bound"}, {"truncations", {16, 32}}, {"samples", 500}}}}};
  int files = 0, identical = 0;
  for (std::size_t c = 0; c < configs.size(); ++c) {
    const fs::path a = root / (std::to_string(c) + "a"), b = root / (std::to_string(c) + "b");
    fs::remove_all(a);
    fs::remove_all(b);
    cli::run("", configs[c], a);
    cli::run("", configs[c], b);
    for (const auto& entry : fs::directory_iterator(a)) {
      if (entry.path().filename() == "timing.json") continue;
      ++files;
      identical += fs::exists(b / entry.path().filename()) && slurp(entry.path()) == slurp(b / entry.path().filename());
    }
  }
  fs::remove_all(root);
  o.check(files > 0 && identical == files, std::to_string(identical) + "/" + std::to_string(files) +
                                               " output files byte-identical");
}

struct Criterion {
  int id;
  const char* name;
  std::function<void(Outcome&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {1, "fisher matrices", fisher_matrices},
      {2, "heat information matrix", heat_information_matrix},
      {3, "S-norm closed form and monotone trace", s_norm},
      {4, "QMD remainder slopes", qmd_remainder},
      {5, "norm equivalence", norm_equivalence},
      {6, "LAN Monte Carlo", lan},
      {7, "efficiency attainment and divergence flag", efficiency},
      {8, "Gaussian support thresholds", gaussian_support},
      {9, "NS solver", ns_solver},
      {10, "positive-time pushforward", pushforward},
      {11, "reproducibility", reproducibility},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    Outcome o;
    const auto start = std::chrono::steady_clock::now();
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failed += !o.pass;
    std::printf("%s [%2d] %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.str().c_str(), secs);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
