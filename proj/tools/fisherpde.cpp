#include <CLI11.hpp>

#include <iostream>

#include "fisherpde/runner.hpp"

namespace cli = fisherpde::cli;

int main(int argc, char** argv) {
  CLI::App app{"Fisher information, LAN and efficiency diagnostics for PDE forward models"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand all help");

  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string chosen;

  auto add = [&](const std::string& name, const std::string& description) {
    auto* sub = app.add_subcommand(name, description);
    sub->add_option("-c,--config", config_path, "JSON config file")->required()->check(CLI::ExistingFile);
    sub->add_option("-o,--out", out_dir, "output directory")->capture_default_str();
    sub->add_option("--seed", seed, "master seed (overrides config and FISHERPDE_SEED)");
    sub->add_option("--workers", workers, "OpenMP worker count, 0 for the default")->check(CLI::NonNegativeNumber);
    sub->callback([&chosen, name] { chosen = name; });
  };
  add("run", "run the task named in the config");
  add("fisher", "Fisher information of the noise law and the sqrt-density H1 probe");
  add("qmd-check", "linearization remainder and its slope in s");
  add("norm-equiv", "L2_lambda versus D^-kappa norm ratios across truncations");
  add("info-matrix", "assemble and write the truncated information matrix");
  add("snorm", "truncated S-norm trace of a target functional");
  add("lan", "Monte Carlo check of the log-likelihood-ratio expansion");
  add("gaussian-support", "weighted second moments of the efficient Gaussian");
  add("pushforward-bound", "Monte Carlo minimax bound for a functional of the trajectory");
  add("efficiency", "efficient influence estimator against the bound");
  add("ns-diagnostics", "Navier-Stokes solver checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : cli::kSchemaError;
  }

  try {
    const auto flags = cli::Overrides{seed, workers};
    const auto overrides = cli::merge(cli::overrides_from_environment(), flags);
    const auto config = cli::load_config(config_path);
    const auto result = cli::run(chosen == "run" ? std::string() : chosen, config, out_dir, overrides);
    if (result.exit_code == cli::kSchemaError) {
      std::cerr << "config error: " << result.message << '\n';
      return result.exit_code;
    }
    if (result.exit_code == cli::kNumericalFailure) std::cerr << "numerical failure: " << result.message << '\n';
    if (result.report.contains("claims")) {
      for (const auto& [name, c] : result.report.at("claims").items())
        std::cout << (c.at("pass").get<bool>() ? "PASS " : "FAIL ") << name << "  value=" << c.at("value").dump()
                  << "  tolerance=" << c.at("tolerance").dump() << '\n';
    }
    std::cout << "report: " << (std::filesystem::path(out_dir) / "report.json").string() << "  ("
              << result.seconds << " s)\n";
    return result.exit_code;
  } catch (const cli::SchemaError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return cli::kSchemaError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return cli::kNumericalFailure;
  }
}
