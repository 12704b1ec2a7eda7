#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace fisherpde::cli {

inline constexpr const char* kReportSchema = "fisherpde-report-v1";

enum ExitCode : int { kPass = 0, kToleranceFailure = 1, kSchemaError = 2, kNumericalFailure = 3 };

/// Configuration that does not match the schema: missing or unknown keys,
/// wrong types, invalid values.
class SchemaError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
};

/// FISHERPDE_SEED and FISHERPDE_WORKERS, when set.
Overrides overrides_from_environment();
/// Fields set in `top` win over `base`.
Overrides merge(const Overrides& base, const Overrides& top);

const std::vector<std::string>& subcommands();

/// Parses a config file (JSON, comments allowed).
nlohmann::json load_config(const std::filesystem::path& path);

struct RunResult {
  int exit_code = kPass;
  nlohmann::json report;  // empty on schema errors
  std::string message;    // diagnostic for exit codes 2 and 3
  double seconds = 0.0;
};

/// Validates the config against `subcommand` (empty: take task.name), runs
/// the task and writes report.json, timing.json and any CSV traces to
/// `out`. Nothing is written when the config is rejected.
RunResult run(const std::string& subcommand, const nlohmann::json& config, const std::filesystem::path& out,
              const Overrides& overrides = {});

}  // namespace fisherpde::cli
