#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace adpde {

inline constexpr const char* kToolVersion = "1.0.0";

/// Exit codes of run_cli.
enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitNumerical = 3 };

/// Fully resolved invocation: every option of the command with its value.
struct RunConfig {
  std::string command;
  std::map<std::string, std::string> values;
};

/// Merges defaults, an optional --config file and command-line flags
/// (flags win). Throws ConfigError on unknown commands or options.
RunConfig parse_run_config(const std::vector<std::string>& args);

/// Runs `adpde <command> [options]`; errors become one line on err.
int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err);

}  // namespace adpde
