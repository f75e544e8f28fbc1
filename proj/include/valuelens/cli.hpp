#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "valuelens/run_config.hpp"

namespace valuelens {

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitUsage = 2 };

/// Entry point of the `valuelens` command. `args` excludes the program
/// name. Environment variables are read through `env`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
            const EnvLookup& env);

}  // namespace valuelens
