#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace kbc::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kFailure = 1;
inline constexpr int kUsage = 2;

/// Runs one subcommand. `args` excludes the program name. A `--config FILE`
/// argument supplies flat `key=value` defaults (keys are long flag names) that
/// explicit flags override.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace kbc::cli
