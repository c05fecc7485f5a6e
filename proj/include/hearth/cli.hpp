#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace hearth {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

// Subcommands: run, simulate, calibrate, replay. args excludes the program
// name. Human-readable output goes to `out`, diagnostics to `err`.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_command(int argc, char** argv);

}  // namespace hearth
