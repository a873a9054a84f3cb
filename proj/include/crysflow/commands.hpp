#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace crysflow::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitUsage = 2;

// Runs one subcommand. `args` excludes the program name. Human-readable
// progress goes to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// CRYSFLOW_THREADS caps the requested worker count when set to a positive integer.
int effective_threads(int requested);

}  // namespace crysflow::cli
