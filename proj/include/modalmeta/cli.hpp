#pragma once

#include <string>
#include <vector>

namespace modalmeta {

/// Entry point behind the `modalmeta` binary. Subcommands: train, eval,
/// embed, curves, gradcheck. Returns 0 on success, 2 on configuration or
/// usage errors, 1 on runtime failures.
int run_cli(int argc, const char* const* argv);

/// Convenience overload for tests; `args` excludes the program name.
int run_cli(const std::vector<std::string>& args);

}  // namespace modalmeta
