#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace dualkg {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitVerification = 3;

/// Entry point of the `dualkg` tool: gen-data, train, eval, ablate, gradcheck,
/// dump-attention. Returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Same, with argv[0] supplied internally.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dualkg
