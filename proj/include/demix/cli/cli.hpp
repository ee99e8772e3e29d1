#pragma once

#include <string>
#include <vector>

namespace demix {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

/// Entry point of the `demix` tool. Returns 0 on success, 2 for invalid
/// flags or configuration (nothing is written), 1 for runtime failures.
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);

}  // namespace demix
