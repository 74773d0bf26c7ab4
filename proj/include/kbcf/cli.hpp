#pragma once

#include <ostream>

namespace kbcf {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

// Runs one command; everything it writes to files goes under --out-dir.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace kbcf
