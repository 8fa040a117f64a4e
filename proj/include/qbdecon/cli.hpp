#pragma once

#include <iosfwd>

namespace qbd {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitGate = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitAbort = 4;

// Entry point of the qbd tool. Artifacts go to --out, else $QBD_OUT_DIR,
// else output.dir from the config.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace qbd
