#pragma once

#include <iosfwd>

namespace pairloc::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;     // bad arguments or configuration
inline constexpr int kExitData = 2;      // unreadable, malformed or inconsistent data
inline constexpr int kExitCoverage = 3;  // evaluation below the coverage floor

// Entry point of the `pairloc` tool: subcommands ingest, synth, sync, locate
// and evaluate. Never throws; failures map onto the exit codes above.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace pairloc::cli
