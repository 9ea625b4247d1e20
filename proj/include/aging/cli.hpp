#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace aging::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

// Entry point of the `aging` tool. Subcommands: synth-data, train, infer,
// sweep, eval, ablate. Returns the process exit code.
int run(int argc, const char* const* argv);
// Same, with arguments after the program name and explicit output streams.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace aging::cli
