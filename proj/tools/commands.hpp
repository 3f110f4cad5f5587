#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace tssl::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Entry point of the `tssl` tool. Returns the process exit code.
int run(int argc, char** argv);
/// Same, with argv[0] omitted and explicit output streams.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tssl::cli
