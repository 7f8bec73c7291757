#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace oa::cli {

inline constexpr int kRuntimeFailure = 1;
inline constexpr int kUsageFailure = 2;

// Parses `args` (without the program name) and runs one subcommand. Errors are
// reported as a single JSON object on `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace oa::cli
