#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace leica::cli {

/// Runs the `leica` command line. Returns the process exit code:
/// 0 success, 2 configuration error, 3 data error, 4 internal error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// Convenience overload; args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace leica::cli
