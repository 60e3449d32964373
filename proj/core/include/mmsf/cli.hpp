#pragma once

#include <string>
#include <vector>

namespace mmsf::cli {

// The full command-line surface; tools/mmsf.cpp forwards argv here and tests
// drive it directly. Returns the process exit code (0 on success; errors
// print one diagnostic line to stderr).
int run(const std::vector<std::string>& args);

}  // namespace mmsf::cli
