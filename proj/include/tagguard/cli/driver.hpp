#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace tagguard::cli {

// Entry point shared by the tool binary and the test suite. Streams stand
// in for stdout/stderr so tests can capture them.
int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err);

}  // namespace tagguard::cli
