#pragma once

#include <string>
#include <vector>

namespace tagguard {

struct SourceLoc {
    int line = 0;
    int col = 0;
};

struct Diagnostic {
    SourceLoc loc;
    std::string message;
};

using DiagList = std::vector<Diagnostic>;

std::string format_diags(const DiagList& diags);

}  // namespace tagguard
