#include "tagguard/support/diag.hpp"

#include <sstream>

namespace tagguard {

std::string format_diags(const DiagList& diags) {
    std::ostringstream os;
    for (const Diagnostic& d : diags) {
        if (d.loc.line > 0) os << d.loc.line << ":" << d.loc.col << ": ";
        os << d.message << "\n";
    }
    return os.str();
}

}  // namespace tagguard
