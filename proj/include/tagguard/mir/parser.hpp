#pragma once

#include <optional>
#include <string>

#include "tagguard/mir/module.hpp"
#include "tagguard/support/diag.hpp"

namespace tagguard::mir {

struct ParseResult {
    std::optional<Module> module;  // set iff diags is empty
    DiagList diags;
    bool ok() const { return module.has_value(); }
};

// Parses and validates MIR source text. Structural (SSA/type) validation
// runs after a syntactically clean parse; its diagnostics are merged in.
ParseResult parse_module(const std::string& text);

}  // namespace tagguard::mir
