#pragma once

#include <cstdint>
#include <string>

#include "tagguard/mir/module.hpp"
#include "tagguard/support/diag.hpp"

namespace tagguard::xform {

struct InstrumentOptions {
    bool size_invariant = true;
    bool loop_opt = true;
    bool hoist_negative_step = false;
    bool dump_static_bases = false;
};

struct InstrumentStats {
    uint64_t checks_inserted = 0;
    uint64_t checks_elided = 0;
    uint64_t checks_hoisted = 0;
    uint64_t tag_updates_inserted = 0;
    uint64_t tag_updates_exempted = 0;
    uint64_t invalidates_inserted = 0;

    std::string to_json() const;
};

struct InstrumentResult {
    InstrumentStats stats;
    DiagList diags;  // unsupported constructs; empty means success
    std::string static_base_dump;
    bool ok() const { return diags.empty(); }
};

// Rewrites m in place into a checked module: escape-point tag updates,
// bounds checks with size-invariant elision, compare/subtract tag resets,
// allocation rewrites, and loop-check hoisting.
InstrumentResult instrument_module(mir::Module& m, const InstrumentOptions& opts);

}  // namespace tagguard::xform
