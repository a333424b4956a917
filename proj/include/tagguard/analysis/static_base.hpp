#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tagguard/mir/module.hpp"

namespace tagguard::analysis {

enum class Provenance : uint8_t {
    Self,
    Backtracked,
    IntCorrelated,
    SynthesizedPhi,
    SynthesizedSelect,
    IntArithSuspect,
};

const char* provenance_name(Provenance p);

struct BaseEntry {
    mir::Operand base;
    Provenance prov = Provenance::Self;
};

// Total map over pointer-typed SSA values of one function. Bases are
// operands because globals, functions, and null participate as roots.
struct StaticBaseMap {
    std::vector<std::optional<BaseEntry>> by_value;

    const BaseEntry* lookup(mir::ValueId v) const {
        if (v >= by_value.size() || !by_value[v]) return nullptr;
        return &*by_value[v];
    }
};

// Computes static bases for every pointer-typed value in f, inserting
// synthesized phi/select merge nodes into the function where control flow
// joins distinct bases. Safe to re-run: existing synthesized nodes are
// reused, not duplicated.
StaticBaseMap compute_static_bases(mir::Module& m, size_t func_index);

// Constant byte displacement of v relative to its static base, when the
// whole derivation chain is geps with constant indices and bitcasts.
std::optional<int64_t> const_disp_from_base(const mir::Function& f,
                                            const StaticBaseMap& map,
                                            mir::ValueId v);

// `value -> base (provenance)` lines, one per pointer value, in value order.
std::string dump_static_bases(const mir::Module& m, const mir::Function& f,
                              const StaticBaseMap& map);

}  // namespace tagguard::analysis
