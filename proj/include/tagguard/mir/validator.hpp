#pragma once

#include "tagguard/mir/module.hpp"
#include "tagguard/support/diag.hpp"

namespace tagguard::mir {

// Assigns static types to operands: SSA references from the value table,
// constants from instruction context. Emits diagnostics for constants in
// pointer positions. Must run before validate_module on parsed input;
// builder-produced modules may call it to normalize as well.
DiagList fill_operand_types(Module& m);

// Structural and type validation: SSA single-assignment and dominance,
// phi placement/arity, terminator discipline, per-opcode typing, call and
// intrinsic signatures. Empty result means the module is well formed.
DiagList validate_module(const Module& m);

}  // namespace tagguard::mir
