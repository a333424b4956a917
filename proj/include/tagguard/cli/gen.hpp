#pragma once

#include <cstdint>

#include "tagguard/mir/module.hpp"

namespace tagguard::cli {

// Deterministic pointer-heavy program that stays in bounds by construction
// and never lets raw pointer bits reach its output. Used for differential
// checked-vs-plain runs.
mir::Module generate_safe_program(uint64_t seed);

}  // namespace tagguard::cli
