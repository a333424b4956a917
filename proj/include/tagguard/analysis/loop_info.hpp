#pragma once

#include <vector>

#include "tagguard/analysis/cfg.hpp"

namespace tagguard::analysis {

struct NaturalLoop {
    mir::BlockId header = 0;
    mir::BlockId latch = 0;
    std::vector<bool> body;  // block membership, indexed by BlockId

    bool contains(mir::BlockId b) const { return b < body.size() && body[b]; }
};

// Back edges latch->header where header dominates latch; one loop per
// back edge (no nesting merge - callers filter for the shape they need).
std::vector<NaturalLoop> find_natural_loops(const mir::Function& f, const Cfg& cfg);

}  // namespace tagguard::analysis
