#pragma once

#include <vector>

#include "tagguard/mir/module.hpp"

namespace tagguard::analysis {

struct Cfg {
    std::vector<std::vector<mir::BlockId>> succs;
    std::vector<std::vector<mir::BlockId>> preds;
    std::vector<mir::BlockId> idom;       // immediate dominator; entry -> entry
    std::vector<bool> reachable;

    // true when a dominates b (reflexive)
    bool dominates(mir::BlockId a, mir::BlockId b) const;
};

Cfg build_cfg(const mir::Function& f);

}  // namespace tagguard::analysis
