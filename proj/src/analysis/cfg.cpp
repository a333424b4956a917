#include "tagguard/analysis/cfg.hpp"

#include <algorithm>

namespace tagguard::analysis {

using namespace mir;

bool Cfg::dominates(BlockId a, BlockId b) const {
    while (true) {
        if (a == b) return true;
        if (b == 0) return false;
        BlockId next = idom[b];
        if (next == b) return false;  // unreachable self-loop sentinel
        b = next;
    }
}

Cfg build_cfg(const Function& f) {
    Cfg cfg;
    size_t n = f.blocks.size();
    cfg.succs.resize(n);
    cfg.preds.resize(n);
    cfg.reachable.assign(n, false);
    for (size_t b = 0; b < n; b++) {
        if (f.blocks[b].instrs.empty()) continue;
        const Instr& t = f.blocks[b].instrs.back();
        if (t.op == Opcode::Br) {
            cfg.succs[b] = {t.br_true};
        } else if (t.op == Opcode::CondBr) {
            cfg.succs[b] = {t.br_true, t.br_false};
        }
    }
    for (size_t b = 0; b < n; b++)
        for (BlockId s : cfg.succs[b]) cfg.preds[s].push_back(static_cast<BlockId>(b));

    // reachability from entry
    std::vector<BlockId> stack{0};
    while (!stack.empty()) {
        BlockId b = stack.back();
        stack.pop_back();
        if (cfg.reachable[b]) continue;
        cfg.reachable[b] = true;
        for (BlockId s : cfg.succs[b]) stack.push_back(s);
    }

    // iterative dominators in reverse postorder
    std::vector<BlockId> rpo;
    std::vector<std::pair<BlockId, size_t>> dfs;
    dfs.emplace_back(0, 0);
    std::vector<bool> seen(n, false);
    seen[0] = true;
    while (!dfs.empty()) {
        auto& [b, i] = dfs.back();
        if (i < cfg.succs[b].size()) {
            BlockId s = cfg.succs[b][i++];
            if (!seen[s]) {
                seen[s] = true;
                dfs.emplace_back(s, 0);
            }
        } else {
            rpo.push_back(b);
            dfs.pop_back();
        }
    }
    std::reverse(rpo.begin(), rpo.end());
    std::vector<size_t> rpo_index(n, 0);
    for (size_t i = 0; i < rpo.size(); i++) rpo_index[rpo[i]] = i;

    cfg.idom.assign(n, kNoValue);
    cfg.idom[0] = 0;
    auto intersect = [&](BlockId a, BlockId b) {
        while (a != b) {
            while (rpo_index[a] > rpo_index[b]) a = cfg.idom[a];
            while (rpo_index[b] > rpo_index[a]) b = cfg.idom[b];
        }
        return a;
    };
    bool changed = true;
    while (changed) {
        changed = false;
        for (BlockId b : rpo) {
            if (b == 0) continue;
            BlockId new_idom = kNoValue;
            for (BlockId p : cfg.preds[b]) {
                if (!cfg.reachable[p] || cfg.idom[p] == kNoValue) continue;
                new_idom = (new_idom == kNoValue) ? p : intersect(p, new_idom);
            }
            if (new_idom != kNoValue && cfg.idom[b] != new_idom) {
                cfg.idom[b] = new_idom;
                changed = true;
            }
        }
    }
    // unreachable blocks: self-idom sentinel so dominates() terminates
    for (size_t b = 0; b < n; b++)
        if (cfg.idom[b] == kNoValue) cfg.idom[b] = static_cast<BlockId>(b);
    return cfg;
}

}  // namespace tagguard::analysis
