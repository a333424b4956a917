#include "tagguard/analysis/loop_info.hpp"

namespace tagguard::analysis {

using namespace mir;

std::vector<NaturalLoop> find_natural_loops(const Function& f, const Cfg& cfg) {
    std::vector<NaturalLoop> loops;
    for (BlockId b = 0; b < f.blocks.size(); b++) {
        if (!cfg.reachable[b]) continue;
        for (BlockId s : cfg.succs[b]) {
            if (!cfg.dominates(s, b)) continue;
            NaturalLoop loop;
            loop.header = s;
            loop.latch = b;
            loop.body.assign(f.blocks.size(), false);
            loop.body[s] = true;
            // walk predecessors back from the latch, stopping at the header
            std::vector<BlockId> work{b};
            while (!work.empty()) {
                BlockId cur = work.back();
                work.pop_back();
                if (loop.body[cur]) continue;
                loop.body[cur] = true;
                for (BlockId p : cfg.preds[cur]) work.push_back(p);
            }
            loops.push_back(std::move(loop));
        }
    }
    return loops;
}

}  // namespace tagguard::analysis
