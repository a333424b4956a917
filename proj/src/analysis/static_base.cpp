#include "tagguard/analysis/static_base.hpp"

#include <algorithm>
#include <cassert>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace tagguard::analysis {

using namespace mir;

const char* provenance_name(Provenance p) {
    switch (p) {
        case Provenance::Self: return "self";
        case Provenance::Backtracked: return "backtracked";
        case Provenance::IntCorrelated: return "int-correlated";
        case Provenance::SynthesizedPhi: return "synthesized-phi";
        case Provenance::SynthesizedSelect: return "synthesized-select";
        case Provenance::IntArithSuspect: return "int-arith-suspect";
    }
    return "?";
}

namespace {

bool same_operand(const Operand& a, const Operand& b) {
    if (a.kind != b.kind) return false;
    switch (a.kind) {
        case Operand::Kind::Value: return a.value == b.value;
        case Operand::Kind::Global:
        case Operand::Kind::Func: return a.index == b.index;
        case Operand::Kind::Null: return a.type == b.type;
        case Operand::Kind::Const: return a.imm == b.imm && a.type == b.type;
        case Operand::Kind::None: return true;
    }
    return false;
}

struct DefSite {
    BlockId block = 0;
    size_t index = 0;
    const Instr* instr = nullptr;
};

// Deferred merge node; materialized after analysis so instruction indices
// stay stable while the recursion runs.
struct PendingSynth {
    ValueId id;                     // pre-registered placeholder
    bool is_phi = false;
    BlockId block = 0;
    ValueId anchor = kNoValue;      // insert before this value's definition
    Operand cond;                   // select only
    std::vector<Operand> args;      // bases per arm
    std::vector<BlockId> phi_blocks;
    ValueId synth_for = kNoValue;
};

class BasePass {
public:
    BasePass(Module& m, Function& f) : m_(m), f_(f) {
        map_.by_value.resize(f_.values.size());
        build_def_map();
        // reuse merge nodes a previous run synthesized
        for (BlockId b = 0; b < f_.blocks.size(); b++) {
            for (size_t i = 0; i < f_.blocks[b].instrs.size(); i++) {
                const Instr& ins = f_.blocks[b].instrs[i];
                if (ins.synth_base_of) existing_synth_[*ins.synth_base_of] = ins.result;
            }
        }
    }

    StaticBaseMap run() {
        for (ValueId v = 0; v < f_.values.size(); v++) {
            if (f_.values[v].type && f_.values[v].type->is_pointer()) sb_value(v);
        }
        collapse_trivial_merges();
        materialize();
        return std::move(map_);
    }

private:
    void build_def_map() {
        defs_.assign(f_.values.size(), DefSite{});
        for (BlockId b = 0; b < f_.blocks.size(); b++) {
            for (size_t i = 0; i < f_.blocks[b].instrs.size(); i++) {
                const Instr& ins = f_.blocks[b].instrs[i];
                if (ins.has_result()) defs_[ins.result] = {b, i, &ins};
            }
        }
    }

    Operand self_operand(ValueId v) {
        return Operand::value_ref(v, f_.values[v].type);
    }

    void record(ValueId v, Operand base, Provenance prov) {
        map_.by_value[v] = BaseEntry{base, prov};
    }

    Operand sb_operand(const Operand& o) {
        if (o.is_value()) {
            ValueId b = sb_value(o.value);
            return Operand::value_ref(b, f_.values[b].type);
        }
        return o;  // globals, functions, null are their own bases
    }

    // Returns the static-base VALUE id for v, creating merge placeholders
    // as needed. For non-value bases (globals etc.) the entry keeps the
    // operand; the returned id in that case is v itself only for roots, so
    // callers needing the operand should use entry lookup instead.
    ValueId sb_value(ValueId v) {
        if (map_.by_value[v]) {
            const Operand& b = map_.by_value[v]->base;
            return b.is_value() ? b.value : v;
        }
        const DefSite& d = defs_[v];
        if (!d.instr) {  // parameter
            record(v, self_operand(v), Provenance::Self);
            return v;
        }
        const Instr& ins = *d.instr;
        if (ins.synth_base_of) {  // previously synthesized merge node
            record(v, self_operand(v), Provenance::Self);
            return v;
        }
        switch (ins.op) {
            case Opcode::Gep:
            case Opcode::Bitcast: {
                Operand base = sb_operand(ins.args[0]);
                record(v, base, Provenance::Backtracked);
                return base.is_value() ? base.value : v;
            }
            case Opcode::Phi:
            case Opcode::Select:
                return synthesize_merge(v, ins, d);
            case Opcode::IntToPtr:
                return correlate_int_to_ptr(v, ins, d);
            default:
                // loads, call results, allocas, intrinsic results
                record(v, self_operand(v), Provenance::Self);
                return v;
        }
    }

    ValueId synthesize_merge(ValueId v, const Instr& ins, const DefSite& d) {
        if (auto it = existing_synth_.find(v); it != existing_synth_.end()) {
            ValueId sb = it->second;
            record(v, self_operand(sb),
                   ins.op == Opcode::Phi ? Provenance::SynthesizedPhi
                                         : Provenance::SynthesizedSelect);
            sb_value(sb);
            return sb;
        }
        bool is_phi = ins.op == Opcode::Phi;
        ValueId placeholder = f_.add_value(
            f_.values[v].name + ".sb", m_.types.byte_ptr());
        map_.by_value.push_back(std::nullopt);
        defs_.push_back(DefSite{});
        record(placeholder, self_operand(placeholder), Provenance::Self);
        record(v, self_operand(placeholder),
               is_phi ? Provenance::SynthesizedPhi : Provenance::SynthesizedSelect);

        PendingSynth ps;
        ps.id = placeholder;
        ps.is_phi = is_phi;
        ps.block = d.block;
        ps.anchor = v;
        ps.synth_for = v;
        if (is_phi) {
            ps.phi_blocks = ins.phi_blocks;
            for (const Operand& arm : ins.args) ps.args.push_back(sb_operand(arm));
        } else {
            ps.cond = ins.args[0];
            ps.args.push_back(sb_operand(ins.args[1]));
            ps.args.push_back(sb_operand(ins.args[2]));
        }
        pending_.push_back(std::move(ps));
        return placeholder;
    }

    // Walks the integer chain feeding an inttoptr. Collects pointer sources
    // (operands of ptrtoint), whether arithmetic or truncation was crossed.
    struct IntTrace {
        std::vector<Operand> sources;  // pointer operands of found ptrtoints
        bool arith = false;
        bool trunc = false;
        bool wild = false;  // a path ends somewhere other than ptrtoint
    };

    void trace_int(const Operand& o, IntTrace& tr, std::unordered_set<ValueId>& seen) {
        if (!o.is_value()) {
            if (o.is_const()) tr.wild = true;  // literal integer origin
            else tr.wild = true;
            return;
        }
        ValueId v = o.value;
        if (seen.count(v)) return;
        seen.insert(v);
        const DefSite& d = defs_[v];
        if (!d.instr) {
            tr.wild = true;  // parameter
            return;
        }
        const Instr& ins = *d.instr;
        switch (ins.op) {
            case Opcode::PtrToInt: {
                if (size_of(ins.type) < 8) tr.trunc = true;
                bool dup = false;
                for (const Operand& s : tr.sources)
                    if (same_operand(s, ins.args[0])) dup = true;
                if (!dup) tr.sources.push_back(ins.args[0]);
                return;
            }
            case Opcode::BinOp:
                tr.arith = true;
                trace_int(ins.args[0], tr, seen);
                trace_int(ins.args[1], tr, seen);
                return;
            case Opcode::Phi:
                for (const Operand& arm : ins.args) trace_int(arm, tr, seen);
                return;
            case Opcode::Select:
                trace_int(ins.args[1], tr, seen);
                trace_int(ins.args[2], tr, seen);
                return;
            default:
                tr.wild = true;  // loads, call results, psub, icmp...
                return;
        }
    }

    ValueId correlate_int_to_ptr(ValueId v, const Instr& ins, const DefSite& d) {
        IntTrace tr;
        std::unordered_set<ValueId> seen;
        const Operand& src = ins.args[0];
        bool narrow_src = src.type && size_of(src.type) < 8;
        trace_int(src, tr, seen);
        if (narrow_src) tr.trunc = true;

        if (tr.sources.empty()) {
            record(v, self_operand(v),
                   tr.arith ? Provenance::IntArithSuspect : Provenance::Self);
            return v;
        }
        if (tr.trunc) {  // tag bits lost; only the allocator can recover
            record(v, self_operand(v), Provenance::IntArithSuspect);
            return v;
        }
        if (tr.sources.size() == 1) {
            Operand base = sb_operand(tr.sources[0]);
            record(v, base,
                   (tr.arith || tr.wild) ? Provenance::IntArithSuspect
                                         : Provenance::IntCorrelated);
            return base.is_value() ? base.value : v;
        }
        // Two or more pointer origins: mirror a direct int phi/select when
        // the shape allows, otherwise fall back to the allocator route.
        if (src.is_value() && !tr.arith && !tr.wild) {
            const DefSite& sd = defs_[src.value];
            if (sd.instr && (sd.instr->op == Opcode::Phi ||
                             sd.instr->op == Opcode::Select)) {
                if (ValueId got = mirror_int_merge(v, *sd.instr, sd); got != kNoValue)
                    return got;
            }
        }
        record(v, self_operand(v), Provenance::IntArithSuspect);
        return v;
    }

    // v = inttoptr(m) where m is an int phi/select whose arms each correlate
    // to a unique ptrtoint: synthesize a pointer merge mirroring m's arms.
    ValueId mirror_int_merge(ValueId v, const Instr& merge, const DefSite& md) {
        std::vector<Operand> arm_bases;
        for (size_t a = merge.op == Opcode::Select ? 1 : 0; a < merge.args.size(); a++) {
            IntTrace tr;
            std::unordered_set<ValueId> seen;
            trace_int(merge.args[a], tr, seen);
            if (tr.arith || tr.trunc || tr.wild || tr.sources.size() != 1)
                return kNoValue;
            arm_bases.push_back(sb_operand(tr.sources[0]));
        }
        if (auto it = existing_synth_.find(v); it != existing_synth_.end()) {
            record(v, self_operand(it->second), Provenance::IntCorrelated);
            sb_value(it->second);
            return it->second;
        }
        ValueId placeholder = f_.add_value(
            f_.values[v].name + ".sb", m_.types.byte_ptr());
        map_.by_value.push_back(std::nullopt);
        defs_.push_back(DefSite{});
        record(placeholder, self_operand(placeholder), Provenance::Self);
        record(v, self_operand(placeholder), Provenance::IntCorrelated);
        PendingSynth ps;
        ps.id = placeholder;
        ps.is_phi = merge.op == Opcode::Phi;
        ps.block = md.block;
        ps.anchor = merge.result;
        ps.synth_for = v;
        ps.args = std::move(arm_bases);
        if (merge.op == Opcode::Phi) ps.phi_blocks = merge.phi_blocks;
        else ps.cond = merge.args[0];
        pending_.push_back(std::move(ps));
        return placeholder;
    }

    // A merge whose arms all name one base (ignoring self-arms) is that
    // base; rewrite references, drop the pending node, and compact the
    // value table so no placeholder is left without a definition.
    void collapse_trivial_merges() {
        std::unordered_map<ValueId, Operand> replaced;
        bool changed = true;
        while (changed) {
            changed = false;
            for (auto& ps : pending_) {
                if (replaced.count(ps.id)) continue;
                Operand uniq;
                bool ok = true, any = false;
                for (Operand a : ps.args) {
                    while (a.is_value() && replaced.count(a.value)) a = replaced[a.value];
                    if (a.is_value() && a.value == ps.id) continue;  // self arm
                    if (!any) {
                        uniq = a;
                        any = true;
                    } else if (!same_operand(uniq, a)) {
                        ok = false;
                        break;
                    }
                }
                if (ok && any) {
                    replaced[ps.id] = uniq;
                    changed = true;
                }
            }
        }
        if (replaced.empty()) return;
        auto subst = [&](Operand& o) {
            while (o.is_value() && replaced.count(o.value)) o = replaced[o.value];
        };
        for (auto& e : map_.by_value) {
            if (e) subst(e->base);
        }
        for (auto& ps : pending_) {
            for (auto& a : ps.args) subst(a);
        }
        std::vector<PendingSynth> kept;
        std::vector<ValueId> removed;
        for (auto& ps : pending_) {
            if (replaced.count(ps.id)) removed.push_back(ps.id);
            else kept.push_back(std::move(ps));
        }
        pending_ = std::move(kept);
        std::sort(removed.begin(), removed.end());
        compact_values(removed);
    }

    void compact_values(const std::vector<ValueId>& removed) {
        if (removed.empty()) return;
        std::vector<ValueId> remap(f_.values.size());
        size_t r = 0;
        ValueId next = 0;
        for (ValueId v = 0; v < f_.values.size(); v++) {
            if (r < removed.size() && removed[r] == v) {
                remap[v] = kNoValue;
                r++;
            } else {
                remap[v] = next++;
            }
        }
        std::vector<ValueInfo> values;
        values.reserve(next);
        std::vector<std::optional<BaseEntry>> entries(next);
        for (ValueId v = 0; v < f_.values.size(); v++) {
            if (remap[v] == kNoValue) continue;
            entries[remap[v]] = std::move(map_.by_value[v]);
            values.push_back(std::move(f_.values[v]));
        }
        f_.values = std::move(values);
        map_.by_value = std::move(entries);
        auto fix = [&](ValueId& v) {
            if (v != kNoValue) v = remap[v];
        };
        auto fix_op = [&](Operand& o) {
            if (o.is_value()) fix(o.value);
        };
        for (Block& b : f_.blocks) {
            for (Instr& ins : b.instrs) {
                if (ins.has_result()) fix(ins.result);
                for (Operand& o : ins.args) fix_op(o);
                if (ins.synth_base_of) fix(*ins.synth_base_of);
                if (ins.recover) fix(ins.recover->static_base);
            }
        }
        for (auto& e : map_.by_value) {
            if (e) fix_op(e->base);
        }
        for (auto& ps : pending_) {
            fix(ps.id);
            if (ps.anchor != kNoValue) fix(ps.anchor);
            fix_op(ps.cond);
            for (auto& a : ps.args) fix_op(a);
        }
        for (auto& [v, sb] : existing_synth_) (void)v, fix(sb);
        build_def_map();
    }

    void materialize() {
        if (pending_.empty()) return;
        // choose each node's type; mismatched value arms get bridging casts
        for (auto& ps : pending_) {
            const Type* uniform = nullptr;
            bool same = true;
            for (const Operand& a : ps.args) {
                const Type* t = a.is_value() ? f_.values[a.value].type : a.type;
                if (!uniform) uniform = t;
                else if (t != uniform) same = false;
            }
            const Type* ty = same && uniform ? uniform : m_.types.byte_ptr();
            f_.values[ps.id].type = ty;
            map_.by_value[ps.id]->base = self_operand(ps.id);
            if (!same) {
                for (size_t a = 0; a < ps.args.size(); a++) {
                    ps.args[a] = bridge_cast(ps, a, ty);
                }
            }
        }
        // group insertions per (block, anchor)
        for (BlockId b = 0; b < f_.blocks.size(); b++) {
            std::vector<Instr> out;
            Block& blk = f_.blocks[b];
            for (size_t i = 0; i < blk.instrs.size(); i++) {
                bool is_anchor_of = blk.instrs[i].has_result();
                ValueId res = is_anchor_of ? blk.instrs[i].result : kNoValue;
                for (auto& sc : select_casts_) {
                    if (sc.block == b && sc.anchor == res)
                        out.push_back(std::move(sc.cast));
                }
                for (auto& ps : pending_) {
                    if (ps.block == b && ps.anchor == res)
                        out.push_back(make_synth_instr(ps));
                }
                out.push_back(std::move(blk.instrs[i]));
            }
            blk.instrs = std::move(out);
        }
        // edge casts go just before the predecessor terminator
        for (auto& ec : edge_casts_) {
            Block& pb = f_.blocks[ec.pred];
            Instr cast;
            cast.op = Opcode::Bitcast;
            cast.type = ec.to;
            cast.args = {ec.from};
            cast.result = ec.result;
            cast.pass_generated = true;
            pb.instrs.insert(pb.instrs.end() - 1, std::move(cast));
        }
        // operand types on entries may predate merge-type selection
        for (auto& e : map_.by_value) {
            if (e && e->base.is_value()) e->base.type = f_.values[e->base.value].type;
        }
    }

    struct EdgeCast {
        BlockId pred;
        Operand from;
        const Type* to;
        ValueId result;
    };

    Operand bridge_cast(PendingSynth& ps, size_t arm, const Type* to) {
        Operand a = ps.args[arm];
        const Type* t = a.is_value() ? f_.values[a.value].type : a.type;
        if (t == to) return a;
        if (a.is_null()) return Operand::null_ptr(to);
        ValueId cv = f_.add_value("cast" + std::to_string(f_.values.size()), to);
        map_.by_value.push_back(BaseEntry{a, Provenance::Backtracked});
        defs_.push_back(DefSite{});
        if (ps.is_phi) {
            edge_casts_.push_back({ps.phi_blocks[arm], a, to, cv});
        } else {
            // select: cast sits right where the merge will, before the anchor
            Instr cast;
            cast.op = Opcode::Bitcast;
            cast.type = to;
            cast.args = {a};
            cast.result = cv;
            cast.pass_generated = true;
            select_casts_.push_back({ps.block, ps.anchor, std::move(cast)});
        }
        return Operand::value_ref(cv, to);
    }

    Instr make_synth_instr(PendingSynth& ps) {
        Instr ins;
        ins.op = ps.is_phi ? Opcode::Phi : Opcode::Select;
        ins.type = f_.values[ps.id].type;
        ins.result = ps.id;
        ins.pass_generated = true;
        ins.synth_base_of = ps.synth_for;
        if (ps.is_phi) {
            ins.args = ps.args;
            ins.phi_blocks = ps.phi_blocks;
        } else {
            ins.args = {ps.cond, ps.args[0], ps.args[1]};
        }
        return ins;
    }

    Module& m_;
    Function& f_;
    StaticBaseMap map_;
    std::vector<DefSite> defs_;
    std::vector<PendingSynth> pending_;
    std::vector<EdgeCast> edge_casts_;
    struct SelectCast {
        BlockId block;
        ValueId anchor;
        Instr cast;
    };
    std::vector<SelectCast> select_casts_;
    std::unordered_map<ValueId, ValueId> existing_synth_;
};

}  // namespace

StaticBaseMap compute_static_bases(Module& m, size_t func_index) {
    BasePass pass(m, m.functions[func_index]);
    return pass.run();
}

std::optional<int64_t> const_disp_from_base(const Function& f,
                                            const StaticBaseMap& map,
                                            ValueId v) {
    const BaseEntry* e = map.lookup(v);
    if (!e) return std::nullopt;
    // def-site table for the walk
    int64_t disp = 0;
    Operand cur = Operand::value_ref(v, f.values[v].type);
    for (int steps = 0; steps < 4096; steps++) {
        if (same_operand(cur, e->base)) return disp;
        if (!cur.is_value()) return std::nullopt;
        const Instr* def = nullptr;
        for (const Block& b : f.blocks) {
            for (const Instr& ins : b.instrs) {
                if (ins.has_result() && ins.result == cur.value) {
                    def = &ins;
                    break;
                }
            }
            if (def) break;
        }
        if (!def) return std::nullopt;
        if (def->op == Opcode::Gep) {
            if (!def->args[1].is_const()) return std::nullopt;
            disp += def->args[1].imm * static_cast<int64_t>(size_of(def->type));
            cur = def->args[0];
        } else if (def->op == Opcode::Bitcast) {
            cur = def->args[0];
        } else {
            return std::nullopt;
        }
    }
    return std::nullopt;
}

std::string dump_static_bases(const Module& m, const Function& f,
                              const StaticBaseMap& map) {
    std::ostringstream os;
    for (ValueId v = 0; v < f.values.size() && v < map.by_value.size(); v++) {
        const BaseEntry* e = map.lookup(v);
        if (!e) continue;
        os << "%" << f.values[v].name << " -> ";
        switch (e->base.kind) {
            case Operand::Kind::Value:
                os << "%" << f.values[e->base.value].name;
                break;
            case Operand::Kind::Global:
                os << "@" << m.globals[e->base.index].name;
                break;
            case Operand::Kind::Func:
                os << "@" << m.functions[e->base.index].name;
                break;
            case Operand::Kind::Null:
                os << "null";
                break;
            default:
                os << "?";
                break;
        }
        os << " (" << provenance_name(e->prov) << ")\n";
    }
    return os.str();
}

}  // namespace tagguard::analysis
