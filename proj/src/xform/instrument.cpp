#include "tagguard/xform/instrument.hpp"

#include <cassert>
#include <optional>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "tagguard/analysis/cfg.hpp"
#include "tagguard/analysis/loop_info.hpp"
#include "tagguard/analysis/static_base.hpp"
#include "tagguard/rt/tag.hpp"

namespace tagguard::xform {

using namespace mir;
using analysis::BaseEntry;
using analysis::Provenance;
using analysis::StaticBaseMap;

std::string InstrumentStats::to_json() const {
    std::ostringstream os;
    os << "{\"version\":1,"
       << "\"checks_inserted\":" << checks_inserted << ","
       << "\"checks_elided\":" << checks_elided << ","
       << "\"checks_hoisted\":" << checks_hoisted << ","
       << "\"tag_updates_inserted\":" << tag_updates_inserted << ","
       << "\"tag_updates_exempted\":" << tag_updates_exempted << ","
       << "\"invalidates_inserted\":" << invalidates_inserted << "}";
    return os.str();
}

namespace {

bool is_library_intrinsic(Intrinsic i) {
    switch (i) {
        case Intrinsic::Malloc:
        case Intrinsic::Free:
        case Intrinsic::Memcpy:
        case Intrinsic::Memset:
        case Intrinsic::Memmove:
        case Intrinsic::Strlen:
        case Intrinsic::Strcpy:
        case Intrinsic::Strstr:
        case Intrinsic::Qsort:
        case Intrinsic::Print:
        case Intrinsic::Exit:
        case Intrinsic::MmapAnon:
            return true;
        default:
            return false;
    }
}

// Pointer-typed leaf fields of t, as byte offsets.
void pointer_field_offsets(const Type* t, uint64_t base,
                           std::vector<std::pair<uint64_t, const Type*>>& out) {
    switch (t->kind) {
        case TypeKind::Pointer:
            out.emplace_back(base, t);
            return;
        case TypeKind::Array:
            for (uint64_t i = 0; i < t->count; i++)
                pointer_field_offsets(t->elem, base + i * size_of(t->elem), out);
            return;
        case TypeKind::Struct:
            for (size_t i = 0; i < t->fields.size(); i++)
                pointer_field_offsets(t->fields[i], base + struct_field_offset(t, i),
                                      out);
            return;
        default:
            return;
    }
}

struct HoistPlan {
    const Type* elem = nullptr;
    Operand array_ptr;             // loop-invariant gep base
    Operand init, bound;           // induction range
    Operand inv_addend;            // constant 0 when absent
    Operand base;                  // static base for get_base
    bool suspect = false;
    BlockId preheader = 0;
    bool negative = false;
};

// Per-access plan; sites are planned first, then emitted in one rewrite.
// Everything derived from the pre-rewrite function is captured here, since
// emission moves the original instructions out from under the analyses.
struct SitePlan {
    bool elide = false;
    bool hoisted = false;
    std::optional<HoistPlan> hoist;
    int64_t disp = 0;  // valid when elide
    Operand base;
    bool suspect = false;
};

// Planned action for one escaping pointer operand.
struct EscapeAction {
    enum class Kind : uint8_t { Update, Exempt, Invalidate } kind = Kind::Exempt;
    uint64_t access_size = 1;
    Operand base;
    bool suspect = false;
};

// Planned argument-range check for a copying intrinsic.
struct RangeCheckPlan {
    size_t ptr_index;
    size_t len_index;
    Operand base;
    bool suspect = false;
};

class FunctionInstrumenter {
public:
    FunctionInstrumenter(Module& m, size_t fi, const InstrumentOptions& opts,
                         InstrumentStats& stats, DiagList& diags)
        : m_(m), f_(m.functions[fi]), func_index_(fi), opts_(opts), stats_(stats),
          diags_(diags), ts_(m.types) {
        for (const ValueInfo& v : f_.values) used_names_.insert(v.name);
    }

    StaticBaseMap run() {
        sbmap_ = analysis::compute_static_bases(m_, func_index_);
        rewrite_allocations();
        plan_checks();
        if (opts_.loop_opt) plan_hoists();
        emit();
        return std::move(sbmap_);
    }

private:
    // ----- helpers -----

    ValueId fresh(const std::string& hint, const Type* t) {
        std::string name;
        do {
            name = "." + hint + std::to_string(counter_++);
        } while (used_names_.count(name));
        used_names_.insert(name);
        ValueId v = f_.add_value(name, t);
        return v;
    }

    Operand use(ValueId v) const {
        return Operand::value_ref(v, f_.values[v].type);
    }

    Operand refresh(Operand o) const {
        if (o.is_value()) o.type = f_.values[o.value].type;
        return o;
    }

    Instr make_intrinsic(Intrinsic id, std::vector<Operand> args, ValueId result) {
        Instr ins;
        ins.op = Opcode::IntrinsicCall;
        ins.intrinsic = id;
        ins.args = std::move(args);
        ins.result = result;
        ins.pass_generated = true;
        return ins;
    }

    // ----- allocation rewrites -----

    void rewrite_allocations() {
        mark_registered_allocas();
        std::vector<ValueId> big_raw;  // malloc results needing free at exits
        for (BlockId b = 0; b < f_.blocks.size(); b++) {
            std::vector<Instr> out;
            for (Instr& ins : f_.blocks[b].instrs) {
                if (ins.op != Opcode::Alloca) {
                    out.push_back(std::move(ins));
                    continue;
                }
                uint64_t osize = size_of(ins.type);
                if (osize >= rt::kMaxOffset) {
                    if (b != 0) {
                        diags_.push_back(
                            {{0, 0},
                             "@" + f_.name + ": unsupported construct: large stack "
                             "allocation outside the entry block"});
                        out.push_back(std::move(ins));
                        continue;
                    }
                    // heap-managed stack object: malloc here, free at exits
                    ValueId raw = fresh("big", ts_.byte_ptr());
                    out.push_back(make_intrinsic(
                        Intrinsic::Malloc,
                        {Operand::constant(static_cast<int64_t>(osize), ts_.i64())},
                        raw));
                    Instr cast;
                    cast.op = Opcode::Bitcast;
                    cast.type = ts_.ptr_ty(ins.type);
                    cast.args = {use(raw)};
                    cast.result = ins.result;
                    cast.pass_generated = true;
                    out.push_back(std::move(cast));
                    big_raw.push_back(raw);
                    continue;
                }
                ValueId av = ins.result;
                const Type* oty = ins.type;
                out.push_back(std::move(ins));
                emit_pointer_field_init(out, av, oty);
            }
            f_.blocks[b].instrs = std::move(out);
        }
        if (!big_raw.empty()) {
            for (Block& blk : f_.blocks) {
                if (blk.instrs.empty() || blk.instrs.back().op != Opcode::Ret) continue;
                Instr ret = std::move(blk.instrs.back());
                blk.instrs.pop_back();
                for (ValueId raw : big_raw) {
                    blk.instrs.push_back(
                        make_intrinsic(Intrinsic::Free, {use(raw)}, kNoValue));
                }
                blk.instrs.push_back(std::move(ret));
            }
        }
    }

    void emit_pointer_field_init(std::vector<Instr>& out, ValueId alloca_val,
                                 const Type* oty) {
        std::vector<std::pair<uint64_t, const Type*>> fields;
        pointer_field_offsets(oty, 0, fields);
        if (fields.empty()) return;
        ValueId as_bytes = fresh("obj", ts_.byte_ptr());
        Instr cast;
        cast.op = Opcode::Bitcast;
        cast.type = ts_.byte_ptr();
        cast.args = {use(alloca_val)};
        cast.result = as_bytes;
        cast.pass_generated = true;
        out.push_back(std::move(cast));
        for (auto [off, pty] : fields) {
            ValueId faddr = fresh("fld", ts_.ptr_ty(ts_.i8()));
            Instr gep;
            gep.op = Opcode::Gep;
            gep.type = ts_.i8();
            gep.args = {use(as_bytes),
                        Operand::constant(static_cast<int64_t>(off), ts_.i64())};
            gep.result = faddr;
            gep.pass_generated = true;
            out.push_back(std::move(gep));
            ValueId slot = fresh("slot", ts_.ptr_ty(pty));
            Instr c2;
            c2.op = Opcode::Bitcast;
            c2.type = ts_.ptr_ty(pty);
            c2.args = {use(faddr)};
            c2.result = slot;
            c2.pass_generated = true;
            out.push_back(std::move(c2));
            Instr st;
            st.op = Opcode::Store;
            st.type = pty;
            st.args = {Operand::null_ptr(pty), use(slot)};
            st.pass_generated = true;
            out.push_back(std::move(st));
        }
    }

    // Stack objects that escape or are cast to an integer must be findable
    // through the allocator while their frame is live. Escape-ness flows
    // backward through derivations so a phi merging two arrays marks both.
    void mark_registered_allocas() {
        std::unordered_set<ValueId> escaping;
        auto seed = [&](const Operand& o) {
            if (o.is_value()) escaping.insert(o.value);
        };
        for (Block& b : f_.blocks) {
            for (Instr& ins : b.instrs) {
                switch (ins.op) {
                    case Opcode::Store:
                        seed(ins.args[0]);
                        break;
                    case Opcode::PtrToInt:
                        seed(ins.args[0]);
                        break;
                    case Opcode::Call:
                    case Opcode::IntrinsicCall:
                        for (const Operand& o : ins.args) seed(o);
                        break;
                    case Opcode::ICall:
                        for (size_t a = 1; a < ins.args.size(); a++) seed(ins.args[a]);
                        break;
                    case Opcode::Ret:
                        if (!ins.args.empty()) seed(ins.args[0]);
                        break;
                    default:
                        break;
                }
            }
        }
        bool changed = true;
        while (changed) {
            changed = false;
            for (Block& b : f_.blocks) {
                for (Instr& ins : b.instrs) {
                    if (!ins.has_result() || !escaping.count(ins.result)) continue;
                    size_t from = 0;
                    switch (ins.op) {
                        case Opcode::Select:
                            from = 1;
                            [[fallthrough]];
                        case Opcode::Gep:
                        case Opcode::Bitcast:
                        case Opcode::Phi:
                            for (size_t a = from; a < ins.args.size(); a++) {
                                const Operand& o = ins.args[a];
                                if (a == 1 && ins.op == Opcode::Gep) continue;
                                if (o.is_value() && escaping.insert(o.value).second)
                                    changed = true;
                            }
                            break;
                        default:
                            break;
                    }
                }
            }
        }
        for (Block& b : f_.blocks) {
            for (Instr& ins : b.instrs) {
                if (ins.op == Opcode::Alloca && size_of(ins.type) < rt::kMaxOffset &&
                    escaping.count(ins.result)) {
                    ins.alloca_registered = true;
                }
            }
        }
    }

    // ----- check planning -----

    struct SiteKey {
        BlockId block;
        size_t index;
        bool operator==(const SiteKey& o) const {
            return block == o.block && index == o.index;
        }
    };
    struct SiteKeyHash {
        size_t operator()(const SiteKey& k) const {
            return std::hash<uint64_t>()(uint64_t{k.block} << 32 | k.index);
        }
    };
    struct ArgKey {
        BlockId block;
        size_t index;
        size_t arg;
        bool operator==(const ArgKey& o) const {
            return block == o.block && index == o.index && arg == o.arg;
        }
    };
    struct ArgKeyHash {
        size_t operator()(const ArgKey& k) const {
            return std::hash<uint64_t>()((uint64_t{k.block} << 40) ^
                                         (uint64_t{k.index} << 16) ^ k.arg);
        }
    };

    const BaseEntry* entry_of_operand(const Operand& o) {
        if (o.is_value()) return sbmap_.lookup(o.value);
        return nullptr;
    }

    // Base operand for get_base at a site whose pointer operand is o.
    Operand base_operand(const Operand& o) {
        if (o.is_value()) {
            const BaseEntry* e = sbmap_.lookup(o.value);
            assert(e);
            return refresh(e->base);
        }
        return o;  // globals / null are their own bases
    }

    bool base_is_suspect(const Operand& o) {
        const BaseEntry* e = entry_of_operand(o);
        return e && e->prov == Provenance::IntArithSuspect;
    }

    // Constant displacement of pointer operand o from its static base.
    std::optional<int64_t> disp_of(const Operand& o) {
        if (o.kind == Operand::Kind::Global || o.kind == Operand::Kind::Func)
            return 0;
        if (!o.is_value()) return std::nullopt;
        return analysis::const_disp_from_base(f_, sbmap_, o.value);
    }

    // Size certified by a static base: the byte size of its pointee.
    std::optional<uint64_t> base_elem_size(const Operand& base) {
        const Type* t = base.is_value() ? f_.values[base.value].type : base.type;
        if (!t || !t->is_pointer() || t->pointee->is_function()) return std::nullopt;
        return size_of(t->pointee);
    }

    void plan_checks() {
        for (BlockId b = 0; b < f_.blocks.size(); b++) {
            for (size_t i = 0; i < f_.blocks[b].instrs.size(); i++) {
                const Instr& ins = f_.blocks[b].instrs[i];
                if (ins.pass_generated) continue;
                plan_escapes(b, i, ins);
                if (ins.op != Opcode::Load && ins.op != Opcode::Store) continue;
                const Operand& addr = ins.args[ins.op == Opcode::Load ? 0 : 1];
                uint64_t width = size_of(ins.type);
                SitePlan plan;
                plan.base = base_operand(addr);
                plan.suspect = base_is_suspect(addr);
                if (opts_.size_invariant && !plan.suspect) {
                    auto disp = disp_of(addr);
                    auto esize = base_elem_size(plan.base);
                    if (disp && esize && *disp >= 0 &&
                        static_cast<uint64_t>(*disp) + width <= *esize) {
                        plan.elide = true;
                        plan.disp = *disp;
                        stats_.checks_elided++;
                    }
                }
                sites_[{b, i}] = plan;
            }
        }
    }

    // Escape decisions are made against the pre-rewrite function.
    void plan_escapes(BlockId b, size_t i, const Instr& ins) {
        auto plan_one = [&](size_t arg_index, const Type* dest_pointee) {
            const Operand& v = ins.args[arg_index];
            const Type* vt = v.is_value() ? f_.values[v.value].type : v.type;
            if (!vt || !vt->is_pointer()) return;
            EscapeAction act;
            act.access_size = access_size_for(dest_pointee);
            if (v.is_null()) {
                act.kind = EscapeAction::Kind::Exempt;
                stats_.tag_updates_exempted++;
            } else if (vt->is_function_pointer()) {
                act.kind = EscapeAction::Kind::Invalidate;
                stats_.invalidates_inserted++;
            } else {
                act.base = base_operand(v);
                act.suspect = base_is_suspect(v);
                auto disp = disp_of(v);
                auto esize = base_elem_size(act.base);
                if (disp && *disp == 0 && esize && act.access_size <= *esize) {
                    act.kind = EscapeAction::Kind::Exempt;
                    stats_.tag_updates_exempted++;
                } else {
                    act.kind = EscapeAction::Kind::Update;
                    stats_.tag_updates_inserted++;
                }
            }
            escapes_[{b, i, arg_index}] = act;
        };
        switch (ins.op) {
            case Opcode::Store:
                if (ins.type->is_pointer()) plan_one(0, ins.type->pointee);
                break;
            case Opcode::Call: {
                const Function& callee = m_.functions[ins.callee];
                for (size_t a = 0; a < ins.args.size(); a++) {
                    if (callee.param_types[a]->is_pointer())
                        plan_one(a, callee.param_types[a]->pointee);
                }
                break;
            }
            case Opcode::ICall: {
                const Type* sig = ins.args[0].type->pointee;
                for (size_t a = 1; a < ins.args.size(); a++) {
                    if (sig->params[a - 1]->is_pointer())
                        plan_one(a, sig->params[a - 1]->pointee);
                }
                break;
            }
            case Opcode::IntrinsicCall: {
                if (!is_library_intrinsic(ins.intrinsic)) break;
                for (size_t a = 0; a < ins.args.size(); a++) {
                    const Operand& o = ins.args[a];
                    const Type* ot = o.is_value() ? f_.values[o.value].type : o.type;
                    if (ot && ot->is_pointer()) plan_one(a, ot->pointee);
                }
                plan_intrinsic_ranges(b, i, ins);
                break;
            }
            case Opcode::Ret:
                if (!ins.args.empty() && f_.ret_type && f_.ret_type->is_pointer())
                    plan_one(0, f_.ret_type->pointee);
                break;
            default:
                break;
        }
    }

    void plan_intrinsic_ranges(BlockId b, size_t i, const Instr& ins) {
        std::vector<std::pair<size_t, size_t>> ranges;
        switch (ins.intrinsic) {
            case Intrinsic::Memcpy:
            case Intrinsic::Memmove:
                ranges = {{0, 2}, {1, 2}};
                break;
            case Intrinsic::Memset:
                ranges = {{0, 2}};
                break;
            default:
                return;
        }
        for (auto [pi, li] : ranges) {
            const Operand& p = ins.args[pi];
            const Type* pt = p.is_value() ? f_.values[p.value].type : p.type;
            if (!pt || !pt->is_pointer() || p.is_null()) continue;
            RangeCheckPlan rc;
            rc.ptr_index = pi;
            rc.len_index = li;
            rc.base = base_operand(p);
            rc.suspect = base_is_suspect(p);
            range_checks_[{b, i}].push_back(rc);
        }
    }

    // ----- loop hoisting -----

    struct IndVar {
        ValueId iv = kNoValue;       // header phi
        ValueId next = kNoValue;     // add feeding the back edge
        Operand init, bound;
        int64_t step = 0;
        BlockId preheader = 0;
    };

    bool value_in_loop(ValueId v, const analysis::NaturalLoop& loop,
                       const std::vector<std::pair<BlockId, size_t>>& defsites) {
        if (v == kNoValue || v < f_.num_params) return false;
        return loop.contains(defsites[v].first);
    }

    bool operand_invariant(const Operand& o, const analysis::NaturalLoop& loop,
                           const std::vector<std::pair<BlockId, size_t>>& defs) {
        if (!o.is_value()) return true;
        return !value_in_loop(o.value, loop, defs);
    }

    void plan_hoists() {
        analysis::Cfg cfg = analysis::build_cfg(f_);
        auto loops = analysis::find_natural_loops(f_, cfg);
        std::vector<std::pair<BlockId, size_t>> defs(f_.values.size(), {0, 0});
        for (BlockId b = 0; b < f_.blocks.size(); b++)
            for (size_t i = 0; i < f_.blocks[b].instrs.size(); i++)
                if (f_.blocks[b].instrs[i].has_result())
                    defs[f_.blocks[b].instrs[i].result] = {b, i};

        for (const auto& loop : loops) {
            auto iv = match_loop(loop, cfg, defs);
            if (!iv) continue;
            for (auto& [key, plan] : sites_) {
                if (plan.elide || plan.hoisted) continue;
                if (!loop.contains(key.block)) continue;
                if (!cfg.dominates(key.block, loop.latch)) continue;
                const Instr& ins = f_.blocks[key.block].instrs[key.index];
                const Operand& addr = ins.args[ins.op == Opcode::Load ? 0 : 1];
                if (!addr.is_value()) continue;
                auto hp = match_address(addr.value, *iv, loop, defs);
                if (!hp) continue;
                if (size_of(hp->elem) != size_of(ins.type)) continue;
                // base for get_base must be loop-invariant as well
                if (!operand_invariant(plan.base, loop, defs)) continue;
                hp->base = plan.base;
                hp->suspect = plan.suspect;
                hp->preheader = iv->preheader;
                hp->negative = iv->step < 0;
                plan.hoisted = true;
                plan.hoist = *hp;
                stats_.checks_hoisted++;
            }
        }
    }

    // Recognizes the guarded bottom-tested loop shape:
    //   guard:     %g = icmp sgt %bound, %init ; condbr %g, preheader, ...
    //   preheader: br header
    //   header..latch: %i = phi [%init, preheader], [%i.next, latch]
    //   latch:     %i.next = add %i, step
    //              %c = icmp slt %i.next, %bound ; condbr %c, header, exit
    std::optional<IndVar> match_loop(const analysis::NaturalLoop& loop,
                                     const analysis::Cfg& cfg,
                                     const std::vector<std::pair<BlockId, size_t>>& defs) {
        // single exit, from the latch
        size_t exit_edges = 0;
        for (BlockId b = 0; b < f_.blocks.size(); b++) {
            if (!loop.contains(b)) continue;
            for (BlockId s : cfg.succs[b]) {
                if (!loop.contains(s)) {
                    exit_edges++;
                    if (b != loop.latch) return std::nullopt;
                }
            }
        }
        if (exit_edges != 1) return std::nullopt;
        const Block& latch = f_.blocks[loop.latch];
        if (latch.instrs.size() < 2) return std::nullopt;
        const Instr& term = latch.instrs.back();
        if (term.op != Opcode::CondBr || term.br_true != loop.header)
            return std::nullopt;
        const Operand& cond = term.args[0];
        if (!cond.is_value()) return std::nullopt;
        auto [cb, ci] = defs[cond.value];
        const Instr& cmp = f_.blocks[cb].instrs[ci];
        if (cmp.op != Opcode::ICmp) return std::nullopt;
        bool negative;
        if (cmp.pred == CmpPred::Slt || cmp.pred == CmpPred::Ult) negative = false;
        else if (cmp.pred == CmpPred::Sgt || cmp.pred == CmpPred::Ugt) negative = true;
        else return std::nullopt;
        if (negative && !opts_.hoist_negative_step) return std::nullopt;
        if (!cmp.args[0].is_value()) return std::nullopt;
        ValueId next = cmp.args[0].value;
        Operand bound = cmp.args[1];
        if (!operand_invariant(bound, loop, defs)) return std::nullopt;

        auto [nb, ni] = defs[next];
        if (!loop.contains(nb)) return std::nullopt;
        const Instr& add = f_.blocks[nb].instrs[ni];
        if (add.op != Opcode::BinOp || add.bin != BinKind::Add ||
            size_of(add.type) != 8)
            return std::nullopt;
        if (!add.args[0].is_value() || !add.args[1].is_const()) return std::nullopt;
        int64_t step = add.args[1].imm;
        if ((!negative && step != 1) || (negative && step != -1))
            return std::nullopt;
        ValueId iv = add.args[0].value;

        // induction phi in the header
        auto [pb, pi] = defs[iv];
        if (pb != loop.header) return std::nullopt;
        const Instr& phi = f_.blocks[pb].instrs[pi];
        if (phi.op != Opcode::Phi || phi.args.size() != 2) return std::nullopt;
        Operand init;
        BlockId preheader = kNoValue;
        bool back_ok = false;
        for (size_t a = 0; a < 2; a++) {
            if (phi.phi_blocks[a] == loop.latch) {
                back_ok = phi.args[a].is_value() && phi.args[a].value == next;
            } else {
                preheader = phi.phi_blocks[a];
                init = phi.args[a];
            }
        }
        if (!back_ok || preheader == kNoValue) return std::nullopt;
        if (!operand_invariant(init, loop, defs)) return std::nullopt;

        // preheader: unconditional branch, single predecessor = the guard
        const Block& ph = f_.blocks[preheader];
        if (ph.instrs.empty() || ph.instrs.back().op != Opcode::Br) return std::nullopt;
        if (cfg.preds[preheader].size() != 1) return std::nullopt;
        BlockId guard = cfg.preds[preheader][0];
        const Instr& gterm = f_.blocks[guard].instrs.back();
        if (gterm.op != Opcode::CondBr || gterm.br_true != preheader)
            return std::nullopt;
        if (!gterm.args[0].is_value()) return std::nullopt;
        auto [gb, gi] = defs[gterm.args[0].value];
        const Instr& gcmp = f_.blocks[gb].instrs[gi];
        if (gcmp.op != Opcode::ICmp) return std::nullopt;
        // the guard must witness at least one iteration over the same range
        auto same = [](const Operand& a, const Operand& b) {
            if (a.kind != b.kind) return false;
            if (a.is_value()) return a.value == b.value;
            if (a.is_const()) return a.imm == b.imm;
            return false;
        };
        bool guard_ok = false;
        if (!negative) {
            // bound > init, in either spelling
            if ((gcmp.pred == CmpPred::Sgt || gcmp.pred == CmpPred::Ugt) &&
                same(gcmp.args[0], bound) && same(gcmp.args[1], init))
                guard_ok = true;
            if ((gcmp.pred == CmpPred::Slt || gcmp.pred == CmpPred::Ult) &&
                same(gcmp.args[0], init) && same(gcmp.args[1], bound))
                guard_ok = true;
        } else {
            // init > bound
            if ((gcmp.pred == CmpPred::Sgt || gcmp.pred == CmpPred::Ugt) &&
                same(gcmp.args[0], init) && same(gcmp.args[1], bound))
                guard_ok = true;
            if ((gcmp.pred == CmpPred::Slt || gcmp.pred == CmpPred::Ult) &&
                same(gcmp.args[0], bound) && same(gcmp.args[1], init))
                guard_ok = true;
        }
        if (!guard_ok) return std::nullopt;

        IndVar out;
        out.iv = iv;
        out.next = next;
        out.init = init;
        out.bound = bound;
        out.step = step;
        out.preheader = preheader;
        return out;
    }

    // addr must be gep(elem, P, idx) with P invariant and idx affine in the
    // induction variable with coefficient one.
    std::optional<HoistPlan> match_address(
        ValueId addr, const IndVar& iv, const analysis::NaturalLoop& loop,
        const std::vector<std::pair<BlockId, size_t>>& defs) {
        auto [ab, ai] = defs[addr];
        const Instr& gep = f_.blocks[ab].instrs[ai];
        if (gep.op != Opcode::Gep) return std::nullopt;
        if (!operand_invariant(gep.args[0], loop, defs)) return std::nullopt;
        const Operand& idx = gep.args[1];
        HoistPlan hp;
        hp.elem = gep.type;
        hp.array_ptr = gep.args[0];
        hp.init = iv.init;
        hp.bound = iv.bound;
        hp.inv_addend = Operand::constant(0, ts_.i64());
        if (idx.is_value() && idx.value == iv.iv) return hp;
        if (!idx.is_value()) return std::nullopt;
        auto [ib, ii] = defs[idx.value];
        if (!loop.contains(ib)) return std::nullopt;
        const Instr& add = f_.blocks[ib].instrs[ii];
        if (add.op != Opcode::BinOp || add.bin != BinKind::Add) return std::nullopt;
        const Operand& l = add.args[0];
        const Operand& r = add.args[1];
        if (l.is_value() && l.value == iv.iv && operand_invariant(r, loop, defs)) {
            hp.inv_addend = r;
            return hp;
        }
        if (r.is_value() && r.value == iv.iv && operand_invariant(l, loop, defs)) {
            hp.inv_addend = l;
            return hp;
        }
        return std::nullopt;
    }

    // ----- emission -----

    void emit() {
        // preheader sequences grouped by block
        std::unordered_map<BlockId, std::vector<Instr>> preheader_code;
        for (auto& [key, plan] : sites_) {
            if (!plan.hoisted) continue;
            const Instr& ins = f_.blocks[key.block].instrs[key.index];
            emit_hoisted_check(preheader_code[plan.hoist->preheader], *plan.hoist,
                               ins.op == Opcode::Store);
        }
        for (BlockId b = 0; b < f_.blocks.size(); b++) {
            std::vector<Instr> out;
            std::vector<Instr>& src = f_.blocks[b].instrs;
            for (size_t i = 0; i < src.size(); i++) {
                Instr ins = std::move(src[i]);
                bool is_term = ins.is_terminator();
                if (is_term) {
                    if (auto it = preheader_code.find(b); it != preheader_code.end()) {
                        for (Instr& p : it->second) out.push_back(std::move(p));
                        preheader_code.erase(it);
                    }
                }
                if (!ins.pass_generated) {
                    size_t before = out.size();
                    rewrite_instr(out, ins, {b, i});
                    if (!ins.loc.empty()) {
                        // inserted checks answer for the guarded access
                        for (size_t n = before; n < out.size(); n++)
                            out[n].loc = ins.loc;
                    }
                }
                out.push_back(std::move(ins));
            }
            f_.blocks[b].instrs = std::move(out);
        }
    }

    void rewrite_instr(std::vector<Instr>& out, Instr& ins, SiteKey key) {
        auto escape_args = [&]() {
            for (size_t a = 0; a < ins.args.size(); a++) {
                auto it = escapes_.find({key.block, key.index, a});
                if (it == escapes_.end()) continue;
                ins.args[a] = apply_escape(out, ins.args[a], it->second);
            }
        };
        switch (ins.op) {
            case Opcode::Store:
                // escaping stored pointer first, then the address check
                escape_args();
                apply_access_check(out, ins, key, /*addr_index=*/1);
                break;
            case Opcode::Load:
                apply_access_check(out, ins, key, /*addr_index=*/0);
                break;
            case Opcode::PCmp:
            case Opcode::PSub:
                for (size_t a = 0; a < 2; a++) {
                    if (ins.args[a].is_null()) continue;  // tag statically zero
                    ins.args[a] = wrap_unary(out, Intrinsic::ResetTag, ins.args[a]);
                }
                break;
            case Opcode::Call:
            case Opcode::Ret:
                escape_args();
                break;
            case Opcode::ICall:
                // the callee pointer itself is reset before dispatch
                ins.args[0] = wrap_unary(out, Intrinsic::ResetTag, ins.args[0]);
                escape_args();
                break;
            case Opcode::IntrinsicCall:
                emit_intrinsic_arg_checks(out, ins, key);
                escape_args();
                break;
            default:
                break;
        }
    }

    uint64_t access_size_for(const Type* pointee) {
        if (pointee->is_function()) return 1;
        uint64_t s = size_of(pointee);
        return s == 0 ? 1 : s;
    }

    // update_tag (or invalidate, for function addresses) for one escaping
    // pointer; returns the operand to use at the site.
    Operand apply_escape(std::vector<Instr>& out, Operand v, const EscapeAction& act) {
        switch (act.kind) {
            case EscapeAction::Kind::Exempt:
                return v;
            case EscapeAction::Kind::Invalidate:
                return wrap_unary(out, Intrinsic::Invalidate, v);
            case EscapeAction::Kind::Update:
                break;
        }
        const Type* vt = v.is_value() ? f_.values[v.value].type : v.type;
        ValueId b = fresh("b", ts_.byte_ptr());
        out.push_back(make_intrinsic(
            act.suspect ? Intrinsic::GetBaseAlloc : Intrinsic::GetBaseFt,
            {refresh(act.base)}, b));
        ValueId lim = fresh("lim", ts_.byte_ptr());
        out.push_back(make_intrinsic(Intrinsic::ObjectLimitFt, {use(b)}, lim));
        ValueId upd = fresh("tag", vt);
        out.push_back(make_intrinsic(
            Intrinsic::UpdateTag,
            {use(b), v,
             Operand::constant(static_cast<int64_t>(act.access_size), ts_.i64()),
             use(lim)},
            upd));
        return use(upd);
    }

    Operand wrap_unary(std::vector<Instr>& out, Intrinsic id, Operand v) {
        const Type* vt = v.is_value() ? f_.values[v.value].type : v.type;
        ValueId r = fresh("r", vt);
        out.push_back(make_intrinsic(id, {v}, r));
        return use(r);
    }

    void apply_access_check(std::vector<Instr>& out, Instr& ins, SiteKey key,
                            size_t addr_index) {
        auto it = sites_.find(key);
        if (it == sites_.end()) return;
        const SitePlan& plan = it->second;
        Operand addr = ins.args[addr_index];
        uint64_t width = size_of(ins.type);
        if (plan.elide) {
            // offset-only reset keeps the invalid bit live for recovery
            Operand cleaned = wrap_unary(out, Intrinsic::ResetOffset, addr);
            ins.args[addr_index] = cleaned;
            if (plan.base.is_value()) {
                ins.recover = RecoverInfo{plan.base.value, plan.disp};
            }
            return;
        }
        if (plan.hoisted) {
            ins.args[addr_index] = wrap_unary(out, Intrinsic::ResetTag, addr);
            return;
        }
        ValueId b = fresh("b", ts_.byte_ptr());
        out.push_back(make_intrinsic(
            plan.suspect ? Intrinsic::GetBaseAlloc : Intrinsic::GetBase,
            {refresh(plan.base)}, b));
        ValueId lim = fresh("lim", ts_.byte_ptr());
        out.push_back(make_intrinsic(Intrinsic::ObjectLimit, {use(b)}, lim));
        Operand cleaned = wrap_unary(out, Intrinsic::ResetTag, addr);
        ValueId end = fresh("end", ts_.byte_ptr());
        Instr gep;
        gep.op = Opcode::Gep;
        gep.type = ts_.i8();
        gep.args = {cleaned, Operand::constant(static_cast<int64_t>(width), ts_.i64())};
        gep.result = end;
        gep.pass_generated = true;
        out.push_back(std::move(gep));
        Instr bc = make_intrinsic(Intrinsic::BoundsCheck,
                                  {use(b), cleaned, use(end), use(lim)}, kNoValue);
        bc.check_dir = ins.op == Opcode::Store ? 2 : 1;
        out.push_back(std::move(bc));
        stats_.checks_inserted++;
        ins.args[addr_index] = cleaned;
    }

    void emit_hoisted_check(std::vector<Instr>& out, const HoistPlan& hp,
                            bool is_write) {
        auto add_inv = [&](Operand a, int64_t extra, const std::string& hint) -> Operand {
            // a + inv_addend + extra, folding constants
            Operand inv = hp.inv_addend;
            if (a.is_const() && inv.is_const()) {
                return Operand::constant(a.imm + inv.imm + extra, ts_.i64());
            }
            Operand cur = a;
            if (!(inv.is_const() && inv.imm == 0)) {
                ValueId s = fresh(hint, ts_.i64());
                Instr add;
                add.op = Opcode::BinOp;
                add.bin = BinKind::Add;
                add.type = ts_.i64();
                add.args = {cur, inv};
                add.result = s;
                add.pass_generated = true;
                out.push_back(std::move(add));
                cur = use(s);
            }
            if (extra != 0) {
                ValueId s = fresh(hint, ts_.i64());
                Instr add;
                add.op = Opcode::BinOp;
                add.bin = BinKind::Add;
                add.type = ts_.i64();
                add.args = {cur, Operand::constant(extra, ts_.i64())};
                add.result = s;
                add.pass_generated = true;
                out.push_back(std::move(add));
                cur = use(s);
            }
            return cur;
        };
        // positive step: accesses cover [P[init+inv], P[bound+inv])
        // negative step: [P[bound+1+inv], P[init+1+inv])
        Operand lo_idx = hp.negative ? add_inv(hp.bound, 1, "lo") : add_inv(hp.init, 0, "lo");
        Operand hi_idx = hp.negative ? add_inv(hp.init, 1, "hi") : add_inv(hp.bound, 0, "hi");
        auto gep_at = [&](Operand idx, const std::string& hint) {
            ValueId g = fresh(hint, ts_.ptr_ty(hp.elem));
            Instr gep;
            gep.op = Opcode::Gep;
            gep.type = hp.elem;
            gep.args = {refresh(hp.array_ptr), idx};
            gep.result = g;
            gep.pass_generated = true;
            out.push_back(std::move(gep));
            return use(g);
        };
        Operand lo = gep_at(lo_idx, "plo");
        Operand hi = gep_at(hi_idx, "phi");
        ValueId b = fresh("b", ts_.byte_ptr());
        out.push_back(make_intrinsic(
            hp.suspect ? Intrinsic::GetBaseAlloc : Intrinsic::GetBase,
            {refresh(hp.base)}, b));
        ValueId lim = fresh("lim", ts_.byte_ptr());
        out.push_back(make_intrinsic(Intrinsic::ObjectLimit, {use(b)}, lim));
        Operand lo_c = wrap_unary(out, Intrinsic::ResetTag, lo);
        Operand hi_c = wrap_unary(out, Intrinsic::ResetTag, hi);
        Instr bc = make_intrinsic(Intrinsic::BoundsCheck,
                                  {use(b), lo_c, hi_c, use(lim)}, kNoValue);
        bc.check_dir = is_write ? 2 : 1;
        out.push_back(std::move(bc));
        out.push_back(make_intrinsic(Intrinsic::HoistGuard, {lo_c, hi_c}, kNoValue));
        stats_.checks_inserted++;
    }

    // Bounds checks over full argument ranges for copying intrinsics whose
    // touched length is an explicit operand.
    void emit_intrinsic_arg_checks(std::vector<Instr>& out, const Instr& ins,
                                   SiteKey key) {
        auto it = range_checks_.find(key);
        if (it == range_checks_.end()) return;
        for (const RangeCheckPlan& rc : it->second) {
            Operand p = ins.args[rc.ptr_index];
            Operand len = refresh(ins.args[rc.len_index]);
            ValueId b = fresh("b", ts_.byte_ptr());
            out.push_back(make_intrinsic(
                rc.suspect ? Intrinsic::GetBaseAlloc : Intrinsic::GetBase,
                {refresh(rc.base)}, b));
            ValueId lim = fresh("lim", ts_.byte_ptr());
            out.push_back(make_intrinsic(Intrinsic::ObjectLimit, {use(b)}, lim));
            Operand cleaned = wrap_unary(out, Intrinsic::ResetTag, p);
            ValueId end = fresh("end", ts_.byte_ptr());
            Instr gep;
            gep.op = Opcode::Gep;
            gep.type = ts_.i8();
            gep.args = {cleaned, len};
            gep.result = end;
            gep.pass_generated = true;
            out.push_back(std::move(gep));
            out.push_back(make_intrinsic(Intrinsic::ArgBoundsCheck,
                                         {use(b), cleaned, use(end), use(lim)},
                                         kNoValue));
            stats_.checks_inserted++;
        }
    }

    Module& m_;
    Function& f_;
    size_t func_index_;
    const InstrumentOptions& opts_;
    InstrumentStats& stats_;
    DiagList& diags_;
    TypeStore& ts_;
    StaticBaseMap sbmap_;
    std::unordered_map<SiteKey, SitePlan, SiteKeyHash> sites_;
    std::unordered_map<ArgKey, EscapeAction, ArgKeyHash> escapes_;
    std::unordered_map<SiteKey, std::vector<RangeCheckPlan>, SiteKeyHash> range_checks_;
    std::unordered_set<std::string> used_names_;
    uint64_t counter_ = 0;
};

}  // namespace

InstrumentResult instrument_module(Module& m, const InstrumentOptions& opts) {
    InstrumentResult res;
    if (m.checked) {
        res.diags.push_back({{0, 0}, "module is already instrumented"});
        return res;
    }
    std::ostringstream dump;
    for (size_t fi = 0; fi < m.functions.size(); fi++) {
        FunctionInstrumenter pass(m, fi, opts, res.stats, res.diags);
        StaticBaseMap map = pass.run();
        if (opts.dump_static_bases) {
            dump << "; @" << m.functions[fi].name << "\n"
                 << analysis::dump_static_bases(m, m.functions[fi], map);
        }
    }
    if (opts.dump_static_bases) res.static_base_dump = dump.str();
    m.checked = true;
    return res;
}

}  // namespace tagguard::xform
