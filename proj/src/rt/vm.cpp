#include "tagguard/rt/vm.hpp"

#include <cassert>
#include <unordered_map>

namespace tagguard::rt {

using namespace mir;

const char* violation_kind_name(ViolationKind k) {
    switch (k) {
        case ViolationKind::OobRead: return "oob-read";
        case ViolationKind::OobWrite: return "oob-write";
        case ViolationKind::Unmapped: return "unmapped";
        case ViolationKind::InvalidUnrecoverable: return "invalid-unrecoverable";
        case ViolationKind::HoistGuard: return "hoist-guard";
        case ViolationKind::DoubleFree: return "double-free";
        case ViolationKind::IntrinsicOob: return "intrinsic-oob";
    }
    return "?";
}

int violation_exit_code(ViolationKind k) {
    switch (k) {
        case ViolationKind::OobRead:
        case ViolationKind::OobWrite: return 10;
        case ViolationKind::Unmapped: return 11;
        case ViolationKind::InvalidUnrecoverable: return 12;
        case ViolationKind::HoistGuard: return 13;
        case ViolationKind::IntrinsicOob: return 14;
        case ViolationKind::DoubleFree: return 15;
    }
    return 10;
}

std::string ViolationReport::to_json() const {
    std::ostringstream os;
    os << "{\"kind\":\"" << violation_kind_name(kind) << "\""
       << ",\"function\":\"" << function << "\""
       << ",\"block\":\"" << block << "\""
       << ",\"instr\":" << instr
       << ",\"address\":" << address
       << ",\"base\":" << base
       << ",\"limit\":" << limit
       << ",\"width\":" << width;
    if (!detail.empty()) os << ",\"detail\":\"" << detail << "\"";
    if (!loc.empty()) os << ",\"loc\":\"" << loc << "\"";
    os << "}";
    return os.str();
}

std::string ViolationReport::human() const {
    std::ostringstream os;
    os << violation_kind_name(kind) << " in @" << function << " " << block << ":"
       << instr;
    if (!loc.empty()) os << " (" << loc << ")";
    os << " address=0x" << std::hex << address << " base=0x" << base
       << " limit=0x" << limit << std::dec;
    if (!detail.empty()) os << " - " << detail;
    return os.str();
}

namespace {

struct GuestAbort {
    ViolationReport report;
};
struct GuestExit {
    int code;
};
struct VmError {
    std::string message;
};

uint64_t width_mask(uint32_t bytes) {
    return bytes >= 8 ? ~uint64_t{0} : (uint64_t{1} << (bytes * 8)) - 1;
}

int64_t sign_extend(uint64_t v, uint32_t bytes) {
    if (bytes >= 8) return static_cast<int64_t>(v);
    uint64_t sign = uint64_t{1} << (bytes * 8 - 1);
    uint64_t m = width_mask(bytes);
    v &= m;
    return static_cast<int64_t>((v ^ sign) - sign);
}

}  // namespace

struct Vm::Impl {
    const Module& m;
    VmOptions opts;
    SimMemory mem;
    SimAllocator alloc;
    VmCounters counters;
    std::ostringstream out;
    std::vector<uint64_t> global_bases;
    std::unordered_map<uint64_t, size_t> func_by_addr;
    uint64_t sp = kStackTop;
    size_t call_depth = 0;
    bool loaded = false;

    Impl(const Module& mod, VmOptions o) : m(mod), opts(o), alloc(mem, o.segment_size) {}

    struct Frame {
        const Function* f;
        size_t func_index;
        std::vector<uint64_t> regs;
        BlockId block = 0;
        size_t ip = 0;
        std::vector<std::pair<uint64_t, bool>> objects;  // base, registered
        uint64_t saved_sp = 0;
    };

    uint64_t fn_addr(size_t fi) const { return kFuncBase + fi * kFuncSpacing; }

    // ---- module load ----

    void load() {
        if (loaded) return;
        loaded = true;
        global_bases.resize(m.globals.size());
        for (size_t i = 0; i < m.globals.size(); i++) {
            uint64_t sz = size_of(m.globals[i].type);
            global_bases[i] = alloc.place_global(sz ? sz : 1);
            if (!global_bases[i]) throw VmError{"global space exhausted"};
        }
        alloc.finalize_globals();
        for (size_t i = 0; i < m.functions.size(); i++)
            func_by_addr[fn_addr(i)] = i;
        for (size_t i = 0; i < m.globals.size(); i++) apply_inits(i);
    }

    void apply_inits(size_t gi) {
        const Global& g = m.globals[gi];
        uint64_t gbase = global_bases[gi];
        for (const InitWrite& w : flatten_init(g)) {
            uint64_t addr = gbase + w.byte_offset;
            uint32_t width = static_cast<uint32_t>(size_of(w.field_type));
            switch (w.kind) {
                case InitNode::Kind::Int:
                    mem.store(addr, width, static_cast<uint64_t>(w.int_value));
                    break;
                case InitNode::Kind::Null:
                    mem.store(addr, width, 0);
                    break;
                case InitNode::Kind::GlobalAddr: {
                    uint64_t tbase = global_bases[w.ref_index];
                    uint64_t tsize = size_of(m.globals[w.ref_index].type);
                    uint64_t value = tbase + static_cast<uint64_t>(w.addend);
                    if (m.checked) {
                        uint64_t access = 1;
                        if (w.field_type->is_pointer() &&
                            !w.field_type->pointee->is_function()) {
                            uint64_t s = size_of(w.field_type->pointee);
                            access = s ? s : 1;
                        }
                        value = update_tag(tbase, value, access, tbase + tsize);
                    }
                    mem.store(addr, width, value);
                    break;
                }
                case InitNode::Kind::FuncAddr: {
                    uint64_t value = fn_addr(w.ref_index);
                    if (m.checked) value = set_invalid(value);
                    mem.store(addr, width, value);
                    break;
                }
                default:
                    break;
            }
        }
    }

    // ---- value plumbing ----

    uint64_t eval(const Frame& fr, const Operand& o) const {
        switch (o.kind) {
            case Operand::Kind::Value:
                return fr.regs[o.value];
            case Operand::Kind::Const:
                return canonical(static_cast<uint64_t>(o.imm), o.type);
            case Operand::Kind::Null:
                return 0;
            case Operand::Kind::Global:
                return global_bases[o.index];
            case Operand::Kind::Func:
                return fn_addr(o.index);
            case Operand::Kind::None:
                break;
        }
        throw VmError{"missing operand"};
    }

    static uint64_t canonical(uint64_t v, const Type* t) {
        if (t && t->is_int()) return v & width_mask(t->int_bits / 8);
        return v;
    }

    ViolationReport make_report(const Frame& fr, const Instr& ins,
                                ViolationKind kind) const {
        ViolationReport r;
        r.kind = kind;
        r.function = fr.f->name;
        r.block = fr.f->blocks[fr.block].name;
        r.instr = fr.ip;
        r.loc = ins.loc;
        return r;
    }

    // ---- the four runtime primitives ----

    uint64_t update_tag(uint64_t base, uint64_t ptr, uint64_t access, uint64_t limit) {
        counters.tag_updates++;
        if (ptr == 0) return 0;  // null stays null through escapes
        return rt::update_tag(base, ptr, access, limit);
    }

    // Base derivation from a tagged static-base: the offset field first,
    // even for invalid pointers; saturated offsets fall back to the global
    // table or the segment slot mask. nullopt = metadata unreadable.
    std::optional<uint64_t> get_base_core(uint64_t sb) {
        TaggedPtr t{sb};
        if (t.offset() < kMaxOffset) return t.address() - t.offset();
        if (t.invalid()) return uint64_t{0};
        if (alloc.is_global_range(t.address())) {
            counters.allocator_lookups++;
            return alloc.get_base_allocator(t.address());
        }
        uint64_t seg = t.address() & ~(alloc.segment_size() - 1);
        uint64_t slot_mask = 0;
        if (!mem.try_load(seg, 8, slot_mask)) return std::nullopt;
        return (t.address() & slot_mask) + kHeaderSize;
    }

    uint64_t get_base(const Frame& fr, const Instr& ins, uint64_t sb,
                      bool fault_tolerant) {
        std::optional<uint64_t> b = get_base_core(sb);
        if (b) return *b;
        if (fault_tolerant) return 0;
        ViolationReport r = make_report(fr, ins, ViolationKind::Unmapped);
        r.address = TaggedPtr{sb}.address() & ~(alloc.segment_size() - 1);
        r.detail = "segment metadata unreadable";
        throw GuestAbort{r};
    }

    uint64_t object_limit(const Frame& fr, const Instr& ins, uint64_t base,
                          bool fault_tolerant) {
        uint64_t size = 0;
        if (base == 0 || !mem.try_load(base - kHeaderSize, 8, size)) {
            if (fault_tolerant) return 0;
            ViolationReport r = make_report(fr, ins, ViolationKind::Unmapped);
            r.address = base ? base - kHeaderSize : 0;
            r.detail = "object header unreadable";
            throw GuestAbort{r};
        }
        return base + size;
    }

    void bounds_check(const Frame& fr, const Instr& ins, bool intrinsic_arg) {
        counters.bounds_checks++;
        uint64_t base = eval(fr, ins.args[0]);
        uint64_t ptr = eval(fr, ins.args[1]);
        uint64_t ptrlimit = eval(fr, ins.args[2]);
        uint64_t limit = eval(fr, ins.args[3]);
        if (ptr < base || ptrlimit > limit) {
            ViolationKind kind =
                intrinsic_arg ? ViolationKind::IntrinsicOob
                : ins.check_dir == 2 ? ViolationKind::OobWrite
                                     : ViolationKind::OobRead;
            ViolationReport r = make_report(fr, ins, kind);
            r.address = ptr;
            r.base = base;
            r.limit = limit;
            r.width = ptrlimit - ptr;
            throw GuestAbort{r};
        }
    }

    // ---- memory access with the recovery path ----

    uint64_t access(Frame& fr, const Instr& ins, uint64_t addr_val, uint32_t width,
                    bool is_write, uint64_t store_val) {
        bool canonical_addr = (addr_val >> kAddrBits) == 0;
        uint64_t plain = addr_val & kAddrMask;
        if (canonical_addr && mem.is_mapped(plain, width)) {
            if (is_write) {
                mem.store(plain, width, store_val);
                return 0;
            }
            return mem.load(plain, width);
        }
        return handle_fault(fr, ins, addr_val, width, is_write, store_val);
    }

    // Emulates the fault-time bounds check for accesses whose check was
    // elided: in-bounds accesses through an invalidated pointer complete,
    // everything else aborts.
    uint64_t handle_fault(Frame& fr, const Instr& ins, uint64_t addr_val,
                          uint32_t width, bool is_write, uint64_t store_val) {
        uint64_t plain = addr_val & kAddrMask;
        if (!ins.recover) {
            ViolationReport r = make_report(
                fr, ins, ViolationKind::Unmapped);
            r.address = addr_val;
            r.width = width;
            r.detail = is_write ? "store to unmapped address" : "load from unmapped address";
            throw GuestAbort{r};
        }
        TaggedPtr sb{fr.regs[ins.recover->static_base]};
        if (sb.offset() >= kMaxOffset) {
            ViolationReport r = make_report(fr, ins, ViolationKind::InvalidUnrecoverable);
            r.address = addr_val;
            r.width = width;
            throw GuestAbort{r};
        }
        uint64_t base = sb.address() - sb.offset();
        uint64_t size = 0;
        if (!mem.try_load(base - kHeaderSize, 8, size)) {
            ViolationReport r = make_report(fr, ins, ViolationKind::Unmapped);
            r.address = base - kHeaderSize;
            r.detail = "object header unreadable during recovery";
            throw GuestAbort{r};
        }
        uint64_t limit = base + size;
        if (plain < base || plain + width > limit) {
            ViolationReport r = make_report(
                fr, ins, is_write ? ViolationKind::OobWrite : ViolationKind::OobRead);
            r.address = plain;
            r.base = base;
            r.limit = limit;
            r.width = width;
            throw GuestAbort{r};
        }
        if (!mem.is_mapped(plain, width)) {
            ViolationReport r = make_report(fr, ins, ViolationKind::Unmapped);
            r.address = plain;
            r.width = width;
            throw GuestAbort{r};
        }
        counters.recoveries++;
        if (is_write) {
            mem.store(plain, width, store_val);
            return 0;
        }
        return mem.load(plain, width);
    }

    // ---- execution ----

    uint64_t call_function(size_t fi, const std::vector<uint64_t>& args) {
        const Function& f = m.functions[fi];
        if (args.size() != f.param_types.size())
            throw VmError{"call arity mismatch for @" + f.name};
        if (++call_depth > 4096) throw VmError{"call depth exceeded"};
        Frame fr;
        fr.f = &f;
        fr.func_index = fi;
        fr.regs.assign(f.values.size(), 0);
        for (size_t i = 0; i < args.size(); i++) fr.regs[i] = args[i];
        fr.saved_sp = sp;
        uint64_t ret = exec_frame(fr);
        for (auto [base, registered] : fr.objects) {
            if (registered) alloc.deregister_stack_object(base);
        }
        sp = fr.saved_sp;
        call_depth--;
        return ret;
    }

    void enter_block(Frame& fr, BlockId target) {
        BlockId from = fr.block;
        fr.block = target;
        fr.ip = 0;
        const Block& b = fr.f->blocks[target];
        // parallel phi evaluation on the edge
        std::vector<std::pair<ValueId, uint64_t>> writes;
        for (const Instr& ins : b.instrs) {
            if (ins.op != Opcode::Phi) break;
            bool matched = false;
            for (size_t a = 0; a < ins.args.size(); a++) {
                if (ins.phi_blocks[a] == from) {
                    writes.emplace_back(ins.result, eval(fr, ins.args[a]));
                    matched = true;
                    break;
                }
            }
            if (!matched) throw VmError{"phi has no arm for predecessor"};
            fr.ip++;
        }
        for (auto [v, val] : writes) fr.regs[v] = val;
    }

    uint64_t exec_frame(Frame& fr) {
        while (true) {
            const Block& b = fr.f->blocks[fr.block];
            if (fr.ip >= b.instrs.size()) throw VmError{"fell off block end"};
            const Instr& ins = b.instrs[fr.ip];
            if (++counters.steps > opts.step_limit) throw VmError{"step limit exceeded"};
            if (opts.trace && opts.trace_stream) {
                *opts.trace_stream << "@" << fr.f->name << " " << b.name << ":"
                                   << fr.ip << "\n";
            }
            switch (ins.op) {
                case Opcode::Alloca: {
                    uint64_t osize = size_of(ins.type);
                    if (osize == 0) osize = 1;
                    uint64_t base = (sp - osize) & ~uint64_t{15};
                    uint64_t lo = base - kHeaderSize;
                    if (lo < kStackLow) throw VmError{"stack exhausted"};
                    sp = lo;
                    mem.map_range(lo, kHeaderSize + osize, /*zero=*/false);
                    mem.store(lo, 8, osize);
                    fr.regs[ins.result] = base;
                    fr.objects.emplace_back(base, ins.alloca_registered);
                    if (ins.alloca_registered)
                        alloc.register_stack_object(base, osize);
                    break;
                }
                case Opcode::Gep: {
                    uint64_t p = eval(fr, ins.args[0]);
                    uint64_t idx = eval(fr, ins.args[1]);
                    fr.regs[ins.result] =
                        p + idx * size_of(ins.type);  // tags ride along
                    break;
                }
                case Opcode::Load: {
                    uint64_t addr = eval(fr, ins.args[0]);
                    uint64_t v = access(fr, ins, addr,
                                        static_cast<uint32_t>(size_of(ins.type)),
                                        false, 0);
                    fr.regs[ins.result] = canonical(v, ins.type);
                    break;
                }
                case Opcode::Store: {
                    uint64_t v = eval(fr, ins.args[0]);
                    uint64_t addr = eval(fr, ins.args[1]);
                    access(fr, ins, addr, static_cast<uint32_t>(size_of(ins.type)),
                           true, v);
                    break;
                }
                case Opcode::Bitcast:
                    fr.regs[ins.result] = eval(fr, ins.args[0]);
                    break;
                case Opcode::PtrToInt:
                    fr.regs[ins.result] = canonical(eval(fr, ins.args[0]), ins.type);
                    break;
                case Opcode::IntToPtr:
                    fr.regs[ins.result] = eval(fr, ins.args[0]);
                    break;
                case Opcode::Phi:
                    throw VmError{"phi outside block entry"};
                case Opcode::Select: {
                    uint64_t c = eval(fr, ins.args[0]);
                    fr.regs[ins.result] = eval(fr, ins.args[c ? 1 : 2]);
                    break;
                }
                case Opcode::ICmp: {
                    uint32_t w = static_cast<uint32_t>(size_of(ins.type));
                    uint64_t a = eval(fr, ins.args[0]) & width_mask(w);
                    uint64_t bb = eval(fr, ins.args[1]) & width_mask(w);
                    fr.regs[ins.result] = compare(ins.pred, a, bb, w);
                    break;
                }
                case Opcode::PCmp: {
                    uint64_t a = eval(fr, ins.args[0]);
                    uint64_t bb = eval(fr, ins.args[1]);
                    fr.regs[ins.result] = compare(ins.pred, a, bb, 8);
                    break;
                }
                case Opcode::BinOp: {
                    uint32_t w = static_cast<uint32_t>(size_of(ins.type));
                    fr.regs[ins.result] = binop(ins.bin, eval(fr, ins.args[0]),
                                                eval(fr, ins.args[1]), w);
                    break;
                }
                case Opcode::PSub: {
                    fr.regs[ins.result] =
                        eval(fr, ins.args[0]) - eval(fr, ins.args[1]);
                    break;
                }
                case Opcode::Br:
                    enter_block(fr, ins.br_true);
                    continue;
                case Opcode::CondBr:
                    enter_block(fr, eval(fr, ins.args[0]) ? ins.br_true : ins.br_false);
                    continue;
                case Opcode::Call: {
                    std::vector<uint64_t> args;
                    for (const Operand& o : ins.args) args.push_back(eval(fr, o));
                    uint64_t r = call_function(ins.callee, args);
                    if (ins.has_result()) fr.regs[ins.result] = r;
                    break;
                }
                case Opcode::ICall: {
                    uint64_t target = eval(fr, ins.args[0]) & kAddrMask;
                    auto it = func_by_addr.find(target);
                    if (it == func_by_addr.end())
                        throw VmError{"indirect call to a non-function address"};
                    const Function& callee = m.functions[it->second];
                    if (callee.param_types.size() != ins.args.size() - 1)
                        throw VmError{"indirect call arity mismatch"};
                    std::vector<uint64_t> args;
                    for (size_t a = 1; a < ins.args.size(); a++)
                        args.push_back(eval(fr, ins.args[a]));
                    uint64_t r = call_function(it->second, args);
                    if (ins.has_result()) fr.regs[ins.result] = r;
                    break;
                }
                case Opcode::IntrinsicCall: {
                    uint64_t r = exec_intrinsic(fr, ins);
                    if (ins.has_result()) fr.regs[ins.result] = r;
                    break;
                }
                case Opcode::Ret:
                    return ins.args.empty() ? 0 : eval(fr, ins.args[0]);
            }
            fr.ip++;
        }
    }

    static uint64_t compare(CmpPred p, uint64_t a, uint64_t b, uint32_t w) {
        int64_t sa = sign_extend(a, w), sb = sign_extend(b, w);
        bool r = false;
        switch (p) {
            case CmpPred::Eq: r = a == b; break;
            case CmpPred::Ne: r = a != b; break;
            case CmpPred::Slt: r = sa < sb; break;
            case CmpPred::Sle: r = sa <= sb; break;
            case CmpPred::Sgt: r = sa > sb; break;
            case CmpPred::Sge: r = sa >= sb; break;
            case CmpPred::Ult: r = a < b; break;
            case CmpPred::Ule: r = a <= b; break;
            case CmpPred::Ugt: r = a > b; break;
            case CmpPred::Uge: r = a >= b; break;
        }
        return r ? 1 : 0;
    }

    uint64_t binop(BinKind k, uint64_t a, uint64_t b, uint32_t w) {
        uint64_t m_ = width_mask(w);
        a &= m_;
        b &= m_;
        int64_t sa = sign_extend(a, w), sb = sign_extend(b, w);
        uint64_t r = 0;
        switch (k) {
            case BinKind::Add: r = a + b; break;
            case BinKind::Sub: r = a - b; break;
            case BinKind::Mul: r = a * b; break;
            case BinKind::SDiv:
                if (sb == 0) throw VmError{"division by zero"};
                r = static_cast<uint64_t>(sa / sb);
                break;
            case BinKind::UDiv:
                if (b == 0) throw VmError{"division by zero"};
                r = a / b;
                break;
            case BinKind::SRem:
                if (sb == 0) throw VmError{"division by zero"};
                r = static_cast<uint64_t>(sa % sb);
                break;
            case BinKind::URem:
                if (b == 0) throw VmError{"division by zero"};
                r = a % b;
                break;
            case BinKind::And: r = a & b; break;
            case BinKind::Or: r = a | b; break;
            case BinKind::Xor: r = a ^ b; break;
            case BinKind::Shl: r = b >= w * 8 ? 0 : a << b; break;
            case BinKind::LShr: r = b >= w * 8 ? 0 : a >> b; break;
            case BinKind::AShr:
                r = b >= w * 8 ? static_cast<uint64_t>(sa < 0 ? -1 : 0)
                               : static_cast<uint64_t>(sa >> b);
                break;
        }
        return r & m_;
    }

    // ---- intrinsics ----

    uint64_t exec_intrinsic(Frame& fr, const Instr& ins) {
        auto arg = [&](size_t i) { return eval(fr, ins.args[i]); };
        switch (ins.intrinsic) {
            case Intrinsic::UpdateTag:
                return update_tag(arg(0), arg(1), arg(2), arg(3));
            case Intrinsic::GetBase:
                return get_base(fr, ins, arg(0), false);
            case Intrinsic::GetBaseFt: {
                uint64_t b = get_base(fr, ins, arg(0), true);
                // probe the header now; a dead object yields a null base
                uint64_t sz;
                if (b && !mem.try_load(b - kHeaderSize, 8, sz)) return 0;
                return b;
            }
            case Intrinsic::GetBaseAlloc:
                counters.allocator_lookups++;
                return alloc.get_base_allocator(arg(0) & kAddrMask);
            case Intrinsic::ObjectLimit:
                return object_limit(fr, ins, arg(0), false);
            case Intrinsic::ObjectLimitFt:
                return object_limit(fr, ins, arg(0), true);
            case Intrinsic::BoundsCheck:
                bounds_check(fr, ins, false);
                return 0;
            case Intrinsic::ArgBoundsCheck:
                bounds_check(fr, ins, true);
                return 0;
            case Intrinsic::ResetTag:
                return reset_tag(arg(0));
            case Intrinsic::ResetOffset:
                return reset_offset(arg(0));
            case Intrinsic::Invalidate:
                return set_invalid(arg(0));
            case Intrinsic::HoistGuard: {
                uint64_t lo = arg(0), hi = arg(1);
                if (hi <= lo) {
                    ViolationReport r = make_report(fr, ins, ViolationKind::HoistGuard);
                    r.address = lo;
                    r.limit = hi;
                    r.detail = "hoisted range is empty or wrapped";
                    throw GuestAbort{r};
                }
                return 0;
            }
            case Intrinsic::Malloc:
                return alloc.alloc(arg(0));
            case Intrinsic::Free: {
                uint64_t p = arg(0) & kAddrMask;
                if (p == 0) return 0;
                FreeResult res = alloc.dealloc(p);
                if (res != FreeResult::Ok) {
                    ViolationReport r = make_report(fr, ins, ViolationKind::DoubleFree);
                    r.address = p;
                    r.detail = res == FreeResult::DoubleFree
                                   ? "double free"
                                   : "free of a non-base address";
                    throw GuestAbort{r};
                }
                return 0;
            }
            case Intrinsic::MmapAnon:
                return alloc.map_anonymous(arg(0));
            case Intrinsic::Memcpy:
            case Intrinsic::Memmove: {
                uint64_t dst = arg(0) & kAddrMask, src = arg(1) & kAddrMask;
                uint64_t n = arg(2);
                require_mapped(fr, ins, src, n, "memcpy source");
                require_mapped(fr, ins, dst, n, "memcpy destination");
                mem.copy(dst, src, n);
                return arg(0);
            }
            case Intrinsic::Memset: {
                uint64_t dst = arg(0) & kAddrMask;
                uint64_t v = arg(1) & 0xFF, n = arg(2);
                require_mapped(fr, ins, dst, n, "memset destination");
                for (uint64_t i = 0; i < n; i++) mem.store(dst + i, 1, v);
                return arg(0);
            }
            case Intrinsic::Strlen: {
                uint64_t s = arg(0);
                uint64_t len = cstr_len(fr, ins, s & kAddrMask);
                check_str_range(fr, ins, s, len + 1);
                return len;
            }
            case Intrinsic::Strcpy: {
                uint64_t dst = arg(0), src = arg(1);
                uint64_t len = cstr_len(fr, ins, src & kAddrMask);
                check_str_range(fr, ins, src, len + 1);
                check_str_range(fr, ins, dst, len + 1);
                require_mapped(fr, ins, dst & kAddrMask, len + 1, "strcpy destination");
                mem.copy(dst & kAddrMask, src & kAddrMask, len + 1);
                return arg(0);
            }
            case Intrinsic::Strstr:
                return strstr_impl(fr, ins, arg(0), arg(1));
            case Intrinsic::Qsort:
                qsort_impl(fr, ins, arg(0), arg(1), arg(2), arg(3));
                return 0;
            case Intrinsic::Print: {
                const Type* t = ins.args[0].type;
                uint64_t v = arg(0);
                if (t && t->is_pointer()) {
                    uint64_t s = v & kAddrMask;
                    uint64_t len = cstr_len(fr, ins, s);
                    for (uint64_t i = 0; i < len; i++)
                        out << static_cast<char>(mem.load(s + i, 1));
                    out << "\n";
                } else {
                    uint32_t w = t ? t->int_bits / 8 : 8;
                    out << sign_extend(v, w) << "\n";
                }
                return 0;
            }
            case Intrinsic::Exit:
                throw GuestExit{static_cast<int>(sign_extend(arg(0), 8))};
        }
        throw VmError{"unhandled intrinsic"};
    }

    void require_mapped(Frame& fr, const Instr& ins, uint64_t addr, uint64_t n,
                        const char* what) {
        if (n == 0) return;
        if (!mem.is_mapped(addr, n)) {
            ViolationReport r = make_report(fr, ins, ViolationKind::Unmapped);
            r.address = addr;
            r.width = n;
            r.detail = what;
            throw GuestAbort{r};
        }
    }

    uint64_t cstr_len(Frame& fr, const Instr& ins, uint64_t s) {
        uint64_t len = 0;
        while (true) {
            uint64_t byte;
            if (!mem.try_load(s + len, 1, byte)) {
                ViolationReport r = make_report(fr, ins, ViolationKind::Unmapped);
                r.address = s + len;
                r.width = 1;
                r.detail = "unterminated string";
                throw GuestAbort{r};
            }
            if (byte == 0) return len;
            len++;
            if (len > (uint64_t{1} << 32)) throw VmError{"runaway string scan"};
        }
    }

    // Checked wrappers verify whole touched ranges against object bounds
    // when the argument's tag still identifies a live object.
    void check_str_range(Frame& fr, const Instr& ins, uint64_t tagged, uint64_t n) {
        if (!m.checked) return;
        uint64_t b = get_base(fr, ins, tagged, true);
        uint64_t size = 0;
        if (!b || !mem.try_load(b - kHeaderSize, 8, size)) return;
        uint64_t p = tagged & kAddrMask;
        if (p < b || p + n > b + size) {
            ViolationReport r = make_report(fr, ins, ViolationKind::IntrinsicOob);
            r.address = p;
            r.base = b;
            r.limit = b + size;
            r.width = n;
            throw GuestAbort{r};
        }
    }

    uint64_t strstr_impl(Frame& fr, const Instr& ins, uint64_t hay_t, uint64_t needle_t) {
        uint64_t hay = hay_t & kAddrMask, needle = needle_t & kAddrMask;
        uint64_t hlen = cstr_len(fr, ins, hay);
        uint64_t nlen = cstr_len(fr, ins, needle);
        check_str_range(fr, ins, hay_t, hlen + 1);
        check_str_range(fr, ins, needle_t, nlen + 1);
        if (nlen == 0) return retag_interior(fr, ins, hay_t, hay);
        if (nlen > hlen) return 0;
        for (uint64_t i = 0; i + nlen <= hlen; i++) {
            bool match = true;
            for (uint64_t j = 0; j < nlen && match; j++) {
                match = mem.load(hay + i + j, 1) == mem.load(needle + j, 1);
            }
            if (match) return retag_interior(fr, ins, hay_t, hay + i);
        }
        return 0;
    }

    // Library results pointing inside an argument's object carry a fresh
    // tag derived from that object.
    uint64_t retag_interior(Frame& fr, const Instr& ins, uint64_t src_tagged,
                            uint64_t result_addr) {
        if (!m.checked) return result_addr;
        uint64_t b = get_base(fr, ins, src_tagged, true);
        uint64_t size = 0;
        if (!b || !mem.try_load(b - kHeaderSize, 8, size)) return result_addr;
        return update_tag(b, result_addr, 1, b + size);
    }

    void qsort_impl(Frame& fr, const Instr& ins, uint64_t base_t, uint64_t n,
                    uint64_t elem, uint64_t cmp_addr) {
        uint64_t base = base_t & kAddrMask;
        if (n == 0 || elem == 0) return;
        require_mapped(fr, ins, base, n * elem, "qsort buffer");
        check_str_range(fr, ins, base_t, n * elem);
        auto it = func_by_addr.find(cmp_addr & kAddrMask);
        if (it == func_by_addr.end())
            throw VmError{"qsort comparator is not a function"};
        size_t cmp_fi = it->second;
        uint64_t obj_base = 0, obj_size = 0;
        if (m.checked) {
            obj_base = get_base(fr, ins, base_t, true);
            if (obj_base) {
                if (!mem.try_load(obj_base - kHeaderSize, 8, obj_size)) obj_base = 0;
            }
        }
        auto elem_ptr = [&](uint64_t i) {
            uint64_t addr = base + i * elem;
            if (m.checked && obj_base)
                return rt::update_tag(obj_base, addr, elem, obj_base + obj_size);
            return addr;
        };
        // insertion sort; the comparator is guest code
        std::vector<uint8_t> tmp(elem);
        for (uint64_t i = 1; i < n; i++) {
            uint64_t j = i;
            while (j > 0) {
                uint64_t a = elem_ptr(j - 1), b = elem_ptr(j);
                int64_t c = sign_extend(
                    call_function(cmp_fi, {a, b}),
                    static_cast<uint32_t>(size_of(m.functions[cmp_fi].ret_type)));
                if (c <= 0) break;
                for (uint64_t x = 0; x < elem; x++)
                    tmp[x] = static_cast<uint8_t>(mem.load(base + (j - 1) * elem + x, 1));
                mem.copy(base + (j - 1) * elem, base + j * elem, elem);
                for (uint64_t x = 0; x < elem; x++)
                    mem.store(base + j * elem + x, 1, tmp[x]);
                j--;
            }
        }
    }
};

Vm::Vm(const Module& m, VmOptions opts) : impl_(std::make_unique<Impl>(m, opts)) {}
Vm::~Vm() = default;

void Vm::load() {
    impl_->load();
}

uint64_t Vm::call_function(size_t fi, const std::vector<uint64_t>& args) {
    return impl_->call_function(fi, args);
}

SimMemory& Vm::memory() { return impl_->mem; }
SimAllocator& Vm::allocator() { return impl_->alloc; }
VmCounters& Vm::counters() { return impl_->counters; }

uint64_t Vm::runtime_update_tag(uint64_t base, uint64_t ptr, uint64_t access_size,
                                uint64_t limit) {
    return impl_->update_tag(base, ptr, access_size, limit);
}

uint64_t Vm::runtime_get_base(uint64_t tagged) {
    return impl_->get_base_core(tagged).value_or(0);
}

RunResult Vm::run(const std::string& entry, const std::vector<int64_t>& args) {
    RunResult res;
    try {
        impl_->load();
        int fi = impl_->m.find_function(entry);
        if (fi < 0) throw VmError{"entry function @" + entry + " not found"};
        const Function& f = impl_->m.functions[fi];
        if (f.param_types.size() != args.size())
            throw VmError{"entry expects " + std::to_string(f.param_types.size()) +
                          " integer arguments"};
        std::vector<uint64_t> raw;
        for (size_t i = 0; i < args.size(); i++) {
            if (!f.param_types[i]->is_int())
                throw VmError{"entry parameters must be integers"};
            raw.push_back(static_cast<uint64_t>(args[i]));
        }
        uint64_t r = impl_->call_function(fi, raw);
        res.exit_code = f.ret_type && f.ret_type->is_int()
                            ? static_cast<int>(sign_extend(
                                  r, f.ret_type->int_bits / 8))
                            : 0;
    } catch (const GuestAbort& a) {
        res.violation = a.report;
        res.exit_code = violation_exit_code(a.report.kind);
    } catch (const GuestExit& e) {
        res.exit_code = e.code;
    } catch (const VmError& e) {
        res.error = e.message;
        res.exit_code = 2;
    }
    res.counters = impl_->counters;
    res.alloc_stats = impl_->alloc.stats();
    res.output = impl_->out.str();
    return res;
}

}  // namespace tagguard::rt
