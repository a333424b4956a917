#include "tagguard/mir/validator.hpp"

#include <unordered_map>
#include <unordered_set>

#include "tagguard/analysis/cfg.hpp"
#include "tagguard/mir/printer.hpp"

namespace tagguard::mir {

namespace {

// Signature argument classes for intrinsic checking.
enum class ArgC : uint8_t { I64, AnyInt, AnyPtr, BytePtr, IntOrPtr, CmpFn };
enum class RetC : uint8_t { Void, I64, BytePtr, SameAsArg0, SameAsArg1 };

struct IntrinsicSig {
    Intrinsic id;
    std::vector<ArgC> args;
    RetC ret;
    bool result_required;
};

const std::vector<IntrinsicSig>& intrinsic_sigs() {
    static const std::vector<IntrinsicSig> sigs = {
        {Intrinsic::Malloc, {ArgC::I64}, RetC::BytePtr, true},
        {Intrinsic::Free, {ArgC::AnyPtr}, RetC::Void, false},
        {Intrinsic::Memcpy, {ArgC::AnyPtr, ArgC::AnyPtr, ArgC::I64}, RetC::BytePtr, false},
        {Intrinsic::Memset, {ArgC::AnyPtr, ArgC::I64, ArgC::I64}, RetC::BytePtr, false},
        {Intrinsic::Memmove, {ArgC::AnyPtr, ArgC::AnyPtr, ArgC::I64}, RetC::BytePtr, false},
        {Intrinsic::Strlen, {ArgC::AnyPtr}, RetC::I64, false},
        {Intrinsic::Strcpy, {ArgC::AnyPtr, ArgC::AnyPtr}, RetC::BytePtr, false},
        {Intrinsic::Strstr, {ArgC::AnyPtr, ArgC::AnyPtr}, RetC::BytePtr, false},
        {Intrinsic::Qsort, {ArgC::AnyPtr, ArgC::I64, ArgC::I64, ArgC::CmpFn}, RetC::Void, false},
        {Intrinsic::Print, {ArgC::IntOrPtr}, RetC::Void, false},
        {Intrinsic::Exit, {ArgC::AnyInt}, RetC::Void, false},
        {Intrinsic::MmapAnon, {ArgC::I64}, RetC::BytePtr, true},
        {Intrinsic::UpdateTag, {ArgC::BytePtr, ArgC::AnyPtr, ArgC::I64, ArgC::BytePtr},
         RetC::SameAsArg1, true},
        {Intrinsic::GetBase, {ArgC::AnyPtr}, RetC::BytePtr, true},
        {Intrinsic::GetBaseFt, {ArgC::AnyPtr}, RetC::BytePtr, true},
        {Intrinsic::GetBaseAlloc, {ArgC::AnyPtr}, RetC::BytePtr, true},
        {Intrinsic::ObjectLimit, {ArgC::BytePtr}, RetC::BytePtr, true},
        {Intrinsic::ObjectLimitFt, {ArgC::BytePtr}, RetC::BytePtr, true},
        {Intrinsic::BoundsCheck, {ArgC::AnyPtr, ArgC::AnyPtr, ArgC::AnyPtr, ArgC::AnyPtr},
         RetC::Void, false},
        {Intrinsic::ArgBoundsCheck, {ArgC::AnyPtr, ArgC::AnyPtr, ArgC::AnyPtr, ArgC::AnyPtr},
         RetC::Void, false},
        {Intrinsic::ResetTag, {ArgC::AnyPtr}, RetC::SameAsArg0, true},
        {Intrinsic::ResetOffset, {ArgC::AnyPtr}, RetC::SameAsArg0, true},
        {Intrinsic::Invalidate, {ArgC::AnyPtr}, RetC::SameAsArg0, true},
        {Intrinsic::HoistGuard, {ArgC::AnyPtr, ArgC::AnyPtr}, RetC::Void, false},
    };
    return sigs;
}

const IntrinsicSig* find_sig(Intrinsic i) {
    for (const auto& s : intrinsic_sigs())
        if (s.id == i) return &s;
    return nullptr;
}

class Checker {
public:
    explicit Checker(const Module& m) : m_(m) {}

    DiagList run() {
        check_names();
        check_globals();
        for (const Function& f : m_.functions) check_function(f);
        return std::move(diags_);
    }

private:
    void err(const std::string& where, const std::string& msg) {
        diags_.push_back({{0, 0}, where.empty() ? msg : where + ": " + msg});
    }

    void check_names() {
        std::unordered_set<std::string> names;
        for (const Global& g : m_.globals)
            if (!names.insert(g.name).second) err("", "duplicate definition @" + g.name);
        for (const Function& f : m_.functions)
            if (!names.insert(f.name).second) err("", "duplicate definition @" + f.name);
    }

    void check_init(const Global& g, const InitNode& n, const Type* ty) {
        switch (n.kind) {
            case InitNode::Kind::Zero:
                return;
            case InitNode::Kind::Int:
                if (!ty->is_int()) err("@" + g.name, "integer init for " + type_name(ty));
                return;
            case InitNode::Kind::Null:
            case InitNode::Kind::GlobalAddr:
            case InitNode::Kind::FuncAddr:
                if (!ty->is_pointer()) err("@" + g.name, "pointer init for " + type_name(ty));
                return;
            case InitNode::Kind::Aggregate: {
                size_t want = ty->is_struct() ? ty->fields.size()
                            : ty->is_array() ? ty->count : 0;
                if ((!ty->is_struct() && !ty->is_array()) || n.elems.size() != want) {
                    err("@" + g.name, "initializer shape mismatch");
                    return;
                }
                for (size_t i = 0; i < n.elems.size(); i++) {
                    const Type* ft = ty->is_struct() ? ty->fields[i] : ty->elem;
                    check_init(g, n.elems[i], ft);
                }
                return;
            }
        }
    }

    void check_globals() {
        for (const Global& g : m_.globals) {
            if (g.type->is_function()) {
                err("@" + g.name, "global of function type");
                continue;
            }
            if (g.init) check_init(g, *g.init, g.type);
        }
    }

    void check_function(const Function& f) {
        std::string fname = "@" + f.name;
        if (f.blocks.empty()) {
            err(fname, "no blocks");
            return;
        }
        // defs: params defined at entry; each value defined exactly once
        std::vector<int> def_count(f.values.size(), 0);
        std::vector<std::pair<BlockId, size_t>> def_site(f.values.size(), {0, 0});
        for (uint32_t i = 0; i < f.num_params; i++) def_count[i] = 1;
        for (BlockId b = 0; b < f.blocks.size(); b++) {
            const Block& blk = f.blocks[b];
            if (blk.instrs.empty()) {
                err(fname, "empty block " + blk.name);
                return;
            }
            for (size_t i = 0; i < blk.instrs.size(); i++) {
                const Instr& ins = blk.instrs[i];
                bool last = i + 1 == blk.instrs.size();
                if (ins.is_terminator() != last) {
                    err(fname, last ? "block " + blk.name + " does not end in a terminator"
                                    : "terminator in the middle of block " + blk.name);
                    return;
                }
                if (ins.op == Opcode::Phi && b == 0) {
                    err(fname, "phi in entry block");
                }
                if (ins.has_result()) {
                    if (ins.result >= f.values.size()) {
                        err(fname, "result id out of range");
                        return;
                    }
                    def_count[ins.result]++;
                    def_site[ins.result] = {b, i};
                }
            }
            // phis must lead the block
            bool non_phi_seen = false;
            for (const Instr& ins : blk.instrs) {
                if (ins.op == Opcode::Phi) {
                    if (non_phi_seen) err(fname, "phi after non-phi in block " + blk.name);
                } else {
                    non_phi_seen = true;
                }
            }
        }
        std::unordered_set<std::string> names;
        for (ValueId v = 0; v < f.values.size(); v++) {
            if (def_count[v] == 0) err(fname, "value %" + f.values[v].name + " has no definition");
            if (def_count[v] > 1) err(fname, "duplicate SSA definition %" + f.values[v].name);
            if (!f.values[v].type) err(fname, "value %" + f.values[v].name + " has no type");
            if (!names.insert(f.values[v].name).second)
                err(fname, "duplicate value name %" + f.values[v].name);
        }
        if (!diags_.empty()) return;

        analysis::Cfg cfg = analysis::build_cfg(f);
        for (BlockId b = 0; b < f.blocks.size(); b++) {
            if (!cfg.reachable[b]) err(fname, "unreachable block " + f.blocks[b].name);
        }
        if (!diags_.empty()) return;

        // dominance of uses and per-instruction typing
        for (BlockId b = 0; b < f.blocks.size(); b++) {
            const Block& blk = f.blocks[b];
            for (size_t i = 0; i < blk.instrs.size(); i++) {
                const Instr& ins = blk.instrs[i];
                std::string where = fname + " " + blk.name + ":" +
                                    print_instr(m_, f, ins);
                if (ins.op == Opcode::Phi) {
                    // arity and pred matching
                    std::unordered_set<BlockId> preds(cfg.preds[b].begin(),
                                                      cfg.preds[b].end());
                    if (ins.args.size() != cfg.preds[b].size()) {
                        err(where, "phi arity");
                    } else {
                        std::unordered_set<BlockId> seen;
                        for (BlockId pb : ins.phi_blocks) {
                            if (!preds.count(pb)) err(where, "phi arm from non-predecessor");
                            if (!seen.insert(pb).second) err(where, "duplicate phi arm");
                        }
                    }
                    for (size_t a = 0; a < ins.args.size(); a++) {
                        const Operand& o = ins.args[a];
                        if (!o.is_value()) continue;
                        BlockId pb = ins.phi_blocks[a];
                        if (f.values[o.value].is_param) continue;
                        auto [db, di] = def_site[o.value];
                        if (!cfg.dominates(db, pb)) {
                            err(where, "dominance violation at %" + f.values[o.value].name);
                        }
                    }
                } else {
                    for (const Operand& o : ins.args) {
                        if (!o.is_value()) continue;
                        if (f.values[o.value].is_param) continue;
                        auto [db, di] = def_site[o.value];
                        bool ok = (db == b) ? (di < i) : cfg.dominates(db, b);
                        if (!ok) {
                            err(where, "dominance violation at %" + f.values[o.value].name);
                        }
                    }
                }
                if (ins.recover) {
                    ValueId sb = ins.recover->static_base;
                    if (sb == kNoValue || sb >= f.values.size() ||
                        !f.values[sb].type || !f.values[sb].type->is_pointer()) {
                        err(where, "recover static base must be a pointer value");
                    }
                }
                check_instr_types(f, cfg, b, ins, where);
            }
        }
    }

    void expect_type(const std::string& where, const Operand& o, const Type* want) {
        if (o.type != want) {
            err(where, "operand type " + (o.type ? type_name(o.type) : "<none>") +
                           ", expected " + type_name(want));
        }
    }

    void check_instr_types(const Function& f, const analysis::Cfg& cfg, BlockId b,
                           const Instr& ins, const std::string& where) {
        TypeStore& ts = const_cast<Module&>(m_).types;
        auto result_type = [&]() { return f.values[ins.result].type; };
        switch (ins.op) {
            case Opcode::Alloca:
                if (ins.type->is_function()) err(where, "alloca of function type");
                break;
            case Opcode::Gep:
                if (!ins.args[0].type || !ins.args[0].type->is_pointer())
                    err(where, "gep base must be a pointer");
                if (ins.args[0].is_const()) err(where, "gep base cannot be an integer constant");
                expect_type(where, ins.args[1], ts.i64());
                if (ins.type->is_function()) err(where, "gep of function type");
                break;
            case Opcode::Load:
                if (!ins.type->is_int() && !ins.type->is_pointer())
                    err(where, "load of aggregate type");
                if (!ins.args[0].type || !ins.args[0].type->is_pointer())
                    err(where, "load address must be a pointer");
                else if (ins.args[0].type->pointee != ins.type)
                    err(where, "load type does not match address pointee");
                if (ins.args[0].is_const() || ins.args[0].is_null())
                    err(where, "load address must be an SSA value or global");
                break;
            case Opcode::Store:
                if (!ins.type->is_int() && !ins.type->is_pointer())
                    err(where, "store of aggregate type");
                expect_type(where, ins.args[0], ins.type);
                if (!ins.args[1].type || !ins.args[1].type->is_pointer())
                    err(where, "store address must be a pointer");
                else if (ins.args[1].type->pointee != ins.type)
                    err(where, "store type does not match address pointee");
                if (ins.args[1].is_const() || ins.args[1].is_null())
                    err(where, "store address must be an SSA value or global");
                break;
            case Opcode::Bitcast:
                if (!ins.type->is_pointer()) err(where, "bitcast target must be a pointer");
                if (!ins.args[0].type || !ins.args[0].type->is_pointer())
                    err(where, "bitcast source must be a pointer");
                break;
            case Opcode::PtrToInt:
                if (!ins.type->is_int()) err(where, "ptrtoint target must be an integer");
                if (!ins.args[0].type || !ins.args[0].type->is_pointer())
                    err(where, "ptrtoint source must be a pointer");
                break;
            case Opcode::IntToPtr:
                if (!ins.type->is_pointer()) err(where, "inttoptr target must be a pointer");
                if (!ins.args[0].type || !ins.args[0].type->is_int())
                    err(where, "inttoptr source must be an integer");
                break;
            case Opcode::Phi:
            case Opcode::Select: {
                size_t from = ins.op == Opcode::Select ? 1 : 0;
                if (ins.op == Opcode::Select) expect_type(where, ins.args[0], ts.i8());
                for (size_t a = from; a < ins.args.size(); a++)
                    expect_type(where, ins.args[a], ins.type);
                if (ins.type->is_function()) err(where, "merge of bare function type");
                break;
            }
            case Opcode::ICmp:
                if (!ins.type->is_int()) err(where, "icmp compares integers");
                expect_type(where, ins.args[0], ins.type);
                expect_type(where, ins.args[1], ins.type);
                break;
            case Opcode::PCmp:
                if (!ins.type->is_pointer()) err(where, "pcmp compares pointers");
                expect_type(where, ins.args[0], ins.type);
                expect_type(where, ins.args[1], ins.type);
                break;
            case Opcode::BinOp:
                if (!ins.type->is_int()) err(where, "arithmetic on non-integer");
                expect_type(where, ins.args[0], ins.type);
                expect_type(where, ins.args[1], ins.type);
                break;
            case Opcode::PSub:
                if (!ins.type->is_pointer()) err(where, "psub subtracts pointers");
                expect_type(where, ins.args[0], ins.type);
                expect_type(where, ins.args[1], ins.type);
                break;
            case Opcode::Br:
                break;
            case Opcode::CondBr:
                expect_type(where, ins.args[0], ts.i8());
                break;
            case Opcode::Call: {
                const Function& callee = m_.functions[ins.callee];
                if (ins.args.size() != callee.param_types.size()) {
                    err(where, "call arity mismatch for @" + callee.name);
                    break;
                }
                for (size_t a = 0; a < ins.args.size(); a++)
                    expect_type(where, ins.args[a], callee.param_types[a]);
                if (ins.has_result() && result_type() != callee.ret_type)
                    err(where, "call result type mismatch");
                break;
            }
            case Opcode::ICall: {
                const Type* ct = ins.args[0].type;
                if (!ct || !ct->is_function_pointer()) {
                    err(where, "icall callee is not a function pointer");
                    break;
                }
                const Type* sig = ct->pointee;
                if (ins.args.size() - 1 != sig->params.size()) {
                    err(where, "icall arity mismatch");
                    break;
                }
                for (size_t a = 1; a < ins.args.size(); a++)
                    expect_type(where, ins.args[a], sig->params[a - 1]);
                if (ins.has_result() && result_type() != sig->ret)
                    err(where, "icall result type mismatch");
                break;
            }
            case Opcode::IntrinsicCall:
                check_intrinsic(f, ins, where);
                break;
            case Opcode::Ret:
                if (f.ret_type == nullptr) {
                    if (!ins.args.empty()) err(where, "ret with value in void function");
                } else {
                    if (ins.args.empty()) err(where, "ret without value");
                    else expect_type(where, ins.args[0], f.ret_type);
                }
                break;
        }
    }

    void check_intrinsic(const Function& f, const Instr& ins, const std::string& where) {
        TypeStore& ts = const_cast<Module&>(m_).types;
        const IntrinsicSig* sig = find_sig(ins.intrinsic);
        if (!sig) {
            err(where, "unknown intrinsic");
            return;
        }
        if (ins.args.size() != sig->args.size()) {
            err(where, "intrinsic arity mismatch");
            return;
        }
        for (size_t a = 0; a < ins.args.size(); a++) {
            const Type* t = ins.args[a].type;
            switch (sig->args[a]) {
                case ArgC::I64:
                    expect_type(where, ins.args[a], ts.i64());
                    break;
                case ArgC::AnyInt:
                    if (!t || !t->is_int()) err(where, "integer argument expected");
                    break;
                case ArgC::AnyPtr:
                    if (!t || !t->is_pointer()) err(where, "pointer argument expected");
                    break;
                case ArgC::BytePtr:
                    expect_type(where, ins.args[a], ts.byte_ptr());
                    break;
                case ArgC::IntOrPtr:
                    if (!t || (!t->is_int() && !t->is_pointer()))
                        err(where, "scalar argument expected");
                    break;
                case ArgC::CmpFn: {
                    bool ok = t && t->is_function_pointer() &&
                              t->pointee->params.size() == 2 &&
                              t->pointee->params[0]->is_pointer() &&
                              t->pointee->params[1]->is_pointer() &&
                              t->pointee->ret && t->pointee->ret->is_int();
                    if (!ok) err(where, "comparator function pointer expected");
                    break;
                }
            }
        }
        if (sig->result_required && !ins.has_result()) {
            err(where, "intrinsic requires a result");
            return;
        }
        if (!ins.has_result()) return;
        const Type* rt = f.values[ins.result].type;
        switch (sig->ret) {
            case RetC::Void:
                err(where, "intrinsic produces no result");
                break;
            case RetC::I64:
                if (rt != ts.i64()) err(where, "result must be i64");
                break;
            case RetC::BytePtr:
                if (rt != ts.byte_ptr()) err(where, "result must be i8*");
                break;
            case RetC::SameAsArg0:
                if (rt != ins.args[0].type) err(where, "result must match argument type");
                break;
            case RetC::SameAsArg1:
                if (rt != ins.args[1].type) err(where, "result must match pointer argument");
                break;
        }
    }

    const Module& m_;
    DiagList diags_;
};

}  // namespace

DiagList fill_operand_types(Module& m) {
    DiagList diags;
    TypeStore& ts = m.types;
    auto fail = [&](const Function& f, const Instr& ins, const std::string& msg) {
        diags.push_back({{0, 0}, "@" + f.name + ": " + msg});
    };
    for (Function& f : m.functions) {
        for (Block& blk : f.blocks) {
            for (Instr& ins : blk.instrs) {
                // SSA references take the type of their definition
                for (Operand& o : ins.args) {
                    if (o.is_value()) o.type = f.values[o.value].type;
                }
                auto ctx_const = [&](Operand& o, const Type* t) {
                    if (!t) return;
                    if (o.is_const()) {
                        if (t->is_pointer())
                            fail(f, ins, "integer constant in pointer position");
                        else o.type = t;
                    } else if (o.is_null()) {
                        if (!t->is_pointer())
                            fail(f, ins, "null in non-pointer position");
                        else o.type = t;
                    }
                };
                switch (ins.op) {
                    case Opcode::Gep:
                        ctx_const(ins.args[1], ts.i64());
                        break;
                    case Opcode::Store:
                        ctx_const(ins.args[0], ins.type);
                        break;
                    case Opcode::IntToPtr:
                        ctx_const(ins.args[0], ts.i64());
                        break;
                    case Opcode::Phi:
                        for (Operand& o : ins.args) ctx_const(o, ins.type);
                        break;
                    case Opcode::Select:
                        ctx_const(ins.args[0], ts.i8());
                        ctx_const(ins.args[1], ins.type);
                        ctx_const(ins.args[2], ins.type);
                        break;
                    case Opcode::ICmp:
                    case Opcode::PCmp:
                    case Opcode::BinOp:
                    case Opcode::PSub:
                        ctx_const(ins.args[0], ins.type);
                        ctx_const(ins.args[1], ins.type);
                        break;
                    case Opcode::CondBr:
                        ctx_const(ins.args[0], ts.i8());
                        break;
                    case Opcode::Call: {
                        const Function& callee = m.functions[ins.callee];
                        for (size_t a = 0; a < ins.args.size() &&
                                           a < callee.param_types.size(); a++) {
                            ctx_const(ins.args[a], callee.param_types[a]);
                        }
                        break;
                    }
                    case Opcode::ICall: {
                        const Type* ct = ins.args[0].type;
                        if (ct && ct->is_function_pointer()) {
                            const Type* sig = ct->pointee;
                            for (size_t a = 1; a < ins.args.size() &&
                                               a - 1 < sig->params.size(); a++) {
                                ctx_const(ins.args[a], sig->params[a - 1]);
                            }
                        }
                        break;
                    }
                    case Opcode::IntrinsicCall: {
                        const IntrinsicSig* sig = find_sig(ins.intrinsic);
                        if (!sig) break;
                        for (size_t a = 0; a < ins.args.size() && a < sig->args.size(); a++) {
                            switch (sig->args[a]) {
                                case ArgC::I64:
                                case ArgC::AnyInt:
                                    ctx_const(ins.args[a], ts.i64());
                                    break;
                                case ArgC::AnyPtr:
                                case ArgC::BytePtr:
                                case ArgC::CmpFn:
                                    ctx_const(ins.args[a], ts.byte_ptr());
                                    break;
                                case ArgC::IntOrPtr:
                                    ctx_const(ins.args[a], ts.i64());
                                    break;
                            }
                        }
                        break;
                    }
                    case Opcode::Ret:
                        if (!ins.args.empty()) ctx_const(ins.args[0], f.ret_type);
                        break;
                    default:
                        break;
                }
            }
        }
    }
    return diags;
}

DiagList validate_module(const Module& m) {
    Checker c(m);
    return c.run();
}

}  // namespace tagguard::mir
