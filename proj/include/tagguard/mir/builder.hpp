#pragma once

#include <cassert>
#include <string>

#include "tagguard/mir/module.hpp"

namespace tagguard::mir {

// Incremental function construction for tests, generators, and passes.
// Instructions append to the current block; finish() moves the function
// into the module.
class FunctionBuilder {
public:
    FunctionBuilder(Module& m, std::string name, std::vector<const Type*> params,
                    const Type* ret)
        : m_(m) {
        f_.name = std::move(name);
        f_.param_types = params;
        f_.ret_type = ret;
        for (size_t i = 0; i < params.size(); i++) {
            f_.values.push_back({"p" + std::to_string(i), params[i], true});
        }
        f_.num_params = static_cast<uint32_t>(params.size());
    }

    Module& module() { return m_; }
    Function& function() { return f_; }
    TypeStore& types() { return m_.types; }

    ValueId param(uint32_t i) const { return i; }
    void rename_param(uint32_t i, std::string name) {
        f_.values[i].name = std::move(name);
    }

    BlockId make_block(const std::string& name) {
        f_.blocks.push_back({name, {}});
        return static_cast<BlockId>(f_.blocks.size() - 1);
    }
    void switch_to(BlockId b) { cur_ = b; }
    BlockId current() const { return cur_; }

    Operand use(ValueId v) const {
        return Operand::value_ref(v, f_.values[v].type);
    }
    Operand konst(int64_t v, const Type* t) const { return Operand::constant(v, t); }
    Operand null_of(const Type* ptr_ty) const { return Operand::null_ptr(ptr_ty); }
    Operand global(uint32_t gi) {
        return Operand::global_ref(gi, m_.types.ptr_ty(m_.globals[gi].type));
    }
    Operand func_addr(uint32_t fi) {
        return Operand::func_ref(fi, m_.types.ptr_ty(m_.functions[fi].func_type(m_.types)));
    }

    ValueId alloca_of(const Type* t, const std::string& name, bool registered = false) {
        Instr ins;
        ins.op = Opcode::Alloca;
        ins.type = t;
        ins.alloca_registered = registered;
        return emit_def(std::move(ins), name, m_.types.ptr_ty(t));
    }
    ValueId gep(const Type* elem, Operand base, Operand idx, const std::string& name) {
        Instr ins;
        ins.op = Opcode::Gep;
        ins.type = elem;
        ins.args = {base, idx};
        return emit_def(std::move(ins), name, m_.types.ptr_ty(elem));
    }
    ValueId load(const Type* t, Operand addr, const std::string& name) {
        Instr ins;
        ins.op = Opcode::Load;
        ins.type = t;
        ins.args = {addr};
        return emit_def(std::move(ins), name, t);
    }
    void store(const Type* t, Operand val, Operand addr) {
        Instr ins;
        ins.op = Opcode::Store;
        ins.type = t;
        ins.args = {val, addr};
        emit(std::move(ins));
    }
    ValueId bitcast(Operand v, const Type* to, const std::string& name) {
        Instr ins;
        ins.op = Opcode::Bitcast;
        ins.type = to;
        ins.args = {v};
        return emit_def(std::move(ins), name, to);
    }
    ValueId ptr_to_int(Operand v, const Type* to, const std::string& name) {
        Instr ins;
        ins.op = Opcode::PtrToInt;
        ins.type = to;
        ins.args = {v};
        return emit_def(std::move(ins), name, to);
    }
    ValueId int_to_ptr(Operand v, const Type* to, const std::string& name) {
        Instr ins;
        ins.op = Opcode::IntToPtr;
        ins.type = to;
        ins.args = {v};
        return emit_def(std::move(ins), name, to);
    }
    ValueId phi(const Type* t, std::vector<Operand> vals, std::vector<BlockId> blocks,
                const std::string& name) {
        Instr ins;
        ins.op = Opcode::Phi;
        ins.type = t;
        ins.args = std::move(vals);
        ins.phi_blocks = std::move(blocks);
        return emit_def(std::move(ins), name, t);
    }
    ValueId select(const Type* t, Operand c, Operand a, Operand b,
                   const std::string& name) {
        Instr ins;
        ins.op = Opcode::Select;
        ins.type = t;
        ins.args = {c, a, b};
        return emit_def(std::move(ins), name, t);
    }
    ValueId icmp(CmpPred p, const Type* t, Operand a, Operand b,
                 const std::string& name) {
        Instr ins;
        ins.op = Opcode::ICmp;
        ins.pred = p;
        ins.type = t;
        ins.args = {a, b};
        return emit_def(std::move(ins), name, m_.types.i8());
    }
    ValueId pcmp(CmpPred p, const Type* t, Operand a, Operand b,
                 const std::string& name) {
        Instr ins;
        ins.op = Opcode::PCmp;
        ins.pred = p;
        ins.type = t;
        ins.args = {a, b};
        return emit_def(std::move(ins), name, m_.types.i8());
    }
    ValueId binop(BinKind k, const Type* t, Operand a, Operand b,
                  const std::string& name) {
        Instr ins;
        ins.op = Opcode::BinOp;
        ins.bin = k;
        ins.type = t;
        ins.args = {a, b};
        return emit_def(std::move(ins), name, t);
    }
    ValueId psub(const Type* t, Operand a, Operand b, const std::string& name) {
        Instr ins;
        ins.op = Opcode::PSub;
        ins.type = t;
        ins.args = {a, b};
        return emit_def(std::move(ins), name, m_.types.i64());
    }
    void br(BlockId target) {
        Instr ins;
        ins.op = Opcode::Br;
        ins.br_true = target;
        emit(std::move(ins));
    }
    void condbr(Operand c, BlockId t, BlockId e) {
        Instr ins;
        ins.op = Opcode::CondBr;
        ins.args = {c};
        ins.br_true = t;
        ins.br_false = e;
        emit(std::move(ins));
    }
    ValueId call(uint32_t callee, std::vector<Operand> args, const std::string& name) {
        Instr ins;
        ins.op = Opcode::Call;
        ins.callee = callee;
        ins.args = std::move(args);
        const Type* rt = m_.functions[callee].ret_type;
        assert(rt);
        return emit_def(std::move(ins), name, rt);
    }
    void call_void(uint32_t callee, std::vector<Operand> args) {
        Instr ins;
        ins.op = Opcode::Call;
        ins.callee = callee;
        ins.args = std::move(args);
        emit(std::move(ins));
    }
    ValueId icall(Operand callee, std::vector<Operand> args, const std::string& name) {
        Instr ins;
        ins.op = Opcode::ICall;
        ins.args = {callee};
        for (auto& a : args) ins.args.push_back(a);
        const Type* rt = callee.type->pointee->ret;
        assert(rt);
        return emit_def(std::move(ins), name, rt);
    }
    ValueId intrinsic(Intrinsic id, std::vector<Operand> args, const Type* result,
                      const std::string& name) {
        Instr ins;
        ins.op = Opcode::IntrinsicCall;
        ins.intrinsic = id;
        ins.args = std::move(args);
        return emit_def(std::move(ins), name, result);
    }
    void intrinsic_void(Intrinsic id, std::vector<Operand> args) {
        Instr ins;
        ins.op = Opcode::IntrinsicCall;
        ins.intrinsic = id;
        ins.args = std::move(args);
        emit(std::move(ins));
    }
    void ret(Operand v) {
        Instr ins;
        ins.op = Opcode::Ret;
        ins.args = {v};
        emit(std::move(ins));
    }
    void ret_void() {
        Instr ins;
        ins.op = Opcode::Ret;
        emit(std::move(ins));
    }

    uint32_t finish() {
        m_.functions.push_back(std::move(f_));
        return static_cast<uint32_t>(m_.functions.size() - 1);
    }

private:
    void emit(Instr ins) {
        assert(cur_ < f_.blocks.size());
        f_.blocks[cur_].instrs.push_back(std::move(ins));
    }
    ValueId emit_def(Instr ins, const std::string& name, const Type* t) {
        ValueId v = f_.add_value(name, t);
        ins.result = v;
        emit(std::move(ins));
        return v;
    }

    Module& m_;
    Function f_;
    BlockId cur_ = 0;
};

}  // namespace tagguard::mir
