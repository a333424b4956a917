#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tagguard/mir/type.hpp"

namespace tagguard::mir {

using ValueId = uint32_t;
using BlockId = uint32_t;
inline constexpr ValueId kNoValue = ~ValueId{0};

enum class Opcode : uint8_t {
    Alloca,
    Gep,
    Load,
    Store,
    Bitcast,
    PtrToInt,
    IntToPtr,
    Phi,
    Select,
    ICmp,
    PCmp,
    BinOp,
    PSub,
    Br,
    CondBr,
    Call,
    ICall,
    IntrinsicCall,
    Ret,
};

enum class CmpPred : uint8_t { Eq, Ne, Slt, Sle, Sgt, Sge, Ult, Ule, Ugt, Uge };

enum class BinKind : uint8_t {
    Add, Sub, Mul, SDiv, UDiv, SRem, URem, And, Or, Xor, Shl, LShr, AShr,
};

enum class Intrinsic : uint8_t {
    // guest library surface
    Malloc, Free, Memcpy, Memset, Memmove, Strlen, Strcpy, Strstr, Qsort,
    Print, Exit, MmapAnon,
    // checked-code runtime primitives
    UpdateTag, GetBase, GetBaseFt, GetBaseAlloc, ObjectLimit, ObjectLimitFt,
    BoundsCheck, ArgBoundsCheck, ResetTag, ResetOffset, Invalidate, HoistGuard,
};

const char* intrinsic_name(Intrinsic i);
std::optional<Intrinsic> intrinsic_by_name(const std::string& name);
const char* pred_name(CmpPred p);
const char* bin_name(BinKind b);

struct Operand {
    enum class Kind : uint8_t { Value, Const, Null, Global, Func, None };
    Kind kind = Kind::None;
    ValueId value = kNoValue;      // Value
    int64_t imm = 0;               // Const
    uint32_t index = 0;            // Global / Func
    const Type* type = nullptr;    // static type of the operand

    static Operand value_ref(ValueId v, const Type* t) {
        Operand o;
        o.kind = Kind::Value;
        o.value = v;
        o.type = t;
        return o;
    }
    static Operand constant(int64_t v, const Type* t) {
        Operand o;
        o.kind = Kind::Const;
        o.imm = v;
        o.type = t;
        return o;
    }
    static Operand null_ptr(const Type* t) {
        Operand o;
        o.kind = Kind::Null;
        o.type = t;
        return o;
    }
    static Operand global_ref(uint32_t idx, const Type* t) {
        Operand o;
        o.kind = Kind::Global;
        o.index = idx;
        o.type = t;
        return o;
    }
    static Operand func_ref(uint32_t idx, const Type* t) {
        Operand o;
        o.kind = Kind::Func;
        o.index = idx;
        o.type = t;
        return o;
    }
    bool is_value() const { return kind == Kind::Value; }
    bool is_const() const { return kind == Kind::Const; }
    bool is_null() const { return kind == Kind::Null; }
};

// Metadata allowing the fault handler to re-derive bounds for an access
// whose check was elided: the access address is `static-base + disp`.
struct RecoverInfo {
    ValueId static_base = kNoValue;
    int64_t disp = 0;
};

struct Instr {
    Opcode op;
    ValueId result = kNoValue;
    // gep: element type; load/store: access type; phi/select/icmp/pcmp/
    // binop/psub: operand type; casts: destination type; alloca: object type.
    const Type* type = nullptr;
    std::vector<Operand> args;
    // phi: incoming block per arg, parallel to args.
    std::vector<BlockId> phi_blocks;
    BlockId br_true = 0, br_false = 0;  // br/condbr targets
    CmpPred pred = CmpPred::Eq;
    BinKind bin = BinKind::Add;
    Intrinsic intrinsic = Intrinsic::Malloc;
    uint32_t callee = 0;                  // Call: function index
    bool alloca_registered = false;       // alloca: escape-registered with allocator
    bool pass_generated = false;          // inserted by instrumentation; exempt from planning
    uint8_t check_dir = 0;                // bounds_check: 0 unset, 1 read, 2 write
    std::optional<ValueId> synth_base_of; // phi/select synthesized as a static-base merge
    std::optional<RecoverInfo> recover;   // load/store with elided check
    std::string loc;                      // optional `; !loc` source annotation

    bool is_terminator() const {
        return op == Opcode::Br || op == Opcode::CondBr || op == Opcode::Ret;
    }
    bool has_result() const { return result != kNoValue; }
};

struct Block {
    std::string name;
    std::vector<Instr> instrs;
};

struct ValueInfo {
    std::string name;
    const Type* type = nullptr;
    bool is_param = false;
};

struct Function {
    std::string name;
    std::vector<const Type*> param_types;
    const Type* ret_type = nullptr;  // null = void
    uint32_t num_params = 0;
    std::vector<ValueInfo> values;   // index = ValueId; params first
    std::vector<Block> blocks;       // blocks[0] = entry

    const Type* func_type(TypeStore& ts) const {
        return ts.func_ty(param_types, ret_type);
    }
    ValueId add_value(std::string name, const Type* t) {
        values.push_back({std::move(name), t, false});
        return static_cast<ValueId>(values.size() - 1);
    }
};

// Global initializer tree, mirroring the global's type structure.
struct InitNode {
    enum class Kind : uint8_t { Zero, Int, Null, GlobalAddr, FuncAddr, Aggregate };
    Kind kind = Kind::Zero;
    int64_t int_value = 0;          // Int
    uint32_t ref_index = 0;         // GlobalAddr / FuncAddr
    int64_t addend = 0;             // GlobalAddr: byte displacement from base
    std::vector<InitNode> elems;    // Aggregate
};

struct Global {
    std::string name;
    const Type* type = nullptr;
    std::optional<InitNode> init;   // absent = zero-initialized
};

// One scalar store produced by flattening an initializer tree.
struct InitWrite {
    uint64_t byte_offset = 0;
    const Type* field_type = nullptr;
    InitNode::Kind kind = InitNode::Kind::Int;
    int64_t int_value = 0;
    uint32_t ref_index = 0;
    int64_t addend = 0;
};

// Expands `g.init` into per-field scalar writes (zero fields omitted).
std::vector<InitWrite> flatten_init(const Global& g);

struct Module {
    TypeStore types;
    std::vector<Global> globals;
    std::vector<Function> functions;
    bool checked = false;  // carries instrumented-module semantics (tagged loads)

    int find_function(const std::string& name) const {
        for (size_t i = 0; i < functions.size(); i++)
            if (functions[i].name == name) return static_cast<int>(i);
        return -1;
    }
    int find_global(const std::string& name) const {
        for (size_t i = 0; i < globals.size(); i++)
            if (globals[i].name == name) return static_cast<int>(i);
        return -1;
    }
};

}  // namespace tagguard::mir
