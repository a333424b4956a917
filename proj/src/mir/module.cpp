#include "tagguard/mir/module.hpp"

namespace tagguard::mir {

namespace {

struct IntrinsicRow {
    Intrinsic id;
    const char* name;
};

constexpr IntrinsicRow kIntrinsics[] = {
    {Intrinsic::Malloc, "malloc"},
    {Intrinsic::Free, "free"},
    {Intrinsic::Memcpy, "memcpy"},
    {Intrinsic::Memset, "memset"},
    {Intrinsic::Memmove, "memmove"},
    {Intrinsic::Strlen, "strlen"},
    {Intrinsic::Strcpy, "strcpy"},
    {Intrinsic::Strstr, "strstr"},
    {Intrinsic::Qsort, "qsort"},
    {Intrinsic::Print, "print"},
    {Intrinsic::Exit, "exit"},
    {Intrinsic::MmapAnon, "mmap_anon"},
    {Intrinsic::UpdateTag, "update_tag"},
    {Intrinsic::GetBase, "get_base"},
    {Intrinsic::GetBaseFt, "get_base_ft"},
    {Intrinsic::GetBaseAlloc, "get_base_alloc"},
    {Intrinsic::ObjectLimit, "object_limit"},
    {Intrinsic::ObjectLimitFt, "object_limit_ft"},
    {Intrinsic::BoundsCheck, "bounds_check"},
    {Intrinsic::ArgBoundsCheck, "arg_bounds_check"},
    {Intrinsic::ResetTag, "reset_tag"},
    {Intrinsic::ResetOffset, "reset_offset"},
    {Intrinsic::Invalidate, "invalidate"},
    {Intrinsic::HoistGuard, "hoist_guard"},
};

}  // namespace

const char* intrinsic_name(Intrinsic i) {
    for (const auto& row : kIntrinsics)
        if (row.id == i) return row.name;
    return "?";
}

std::optional<Intrinsic> intrinsic_by_name(const std::string& name) {
    for (const auto& row : kIntrinsics)
        if (name == row.name) return row.id;
    return std::nullopt;
}

namespace {

void flatten_node(const InitNode& n, const Type* t, uint64_t base_off,
                  std::vector<InitWrite>& out) {
    switch (n.kind) {
        case InitNode::Kind::Zero:
            return;
        case InitNode::Kind::Aggregate:
            if (t->is_array()) {
                for (size_t i = 0; i < n.elems.size(); i++)
                    flatten_node(n.elems[i], t->elem, base_off + i * size_of(t->elem), out);
            } else {
                for (size_t i = 0; i < n.elems.size(); i++)
                    flatten_node(n.elems[i], t->fields[i],
                                 base_off + struct_field_offset(t, i), out);
            }
            return;
        default: {
            InitWrite w;
            w.byte_offset = base_off;
            w.field_type = t;
            w.kind = n.kind;
            w.int_value = n.int_value;
            w.ref_index = n.ref_index;
            w.addend = n.addend;
            out.push_back(w);
            return;
        }
    }
}

}  // namespace

std::vector<InitWrite> flatten_init(const Global& g) {
    std::vector<InitWrite> out;
    if (g.init) flatten_node(*g.init, g.type, 0, out);
    return out;
}

const char* pred_name(CmpPred p) {
    switch (p) {
        case CmpPred::Eq: return "eq";
        case CmpPred::Ne: return "ne";
        case CmpPred::Slt: return "slt";
        case CmpPred::Sle: return "sle";
        case CmpPred::Sgt: return "sgt";
        case CmpPred::Sge: return "sge";
        case CmpPred::Ult: return "ult";
        case CmpPred::Ule: return "ule";
        case CmpPred::Ugt: return "ugt";
        case CmpPred::Uge: return "uge";
    }
    return "?";
}

const char* bin_name(BinKind b) {
    switch (b) {
        case BinKind::Add: return "add";
        case BinKind::Sub: return "sub";
        case BinKind::Mul: return "mul";
        case BinKind::SDiv: return "sdiv";
        case BinKind::UDiv: return "udiv";
        case BinKind::SRem: return "srem";
        case BinKind::URem: return "urem";
        case BinKind::And: return "and";
        case BinKind::Or: return "or";
        case BinKind::Xor: return "xor";
        case BinKind::Shl: return "shl";
        case BinKind::LShr: return "lshr";
        case BinKind::AShr: return "ashr";
    }
    return "?";
}

}  // namespace tagguard::mir
