#include "tagguard/mir/type.hpp"

#include <cassert>

namespace tagguard::mir {

static uint64_t align_up(uint64_t v, uint64_t a) { return (v + a - 1) / a * a; }

uint64_t align_of(const Type* t) {
    switch (t->kind) {
        case TypeKind::Int:
            return t->int_bits / 8;
        case TypeKind::Pointer:
            return 8;
        case TypeKind::Array:
            return align_of(t->elem);
        case TypeKind::Struct: {
            uint64_t a = 1;
            for (const Type* f : t->fields) a = std::max(a, align_of(f));
            return a;
        }
        case TypeKind::Function:
            return 1;
    }
    return 1;
}

uint64_t size_of(const Type* t) {
    switch (t->kind) {
        case TypeKind::Int:
            return t->int_bits / 8;
        case TypeKind::Pointer:
            return 8;
        case TypeKind::Array:
            return t->count * size_of(t->elem);
        case TypeKind::Struct: {
            uint64_t off = 0;
            for (const Type* f : t->fields) {
                off = align_up(off, align_of(f));
                off += size_of(f);
            }
            return align_up(off, align_of(t));
        }
        case TypeKind::Function:
            return 0;
    }
    return 0;
}

uint64_t struct_field_offset(const Type* st, size_t idx) {
    assert(st->is_struct() && idx < st->fields.size());
    uint64_t off = 0;
    for (size_t i = 0; i <= idx; i++) {
        off = align_up(off, align_of(st->fields[i]));
        if (i == idx) return off;
        off += size_of(st->fields[i]);
    }
    return off;
}

std::string type_name(const Type* t) {
    switch (t->kind) {
        case TypeKind::Int:
            return "i" + std::to_string(t->int_bits);
        case TypeKind::Pointer:
            if (t->pointee->is_function())
                return "(" + type_name(t->pointee) + ")*";
            return type_name(t->pointee) + "*";
        case TypeKind::Array:
            return "[" + std::to_string(t->count) + " x " + type_name(t->elem) + "]";
        case TypeKind::Struct: {
            std::string s = "{";
            for (size_t i = 0; i < t->fields.size(); i++) {
                if (i) s += ", ";
                s += type_name(t->fields[i]);
            }
            return s + "}";
        }
        case TypeKind::Function: {
            std::string s = "fn(";
            for (size_t i = 0; i < t->params.size(); i++) {
                if (i) s += ", ";
                s += type_name(t->params[i]);
            }
            s += ") -> ";
            s += t->ret ? type_name(t->ret) : "void";
            return s;
        }
    }
    return "?";
}

TypeStore::TypeStore() = default;

const Type* TypeStore::intern(Type t) {
    for (const auto& p : pool_) {
        const Type& q = *p;
        if (q.kind != t.kind) continue;
        switch (t.kind) {
            case TypeKind::Int:
                if (q.int_bits == t.int_bits) return p.get();
                break;
            case TypeKind::Pointer:
                if (q.pointee == t.pointee) return p.get();
                break;
            case TypeKind::Array:
                if (q.count == t.count && q.elem == t.elem) return p.get();
                break;
            case TypeKind::Struct:
                if (q.fields == t.fields) return p.get();
                break;
            case TypeKind::Function:
                if (q.params == t.params && q.ret == t.ret) return p.get();
                break;
        }
    }
    pool_.push_back(std::make_unique<Type>(std::move(t)));
    return pool_.back().get();
}

const Type* TypeStore::int_ty(uint32_t bits) {
    assert(bits == 8 || bits == 16 || bits == 32 || bits == 64);
    Type t;
    t.kind = TypeKind::Int;
    t.int_bits = bits;
    return intern(std::move(t));
}

const Type* TypeStore::ptr_ty(const Type* pointee) {
    Type t;
    t.kind = TypeKind::Pointer;
    t.pointee = pointee;
    return intern(std::move(t));
}

const Type* TypeStore::array_ty(uint64_t count, const Type* elem) {
    Type t;
    t.kind = TypeKind::Array;
    t.count = count;
    t.elem = elem;
    return intern(std::move(t));
}

const Type* TypeStore::struct_ty(std::vector<const Type*> fields) {
    Type t;
    t.kind = TypeKind::Struct;
    t.fields = std::move(fields);
    return intern(std::move(t));
}

const Type* TypeStore::func_ty(std::vector<const Type*> params, const Type* ret) {
    Type t;
    t.kind = TypeKind::Function;
    t.params = std::move(params);
    t.ret = ret;
    return intern(std::move(t));
}

}  // namespace tagguard::mir
