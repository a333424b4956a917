#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace tagguard::mir {

enum class TypeKind : uint8_t {
    Int,
    Pointer,
    Array,
    Struct,
    Function,
};

class TypeStore;

// Types are interned in a TypeStore; Type* identity is structural equality.
struct Type {
    TypeKind kind;
    uint32_t int_bits = 0;              // Int
    const Type* pointee = nullptr;      // Pointer
    const Type* elem = nullptr;         // Array
    uint64_t count = 0;                 // Array
    std::vector<const Type*> fields;    // Struct
    std::vector<const Type*> params;    // Function
    const Type* ret = nullptr;          // Function (null = void)

    bool is_int() const { return kind == TypeKind::Int; }
    bool is_pointer() const { return kind == TypeKind::Pointer; }
    bool is_array() const { return kind == TypeKind::Array; }
    bool is_struct() const { return kind == TypeKind::Struct; }
    bool is_function() const { return kind == TypeKind::Function; }
    bool is_function_pointer() const {
        return is_pointer() && pointee->is_function();
    }
};

// Byte size under natural alignment. Functions have no size.
uint64_t size_of(const Type* t);
// Natural alignment: ints their width, pointers 8, arrays their element,
// structs the max field alignment.
uint64_t align_of(const Type* t);
// Byte offset of struct field `idx` under natural alignment.
uint64_t struct_field_offset(const Type* st, size_t idx);

std::string type_name(const Type* t);

class TypeStore {
public:
    TypeStore();
    TypeStore(const TypeStore&) = delete;
    TypeStore& operator=(const TypeStore&) = delete;
    TypeStore(TypeStore&&) = default;
    TypeStore& operator=(TypeStore&&) = default;

    const Type* int_ty(uint32_t bits);
    const Type* ptr_ty(const Type* pointee);
    const Type* array_ty(uint64_t count, const Type* elem);
    const Type* struct_ty(std::vector<const Type*> fields);
    // ret == nullptr means a void-returning function.
    const Type* func_ty(std::vector<const Type*> params, const Type* ret);

    const Type* i8() { return int_ty(8); }
    const Type* i16() { return int_ty(16); }
    const Type* i32() { return int_ty(32); }
    const Type* i64() { return int_ty(64); }
    const Type* byte_ptr() { return ptr_ty(i8()); }

private:
    const Type* intern(Type t);
    std::vector<std::unique_ptr<Type>> pool_;
};

}  // namespace tagguard::mir
