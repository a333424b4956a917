#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <functional>
#include <random>

#include "tagguard/mir/parser.hpp"
#include "tagguard/mir/printer.hpp"
#include "tagguard/mir/validator.hpp"

using namespace tagguard;
using namespace tagguard::mir;

namespace {

Module parse_ok(const std::string& text) {
    ParseResult pr = parse_module(text);
    if (!pr.ok()) FAIL("parse failed: " << format_diags(pr.diags));
    return std::move(*pr.module);
}

std::string first_error(const std::string& text) {
    ParseResult pr = parse_module(text);
    REQUIRE_FALSE(pr.ok());
    REQUIRE_FALSE(pr.diags.empty());
    return pr.diags[0].message;
}

}  // namespace

TEST_CASE("minimal function parses") {
    Module m = parse_ok("func @f() -> i32 {\nentry:\n  ret 7\n}\n");
    CHECK(m.functions.size() == 1);
    CHECK(m.globals.empty());
    CHECK(m.functions[0].name == "f");
}

TEST_CASE("type sizes and alignment") {
    Module m;
    TypeStore& ts = m.types;
    CHECK(size_of(ts.i8()) == 1);
    CHECK(size_of(ts.i64()) == 8);
    CHECK(size_of(ts.ptr_ty(ts.i32())) == 8);
    CHECK(size_of(ts.array_ty(100, ts.i32())) == 400);
    // four ints pack to 16 bytes
    const Type* info = ts.struct_ty({ts.i32(), ts.i32(), ts.i32(), ts.i32()});
    CHECK(size_of(info) == 16);
    // padding: {i8, i64} aligns the second field to 8
    const Type* padded = ts.struct_ty({ts.i8(), ts.i64()});
    CHECK(size_of(padded) == 16);
    CHECK(align_of(padded) == 8);
    CHECK(struct_field_offset(padded, 1) == 8);
}

TEST_CASE("layout properties over random types") {
    Module m;
    TypeStore& ts = m.types;
    std::mt19937_64 rng(11);
    std::function<const Type*(int)> mk = [&](int depth) -> const Type* {
        switch (rng() % (depth > 2 ? 2 : 5)) {
            case 0: return ts.int_ty(8 << (rng() % 4));
            case 1: return ts.ptr_ty(ts.i32());
            case 2: return ts.array_ty(rng() % 6, mk(depth + 1));
            case 3: {
                std::vector<const Type*> fs;
                size_t n = rng() % 5;
                for (size_t i = 0; i < n; i++) fs.push_back(mk(depth + 1));
                return ts.struct_ty(std::move(fs));
            }
            default: return ts.i64();
        }
    };
    for (int i = 0; i < 500; i++) {
        const Type* t = mk(0);
        uint64_t s = size_of(t), a = align_of(t);
        CHECK(a >= 1);
        CHECK(s % a == 0);
        if (t->is_struct()) {
            for (size_t f = 0; f < t->fields.size(); f++) {
                uint64_t off = struct_field_offset(t, f);
                CHECK(off % align_of(t->fields[f]) == 0);
                CHECK(off + size_of(t->fields[f]) <= s);
            }
        }
        if (t->is_array()) CHECK(s == t->count * size_of(t->elem));
    }
}

static const char* kRoundTrip = R"(
global @g1 : [10 x i32] = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10}
global @g2 : i32* = @g1 + 24
global @buf : [4000 x i8]
global @holder : {i64, i32*} = {42, null}

func @helper(%p: i32*, %n: i64) -> i32* {
entry:
  %cmp = icmp sgt i64 %n, 0
  condbr %cmp, work, out
work:
  %q = gep i32, %p, %n
  br out
out:
  %r = phi i32* [%p, entry], [%q, work]
  ret %r
}

func @main() -> i32 {
entry:
  %x = alloca [100 x i32]
  %p = bitcast %x to i32*
  %i = ptrtoint %p to i64
  %j = add i64 %i, 8
  %q = inttoptr %j to i32*
  %sel = select i32* %cmp0, %p, %q
  %cmp0 = icmp eq i64 %j, 0
  ret 0
}
)";

TEST_CASE("print + parse round-trips structurally") {
    // the select above uses %cmp0 before definition: dominance error expected
    ParseResult bad = parse_module(kRoundTrip);
    CHECK_FALSE(bad.ok());
}

static const char* kGood = R"(
global @g1 : [10 x i32] = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10}
global @g2 : i32* = @g1 + 24
global @holder : {i64, i32*} = {42, null}

func @helper(%p: i32*, %n: i64) -> i32* {
entry:
  %cmp = icmp sgt i64 %n, 0
  condbr %cmp, work, out
work:
  %q = gep i32, %p, %n
  br out
out:
  %r = phi i32* [%p, entry], [%q, work]
  ret %r
}

func @main() -> i32 {
entry:
  %x = alloca [100 x i32]
  %p = bitcast %x to i32*
  %c = pcmp eq i32* %p, null
  %v = load i32, %p
  store i32 %v, %p
  %h = call @helper(%p, 5)
  %d = psub i32* %h, %p
  %fp = intrinsic malloc(64) : i8*
  intrinsic free(%fp)
  intrinsic print(%d)
  ret 0
}
)";

TEST_CASE("round-trip is a fixpoint") {
    Module m = parse_ok(kGood);
    std::string once = print_module(m);
    Module m2 = parse_ok(once);
    std::string twice = print_module(m2);
    CHECK(once == twice);
    CHECK(m2.globals.size() == m.globals.size());
    CHECK(m2.functions.size() == m.functions.size());
}

TEST_CASE("empty module prints a header comment") {
    Module m;
    std::string text = print_module(m);
    CHECK(text.rfind(";", 0) == 0);
    Module m2 = parse_ok(text);
    CHECK(m2.functions.empty());
}

TEST_CASE("parser rejects bad programs with positions") {
    CHECK(first_error("func @f() -> i32 {\nentry:\n  ret\n}\n") !=
          "");  // missing ret value
    SUBCASE("phi arity") {
        std::string text =
            "func @f() -> i32 {\n"
            "entry:\n"
            "  br next\n"
            "next:\n"
            "  %x = phi i32 [0, entry], [1, next]\n"
            "  ret %x\n"
            "}\n";
        ParseResult pr = parse_module(text);
        REQUIRE_FALSE(pr.ok());
        bool has_arity = false;
        for (auto& d : pr.diags)
            if (d.message.find("phi") != std::string::npos) has_arity = true;
        CHECK(has_arity);
    }
    SUBCASE("duplicate definition") {
        std::string text =
            "func @f() -> i32 {\n"
            "entry:\n"
            "  %x = add i64 1, 2\n"
            "  %x = add i64 3, 4\n"
            "  ret 0\n"
            "}\n";
        CHECK(first_error(text).find("duplicate SSA definition") != std::string::npos);
    }
    SUBCASE("use before def in straight line") {
        std::string text =
            "func @f() -> i32 {\n"
            "entry:\n"
            "  %y = add i64 %x, 1\n"
            "  %x = add i64 1, 2\n"
            "  ret 0\n"
            "}\n";
        CHECK(first_error(text).find("dominance violation") != std::string::npos);
    }
    SUBCASE("integer constant in pointer position") {
        std::string text =
            "func @f(%p: i32*) -> i32 {\n"
            "entry:\n"
            "  %c = pcmp eq i32* %p, 77\n"
            "  ret 0\n"
            "}\n";
        CHECK(first_error(text).find("pointer position") != std::string::npos);
    }
    SUBCASE("syntax error carries line info") {
        ParseResult pr = parse_module("func @f( -> i32 {\n}\n");
        REQUIRE_FALSE(pr.ok());
        CHECK(pr.diags[0].loc.line >= 1);
    }
}

TEST_CASE("loc comments ride along") {
    std::string text =
        "func @f(%p: i64*) -> i64 {\n"
        "entry:\n"
        "  %v = load i64, %p ; !loc demo.c:12\n"
        "  ret %v\n"
        "}\n";
    Module m = parse_ok(text);
    CHECK(m.functions[0].blocks[0].instrs[0].loc == "demo.c:12");
    std::string printed = print_module(m);
    CHECK(printed.find("!loc demo.c:12") != std::string::npos);
    Module m2 = parse_ok(printed);
    CHECK(m2.functions[0].blocks[0].instrs[0].loc == "demo.c:12");
}

TEST_CASE("checked pragma round-trips") {
    Module m = parse_ok(kGood);
    m.checked = true;
    Module m2 = parse_ok(print_module(m));
    CHECK(m2.checked);
}

TEST_CASE("global initializer shapes are validated") {
    ParseResult pr =
        parse_module("global @g : {i32, i32} = {1, 2, 3}\n");
    CHECK_FALSE(pr.ok());
    ParseResult pr2 = parse_module("global @g : i32* = 5\n");
    CHECK_FALSE(pr2.ok());
}

TEST_CASE("every corpus program round-trips byte-stably") {
    namespace fs = std::filesystem;
    int seen = 0;
    for (const auto& e : fs::directory_iterator(std::string(TG_SOURCE_DIR) + "/corpus")) {
        if (e.path().extension() != ".mir") continue;
        std::ifstream in(e.path());
        std::ostringstream ss;
        ss << in.rdbuf();
        ParseResult pr = parse_module(ss.str());
        if (!pr.ok()) FAIL(e.path().string() << ": " << format_diags(pr.diags));
        std::string once = print_module(*pr.module);
        ParseResult pr2 = parse_module(once);
        REQUIRE(pr2.ok());
        CHECK(print_module(*pr2.module) == once);
        seen++;
    }
    CHECK(seen >= 20);
}
