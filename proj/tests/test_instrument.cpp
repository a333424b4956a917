#include <doctest.h>

#include <fstream>
#include <sstream>

#include "tagguard/analysis/static_base.hpp"
#include "tagguard/mir/parser.hpp"
#include "tagguard/mir/printer.hpp"
#include "tagguard/mir/validator.hpp"
#include "tagguard/xform/instrument.hpp"

using namespace tagguard;
using namespace tagguard::mir;
using namespace tagguard::xform;

namespace {

Module parse_ok(const std::string& text) {
    ParseResult pr = parse_module(text);
    if (!pr.ok()) FAIL("parse failed: " << format_diags(pr.diags));
    return std::move(*pr.module);
}

const char* kRunningExample = R"(
func @bar(%arr: i32*, %i: i64, %var: i32**, %n: {i32, i32}*) -> i32* {
entry:
  %newarr = load i32*, %var
  %a1 = gep i32, %arr, %i
  store i32 20, %a1
  %a2 = gep i32, %newarr, %i
  store i32 40, %a2
  %arr1 = gep i32, %arr, 1
  %eq = pcmp eq i32* %newarr, %arr1
  condbr %eq, then, done
then:
  %fi = gep i32, %n, 1
  store i32 0, %fi
  br done
done:
  %r = gep i32, %arr, %i
  ret %r
}

func @foo(%i: i64, %var: i32**) -> void {
entry:
  %x = alloca [100 x i32]
  %n = alloca {i32, i32}
  %x0 = bitcast %x to i32*
  %x6 = gep i32, %x0, 6
  store i32* %x6, %var
  %x5 = gep i32, %x0, 5
  %r = call @bar(%x5, %i, %var, %n)
  store i32* %r, %var
  ret
}

func @main() -> i64 {
entry:
  %slot = alloca i32*
  call @foo(1, %slot)
  %p = load i32*, %slot
  %v = load i32, %p
  intrinsic print(%v)
  ret 0
}
)";

size_t count_intrinsics(const Module& m, Intrinsic id) {
    size_t n = 0;
    for (const Function& f : m.functions)
        for (const Block& b : f.blocks)
            for (const Instr& ins : b.instrs)
                if (ins.op == Opcode::IntrinsicCall && ins.intrinsic == id) n++;
    return n;
}

}  // namespace

TEST_CASE("running example gets exactly the escape updates it needs") {
    Module m = parse_ok(kRunningExample);
    InstrumentResult res = instrument_module(m, {});
    REQUIRE(res.ok());
    CHECK(m.checked);
    CHECK(validate_module(m).empty());

    // the interior pointer store, the interior call argument, and the
    // interior return are updated; everything else is a known alias
    CHECK(res.stats.tag_updates_inserted == 3);
    CHECK(res.stats.tag_updates_exempted == 4);
    CHECK(res.stats.checks_inserted == 2);
    CHECK(res.stats.checks_elided == 6);
    CHECK(res.stats.checks_hoisted == 0);
    CHECK(res.stats.invalidates_inserted == 0);

    CHECK(count_intrinsics(m, Intrinsic::UpdateTag) == 3);
    CHECK(count_intrinsics(m, Intrinsic::BoundsCheck) == 2);
}

TEST_CASE("escape coverage: every pointer escape is updated or exempted") {
    Module original = parse_ok(kRunningExample);
    size_t escape_sites = 0;
    for (const Function& f : original.functions) {
        for (const Block& b : f.blocks) {
            for (const Instr& ins : b.instrs) {
                auto count_ptr = [&](const Operand& o) {
                    if (o.type && o.type->is_pointer()) escape_sites++;
                };
                switch (ins.op) {
                    case Opcode::Store:
                        count_ptr(ins.args[0]);
                        break;
                    case Opcode::Call:
                    case Opcode::IntrinsicCall:
                        for (const Operand& o : ins.args) count_ptr(o);
                        break;
                    case Opcode::ICall:
                        for (size_t a = 1; a < ins.args.size(); a++)
                            count_ptr(ins.args[a]);
                        break;
                    case Opcode::Ret:
                        if (!ins.args.empty()) count_ptr(ins.args[0]);
                        break;
                    default:
                        break;
                }
            }
        }
    }
    Module m = parse_ok(kRunningExample);
    InstrumentResult res = instrument_module(m, {});
    REQUIRE(res.ok());
    CHECK(res.stats.tag_updates_inserted + res.stats.tag_updates_exempted +
              res.stats.invalidates_inserted ==
          escape_sites);
}

TEST_CASE("disabling the size invariant turns every access into a check") {
    Module m = parse_ok(kRunningExample);
    InstrumentOptions opts;
    opts.size_invariant = false;
    InstrumentResult res = instrument_module(m, opts);
    REQUIRE(res.ok());
    CHECK(res.stats.checks_elided == 0);
    CHECK(res.stats.checks_inserted == 8);  // every load and store
    // offset-only resets disappear with elision
    CHECK(count_intrinsics(m, Intrinsic::ResetOffset) == 0);
}

TEST_CASE("module without pointer operations is untouched") {
    const char* text = R"(
func @main() -> i64 {
entry:
  %a = add i64 2, 3
  %b = mul i64 %a, %a
  intrinsic print(%b)
  ret 0
}
)";
    Module m = parse_ok(text);
    std::string before = print_module(m);
    InstrumentResult res = instrument_module(m, {});
    REQUIRE(res.ok());
    CHECK(res.stats.checks_inserted == 0);
    CHECK(res.stats.checks_elided == 0);
    CHECK(res.stats.tag_updates_inserted == 0);
    CHECK(res.stats.tag_updates_exempted == 0);
    // identical up to the checked marker
    std::string after = print_module(m);
    CHECK(after.find("checked\n") != std::string::npos);
    std::string stripped = after;
    stripped.erase(stripped.find("checked\n"), 8);
    CHECK(stripped == before);
}

TEST_CASE("comparisons against null need no reset") {
    const char* text = R"(
func @main(%p: i64*) -> i64 {
entry:
  %c = pcmp eq i64* %p, null
  %d = pcmp ne i64* null, %p
  %e = pcmp eq i64* %p, %p
  ret 0
}
)";
    Module m = parse_ok(text);
    InstrumentResult res = instrument_module(m, {});
    REQUIRE(res.ok());
    // %p is reset per non-null operand position: 1 + 1 + 2
    CHECK(count_intrinsics(m, Intrinsic::ResetTag) == 4);
    for (const Instr& ins : m.functions[0].blocks[0].instrs) {
        if (ins.op == Opcode::PCmp) {
            for (const Operand& o : ins.args) {
                if (o.is_null()) continue;  // null operands stay literal
                CHECK(o.is_value());
            }
        }
    }
}

TEST_CASE("instrumenting twice is rejected") {
    Module m = parse_ok(kRunningExample);
    REQUIRE(instrument_module(m, {}).ok());
    InstrumentResult second = instrument_module(m, {});
    CHECK_FALSE(second.ok());
}

TEST_CASE("large allocas outside the entry block are reported") {
    const char* text = R"(
func @main() -> i64 {
entry:
  br next
next:
  %big = alloca [40000 x i8]
  ret 0
}
)";
    Module m = parse_ok(text);
    InstrumentResult res = instrument_module(m, {});
    CHECK_FALSE(res.ok());
    REQUIRE_FALSE(res.diags.empty());
    CHECK(res.diags[0].message.find("unsupported construct") != std::string::npos);
}

TEST_CASE("pointer fields of allocas are null-initialized") {
    const char* text = R"(
func @main() -> i64 {
entry:
  %box = alloca {i64, i32*, {i8, i64*}}
  ret 0
}
)";
    Module m = parse_ok(text);
    InstrumentResult res = instrument_module(m, {});
    REQUIRE(res.ok());
    // two pointer leaves: the i32* at offset 8 and the nested i64*
    size_t null_stores = 0;
    for (const Instr& ins : m.functions[0].blocks[0].instrs) {
        if (ins.op == Opcode::Store && ins.args[0].is_null()) null_stores++;
    }
    CHECK(null_stores == 2);
    CHECK(validate_module(m).empty());
}

TEST_CASE("suspect integer provenance routes through the allocator") {
    const char* text = R"(
func @main() -> i64 {
entry:
  %raw = intrinsic malloc(64) : i8*
  %p = bitcast %raw to i64*
  %i = ptrtoint %p to i64
  %j = add i64 %i, 8
  %q = inttoptr %j to i64*
  %v = load i64, %q
  intrinsic print(%v)
  ret 0
}
)";
    Module m = parse_ok(text);
    InstrumentResult res = instrument_module(m, {});
    REQUIRE(res.ok());
    CHECK(count_intrinsics(m, Intrinsic::GetBaseAlloc) == 1);
    CHECK(validate_module(m).empty());
}

TEST_CASE("static base dump is exposed through the options") {
    Module m = parse_ok(kRunningExample);
    InstrumentOptions opts;
    opts.dump_static_bases = true;
    InstrumentResult res = instrument_module(m, opts);
    REQUIRE(res.ok());
    CHECK(res.static_base_dump.find("%a1 -> %arr (backtracked)") !=
          std::string::npos);
    CHECK(res.static_base_dump.find("%newarr -> %newarr (self)") !=
          std::string::npos);
}

TEST_CASE("checked IR reparses and revalidates byte-stably") {
    Module m = parse_ok(kRunningExample);
    REQUIRE(instrument_module(m, {}).ok());
    std::string once = print_module(m);
    Module m2 = parse_ok(once);
    CHECK(print_module(m2) == once);
}

TEST_CASE("instrumented running example matches the golden snapshot") {
    std::ifstream golden(std::string(TG_SOURCE_DIR) +
                         "/tests/golden/running_example.checked.mir");
    REQUIRE(golden.good());
    std::ostringstream want;
    want << golden.rdbuf();
    std::ifstream src(std::string(TG_SOURCE_DIR) + "/corpus/running_example.mir");
    std::ostringstream in;
    in << src.rdbuf();
    Module m = parse_ok(in.str());
    REQUIRE(instrument_module(m, {}).ok());
    CHECK(print_module(m) == want.str());
}
