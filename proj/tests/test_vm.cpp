#include <doctest.h>

#include <random>
#include <sstream>

#include "tagguard/mir/parser.hpp"
#include "tagguard/mir/printer.hpp"
#include "tagguard/rt/vm.hpp"
#include "tagguard/xform/instrument.hpp"

using namespace tagguard;
using namespace tagguard::mir;
using namespace tagguard::rt;

namespace {

Module parse_ok(const std::string& text) {
    ParseResult pr = parse_module(text);
    if (!pr.ok()) FAIL("parse failed: " << format_diags(pr.diags));
    return std::move(*pr.module);
}

Module instrumented(const std::string& text, xform::InstrumentOptions opts = {}) {
    Module m = parse_ok(text);
    xform::InstrumentResult res = xform::instrument_module(m, opts);
    if (!res.ok()) FAIL("instrumentation failed: " << format_diags(res.diags));
    // checked IR must itself be valid and parseable
    ParseResult round = parse_module(print_module(m));
    if (!round.ok()) FAIL("checked IR reparse failed: " << format_diags(round.diags));
    return std::move(*round.module);
}

RunResult run_text(const std::string& text, bool checked,
                   std::vector<int64_t> args = {}) {
    if (checked) {
        Module m = instrumented(text);
        return Vm(m).run("main", args);
    }
    Module m = parse_ok(text);
    return Vm(m).run("main", args);
}

// the running example: interior pointers escape through stores, a call,
// and a return, with a pointer equality in the callee
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

}  // namespace

TEST_CASE("plain interpreter runs the running example") {
    RunResult rr = run_text(kRunningExample, false);
    CHECK(rr.exit_code == 0);
    CHECK_FALSE(rr.violation.has_value());
    CHECK(rr.output == "20\n");
}

TEST_CASE("checked run of the running example preserves semantics") {
    RunResult rr = run_text(kRunningExample, true);
    CHECK(rr.exit_code == 0);
    CHECK_FALSE(rr.violation.has_value());
    CHECK(rr.output == "20\n");
    CHECK(rr.counters.tag_updates > 0);
    CHECK(rr.counters.recoveries == 0);
}

TEST_CASE("off-by-one store on the heap is caught") {
    // the second allocation keeps the byte past the first one mapped, so
    // the plain run corrupts a neighbouring header instead of faulting
    const char* text = R"(
func @main() -> i64 {
entry:
  %raw = intrinsic malloc(40) : i8*
  %neighbour = intrinsic malloc(40) : i8*
  %a = bitcast %raw to i64*
  %g = icmp sgt i64 6, 0
  condbr %g, pre, done
pre:
  br loop
loop:
  %i = phi i64 [0, pre], [%inext, loop]
  %slot = gep i64, %a, %i
  store i64 %i, %slot
  %inext = add i64 %i, 1
  %c = icmp slt i64 %inext, 6
  condbr %c, loop, done
done:
  ret 0
}
)";
    SUBCASE("hoisted: the preheader check aborts before the loop runs") {
        RunResult rr = run_text(text, true);
        REQUIRE(rr.violation.has_value());
        CHECK(rr.violation->kind == ViolationKind::OobWrite);
        CHECK(rr.exit_code == 10);
        CHECK(rr.counters.bounds_checks == 1);
    }
    SUBCASE("unhoisted: the boundary iteration aborts") {
        Module m = parse_ok(text);
        xform::InstrumentOptions opts;
        opts.loop_opt = false;
        xform::InstrumentResult res = xform::instrument_module(m, opts);
        REQUIRE(res.ok());
        RunResult rr = Vm(m).run("main");
        REQUIRE(rr.violation.has_value());
        CHECK(rr.violation->kind == ViolationKind::OobWrite);
        CHECK(rr.counters.bounds_checks == 6);  // five pass, the sixth aborts
    }
    SUBCASE("plain execution scribbles past the block but survives") {
        RunResult rr = run_text(text, false);
        CHECK(rr.exit_code == 0);
    }
}

TEST_CASE("negative global index is caught as an out-of-bounds read") {
    const char* text = R"(
global @t : [8 x i64] = {1, 2, 3, 4, 5, 6, 7, 8}

func @main() -> i64 {
entry:
  %p = bitcast @t to i64*
  %q = gep i64, %p, -1
  %v = load i64, %q
  intrinsic print(%v)
  ret 0
}
)";
    RunResult rr = run_text(text, true);
    REQUIRE(rr.violation.has_value());
    CHECK(rr.violation->kind == ViolationKind::OobRead);
    CHECK(rr.output.empty());
    RunResult plain = run_text(text, false);
    CHECK(plain.exit_code == 0);  // reads the header word, undetected
}

TEST_CASE("stack array overflow write is caught") {
    const char* text = R"(
func @main() -> i64 {
entry:
  %a = alloca [10 x i64]
  %p = bitcast %a to i64*
  %q = gep i64, %p, 12
  store i64 7, %q
  ret 0
}
)";
    RunResult rr = run_text(text, true);
    REQUIRE(rr.violation.has_value());
    CHECK(rr.violation->kind == ViolationKind::OobWrite);
}

TEST_CASE("size-invariant recovery completes in-bounds accesses") {
    // a two-int array viewed as a four-int struct: fields a and b recover,
    // fields c and d abort; the pad object keeps the bytes above the array
    // mapped so the plain run reads stale neighbours instead of faulting
    auto program = [](int field_index) {
        return R"(
func @get(%s: {i32, i32, i32, i32}*) -> i32 {
entry:
  %fp = gep i32, %s, )" +
               std::to_string(field_index) + R"(
  %v = load i32, %fp
  ret %v
}

func @main() -> i64 {
entry:
  %pad = alloca [2 x i32]
  %arr = alloca [2 x i32]
  %a0 = bitcast %arr to i32*
  store i32 1, %a0
  %a1 = gep i32, %a0, 1
  store i32 2, %a1
  %s = bitcast %arr to {i32, i32, i32, i32}*
  %v = call @get(%s)
  intrinsic print(%v)
  ret 0
}
)";
    };
    SUBCASE("field a recovers with value 1") {
        RunResult rr = run_text(program(0), true);
        CHECK(rr.exit_code == 0);
        CHECK(rr.output == "1\n");
        CHECK(rr.counters.recoveries == 1);
    }
    SUBCASE("field b recovers with value 2") {
        RunResult rr = run_text(program(1), true);
        CHECK(rr.exit_code == 0);
        CHECK(rr.output == "2\n");
        CHECK(rr.counters.recoveries == 1);
    }
    SUBCASE("field c aborts") {
        RunResult rr = run_text(program(2), true);
        REQUIRE(rr.violation.has_value());
        CHECK(rr.violation->kind == ViolationKind::OobRead);
    }
    SUBCASE("field d aborts") {
        RunResult rr = run_text(program(3), true);
        REQUIRE(rr.violation.has_value());
        CHECK(rr.violation->kind == ViolationKind::OobRead);
    }
    SUBCASE("plain runs read stale neighbours without noticing") {
        RunResult rr = run_text(program(3), false);
        CHECK(rr.exit_code == 0);
    }
}

TEST_CASE("refactored narrow-typed argument needs no recovery") {
    const char* text = R"(
func @get(%a: i32*) -> i32 {
entry:
  %s = bitcast %a to {i32, i32, i32, i32}*
  %fp = gep i32, %s, 1
  %v = load i32, %fp
  ret %v
}

func @main() -> i64 {
entry:
  %arr = alloca [2 x i32]
  %a0 = bitcast %arr to i32*
  store i32 1, %a0
  %a1 = gep i32, %a0, 1
  store i32 2, %a1
  %v = call @get(%a0)
  intrinsic print(%v)
  ret 0
}
)";
    RunResult rr = run_text(text, true);
    CHECK(rr.exit_code == 0);
    CHECK(rr.output == "2\n");
    CHECK(rr.counters.recoveries == 0);
    CHECK(rr.counters.bounds_checks >= 1);
}

TEST_CASE("use after free faults as unmapped") {
    const char* text = R"(
func @main() -> i64 {
entry:
  %raw = intrinsic malloc(64) : i8*
  %p = bitcast %raw to i64*
  store i64 5, %p
  intrinsic free(%raw)
  %v = load i64, %p
  ret %v
}
)";
    RunResult rr = run_text(text, true);
    REQUIRE(rr.violation.has_value());
    CHECK(rr.violation->kind == ViolationKind::Unmapped);
    CHECK(rr.exit_code == 11);
}

TEST_CASE("double free is reported") {
    const char* text = R"(
func @main() -> i64 {
entry:
  %raw = intrinsic malloc(64) : i8*
  intrinsic free(%raw)
  intrinsic free(%raw)
  ret 0
}
)";
    RunResult rr = run_text(text, true);
    REQUIRE(rr.violation.has_value());
    CHECK(rr.violation->kind == ViolationKind::DoubleFree);
    CHECK(rr.exit_code == 15);
}

TEST_CASE("memcpy beyond the destination is an intrinsic violation") {
    const char* text = R"(
func @main() -> i64 {
entry:
  %a = intrinsic malloc(32) : i8*
  %b = intrinsic malloc(16) : i8*
  intrinsic memcpy(%b, %a, 24)
  ret 0
}
)";
    RunResult rr = run_text(text, true);
    REQUIRE(rr.violation.has_value());
    CHECK(rr.violation->kind == ViolationKind::IntrinsicOob);
    CHECK(rr.exit_code == 14);
}

TEST_CASE("strstr results carry an interior tag") {
    const char* text = R"(
global @hay : [16 x i8] = {104, 101, 108, 108, 111, 32, 110, 101, 101, 100, 108, 101, 0, 0, 0, 0}
global @pat : [7 x i8] = {110, 101, 101, 100, 108, 101, 0}

func @main() -> i64 {
entry:
  %h = bitcast @hay to i8*
  %n = bitcast @pat to i8*
  %r = intrinsic strstr(%h, %n) : i8*
  %isnull = pcmp eq i8* %r, null
  condbr %isnull, missing, found
found:
  %d = psub i8* %r, %h
  intrinsic print(%d)
  ret 0
missing:
  ret 1
}
)";
    RunResult rr = run_text(text, true);
    CHECK(rr.exit_code == 0);
    CHECK(rr.output == "6\n");  // "needle" starts at byte 6
    RunResult plain = run_text(text, false);
    CHECK(plain.output == rr.output);
}

TEST_CASE("qsort sorts through a guest comparator") {
    const char* text = R"(
func @cmp(%a: i8*, %b: i8*) -> i32 {
entry:
  %ap = bitcast %a to i64*
  %bp = bitcast %b to i64*
  %av = load i64, %ap
  %bv = load i64, %bp
  %lt = icmp slt i64 %av, %bv
  condbr %lt, less, rest
less:
  ret -1
rest:
  %eq = icmp eq i64 %av, %bv
  %r = select i32 %eq, 0, 1
  ret %r
}

func @main() -> i64 {
entry:
  %a = alloca [4 x i64]
  %p = bitcast %a to i64*
  store i64 42, %p
  %p1 = gep i64, %p, 1
  store i64 -3, %p1
  %p2 = gep i64, %p, 2
  store i64 17, %p2
  %p3 = gep i64, %p, 3
  store i64 5, %p3
  %p8 = bitcast %p to i8*
  intrinsic qsort(%p8, 4, 8, @cmp)
  %v0 = load i64, %p
  intrinsic print(%v0)
  %v1 = load i64, %p1
  intrinsic print(%v1)
  %v2 = load i64, %p2
  intrinsic print(%v2)
  %v3 = load i64, %p3
  intrinsic print(%v3)
  ret 0
}
)";
    RunResult plain = run_text(text, false);
    CHECK(plain.output == "-3\n5\n17\n42\n");
    RunResult rr = run_text(text, true);
    CHECK(rr.exit_code == 0);
    CHECK(rr.output == plain.output);
}

TEST_CASE("anonymous mappings are bounds-checked like other objects") {
    const char* text = R"(
func @main() -> i64 {
entry:
  %raw = intrinsic mmap_anon(4096) : i8*
  %p = bitcast %raw to i64*
  %last = gep i64, %p, 511
  store i64 9, %last
  %v = load i64, %last
  intrinsic print(%v)
  %past = gep i64, %p, 512
  store i64 1, %past
  ret 0
}
)";
    RunResult rr = run_text(text, true);
    CHECK(rr.output == "9\n");
    REQUIRE(rr.violation.has_value());
    CHECK(rr.violation->kind == ViolationKind::OobWrite);
}

TEST_CASE("large stack objects move to the heap and still check") {
    const char* text = R"(
func @main() -> i64 {
entry:
  %big = alloca [40000 x i8]
  %p = bitcast %big to i8*
  %q = gep i8, %p, 39999
  store i8 7, %q
  %v = load i8, %q
  intrinsic print(%v)
  %past = gep i8, %p, 40000
  store i8 1, %past
  ret 0
}
)";
    Module m = instrumented(text);
    // the alloca is gone from the checked IR
    bool has_alloca = false, has_malloc = false;
    for (const Instr& ins : m.functions[0].blocks[0].instrs) {
        if (ins.op == Opcode::Alloca) has_alloca = true;
        if (ins.op == Opcode::IntrinsicCall && ins.intrinsic == Intrinsic::Malloc)
            has_malloc = true;
    }
    CHECK_FALSE(has_alloca);
    CHECK(has_malloc);
    RunResult rr = Vm(m).run("main");
    CHECK(rr.output == "7\n");
    REQUIRE(rr.violation.has_value());
    CHECK(rr.violation->kind == ViolationKind::OobWrite);
    // the object lives in a segment slot: base is 8 past a 2^16 boundary
    CHECK(rr.violation->base % (uint64_t{1} << 16) == 8);
}

TEST_CASE("function addresses stored to memory are invalidated but callable") {
    const char* text = R"(
global @slot : (fn(i64) -> i64)* = @double_it

func @double_it(%x: i64) -> i64 {
entry:
  %r = add i64 %x, %x
  ret %r
}

func @main() -> i64 {
entry:
  %fp = load (fn(i64) -> i64)*, @slot
  %r = icall %fp(21)
  intrinsic print(%r)
  ret 0
}
)";
    RunResult rr = run_text(text, true);
    CHECK(rr.exit_code == 0);
    CHECK(rr.output == "42\n");
    RunResult plain = run_text(text, false);
    CHECK(plain.output == rr.output);
}

TEST_CASE("reading through an invalidated function pointer faults") {
    const char* text = R"(
global @slot : (fn(i64) -> i64)* = @double_it

func @double_it(%x: i64) -> i64 {
entry:
  %r = add i64 %x, %x
  ret %r
}

func @main() -> i64 {
entry:
  %fp = load (fn(i64) -> i64)*, @slot
  %bytes = bitcast %fp to i64*
  %v = load i64, %bytes
  ret %v
}
)";
    RunResult rr = run_text(text, true);
    REQUIRE(rr.violation.has_value());
    CHECK(rr.violation->kind == ViolationKind::Unmapped);
}

TEST_CASE("global interior-pointer initializers carry correct tags") {
    const char* text = R"(
global @g1 : [10 x i32] = {0, 10, 20, 30, 40, 50, 60, 70, 80, 90}
global @g2 : i32* = @g1 + 24

func @main() -> i64 {
entry:
  %p = load i32*, @g2
  %v = load i32, %p
  intrinsic print(%v)
  ret 0
}
)";
    RunResult rr = run_text(text, true);
    CHECK(rr.exit_code == 0);
    CHECK(rr.output == "60\n");
}

TEST_CASE("stored interior global pointer has offset bits set") {
    const char* text = R"(
global @g1 : [10 x i32]
global @g2 : i32* = @g1 + 24

func @main() -> i64 {
entry:
  ret 0
}
)";
    Module m = instrumented(text);
    Vm vm(m);
    vm.load();
    // globals go out in declaration order: find both bases by probing
    uint64_t g1 = 0, g2 = 0;
    for (uint64_t addr = kGlobalBase; addr < kGlobalBase + 0x200 && !g2; addr += 8) {
        uint64_t b = vm.allocator().get_base_allocator(addr);
        if (b && !g1) g1 = b;
        else if (b && b != g1) g2 = b;
    }
    REQUIRE(g1 != 0);
    REQUIRE(g2 != 0);
    uint64_t word = vm.memory().load(g2, 8);
    TaggedPtr t{word};
    CHECK(t.offset() == 24);
    CHECK_FALSE(t.invalid());
    CHECK(t.address() == g1 + 24);
}

TEST_CASE("recursion registers distinct frames") {
    const char* text = R"(
func @reader(%p: i64*) -> i64 {
entry:
  %v = load i64, %p
  ret %v
}

func @rec(%n: i64) -> i64 {
entry:
  %local = alloca i64
  store i64 %n, %local
  %z = icmp sgt i64 %n, 0
  condbr %z, deeper, leaf
deeper:
  %n1 = sub i64 %n, 1
  %sub = call @rec(%n1)
  %mine = call @reader(%local)
  %r = add i64 %sub, %mine
  ret %r
leaf:
  %lv = call @reader(%local)
  ret %lv
}

func @main() -> i64 {
entry:
  %r = call @rec(3)
  intrinsic print(%r)
  ret 0
}
)";
    RunResult plain = run_text(text, false);
    CHECK(plain.output == "6\n");
    RunResult rr = run_text(text, true);
    CHECK(rr.output == "6\n");
    CHECK(rr.exit_code == 0);
}

TEST_CASE("exit intrinsic overrides the return path") {
    const char* text = R"(
func @main() -> i64 {
entry:
  intrinsic print(123)
  intrinsic exit(7)
  ret 0
}
)";
    RunResult rr = run_text(text, false);
    CHECK(rr.exit_code == 7);
    CHECK(rr.output == "123\n");
}

TEST_CASE("step limit guards non-termination") {
    const char* text = R"(
func @main() -> i64 {
entry:
  br spin
spin:
  br spin
}
)";
    Module m = parse_ok(text);
    VmOptions opts;
    opts.step_limit = 1000;
    RunResult rr = Vm(m, opts).run("main");
    CHECK(rr.vm_error());
    CHECK(rr.exit_code == 2);
}

TEST_CASE("print of strings walks guest memory") {
    const char* text = R"(
global @msg : [6 x i8] = {104, 101, 108, 108, 111, 0}

func @main() -> i64 {
entry:
  %p = bitcast @msg to i8*
  intrinsic print(%p)
  ret 0
}
)";
    RunResult rr = run_text(text, true);
    CHECK(rr.output == "hello\n");
}

TEST_CASE("entry arguments flow into guest main") {
    const char* text = R"(
func @main(%a: i64, %b: i64) -> i64 {
entry:
  %s = add i64 %a, %b
  intrinsic print(%s)
  ret 0
}
)";
    Module m = parse_ok(text);
    RunResult rr = Vm(m).run("main", {30, 12});
    CHECK(rr.output == "42\n");
}

TEST_CASE("recovery soundness over randomized narrow-object casts") {
    // an N-int array viewed as an M-int record, reading field k: accesses
    // inside the real object always complete with the right value, and
    // accesses beyond it always abort
    std::mt19937_64 rng(77);
    for (int t = 0; t < 150; t++) {
        int n = 1 + static_cast<int>(rng() % 6);
        int m = 1 + static_cast<int>(rng() % 6);
        int k = static_cast<int>(rng() % m);
        std::string record = "{";
        for (int i = 0; i < m; i++) record += (i ? ", i32" : "i32");
        record += "}";
        std::ostringstream os;
        os << "func @get(%s: " << record << "*) -> i32 {\n"
           << "entry:\n"
           << "  %fp = gep i32, %s, " << k << "\n"
           << "  %v = load i32, %fp\n"
           << "  ret %v\n"
           << "}\n\n"
           << "func @main() -> i64 {\n"
           << "entry:\n"
           << "  %pad = alloca [8 x i32]\n"
           << "  %arr = alloca [" << n << " x i32]\n"
           << "  %p = bitcast %arr to i32*\n";
        for (int i = 0; i < n; i++) {
            os << "  %s" << i << " = gep i32, %p, " << i << "\n"
               << "  store i32 " << (100 + i) << ", %s" << i << "\n";
        }
        os << "  %rec = bitcast %arr to " << record << "*\n"
           << "  %v = call @get(%rec)\n"
           << "  intrinsic print(%v)\n"
           << "  ret 0\n"
           << "}\n";
        RunResult rr = run_text(os.str(), true);
        bool invalidated = m > n;  // record larger than the real object
        bool in_bounds = k < n;
        INFO("n=" << n << " m=" << m << " k=" << k);
        if (in_bounds) {
            REQUIRE(rr.exit_code == 0);
            CHECK(rr.output == std::to_string(100 + k) + "\n");
            CHECK(rr.counters.recoveries == (invalidated ? 1u : 0u));
        } else {
            REQUIRE(rr.violation.has_value());
            CHECK(rr.violation->kind == ViolationKind::OobRead);
        }
    }
}

TEST_CASE("violation reports carry loc annotations") {
    const char* text = R"(
func @main() -> i64 {
entry:
  %a = alloca [4 x i64]
  %p = bitcast %a to i64*
  %q = gep i64, %p, 9
  store i64 1, %q ; !loc demo.c:42
  ret 0
}
)";
    RunResult rr = run_text(text, true);
    REQUIRE(rr.violation.has_value());
    CHECK(rr.violation->loc == "demo.c:42");
    CHECK(rr.violation->to_json().find("demo.c:42") != std::string::npos);
}

TEST_CASE("escaping a dangling pointer invalidates it") {
    // the fault-tolerant base finder returns null for the freed object, so
    // the stored pointer comes back unrecoverable
    const char* text = R"(
func @main() -> i64 {
entry:
  %slot = alloca i64*
  %raw = intrinsic malloc(32) : i8*
  %p = bitcast %raw to i64*
  %p2 = gep i64, %p, 2
  intrinsic free(%raw)
  store i64* %p2, %slot
  %back = load i64*, %slot
  %v = load i64, %back
  ret %v
}
)";
    RunResult rr = run_text(text, true);
    REQUIRE(rr.violation.has_value());
    CHECK(rr.violation->kind == ViolationKind::InvalidUnrecoverable);
    CHECK(rr.exit_code == 12);
}

TEST_CASE("indirect call arguments escape like direct ones") {
    const char* text = R"(
func @reader(%p: i64*) -> i64 {
entry:
  %v = load i64, %p
  ret %v
}

func @main() -> i64 {
entry:
  %arr = alloca [4 x i64]
  %p = bitcast %arr to i64*
  %p2 = gep i64, %p, 2
  store i64 99, %p2
  %r = icall @reader(%p2)
  intrinsic print(%r)
  ret 0
}
)";
    // the callee loads through its parameter's tag, so the icall argument
    // must have been re-tagged at the call
    RunResult rr = run_text(text, true);
    CHECK(rr.exit_code == 0);
    CHECK(rr.output == "99\n");
}

TEST_CASE("memmove handles overlap and checks ranges") {
    const char* text = R"(
func @main() -> i64 {
entry:
  %raw = intrinsic malloc(64) : i8*
  %p = bitcast %raw to i64*
  store i64 1, %p
  %p1 = gep i64, %p, 1
  store i64 2, %p1
  %p2 = gep i64, %p, 2
  store i64 3, %p2
  %dst = bitcast %p1 to i8*
  intrinsic memmove(%dst, %raw, 16)
  %v1 = load i64, %p1
  intrinsic print(%v1)
  %v2 = load i64, %p2
  intrinsic print(%v2)
  intrinsic memmove(%dst, %raw, 64)
  ret 0
}
)";
    RunResult rr = run_text(text, true);
    CHECK(rr.output == "1\n2\n");
    REQUIRE(rr.violation.has_value());
    CHECK(rr.violation->kind == ViolationKind::IntrinsicOob);
}

TEST_CASE("strcpy into a short buffer is an intrinsic violation") {
    const char* text = R"(
global @msg : [12 x i8] = {104, 101, 108, 108, 111, 32, 119, 111, 114, 108, 100, 0}

func @main() -> i64 {
entry:
  %short = intrinsic malloc(4) : i8*
  %src = bitcast @msg to i8*
  intrinsic strcpy(%short, %src)
  ret 0
}
)";
    RunResult rr = run_text(text, true);
    REQUIRE(rr.violation.has_value());
    CHECK(rr.violation->kind == ViolationKind::IntrinsicOob);
}

TEST_CASE("an escaped one-past pointer supports in-bounds re-derivation") {
    // creating an out-of-bounds pointer is fine; only dereferencing it is
    // not. The tag still locates the base as long as the offset fits, so a
    // pointer derived back into bounds is usable.
    const char* text = R"(
func @main() -> i64 {
entry:
  %arr = alloca [4 x i64]
  %p = bitcast %arr to i64*
  %p3 = gep i64, %p, 3
  store i64 44, %p3
  %slot = alloca i64*
  %past = gep i64, %p, 4
  store i64* %past, %slot
  %back = load i64*, %slot
  %again = gep i64, %back, -1
  %v = load i64, %again
  intrinsic print(%v)
  ret 0
}
)";
    RunResult rr = run_text(text, true);
    CHECK(rr.exit_code == 0);
    CHECK(rr.output == "44\n");

    // dereferencing the one-past pointer itself still aborts
    const char* bad = R"(
func @main() -> i64 {
entry:
  %arr = alloca [4 x i64]
  %p = bitcast %arr to i64*
  %slot = alloca i64*
  %past = gep i64, %p, 4
  store i64* %past, %slot
  %back = load i64*, %slot
  %v = load i64, %back
  ret %v
}
)";
    RunResult rr2 = run_text(bad, true);
    REQUIRE(rr2.violation.has_value());
}

TEST_CASE("merges with a null arm keep working") {
    const char* text = R"(
func @main(%use: i64) -> i64 {
entry:
  %arr = alloca [4 x i64]
  %p = bitcast %arr to i64*
  store i64 5, %p
  %c = icmp eq i64 %use, 1
  %sel = select i64* %c, %p, null
  %isnull = pcmp eq i64* %sel, null
  condbr %isnull, empty, go
go:
  %v = load i64, %sel
  intrinsic print(%v)
  ret 0
empty:
  intrinsic print(-1)
  ret 0
}
)";
    RunResult take = run_text(text, true, {1});
    CHECK(take.output == "5\n");
    RunResult skip = run_text(text, true, {0});
    CHECK(skip.output == "-1\n");
}

TEST_CASE("narrow integer prints sign-extend by type") {
    const char* text = R"(
func @main() -> i64 {
entry:
  %a = sub i8 0, 5
  intrinsic print(%a)
  %b = sub i32 0, 70000
  intrinsic print(%b)
  %c = sub i16 0, 1
  intrinsic print(%c)
  ret 0
}
)";
    RunResult rr = run_text(text, false);
    CHECK(rr.output == "-5\n-70000\n-1\n");
}
