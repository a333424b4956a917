#include <doctest.h>

#include "tagguard/mir/parser.hpp"
#include "tagguard/mir/printer.hpp"
#include "tagguard/rt/vm.hpp"
#include "tagguard/xform/instrument.hpp"

using namespace tagguard;
using namespace tagguard::mir;
using namespace tagguard::rt;
using namespace tagguard::xform;

namespace {

Module parse_ok(const std::string& text) {
    ParseResult pr = parse_module(text);
    if (!pr.ok()) FAIL("parse failed: " << format_diags(pr.diags));
    return std::move(*pr.module);
}

// the guarded fill loop: for (i = 0; i < j; i++) arr[i+k] = m;
// array of 100 elements, k and j as guest arguments
const char* kGuardedLoop = R"(
func @main(%k: i64, %j: i64) -> i64 {
entry:
  %arr = alloca [100 x i64]
  %p = bitcast %arr to i64*
  %g = icmp sgt i64 %j, 0
  condbr %g, pre, done
pre:
  br loop
loop:
  %i = phi i64 [0, pre], [%inext, loop]
  %idx = add i64 %i, %k
  %slot = gep i64, %p, %idx
  store i64 7, %slot
  %inext = add i64 %i, 1
  %c = icmp slt i64 %inext, %j
  condbr %c, loop, done
done:
  ret 0
}
)";

struct Outcome {
    int exit_code;
    uint64_t checks;
    bool aborted;
};

Outcome run_with(const std::string& text, bool hoist, int64_t k, int64_t j) {
    Module m = parse_ok(text);
    InstrumentOptions opts;
    opts.loop_opt = hoist;
    InstrumentResult res = instrument_module(m, opts);
    REQUIRE(res.ok());
    RunResult rr = Vm(m).run("main", {k, j});
    return {rr.exit_code, rr.counters.bounds_checks, rr.violation.has_value()};
}

}  // namespace

TEST_CASE("the guarded loop check moves to the preheader") {
    Module m = parse_ok(kGuardedLoop);
    InstrumentResult res = instrument_module(m, {});
    REQUIRE(res.ok());
    CHECK(res.stats.checks_hoisted == 1);
    std::string text = print_module(m);
    CHECK(text.find("hoist_guard") != std::string::npos);
}

TEST_CASE("dynamic check counts: one hoisted vs one per iteration") {
    Outcome hoisted = run_with(kGuardedLoop, true, 0, 50);
    Outcome per_iter = run_with(kGuardedLoop, false, 0, 50);
    CHECK_FALSE(hoisted.aborted);
    CHECK_FALSE(per_iter.aborted);
    CHECK(hoisted.checks == 1);
    CHECK(per_iter.checks == 50);
}

TEST_CASE("hoisted and unhoisted agree on the abort outcome") {
    // in range
    CHECK(run_with(kGuardedLoop, true, 10, 90).aborted ==
          run_with(kGuardedLoop, false, 10, 90).aborted);
    // walks off the end
    CHECK(run_with(kGuardedLoop, true, 10, 91).aborted);
    CHECK(run_with(kGuardedLoop, false, 10, 91).aborted);
    // starts below the base
    CHECK(run_with(kGuardedLoop, true, -1, 5).aborted);
    CHECK(run_with(kGuardedLoop, false, -1, 5).aborted);
    // empty range never enters the loop
    CHECK_FALSE(run_with(kGuardedLoop, true, 5, 0).aborted);
    CHECK_FALSE(run_with(kGuardedLoop, false, 5, 0).aborted);
}

TEST_CASE("the overflow guard fires on a wrapped range") {
    // j = 2^61 makes j*8 wrap to zero: bounds pass vacuously, guard aborts
    Outcome o = run_with(kGuardedLoop, true, 0, int64_t{1} << 61);
    CHECK(o.aborted);
    CHECK(o.exit_code == 13);
}

TEST_CASE("a second exit disqualifies the loop") {
    const char* text = R"(
func @main(%j: i64) -> i64 {
entry:
  %arr = alloca [100 x i64]
  %p = bitcast %arr to i64*
  %g = icmp sgt i64 %j, 0
  condbr %g, pre, done
pre:
  br loop
loop:
  %i = phi i64 [0, pre], [%inext, body2]
  %slot = gep i64, %p, %i
  store i64 7, %slot
  %brk = icmp eq i64 %i, 40
  condbr %brk, done, body2
body2:
  %inext = add i64 %i, 1
  %c = icmp slt i64 %inext, %j
  condbr %c, loop, done
done:
  ret 0
}
)";
    Module m = parse_ok(text);
    InstrumentResult res = instrument_module(m, {});
    REQUIRE(res.ok());
    CHECK(res.stats.checks_hoisted == 0);
}

TEST_CASE("an unknown step disqualifies the loop") {
    const char* text = R"(
func @main(%j: i64, %n: i64) -> i64 {
entry:
  %arr = alloca [100 x i64]
  %p = bitcast %arr to i64*
  %g = icmp sgt i64 %j, 0
  condbr %g, pre, done
pre:
  br loop
loop:
  %i = phi i64 [0, pre], [%inext, loop]
  %slot = gep i64, %p, %i
  store i64 7, %slot
  %inext = add i64 %i, %n
  %c = icmp slt i64 %inext, %j
  condbr %c, loop, done
done:
  ret 0
}
)";
    Module m = parse_ok(text);
    InstrumentResult res = instrument_module(m, {});
    REQUIRE(res.ok());
    CHECK(res.stats.checks_hoisted == 0);
}

TEST_CASE("a missing guard disqualifies the loop") {
    const char* text = R"(
func @main(%j: i64) -> i64 {
entry:
  %arr = alloca [100 x i64]
  %p = bitcast %arr to i64*
  br pre
pre:
  br loop
loop:
  %i = phi i64 [0, pre], [%inext, loop]
  %slot = gep i64, %p, %i
  store i64 7, %slot
  %inext = add i64 %i, 1
  %c = icmp slt i64 %inext, %j
  condbr %c, loop, done
done:
  ret 0
}
)";
    Module m = parse_ok(text);
    InstrumentResult res = instrument_module(m, {});
    REQUIRE(res.ok());
    CHECK(res.stats.checks_hoisted == 0);
}

TEST_CASE("negative-step loops hoist only behind the flag") {
    const char* text = R"(
func @main(%j: i64) -> i64 {
entry:
  %arr = alloca [100 x i64]
  %p = bitcast %arr to i64*
  %g = icmp sgt i64 %j, 0
  condbr %g, pre, done
pre:
  br loop
loop:
  %i = phi i64 [%j, pre], [%inext, loop]
  %slot = gep i64, %p, %i
  store i64 7, %slot
  %inext = add i64 %i, -1
  %c = icmp sgt i64 %inext, 0
  condbr %c, loop, done
done:
  ret 0
}
)";
    SUBCASE("off by default") {
        Module m = parse_ok(text);
        InstrumentResult res = instrument_module(m, {});
        REQUIRE(res.ok());
        CHECK(res.stats.checks_hoisted == 0);
    }
    SUBCASE("enabled: hoists and keeps the verdict") {
        Module m = parse_ok(text);
        InstrumentOptions opts;
        opts.hoist_negative_step = true;
        InstrumentResult res = instrument_module(m, opts);
        REQUIRE(res.ok());
        CHECK(res.stats.checks_hoisted == 1);
        RunResult ok = Vm(m).run("main", {99});
        CHECK(ok.exit_code == 0);
        CHECK(ok.counters.bounds_checks == 1);

        Module m2 = parse_ok(text);
        REQUIRE(instrument_module(m2, opts).ok());
        RunResult bad = Vm(m2).run("main", {100});  // arr[100] is out
        CHECK(bad.exit_code == 10);

        // unhoisted agreement
        Module m3 = parse_ok(text);
        InstrumentOptions off;
        off.loop_opt = false;
        REQUIRE(instrument_module(m3, off).ok());
        CHECK(Vm(m3).run("main", {99}).exit_code == 0);
        Module m4 = parse_ok(text);
        REQUIRE(instrument_module(m4, off).ok());
        CHECK(Vm(m4).run("main", {100}).exit_code == 10);
    }
}

TEST_CASE("conditional access inside the body is not hoisted") {
    const char* text = R"(
func @main(%j: i64) -> i64 {
entry:
  %arr = alloca [100 x i64]
  %p = bitcast %arr to i64*
  %g = icmp sgt i64 %j, 0
  condbr %g, pre, done
pre:
  br loop
loop:
  %i = phi i64 [0, pre], [%inext, latch]
  %odd = and i64 %i, 1
  %touch = icmp eq i64 %odd, 0
  condbr %touch, write, latch
write:
  %slot = gep i64, %p, %i
  store i64 7, %slot
  br latch
latch:
  %inext = add i64 %i, 1
  %c = icmp slt i64 %inext, %j
  condbr %c, loop, done
done:
  ret 0
}
)";
    Module m = parse_ok(text);
    InstrumentResult res = instrument_module(m, {});
    REQUIRE(res.ok());
    CHECK(res.stats.checks_hoisted == 0);
}
