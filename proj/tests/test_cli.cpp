#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "tagguard/cli/driver.hpp"
#include "tagguard/cli/gen.hpp"
#include "tagguard/mir/printer.hpp"
#include "tagguard/mir/validator.hpp"
#include "tagguard/rt/vm.hpp"
#include "tagguard/xform/instrument.hpp"

using namespace tagguard;
namespace fs = std::filesystem;

namespace {

struct CliRun {
    int code;
    std::string out, err;
};

CliRun run_tool(std::vector<std::string> args) {
    std::ostringstream out, err;
    int code = cli::run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

std::string corpus_dir() { return std::string(TG_SOURCE_DIR) + "/corpus"; }

fs::path temp_dir() {
    fs::path p = fs::temp_directory_path() / "tagguard_cli_test";
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("the shipped corpus passes end to end") {
    CliRun r = run_tool({"corpus", corpus_dir()});
    INFO(r.out);
    INFO(r.err);
    CHECK(r.code == 0);
    CHECK(r.out.find(" 0 failed") != std::string::npos);
}

TEST_CASE("corpus flags: a wrong expectation fails exactly one case") {
    fs::path dir = temp_dir() / "wrong";
    fs::create_directories(dir);
    fs::copy_file(corpus_dir() + "/running_example.mir", dir / "running_example.mir",
                  fs::copy_options::overwrite_existing);
    std::ofstream(dir / "good.json")
        << R"({"mir": "running_example.mir", "expect": {"outcome": "ok", "exit": 0}})";
    std::ofstream(dir / "bad.json")
        << R"({"mir": "running_example.mir", "expect": {"outcome": "violation", "kind": "oob-read"}})";
    CliRun r = run_tool({"corpus", dir.string()});
    CHECK(r.code == 5);
    CHECK(r.out.find("FAIL bad") != std::string::npos);
    CHECK(r.out.find("ok   good") != std::string::npos);
    CHECK(r.out.find("1 passed, 1 failed") != std::string::npos);
}

TEST_CASE("an empty corpus directory reports zero cases") {
    fs::path dir = temp_dir() / "empty";
    fs::create_directories(dir);
    CliRun r = run_tool({"corpus", dir.string()});
    CHECK(r.code == 0);
    CHECK(r.out.find("0 cases") != std::string::npos);
}

TEST_CASE("instrument writes checked IR and a stats file") {
    fs::path dir = temp_dir();
    fs::path out_mir = dir / "checked.mir";
    fs::path stats = dir / "stats.json";
    CliRun r = run_tool({"instrument", corpus_dir() + "/running_example.mir", "-o",
                    out_mir.string(), "--dump-stats=" + stats.string()});
    REQUIRE(r.code == 0);
    std::ifstream sf(stats);
    std::string stats_text((std::istreambuf_iterator<char>(sf)),
                           std::istreambuf_iterator<char>());
    // stable, versioned schema
    CHECK(stats_text ==
          "{\"version\":1,\"checks_inserted\":2,\"checks_elided\":6,"
          "\"checks_hoisted\":0,\"tag_updates_inserted\":3,"
          "\"tag_updates_exempted\":4,\"invalidates_inserted\":0}\n");

    CliRun run = run_tool({"run", out_mir.string()});
    CHECK(run.code == 0);
    CHECK(run.out == "20\n");
}

TEST_CASE("run refuses plain IR without --unchecked") {
    CliRun r = run_tool({"run", corpus_dir() + "/running_example.mir"});
    CHECK(r.code == 1);
    CliRun r2 = run_tool({"run", corpus_dir() + "/running_example.mir", "--unchecked"});
    CHECK(r2.code == 0);
    CHECK(r2.out == "20\n");
}

TEST_CASE("run reports violations as JSON lines on stderr") {
    fs::path out_mir = temp_dir() / "oob.mir";
    CliRun inst = run_tool({"instrument", corpus_dir() + "/stack_overflow.mir", "-o",
                       out_mir.string()});
    REQUIRE(inst.code == 0);
    CliRun r = run_tool({"run", out_mir.string()});
    CHECK(r.code == 10);
    CHECK(r.err.find("\"kind\":\"oob-write\"") != std::string::npos);
    CHECK(r.err.find("\"function\":\"main\"") != std::string::npos);
    // human and machine lines agree on the kind
    CHECK(r.err.find("oob-write in @main") != std::string::npos);
}

TEST_CASE("run --stats emits counters") {
    fs::path out_mir = temp_dir() / "counted.mir";
    REQUIRE(run_tool({"instrument", corpus_dir() + "/struct_cast_recovery.mir", "-o",
                 out_mir.string()})
                .code == 0);
    CliRun r = run_tool({"run", out_mir.string(), "--stats"});
    CHECK(r.code == 0);
    CHECK(r.err.find("\"recoveries\":1") != std::string::npos);
}

TEST_CASE("diff verdicts") {
    SUBCASE("safe programs compare equal") {
        CliRun r = run_tool({"diff", corpus_dir() + "/running_example.mir"});
        CHECK(r.code == 0);
        CHECK(r.out == "equal\n");
    }
    SUBCASE("comparison-heavy program compares equal") {
        CliRun r = run_tool({"diff", corpus_dir() + "/compare_subtract.mir"});
        CHECK(r.code == 0);
        CHECK(r.out == "equal\n");
    }
    SUBCASE("guest arguments thread through") {
        CliRun r = run_tool({"diff", corpus_dir() + "/select_merge.mir",
                        "--guest-arg=1"});
        CHECK(r.code == 0);
        CHECK(r.out == "equal\n");
    }
    SUBCASE("programs printing pointer bits are excluded, not failed") {
        fs::path p = temp_dir() / "tagsensitive.mir";
        std::ofstream(p) << R"(
func @main() -> i64 {
entry:
  %a = alloca [4 x i64]
  %p = bitcast %a to i64*
  %i = ptrtoint %p to i64
  intrinsic print(%i)
  ret 0
}
)";
        CliRun r = run_tool({"diff", p.string()});
        CHECK(r.code == 3);
        CHECK(r.out == "tag-sensitive, excluded\n");
    }
}

TEST_CASE("dump-static-bases prints one line per pointer value") {
    CliRun r = run_tool({"instrument", corpus_dir() + "/running_example.mir",
                    "--dump-checked-ir", "--dump-static-bases"});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("%a1 -> %arr (backtracked)") != std::string::npos);
    CHECK(r.out.find("; @bar") != std::string::npos);
}

TEST_CASE("segment size flag changes the allocator geometry") {
    fs::path out_mir = temp_dir() / "big.mir";
    REQUIRE(run_tool({"instrument", corpus_dir() + "/big_alloca.mir", "-o",
                 out_mir.string()})
                .code == 0);
    CliRun r = run_tool({"run", out_mir.string(), "--segment-size=0x2000000", "--stats"});
    CHECK(r.code == 0);
    CHECK(r.err.find("\"segments_opened\":1") != std::string::npos);
    CliRun bad = run_tool({"run", out_mir.string(), "--segment-size=12345"});
    CHECK(bad.code == 1);
}

TEST_CASE("generated programs stay differential-clean") {
    for (uint64_t seed = 1; seed <= 10; seed++) {
        mir::Module m = cli::generate_safe_program(seed);
        DiagList v = mir::validate_module(m);
        if (!v.empty()) FAIL("seed " << seed << ": " << format_diags(v));
        fs::path p = temp_dir() / ("gen" + std::to_string(seed) + ".mir");
        std::ofstream(p) << mir::print_module(m);
        CliRun r = run_tool({"diff", p.string()});
        INFO("seed " << seed << "\n" << r.err);
        CHECK(r.code == 0);
    }
}

TEST_CASE("instrumentation output is deterministic") {
    CliRun a = run_tool({"instrument", corpus_dir() + "/running_example.mir",
                         "--dump-checked-ir"});
    CliRun b = run_tool({"instrument", corpus_dir() + "/running_example.mir",
                         "--dump-checked-ir"});
    REQUIRE(a.code == 0);
    CHECK(a.out == b.out);
    CHECK(a.out.find("update_tag") != std::string::npos);
}

TEST_CASE("trace emits one line per executed instruction") {
    fs::path out_mir = temp_dir() / "traced.mir";
    REQUIRE(run_tool({"instrument", corpus_dir() + "/running_example.mir", "-o",
                      out_mir.string()})
                .code == 0);
    CliRun r = run_tool({"run", out_mir.string(), "--trace"});
    CHECK(r.code == 0);
    CHECK(r.err.find("@main entry:0") != std::string::npos);
    CHECK(r.err.find("@bar") != std::string::npos);
}

TEST_CASE("usage errors exit with code 1") {
    CHECK(run_tool({}).code == 1);
    CHECK(run_tool({"bogus"}).code == 1);
    CHECK(run_tool({"run", "/nonexistent.mir"}).code == 1);
    CHECK(run_tool({"instrument", corpus_dir() + "/running_example.mir"}).code == 1);
}

TEST_CASE("a custom entry point can be selected") {
    fs::path p = temp_dir() / "entry.mir";
    std::ofstream(p) << R"(
func @fortytwo() -> i64 {
entry:
  intrinsic print(42)
  ret 0
}

func @main() -> i64 {
entry:
  ret 1
}
)";
    CliRun r = run_tool({"run", p.string(), "--unchecked", "--entry=fortytwo"});
    CHECK(r.code == 0);
    CHECK(r.out == "42\n");
}
