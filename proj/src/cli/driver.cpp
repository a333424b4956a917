#include "tagguard/cli/driver.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "tagguard/mir/parser.hpp"
#include "tagguard/mir/printer.hpp"
#include "tagguard/rt/vm.hpp"
#include "tagguard/xform/instrument.hpp"

namespace tagguard::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonFlags {
    xform::InstrumentOptions inst;
    rt::VmOptions vm;
    std::string out_path;
    std::string stats_path;
    bool dump_checked = false;
    bool unchecked = false;
    bool show_stats = false;
    std::vector<int64_t> guest_args;
    std::string entry = "main";
    std::vector<std::string> positional;
};

std::optional<std::string> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

bool parse_flags(const std::vector<std::string>& args, size_t from, CommonFlags& fl,
                 std::ostream& err) {
    for (size_t i = from; i < args.size(); i++) {
        const std::string& a = args[i];
        auto value_of = [&](const std::string& prefix) -> std::optional<std::string> {
            if (a.rfind(prefix, 0) == 0) return a.substr(prefix.size());
            return std::nullopt;
        };
        if (a == "--no-size-invariant") fl.inst.size_invariant = false;
        else if (a == "--no-loop-opt") fl.inst.loop_opt = false;
        else if (a == "--hoist-negative-step") fl.inst.hoist_negative_step = true;
        else if (a == "--dump-static-bases") fl.inst.dump_static_bases = true;
        else if (a == "--dump-checked-ir") fl.dump_checked = true;
        else if (a == "--unchecked") fl.unchecked = true;
        else if (a == "--stats") fl.show_stats = true;
        else if (a == "--trace") fl.vm.trace = true;
        else if (auto v = value_of("--dump-stats=")) fl.stats_path = *v;
        else if (auto v = value_of("--segment-size=")) {
            uint64_t s = std::stoull(*v, nullptr, 0);
            if (s < (uint64_t{1} << 17) || (s & (s - 1)) != 0) {
                err << "tagguard: --segment-size must be a power of two >= 131072\n";
                return false;
            }
            fl.vm.segment_size = s;
        } else if (auto v = value_of("--step-limit=")) {
            fl.vm.step_limit = std::stoull(*v, nullptr, 0);
        } else if (auto v = value_of("--entry=")) {
            fl.entry = *v;
        } else if (auto v = value_of("--guest-arg=")) {
            fl.guest_args.push_back(std::stoll(*v, nullptr, 0));
        } else if (a == "-o") {
            if (i + 1 >= args.size()) {
                err << "tagguard: -o needs a path\n";
                return false;
            }
            fl.out_path = args[++i];
        } else if (!a.empty() && a[0] == '-') {
            err << "tagguard: unknown flag " << a << "\n";
            return false;
        } else {
            fl.positional.push_back(a);
        }
    }
    return true;
}

std::optional<mir::Module> load_module(const std::string& path, std::ostream& err) {
    auto text = read_file(path);
    if (!text) {
        err << "tagguard: cannot read " << path << "\n";
        return std::nullopt;
    }
    mir::ParseResult pr = mir::parse_module(*text);
    if (!pr.ok()) {
        err << path << ": " << format_diags(pr.diags);
        return std::nullopt;
    }
    return std::move(pr.module);
}

json counters_json(const rt::RunResult& rr) {
    json j;
    j["steps"] = rr.counters.steps;
    j["bounds_checks"] = rr.counters.bounds_checks;
    j["tag_updates"] = rr.counters.tag_updates;
    j["recoveries"] = rr.counters.recoveries;
    j["allocator_lookups"] = rr.counters.allocator_lookups;
    j["allocator"] = {{"live_bytes", rr.alloc_stats.live_bytes},
                      {"segments_opened", rr.alloc_stats.segments_opened},
                      {"slots_used", rr.alloc_stats.slots_used},
                      {"global_cache_hits", rr.alloc_stats.global_cache_hits}};
    return j;
}

void report_violation(const rt::ViolationReport& v, std::ostream& err) {
    err << v.to_json() << "\n";
    err << "tagguard: " << v.human() << "\n";
}

int cmd_instrument(const CommonFlags& fl, std::ostream& out, std::ostream& err) {
    if (fl.positional.size() != 1) {
        err << "usage: tagguard instrument <input.mir> [-o out.mir] [flags]\n";
        return 1;
    }
    auto mod = load_module(fl.positional[0], err);
    if (!mod) return 1;
    xform::InstrumentResult res = xform::instrument_module(*mod, fl.inst);
    if (!res.ok()) {
        err << format_diags(res.diags);
        return 1;
    }
    if (fl.inst.dump_static_bases) out << res.static_base_dump;
    std::string text = mir::print_module(*mod);
    if (!fl.out_path.empty()) {
        std::ofstream o(fl.out_path, std::ios::binary);
        if (!o) {
            err << "tagguard: cannot write " << fl.out_path << "\n";
            return 1;
        }
        o << text;
    } else if (fl.dump_checked) {
        out << text;
    } else {
        err << "tagguard: instrument needs -o or --dump-checked-ir\n";
        return 1;
    }
    if (!fl.stats_path.empty()) {
        std::ofstream s(fl.stats_path, std::ios::binary);
        s << res.stats.to_json() << "\n";
    }
    return 0;
}

int cmd_run(const CommonFlags& fl, std::ostream& out, std::ostream& err) {
    if (fl.positional.size() != 1) {
        err << "usage: tagguard run <checked.mir> [--unchecked] [flags]\n";
        return 1;
    }
    auto mod = load_module(fl.positional[0], err);
    if (!mod) return 1;
    if (!fl.unchecked && !mod->checked) {
        err << "tagguard: input is not checked IR (use --unchecked to interpret "
               "plain IR)\n";
        return 1;
    }
    rt::VmOptions vo = fl.vm;
    if (vo.trace) vo.trace_stream = &err;
    rt::Vm vm(*mod, vo);
    rt::RunResult rr = vm.run(fl.entry, fl.guest_args);
    out << rr.output;
    if (rr.violation) report_violation(*rr.violation, err);
    if (rr.vm_error()) err << "tagguard: vm error: " << rr.error << "\n";
    if (fl.show_stats) err << counters_json(rr).dump() << "\n";
    return rr.exit_code;
}

struct DiffOutcome {
    int code = 0;
    std::string verdict;
};

// Data-flow scan: a program whose printed integers derive from raw pointer
// bits is tag-sensitive and cannot be compared across modes.
bool prints_pointer_bits(const mir::Module& m) {
    for (const mir::Function& f : m.functions) {
        std::vector<bool> tainted(f.values.size(), false);
        bool changed = true;
        while (changed) {
            changed = false;
            for (const mir::Block& b : f.blocks) {
                for (const mir::Instr& ins : b.instrs) {
                    if (!ins.has_result() || tainted[ins.result]) continue;
                    bool t = false;
                    if (ins.op == mir::Opcode::PtrToInt) t = true;
                    if (ins.op == mir::Opcode::BinOp || ins.op == mir::Opcode::Phi ||
                        ins.op == mir::Opcode::Select || ins.op == mir::Opcode::ICmp) {
                        for (const mir::Operand& o : ins.args)
                            if (o.is_value() && tainted[o.value]) t = true;
                    }
                    if (t) {
                        tainted[ins.result] = true;
                        changed = true;
                    }
                }
            }
        }
        for (const mir::Block& b : f.blocks) {
            for (const mir::Instr& ins : b.instrs) {
                if (ins.op == mir::Opcode::IntrinsicCall &&
                    ins.intrinsic == mir::Intrinsic::Print) {
                    const mir::Operand& o = ins.args[0];
                    if (o.is_value() && tainted[o.value]) return true;
                }
            }
        }
    }
    return false;
}

int cmd_diff(const CommonFlags& fl, std::ostream& out, std::ostream& err) {
    if (fl.positional.size() != 1) {
        err << "usage: tagguard diff <input.mir> [flags]\n";
        return 1;
    }
    auto mod = load_module(fl.positional[0], err);
    if (!mod) return 1;
    if (mod->checked) {
        err << "tagguard: diff expects plain (uninstrumented) IR\n";
        return 1;
    }
    if (prints_pointer_bits(*mod)) {
        out << "tag-sensitive, excluded\n";
        return 3;
    }
    rt::Vm plain_vm(*mod, fl.vm);
    rt::RunResult plain = plain_vm.run(fl.entry, fl.guest_args);

    // a fresh copy to instrument; modules are move-only, so reparse
    mir::ParseResult reparsed = mir::parse_module(mir::print_module(*mod));
    if (!reparsed.ok()) {
        err << "tagguard: internal reparse failure\n" << format_diags(reparsed.diags);
        return 1;
    }
    mir::Module checked = std::move(*reparsed.module);
    xform::InstrumentResult ir = xform::instrument_module(checked, fl.inst);
    if (!ir.ok()) {
        err << format_diags(ir.diags);
        return 1;
    }
    rt::Vm checked_vm(checked, fl.vm);
    rt::RunResult inst = checked_vm.run(fl.entry, fl.guest_args);

    if (plain.exit_code == inst.exit_code && plain.output == inst.output) {
        out << "equal\n";
        return 0;
    }
    out << "differs\n";
    if (plain.exit_code != inst.exit_code) {
        err << "exit codes: plain=" << plain.exit_code
            << " checked=" << inst.exit_code << "\n";
    }
    if (plain.output != inst.output) {
        // first differing line
        std::istringstream a(plain.output), b(inst.output);
        std::string la, lb;
        int line = 1;
        while (true) {
            bool ga = static_cast<bool>(std::getline(a, la));
            bool gb = static_cast<bool>(std::getline(b, lb));
            if (!ga && !gb) break;
            if (la != lb || ga != gb) {
                err << "output line " << line << ": plain=\"" << (ga ? la : "<eof>")
                    << "\" checked=\"" << (gb ? lb : "<eof>") << "\"\n";
                break;
            }
            line++;
        }
    }
    if (inst.violation) report_violation(*inst.violation, err);
    return 4;
}

int cmd_corpus(const CommonFlags& fl, std::ostream& out, std::ostream& err) {
    if (fl.positional.size() != 1) {
        err << "usage: tagguard corpus <dir>\n";
        return 1;
    }
    fs::path dir(fl.positional[0]);
    if (!fs::is_directory(dir)) {
        err << "tagguard: not a directory: " << dir.string() << "\n";
        return 1;
    }
    std::vector<fs::path> manifests;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.path().extension() == ".json") manifests.push_back(e.path());
    }
    std::sort(manifests.begin(), manifests.end());
    size_t passed = 0, failed = 0;
    for (const fs::path& mp : manifests) {
        auto text = read_file(mp.string());
        std::string name = mp.stem().string();
        auto fail = [&](const std::string& why) {
            failed++;
            out << "FAIL " << name << ": " << why << "\n";
        };
        if (!text) {
            fail("unreadable manifest");
            continue;
        }
        json j;
        try {
            j = json::parse(*text);
        } catch (const std::exception& e) {
            fail(std::string("manifest parse error: ") + e.what());
            continue;
        }
        try {
            std::string mir_file = j.at("mir").get<std::string>();
            CommonFlags cf;
            cf.vm = fl.vm;
            if (j.contains("flags")) {
                std::vector<std::string> raw{j["flags"].begin(), j["flags"].end()};
                if (!parse_flags(raw, 0, cf, err)) {
                    fail("bad flags");
                    continue;
                }
            }
            if (j.contains("guest_args")) {
                for (const auto& a : j["guest_args"]) {
                    cf.guest_args.push_back(a.get<int64_t>());
                }
            }
            auto mod = load_module((dir / mir_file).string(), err);
            if (!mod) {
                fail("module does not parse");
                continue;
            }
            xform::InstrumentResult ires = xform::instrument_module(*mod, cf.inst);
            if (!ires.ok()) {
                fail("instrumentation failed");
                continue;
            }
            rt::Vm vm(*mod, cf.vm);
            rt::RunResult rr = vm.run(cf.entry, cf.guest_args);
            const json& expect = j.at("expect");
            std::string outcome = expect.at("outcome").get<std::string>();
            if (outcome == "ok") {
                int want_exit = expect.value("exit", 0);
                if (rr.violation) {
                    fail("unexpected violation: " + rr.violation->to_json());
                    continue;
                }
                if (rr.exit_code != want_exit) {
                    fail("exit " + std::to_string(rr.exit_code) + ", expected " +
                         std::to_string(want_exit));
                    continue;
                }
                if (expect.contains("stdout") &&
                    rr.output != expect["stdout"].get<std::string>()) {
                    fail("stdout mismatch");
                    continue;
                }
            } else if (outcome == "violation") {
                if (!rr.violation) {
                    fail("expected a violation, got exit " +
                         std::to_string(rr.exit_code));
                    continue;
                }
                std::string want_kind = expect.at("kind").get<std::string>();
                if (violation_kind_name(rr.violation->kind) != want_kind) {
                    fail(std::string("kind ") +
                         violation_kind_name(rr.violation->kind) + ", expected " +
                         want_kind);
                    continue;
                }
                if (expect.contains("function") &&
                    rr.violation->function != expect["function"].get<std::string>()) {
                    fail("violation in @" + rr.violation->function + ", expected @" +
                         expect["function"].get<std::string>());
                    continue;
                }
                if (expect.contains("block") &&
                    rr.violation->block != expect["block"].get<std::string>()) {
                    fail("violation in block " + rr.violation->block);
                    continue;
                }
            } else {
                fail("unknown expectation kind " + outcome);
                continue;
            }
            if (expect.contains("recoveries") &&
                rr.counters.recoveries != expect["recoveries"].get<uint64_t>()) {
                fail("recoveries=" + std::to_string(rr.counters.recoveries));
                continue;
            }
            passed++;
            out << "ok   " << name << "\n";
        } catch (const std::exception& e) {
            fail(std::string("manifest error: ") + e.what());
        }
    }
    out << passed << " passed, " << failed << " failed, "
        << (passed + failed) << " cases\n";
    return failed == 0 ? 0 : 5;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err) {
    if (args.empty()) {
        err << "usage: tagguard <instrument|run|diff|corpus> ...\n";
        return 1;
    }
    CommonFlags fl;
    if (!parse_flags(args, 1, fl, err)) return 1;
    const std::string& cmd = args[0];
    if (cmd == "instrument") return cmd_instrument(fl, out, err);
    if (cmd == "run") return cmd_run(fl, out, err);
    if (cmd == "diff") return cmd_diff(fl, out, err);
    if (cmd == "corpus") return cmd_corpus(fl, out, err);
    err << "tagguard: unknown command " << cmd << "\n";
    return 1;
}

}  // namespace tagguard::cli
