#pragma once

#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tagguard/mir/module.hpp"
#include "tagguard/rt/allocator.hpp"
#include "tagguard/rt/memory.hpp"
#include "tagguard/rt/tag.hpp"

namespace tagguard::rt {

enum class ViolationKind : uint8_t {
    OobRead,
    OobWrite,
    Unmapped,
    InvalidUnrecoverable,
    HoistGuard,
    DoubleFree,
    IntrinsicOob,
};

const char* violation_kind_name(ViolationKind k);
int violation_exit_code(ViolationKind k);

struct ViolationReport {
    ViolationKind kind = ViolationKind::OobRead;
    std::string function;
    std::string block;
    size_t instr = 0;
    uint64_t address = 0;
    uint64_t base = 0;
    uint64_t limit = 0;
    uint64_t width = 0;
    std::string detail;  // free-form, e.g. "double free"
    std::string loc;     // from a `!loc` annotation when present

    std::string to_json() const;
    std::string human() const;
};

struct VmCounters {
    uint64_t steps = 0;
    uint64_t bounds_checks = 0;
    uint64_t tag_updates = 0;
    uint64_t recoveries = 0;
    uint64_t allocator_lookups = 0;
};

struct VmOptions {
    uint64_t step_limit = 200'000'000;
    uint64_t segment_size = kDefaultSegmentSize;
    bool trace = false;
    std::ostream* trace_stream = nullptr;
};

struct RunResult {
    int exit_code = 0;
    std::optional<ViolationReport> violation;
    std::string error;  // host-level failure (step limit, bad entry, ...)
    VmCounters counters;
    AllocatorStats alloc_stats;
    std::string output;  // guest stdout
    bool vm_error() const { return !error.empty(); }
};

// Interpreter over the simulated address space. One instance runs one
// module; instances are independent.
class Vm {
public:
    Vm(const mir::Module& m, VmOptions opts = {});
    ~Vm();
    Vm(const Vm&) = delete;
    Vm& operator=(const Vm&) = delete;

    RunResult run(const std::string& entry, const std::vector<int64_t>& args = {});

    // Direct invocation for tests; the module must already be loaded (run()
    // or load() called once).
    void load();
    uint64_t call_function(size_t func_index, const std::vector<uint64_t>& args);

    // The runtime primitives, callable directly against this instance's
    // simulated space. runtime_get_base is the fault-tolerant flavour:
    // unreadable metadata yields 0 instead of an abort.
    uint64_t runtime_update_tag(uint64_t base, uint64_t ptr, uint64_t access_size,
                                uint64_t limit);
    uint64_t runtime_get_base(uint64_t tagged);

    SimMemory& memory();
    SimAllocator& allocator();
    VmCounters& counters();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace tagguard::rt
