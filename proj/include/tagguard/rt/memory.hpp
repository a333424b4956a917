#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <unordered_map>

namespace tagguard::rt {

inline constexpr uint64_t kPageSize = 4096;

// Sparse 48-bit byte-addressable space. Mapped-ness is tracked as merged
// byte intervals so huge reservations cost nothing; page bodies materialize
// only on first write, and mapped-but-untouched bytes read as zero.
class SimMemory {
public:
    bool is_mapped(uint64_t addr, uint64_t len) const;
    void map_range(uint64_t addr, uint64_t len, bool zero = true);
    void unmap_range(uint64_t addr, uint64_t len);

    // Unchecked raw accessors; callers must have verified mapping.
    uint64_t load(uint64_t addr, uint32_t width) const;
    void store(uint64_t addr, uint32_t width, uint64_t value);

    // Checked accessors: false when any touched byte is unmapped.
    bool try_load(uint64_t addr, uint32_t width, uint64_t& out) const;
    bool try_store(uint64_t addr, uint32_t width, uint64_t value);

    void copy(uint64_t dst, uint64_t src, uint64_t len);

private:
    using Page = std::array<uint8_t, kPageSize>;
    void drop_pages(uint64_t addr, uint64_t len);

    std::map<uint64_t, uint64_t> intervals_;  // start -> end, disjoint, merged
    std::unordered_map<uint64_t, std::unique_ptr<Page>> pages_;
};

}  // namespace tagguard::rt
