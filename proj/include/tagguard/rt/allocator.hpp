#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <unordered_map>
#include <vector>

#include "tagguard/rt/layout.hpp"
#include "tagguard/rt/memory.hpp"
#include "tagguard/rt/tag.hpp"

namespace tagguard::rt {

enum class AllocKind : uint8_t { SmallHeap, SegmentSlot, Stack, Global, AnonMap };

struct AllocationRecord {
    uint64_t base = 0;  // first user byte; header word sits at base-8
    uint64_t size = 0;
    AllocKind kind = AllocKind::SmallHeap;
    bool live = false;
};

enum class FreeResult : uint8_t { Ok, DoubleFree, NotABase };

struct AllocatorStats {
    uint64_t live_bytes = 0;
    uint64_t segments_opened = 0;
    uint64_t slots_used = 0;
    uint64_t global_cache_hits = 0;
    uint64_t lookups = 0;
};

// Simulated-space memory manager. Small objects come from a bump heap with
// an ordered extent map; objects of at least kMaxOffset bytes come from
// size-aligned segments subdivided into 2^k-byte slots so an interior
// address recovers its slot base by masking. Stack objects and globals are
// registered so get_base_allocator can resolve interior addresses for them
// as well.
class SimAllocator {
public:
    SimAllocator(SimMemory& mem, uint64_t segment_size = kDefaultSegmentSize);

    // Returns the object base (tag zero) or 0 when out of simulated memory.
    uint64_t alloc(uint64_t size);
    FreeResult dealloc(uint64_t addr);

    uint64_t map_anonymous(uint64_t size);

    // Interior-address resolution across all live object kinds; 0 on miss.
    uint64_t get_base_allocator(uint64_t addr);

    // Stack objects participate only while registered.
    void register_stack_object(uint64_t base, uint64_t size);
    bool deregister_stack_object(uint64_t base);

    // Globals: placed once at load; the table is then sorted for lookup.
    uint64_t place_global(uint64_t size);
    void finalize_globals();
    bool is_global_range(uint64_t addr) const {
        return addr >= kGlobalBase && addr < kGlobalEnd;
    }

    // Stack frames are carved downward from kStackTop by the VM; the
    // allocator only writes the object header and tracks extents.
    uint64_t segment_size() const { return segment_size_; }
    const AllocatorStats& stats() const { return stats_; }

private:
    struct Segment {
        uint64_t start = 0;
        uint32_t k = 0;
        uint64_t slots = 0;
        uint64_t live_slots = 0;
    };

    uint64_t alloc_small(uint64_t size);
    uint64_t alloc_slot(uint64_t size);
    Segment* open_segment(uint32_t k);
    uint64_t segment_of(uint64_t addr) const {
        return addr & ~(segment_size_ - 1);
    }
    bool bitmap_get(const Segment& s, uint64_t slot) const;
    void bitmap_set(Segment& s, uint64_t slot, bool v);

    SimMemory& mem_;
    uint64_t segment_size_;
    uint64_t heap_cursor_ = kHeapBase;
    uint64_t mmap_cursor_ = kMmapBase;
    uint64_t seg_cursor_ = kSegmentBase;
    uint64_t global_cursor_ = kGlobalBase;

    std::map<uint64_t, AllocationRecord> heap_extents_;   // small heap + anon maps
    std::map<uint64_t, AllocationRecord> slot_records_;   // segment slots by base
    std::map<uint64_t, AllocationRecord> stack_registry_;
    std::vector<std::pair<uint64_t, uint64_t>> global_table_;  // (base, size) sorted
    bool globals_sorted_ = false;
    std::unordered_map<uint64_t, Segment> segments_;           // by start address
    std::unordered_map<uint32_t, uint64_t> open_segment_for_k_;

    struct CacheEntry {
        uint64_t base = 0, size = 0;
    };
    std::array<CacheEntry, 8> global_cache_{};
    size_t cache_next_ = 0;

    AllocatorStats stats_;
};

}  // namespace tagguard::rt
