#include "tagguard/rt/allocator.hpp"

#include <cassert>

namespace tagguard::rt {

namespace {

uint64_t align_up(uint64_t v, uint64_t a) { return (v + a - 1) / a * a; }

uint32_t slot_exponent(uint64_t size) {
    // smallest k with 2^k >= size + header
    uint64_t need = size + kHeaderSize;
    uint32_t k = 4;
    while ((uint64_t{1} << k) < need) k++;
    return k;
}

}  // namespace

SimAllocator::SimAllocator(SimMemory& mem, uint64_t segment_size)
    : mem_(mem), segment_size_(segment_size) {
    assert(segment_size >= (uint64_t{1} << 17) &&
           (segment_size & (segment_size - 1)) == 0);
}

uint64_t SimAllocator::alloc(uint64_t size) {
    if (size == 0) size = 1;
    uint64_t base =
        size >= kMaxOffset ? alloc_slot(size) : alloc_small(size);
    if (base) stats_.live_bytes += size;
    return base;
}

uint64_t SimAllocator::alloc_small(uint64_t size) {
    uint64_t base = align_up(heap_cursor_ + kHeaderSize, 16);
    if (base + size >= kHeapEnd) return 0;
    heap_cursor_ = base + size;
    mem_.map_range(base - kHeaderSize, size + kHeaderSize);
    mem_.store(base - kHeaderSize, 8, size);
    heap_extents_[base] = {base, size, AllocKind::SmallHeap, true};
    return base;
}

SimAllocator::Segment* SimAllocator::open_segment(uint32_t k) {
    auto it = open_segment_for_k_.find(k);
    if (it != open_segment_for_k_.end()) {
        Segment& s = segments_.at(it->second);
        if (s.live_slots + 1 < s.slots) return &s;  // slot 0 is metadata
    }
    uint64_t start = align_up(seg_cursor_, segment_size_);
    if (start + segment_size_ > kSegmentEnd) return nullptr;
    seg_cursor_ = start + segment_size_;
    Segment s;
    s.start = start;
    s.k = k;
    s.slots = segment_size_ >> k;
    assert(s.slots >= 2);
    // metadata in slot 0: slot_mask word then the occupancy bitmap
    uint64_t meta_size = align_up(8 + (s.slots + 7) / 8, kPageSize);
    assert(meta_size <= (uint64_t{1} << k));
    mem_.map_range(start, meta_size);
    mem_.store(start, 8, ~((uint64_t{1} << k) - 1));
    segments_[start] = s;
    open_segment_for_k_[k] = start;
    stats_.segments_opened++;
    return &segments_.at(start);
}

bool SimAllocator::bitmap_get(const Segment& s, uint64_t slot) const {
    uint64_t byte = mem_.load(s.start + 8 + slot / 8, 1);
    return (byte >> (slot % 8)) & 1;
}

void SimAllocator::bitmap_set(Segment& s, uint64_t slot, bool v) {
    uint64_t addr = s.start + 8 + slot / 8;
    uint64_t byte = mem_.load(addr, 1);
    if (v) byte |= uint64_t{1} << (slot % 8);
    else byte &= ~(uint64_t{1} << (slot % 8));
    mem_.store(addr, 1, byte);
}

uint64_t SimAllocator::alloc_slot(uint64_t size) {
    uint32_t k = slot_exponent(size);
    if ((uint64_t{1} << k) > segment_size_ / 2) return 0;  // object too large
    Segment* s = open_segment(k);
    if (!s) return 0;
    for (uint64_t slot = 1; slot < s->slots; slot++) {
        if (bitmap_get(*s, slot)) continue;
        bitmap_set(*s, slot, true);
        s->live_slots++;
        uint64_t slot_start = s->start + (slot << k);
        mem_.map_range(slot_start, align_up(kHeaderSize + size, kPageSize));
        mem_.store(slot_start, 8, size);
        uint64_t base = slot_start + kHeaderSize;
        slot_records_[base] = {base, size, AllocKind::SegmentSlot, true};
        stats_.slots_used++;
        if (s->live_slots + 1 >= s->slots) open_segment_for_k_.erase(k);
        return base;
    }
    return 0;
}

FreeResult SimAllocator::dealloc(uint64_t addr) {
    if (auto it = heap_extents_.find(addr); it != heap_extents_.end()) {
        AllocationRecord& r = it->second;
        if (!r.live) return FreeResult::DoubleFree;
        r.live = false;
        stats_.live_bytes -= r.size;
        if (r.kind == AllocKind::AnonMap) {
            mem_.unmap_range(r.base - kPageSize, kPageSize + r.size);
        } else {
            mem_.unmap_range(r.base - kHeaderSize, kHeaderSize + r.size);
        }
        return FreeResult::Ok;
    }
    if (auto it = slot_records_.find(addr); it != slot_records_.end()) {
        AllocationRecord& r = it->second;
        if (!r.live) return FreeResult::DoubleFree;
        r.live = false;
        stats_.live_bytes -= r.size;
        uint64_t seg_start = segment_of(addr);
        Segment& s = segments_.at(seg_start);
        uint64_t slot_start = addr - kHeaderSize;
        uint64_t slot = (slot_start - seg_start) >> s.k;
        bitmap_set(s, slot, false);
        s.live_slots--;
        mem_.unmap_range(slot_start, align_up(kHeaderSize + r.size, kPageSize));
        if (!open_segment_for_k_.count(s.k)) open_segment_for_k_[s.k] = seg_start;
        return FreeResult::Ok;
    }
    return FreeResult::NotABase;
}

uint64_t SimAllocator::map_anonymous(uint64_t size) {
    if (size == 0) size = 1;
    uint64_t base = mmap_cursor_ + kPageSize;  // one leading page for the header
    uint64_t span = kPageSize + align_up(size, kPageSize);
    if (mmap_cursor_ + span >= kMmapEnd) return 0;
    mmap_cursor_ += span + kPageSize;  // trailing guard page
    mem_.map_range(base - kPageSize, kPageSize + size);
    mem_.store(base - kHeaderSize, 8, size);
    heap_extents_[base] = {base, size, AllocKind::AnonMap, true};
    stats_.live_bytes += size;
    return base;
}

uint64_t SimAllocator::get_base_allocator(uint64_t addr) {
    stats_.lookups++;
    // small heap and anonymous maps via the extent map
    if (auto it = heap_extents_.upper_bound(addr); it != heap_extents_.begin()) {
        const AllocationRecord& r = std::prev(it)->second;
        if (r.live && addr >= r.base && addr < r.base + r.size) return r.base;
    }
    // segment slots via alignment
    if (addr >= kSegmentBase && addr < kSegmentEnd) {
        auto sit = segments_.find(segment_of(addr));
        if (sit != segments_.end()) {
            const Segment& s = sit->second;
            uint64_t slot = (addr - s.start) >> s.k;
            if (slot >= 1 && slot < s.slots && bitmap_get(s, slot)) {
                uint64_t base = s.start + (slot << s.k) + kHeaderSize;
                uint64_t size = mem_.load(base - kHeaderSize, 8);
                if (addr >= base && addr < base + size) return base;
            }
        }
        return 0;
    }
    // stack registry
    if (auto it = stack_registry_.upper_bound(addr); it != stack_registry_.begin()) {
        const AllocationRecord& r = std::prev(it)->second;
        if (r.live && addr >= r.base && addr < r.base + r.size) return r.base;
    }
    // sorted global table, fronted by a small cache
    if (is_global_range(addr)) {
        for (const CacheEntry& e : global_cache_) {
            if (e.size && addr >= e.base && addr < e.base + e.size) {
                stats_.global_cache_hits++;
                return e.base;
            }
        }
        assert(globals_sorted_);
        size_t lo = 0, hi = global_table_.size();
        while (lo < hi) {
            size_t mid = (lo + hi) / 2;
            if (global_table_[mid].first <= addr) lo = mid + 1;
            else hi = mid;
        }
        if (lo > 0) {
            auto [base, size] = global_table_[lo - 1];
            if (addr >= base && addr < base + size) {
                global_cache_[cache_next_] = {base, size};
                cache_next_ = (cache_next_ + 1) % global_cache_.size();
                return base;
            }
        }
    }
    return 0;
}

void SimAllocator::register_stack_object(uint64_t base, uint64_t size) {
    stack_registry_[base] = {base, size, AllocKind::Stack, true};
}

bool SimAllocator::deregister_stack_object(uint64_t base) {
    return stack_registry_.erase(base) > 0;
}

uint64_t SimAllocator::place_global(uint64_t size) {
    uint64_t base = align_up(global_cursor_ + kHeaderSize, 16);
    if (size == 0) size = 1;
    if (base + size >= kGlobalEnd) return 0;
    global_cursor_ = base + size;
    mem_.map_range(base - kHeaderSize, kHeaderSize + size);
    mem_.store(base - kHeaderSize, 8, size);
    global_table_.emplace_back(base, size);
    globals_sorted_ = false;
    return base;
}

void SimAllocator::finalize_globals() {
    std::sort(global_table_.begin(), global_table_.end());
    globals_sorted_ = true;
}

}  // namespace tagguard::rt
