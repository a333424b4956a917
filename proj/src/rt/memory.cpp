#include "tagguard/rt/memory.hpp"

#include <algorithm>
#include <vector>

namespace tagguard::rt {

bool SimMemory::is_mapped(uint64_t addr, uint64_t len) const {
    if (len == 0) return true;
    auto it = intervals_.upper_bound(addr);
    if (it == intervals_.begin()) return false;
    --it;
    return addr >= it->first && addr + len <= it->second;
}

void SimMemory::map_range(uint64_t addr, uint64_t len, bool zero) {
    if (len == 0) return;
    if (zero) drop_pages(addr, len);
    uint64_t start = addr, end = addr + len;
    // absorb every interval overlapping or adjacent to [start, end)
    auto it = intervals_.upper_bound(start);
    if (it != intervals_.begin()) {
        auto prev = std::prev(it);
        if (prev->second >= start) {
            start = std::min(start, prev->first);
            end = std::max(end, prev->second);
            it = intervals_.erase(prev);
        }
    }
    while (it != intervals_.end() && it->first <= end) {
        end = std::max(end, it->second);
        it = intervals_.erase(it);
    }
    intervals_[start] = end;
}

void SimMemory::unmap_range(uint64_t addr, uint64_t len) {
    if (len == 0) return;
    uint64_t start = addr, end = addr + len;
    drop_pages(addr, len);
    auto it = intervals_.upper_bound(start);
    if (it != intervals_.begin()) --it;
    while (it != intervals_.end() && it->first < end) {
        uint64_t is = it->first, ie = it->second;
        if (ie <= start) {
            ++it;
            continue;
        }
        it = intervals_.erase(it);
        if (is < start) intervals_[is] = start;
        if (ie > end) {
            intervals_[end] = ie;
            break;
        }
    }
}

// Forgets page bodies in a range; partial pages at the edges are kept but
// cleared byte-wise so neighbours survive.
void SimMemory::drop_pages(uint64_t addr, uint64_t len) {
    uint64_t first_page = addr / kPageSize;
    uint64_t last_page = (addr + len - 1) / kPageSize;
    for (uint64_t p = first_page; p <= last_page; p++) {
        auto it = pages_.find(p);
        if (it == pages_.end()) continue;
        uint64_t page_lo = p * kPageSize, page_hi = page_lo + kPageSize;
        if (addr <= page_lo && addr + len >= page_hi) {
            pages_.erase(it);
        } else {
            uint64_t lo = std::max(addr, page_lo), hi = std::min(addr + len, page_hi);
            std::fill(it->second->begin() + (lo - page_lo),
                      it->second->begin() + (hi - page_lo), uint8_t{0});
        }
    }
}

uint64_t SimMemory::load(uint64_t addr, uint32_t width) const {
    uint64_t v = 0;
    for (uint32_t i = 0; i < width; i++) {
        auto it = pages_.find((addr + i) / kPageSize);
        uint8_t byte = it == pages_.end() ? 0 : (*it->second)[(addr + i) % kPageSize];
        v |= static_cast<uint64_t>(byte) << (8 * i);
    }
    return v;
}

void SimMemory::store(uint64_t addr, uint32_t width, uint64_t value) {
    for (uint32_t i = 0; i < width; i++) {
        auto& slot = pages_[(addr + i) / kPageSize];
        if (!slot) slot = std::make_unique<Page>();
        (*slot)[(addr + i) % kPageSize] = static_cast<uint8_t>(value >> (8 * i));
    }
}

bool SimMemory::try_load(uint64_t addr, uint32_t width, uint64_t& out) const {
    if (!is_mapped(addr, width)) return false;
    out = load(addr, width);
    return true;
}

bool SimMemory::try_store(uint64_t addr, uint32_t width, uint64_t value) {
    if (!is_mapped(addr, width)) return false;
    store(addr, width, value);
    return true;
}

void SimMemory::copy(uint64_t dst, uint64_t src, uint64_t len) {
    std::vector<uint8_t> tmp(len);
    for (uint64_t i = 0; i < len; i++)
        tmp[i] = static_cast<uint8_t>(load(src + i, 1));
    for (uint64_t i = 0; i < len; i++) store(dst + i, 1, tmp[i]);
}

}  // namespace tagguard::rt
