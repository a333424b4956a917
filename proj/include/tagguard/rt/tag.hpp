#pragma once

#include <cstdint>

namespace tagguard::rt {

// Guest pointer layout: bits [0,48) address, bit 48 invalid, bits [49,64)
// a 15-bit offset from the owning object's base address.
inline constexpr int kAddrBits = 48;
inline constexpr uint64_t kAddrMask = (uint64_t{1} << kAddrBits) - 1;
inline constexpr uint64_t kInvalidBit = uint64_t{1} << 48;
inline constexpr int kOffsetShift = 49;
inline constexpr uint64_t kMaxOffset = 0x7FFF;
inline constexpr uint64_t kHeaderSize = 8;

struct TaggedPtr {
    uint64_t raw = 0;

    constexpr uint64_t address() const { return raw & kAddrMask; }
    constexpr bool invalid() const { return (raw & kInvalidBit) != 0; }
    constexpr uint64_t offset() const { return raw >> kOffsetShift; }

    constexpr TaggedPtr with_offset(uint64_t off) const {
        return {(raw & ((uint64_t{1} << kOffsetShift) - 1)) | (off << kOffsetShift)};
    }
    constexpr TaggedPtr with_invalid() const { return {raw | kInvalidBit}; }
};

// Clears all tag bits [48,64).
constexpr uint64_t reset_tag(uint64_t v) { return v & kAddrMask; }

// Clears only the offset field; the invalid bit survives.
constexpr uint64_t reset_offset(uint64_t v) {
    return v & ((uint64_t{1} << kOffsetShift) - 1);
}

constexpr uint64_t set_invalid(uint64_t v) { return v | kInvalidBit; }

// Recomputes the offset field of `ptr` relative to `base` and marks the
// pointer invalid when [address, address+access_size) is not within
// [base, limit). The offset saturates at kMaxOffset; a pre-set invalid
// bit is never cleared.
constexpr uint64_t update_tag(uint64_t base, uint64_t ptr, uint64_t access_size,
                              uint64_t limit) {
    TaggedPtr t{ptr};
    uint64_t off = t.address() - base;  // wraps huge when address < base
    t = t.with_offset(off > kMaxOffset ? kMaxOffset : off);
    if (t.address() < base || t.address() + access_size > limit) {
        t = t.with_invalid();
    }
    return t.raw;
}

}  // namespace tagguard::rt
