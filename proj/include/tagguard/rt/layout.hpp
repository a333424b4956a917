#pragma once

#include <cstdint>

namespace tagguard::rt {

// Simulated address-space map. Ranges are disjoint with unmapped guard
// gaps between them; the low 64 KiB is never mapped so null dereferences
// fault.
inline constexpr uint64_t kFuncBase = 0x0000'0F00'0000;
inline constexpr uint64_t kFuncSpacing = 64;
inline constexpr uint64_t kGlobalBase = 0x0000'1000'0000;
inline constexpr uint64_t kGlobalEnd = 0x0000'2000'0000;
inline constexpr uint64_t kStackLow = 0x0000'2100'0000;
inline constexpr uint64_t kStackTop = 0x0000'3000'0000;
inline constexpr uint64_t kHeapBase = 0x0000'4000'0000;
inline constexpr uint64_t kHeapEnd = 0x0000'8000'0000;
inline constexpr uint64_t kMmapBase = 0x0000'9000'0000;
inline constexpr uint64_t kMmapEnd = 0x0000'A000'0000;
inline constexpr uint64_t kSegmentBase = 0x1000'0000'0000;
inline constexpr uint64_t kSegmentEnd = 0x8000'0000'0000;

inline constexpr uint64_t kDefaultSegmentSize = uint64_t{1} << 24;

}  // namespace tagguard::rt
