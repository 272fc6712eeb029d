#pragma once

#include <array>
#include <cstddef>
#include <cstdint>

namespace pollen {

// CRC-32 (IEEE 802.3, reflected 0xEDB88320), the same polynomial PNG uses.
inline uint32_t crc32_update(uint32_t crc, const void* data, size_t len) {
    static const std::array<uint32_t, 256> table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    const auto* p = static_cast<const uint8_t*>(data);
    crc = ~crc;
    for (size_t i = 0; i < len; ++i) crc = table[(crc ^ p[i]) & 0xffu] ^ (crc >> 8);
    return ~crc;
}

inline uint32_t crc32(const void* data, size_t len) { return crc32_update(0, data, len); }

}  // namespace pollen
