#pragma once

#include "n2ntd/core/errors.hpp"

#include <array>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace n2ntd::io {

// Little-endian stream helpers. Values are serialized byte-by-byte so the
// on-disk layout is independent of host endianness.

inline void write_u32(std::ostream& os, uint32_t v)
{
    unsigned char b[4] = {static_cast<unsigned char>(v),
                          static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u64(std::ostream& os, uint64_t v)
{
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline bool read_u32(std::istream& is, uint32_t& v)
{
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
    v = uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 |
        uint32_t(b[3]) << 24;
    return true;
}

inline bool read_u64(std::istream& is, uint64_t& v)
{
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) return false;
    v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(b[i]) << (8 * i);
    return true;
}

// float32 payload blocks: converted through a u32 bit pattern so writes are
// endian-safe and reads reject short payloads.

inline void write_f32(std::ostream& os, const float* p, size_t count)
{
    for (size_t i = 0; i < count; ++i) {
        uint32_t bits;
        std::memcpy(&bits, &p[i], 4);
        write_u32(os, bits);
    }
}

inline bool read_f32(std::istream& is, float* p, size_t count)
{
    for (size_t i = 0; i < count; ++i) {
        uint32_t bits;
        if (!read_u32(is, bits)) return false;
        std::memcpy(&p[i], &bits, 4);
    }
    return true;
}

// CRC-32 (IEEE 802.3, reflected polynomial 0xEDB88320), the same checksum
// zlib produces.
inline uint32_t crc32(const void* data, size_t len, uint32_t seed = 0)
{
    static const std::array<uint32_t, 256> table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int j = 0; j < 8; ++j)
                c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    uint32_t c = seed ^ 0xFFFFFFFFu;
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) c = table[(c ^ p[i]) & 0xFF] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

// FNV-1a 64-bit, used to digest canonicalized config text.
inline uint64_t fnv1a64(const std::string& s)
{
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

} // namespace n2ntd::io
