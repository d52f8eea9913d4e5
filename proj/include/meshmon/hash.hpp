#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace meshmon {

// 128-bit FNV-1a. Stable across runs and platforms, wide enough that the
// content-addressed ids used for dedup and path signatures never collide at
// the scales this system stores.
struct Hash128 {
    unsigned __int128 value = 0;

    bool operator==(const Hash128&) const = default;

    std::string hex() const {
        static const char* digits = "0123456789abcdef";
        std::string out(32, '0');
        unsigned __int128 v = value;
        for (int i = 31; i >= 0; --i) {
            out[static_cast<std::size_t>(i)] = digits[static_cast<unsigned>(v & 0xf)];
            v >>= 4;
        }
        return out;
    }
};

inline Hash128 fnv128(std::string_view data) {
    // FNV-1a 128-bit offset basis and prime.
    unsigned __int128 h = (static_cast<unsigned __int128>(0x6c62272e07bb0142ULL) << 64) |
                          0x62b821756295c58dULL;
    const unsigned __int128 prime = (static_cast<unsigned __int128>(1) << 88) | 0x13bULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= prime;
    }
    return Hash128{h};
}

inline std::string fnv128_hex(std::string_view data) { return fnv128(data).hex(); }

// 64-bit FNV-1a, used only for deriving per-agent RNG streams.
inline std::uint64_t fnv64(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace meshmon
