#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace memscry {

using Bytes = std::vector<uint8_t>;
using ByteView = std::span<const uint8_t>;

inline uint16_t read_be16(const uint8_t* p) {
    return static_cast<uint16_t>(p[0]) << 8 | p[1];
}

inline uint32_t read_be32(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) << 24 | static_cast<uint32_t>(p[1]) << 16 |
           static_cast<uint32_t>(p[2]) << 8 | p[3];
}

inline uint64_t read_be64(const uint8_t* p) {
    return static_cast<uint64_t>(read_be32(p)) << 32 | read_be32(p + 4);
}

inline uint16_t read_le16(const uint8_t* p) {
    return static_cast<uint16_t>(p[1]) << 8 | p[0];
}

inline uint32_t read_le32(const uint8_t* p) {
    return static_cast<uint32_t>(p[3]) << 24 | static_cast<uint32_t>(p[2]) << 16 |
           static_cast<uint32_t>(p[1]) << 8 | p[0];
}

inline void write_be16(uint8_t* p, uint16_t v) {
    p[0] = static_cast<uint8_t>(v >> 8);
    p[1] = static_cast<uint8_t>(v);
}

inline void write_be32(uint8_t* p, uint32_t v) {
    p[0] = static_cast<uint8_t>(v >> 24);
    p[1] = static_cast<uint8_t>(v >> 16);
    p[2] = static_cast<uint8_t>(v >> 8);
    p[3] = static_cast<uint8_t>(v);
}

inline void write_be64(uint8_t* p, uint64_t v) {
    write_be32(p, static_cast<uint32_t>(v >> 32));
    write_be32(p + 4, static_cast<uint32_t>(v));
}

inline void append_be32(Bytes& out, uint32_t v) {
    uint8_t buf[4];
    write_be32(buf, v);
    out.insert(out.end(), buf, buf + 4);
}

inline void append_be64(Bytes& out, uint64_t v) {
    uint8_t buf[8];
    write_be64(buf, v);
    out.insert(out.end(), buf, buf + 8);
}

inline void append_bytes(Bytes& out, ByteView v) {
    out.insert(out.end(), v.begin(), v.end());
}

inline void append_string32(Bytes& out, std::string_view s) {
    append_be32(out, static_cast<uint32_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
}

inline void append_string32(Bytes& out, ByteView s) {
    append_be32(out, static_cast<uint32_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
}

std::string hex_encode(ByteView data);
Bytes hex_decode(std::string_view hex);  // throws InvalidInputError on bad input

/// 128-bit unsigned counter with wraparound arithmetic (mod 2^128).
/// AES-CTR counters on the wire are big-endian; a little-endian view is
/// provided for scanning foreign memory layouts.
struct Counter128 {
    uint64_t hi = 0;
    uint64_t lo = 0;

    static Counter128 from_be(const uint8_t* p16) {
        return {read_be64(p16), read_be64(p16 + 8)};
    }
    static Counter128 from_le(const uint8_t* p16) {
        uint64_t lo = 0, hi = 0;
        for (int i = 7; i >= 0; --i) lo = lo << 8 | p16[i];
        for (int i = 15; i >= 8; --i) hi = hi << 8 | p16[i];
        return {hi, lo};
    }
    void to_be(uint8_t* p16) const {
        write_be64(p16, hi);
        write_be64(p16 + 8, lo);
    }
    std::array<uint8_t, 16> be_bytes() const {
        std::array<uint8_t, 16> out;
        to_be(out.data());
        return out;
    }

    Counter128 operator+(uint64_t n) const {
        Counter128 r{hi, lo + n};
        if (r.lo < lo) ++r.hi;
        return r;
    }
    Counter128 operator-(uint64_t n) const {
        Counter128 r{hi, lo - n};
        if (lo < n) --r.hi;
        return r;
    }
    Counter128 operator+(const Counter128& o) const {
        Counter128 r = *this + o.lo;
        r.hi += o.hi;
        return r;
    }
    Counter128 operator-(const Counter128& o) const {
        Counter128 r = *this - o.lo;
        r.hi -= o.hi;
        return r;
    }
    Counter128& operator++() {
        if (++lo == 0) ++hi;
        return *this;
    }
    bool operator==(const Counter128&) const = default;
};

}  // namespace memscry
