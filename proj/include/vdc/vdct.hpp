#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace vdc {

// Portable tensor file format "VDCT": 8-byte magic "VDCT0001", little-endian
// u32 rank, u32 extent per dimension, u8 dtype (0 = f64, 1 = f32), then the
// flat row-major payload little-endian.

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f64(std::ostream& os, double v) {
    std::uint64_t u;
    std::memcpy(&u, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline double read_f64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &u, 8);
    return v;
}

inline float read_f32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t u = 0;
    for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}
}  // namespace detail

inline void save_vdct(const std::string& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("save_vdct: cannot open " + path);
    os.write("VDCT0001", 8);
    detail::write_u32(os, static_cast<std::uint32_t>(t.shape.size()));
    for (auto e : t.shape) detail::write_u32(os, static_cast<std::uint32_t>(e));
    char dtype = 0;  // f64
    os.write(&dtype, 1);
    for (double v : t.data) detail::write_f64(os, v);
    if (!os) throw IoError("save_vdct: write failed for " + path);
}

inline Tensor load_vdct(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("load_vdct: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, "VDCT0001", 8) != 0)
        throw IoError("load_vdct: bad magic in " + path);
    std::uint32_t rank = detail::read_u32(is);
    if (rank > 8) throw IoError("load_vdct: implausible rank in " + path);
    Shape shape(rank);
    for (auto& e : shape) e = detail::read_u32(is);
    char dtype;
    is.read(&dtype, 1);
    Tensor t(shape);
    if (dtype == 0) {
        for (auto& v : t.data) v = detail::read_f64(is);
    } else if (dtype == 1) {
        for (auto& v : t.data) v = static_cast<double>(detail::read_f32(is));
    } else {
        throw IoError("load_vdct: unknown dtype code in " + path);
    }
    if (!is) throw IoError("load_vdct: truncated payload in " + path);
    return t;
}

}  // namespace vdc
