#pragma once

// Binary tensor container used for all persistence: magic "UQTF", version
// u32=1, dtype u8 (0 = f32, 1 = f64), ndim u32, dims u32 each, then the
// payload little-endian row-major.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "uqtf/tensor.hpp"

namespace uqtf::io {

constexpr uint32_t kContainerVersion = 1;

template <typename S>
constexpr uint8_t dtype_tag() {
    if constexpr (std::is_same_v<S, float>)
        return 0;
    else
        return 1;
}

namespace detail {
inline void write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}
}  // namespace detail

// Host is assumed little-endian; payload is written directly.
template <typename S>
void save_tensor(const std::string& path, const Tensor<S>& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + path);
    os.write("UQTF", 4);
    detail::write_u32(os, kContainerVersion);
    const uint8_t tag = dtype_tag<S>();
    os.write(reinterpret_cast<const char*>(&tag), 1);
    detail::write_u32(os, static_cast<uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) detail::write_u32(os, static_cast<uint32_t>(t.dim(i)));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.numel() * static_cast<int64_t>(sizeof(S))));
    if (!os) throw IoError("write failed: " + path);
}

// Loads a tensor, converting the payload to S if the stored dtype differs.
template <typename S>
Tensor<S> load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "UQTF") throw IoError("bad magic in " + path);
    const uint32_t version = detail::read_u32(is);
    if (version != kContainerVersion)
        throw IoError("unsupported container version " + std::to_string(version) + " in " + path);
    uint8_t tag = 0;
    is.read(reinterpret_cast<char*>(&tag), 1);
    if (tag > 1) throw IoError("unknown dtype tag in " + path);
    const uint32_t ndim = detail::read_u32(is);
    if (ndim == 0 || ndim > 8) throw IoError("bad rank in " + path);
    Shape shape(ndim);
    for (uint32_t i = 0; i < ndim; ++i) shape[i] = static_cast<int64_t>(detail::read_u32(is));
    const int64_t numel = shape_numel(shape);

    auto read_payload = [&](auto scalar_tag) {
        using P = decltype(scalar_tag);
        std::vector<P> buf(static_cast<size_t>(numel));
        is.read(reinterpret_cast<char*>(buf.data()),
                static_cast<std::streamsize>(numel * static_cast<int64_t>(sizeof(P))));
        if (!is) throw IoError("truncated payload in " + path);
        return Tensor<P>(shape, std::move(buf));
    };

    if (tag == dtype_tag<S>()) {
        return read_payload(S{});
    } else if (tag == 0) {
        return read_payload(float{}).template cast<S>();
    } else {
        return read_payload(double{}).template cast<S>();
    }
}

}  // namespace uqtf::io
