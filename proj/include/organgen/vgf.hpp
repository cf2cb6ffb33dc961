#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "organgen/grid.hpp"

namespace organgen {

// VGF binary grid format, little-endian:
//   magic "VGF1" | u32 dtype (0 = f32 scalar, 1 = u8 mask) | u32 nx,ny,nz |
//   f64 spacing-mm | payload in x-fastest order.

static_assert(std::endian::native == std::endian::little,
              "VGF I/O assumes a little-endian host");

namespace detail {

inline void write_bytes(std::ofstream& f, const void* p, std::size_t n) {
    f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <class T>
void write_pod(std::ofstream& f, T v) {
    write_bytes(f, &v, sizeof(T));
}

template <class T>
T read_pod(std::ifstream& f, const std::string& path) {
    T v{};
    if (!f.read(reinterpret_cast<char*>(&v), sizeof(T)))
        throw DataError("VGF: truncated file " + path);
    return v;
}

inline GridDims read_vgf_header(std::ifstream& f, const std::string& path, std::uint32_t& dtype,
                                double& spacing) {
    char magic[4];
    if (!f.read(magic, 4)) throw DataError("VGF: truncated file " + path);
    if (std::memcmp(magic, "VGF1", 4) != 0) throw DataError("VGF: bad magic in " + path);
    dtype = read_pod<std::uint32_t>(f, path);
    if (dtype > 1)
        throw DataError("VGF: unknown dtype tag " + std::to_string(dtype) + " in " + path);
    GridDims d;
    d.nx = static_cast<int>(read_pod<std::uint32_t>(f, path));
    d.ny = static_cast<int>(read_pod<std::uint32_t>(f, path));
    d.nz = static_cast<int>(read_pod<std::uint32_t>(f, path));
    if (d.nx == 0 || d.ny == 0 || d.nz == 0) throw DataError("VGF: zero dims in " + path);
    spacing = read_pod<double>(f, path);
    if (!(spacing > 0.0)) throw DataError("VGF: non-positive spacing in " + path);
    return d;
}

inline void check_payload_end(std::ifstream& f, const std::string& path) {
    char extra;
    if (f.read(&extra, 1)) throw DataError("VGF: payload length mismatch in " + path);
}

}  // namespace detail

inline void write_vgf(const std::string& path, const ScalarGrid& g) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("VGF: cannot open for write: " + path);
    detail::write_bytes(f, "VGF1", 4);
    detail::write_pod<std::uint32_t>(f, 0);
    detail::write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(g.dims.nx));
    detail::write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(g.dims.ny));
    detail::write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(g.dims.nz));
    detail::write_pod<double>(f, g.spacing_mm);
    std::vector<float> payload(g.values.begin(), g.values.end());
    detail::write_bytes(f, payload.data(), payload.size() * sizeof(float));
    if (!f) throw DataError("VGF: write failed: " + path);
}

inline void write_vgf(const std::string& path, const BinaryMask& m) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("VGF: cannot open for write: " + path);
    detail::write_bytes(f, "VGF1", 4);
    detail::write_pod<std::uint32_t>(f, 1);
    detail::write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(m.dims.nx));
    detail::write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(m.dims.ny));
    detail::write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(m.dims.nz));
    detail::write_pod<double>(f, m.spacing_mm);
    detail::write_bytes(f, m.bits.data(), m.bits.size());
    if (!f) throw DataError("VGF: write failed: " + path);
}

inline ScalarGrid read_vgf_scalar(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("VGF: cannot open: " + path);
    std::uint32_t dtype;
    double spacing;
    const GridDims d = detail::read_vgf_header(f, path, dtype, spacing);
    if (dtype != 0) throw DataError("VGF: expected f32 scalar payload in " + path);
    ScalarGrid g(d, spacing);
    std::vector<float> payload(d.total());
    if (!f.read(reinterpret_cast<char*>(payload.data()),
                static_cast<std::streamsize>(payload.size() * sizeof(float))))
        throw DataError("VGF: payload length mismatch in " + path);
    detail::check_payload_end(f, path);
    for (std::size_t i = 0; i < payload.size(); ++i) g.values[i] = payload[i];
    return g;
}

inline BinaryMask read_vgf_mask(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("VGF: cannot open: " + path);
    std::uint32_t dtype;
    double spacing;
    const GridDims d = detail::read_vgf_header(f, path, dtype, spacing);
    if (dtype != 1) throw DataError("VGF: expected u8 mask payload in " + path);
    BinaryMask m(d, spacing);
    if (!f.read(reinterpret_cast<char*>(m.bits.data()),
                static_cast<std::streamsize>(m.bits.size())))
        throw DataError("VGF: payload length mismatch in " + path);
    detail::check_payload_end(f, path);
    for (auto& b : m.bits) b = b ? 1 : 0;
    return m;
}

}  // namespace organgen
