#pragma once

// Named-tensor container. Layout (little-endian):
//   "FDLRPRM\0" | u32 version=1 | u8 frozen | u32 count
//   per tensor: u32 name_len, name, u32 rank, u64 dims[rank], f64 data[numel]

#include "layers.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace fidlar::ad {

inline constexpr char param_magic[8] = {'F', 'D', 'L', 'R', 'P', 'R', 'M', '\0'};
inline constexpr std::uint32_t param_version = 1;

namespace detail {
template <class T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T read_pod(std::istream& is) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw IngestionError("truncated parameter file");
    return v;
}
} // namespace detail

inline void write_params(std::ostream& os, const ParamSet& ps) {
    os.write(param_magic, 8);
    detail::write_pod(os, param_version);
    detail::write_pod(os, static_cast<std::uint8_t>(ps.frozen()));
    detail::write_pod(os, static_cast<std::uint32_t>(ps.size()));
    for (const auto& [name, t] : ps) {
        detail::write_pod(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_pod(os, static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) detail::write_pod(os, static_cast<std::uint64_t>(d));
        os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(sizeof(double) * t.size()));
    }
}

inline ParamSet read_params(std::istream& is) {
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, param_magic, 8) != 0)
        throw IngestionError("not a parameter container (bad magic)");
    const auto version = detail::read_pod<std::uint32_t>(is);
    if (version != param_version) throw IngestionError("unsupported parameter container version " + std::to_string(version));
    const bool frozen = detail::read_pod<std::uint8_t>(is) != 0;
    const auto count = detail::read_pod<std::uint32_t>(is);
    ParamSet ps;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = detail::read_pod<std::uint32_t>(is);
        if (len > 4096) throw IngestionError("implausible parameter name length");
        std::string name(len, '\0');
        if (!is.read(name.data(), len)) throw IngestionError("truncated parameter file");
        const auto rank = detail::read_pod<std::uint32_t>(is);
        if (rank > 8) throw IngestionError("implausible tensor rank in parameter file");
        Shape shape;
        for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(detail::read_pod<std::uint64_t>(is));
        Array a(shape);
        if (!is.read(reinterpret_cast<char*>(a.data.data()), static_cast<std::streamsize>(sizeof(double) * a.size())))
            throw IngestionError("truncated tensor '" + name + "'");
        ps.add(name, std::move(a));
    }
    if (frozen) ps.freeze();
    return ps;
}

inline void save_params(const std::string& path, const ParamSet& ps) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IngestionError("cannot write '" + path + "'");
    write_params(os, ps);
}

inline ParamSet load_params(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IngestionError("cannot open '" + path + "'");
    return read_params(is);
}

} // namespace fidlar::ad
