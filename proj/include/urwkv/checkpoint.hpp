#pragma once

#include <cstring>
#include <fstream>

#include "urwkv/model.hpp"

namespace urwkv {

// Binary weight file. Layout, all little-endian:
//   magic "URWK" | version u32 | entry count u32
//   per entry: name length u16 | name bytes | dtype u8 (0=f32, 1=f64) |
//              rank u8 | extents u64 each | raw element data
//   config length u32 | UTF-8 JSON config
// The loader is strict: bad magic, unknown version, truncation or trailing
// bytes are all rejected.

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct ByteReader {
    const unsigned char* p;
    std::size_t len;
    std::size_t pos = 0;

    void need(std::size_t n) {
        if (pos + n > len) fail("checkpoint: truncated file");
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = static_cast<std::uint16_t>(p[pos] | (p[pos + 1] << 8));
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[pos + static_cast<std::size_t>(i)]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[pos + static_cast<std::size_t>(i)]) << (8 * i);
        pos += 8;
        return v;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(p + pos), n);
        pos += n;
        return s;
    }
};

template <class Real>
constexpr std::uint8_t dtype_tag() {
    static_assert(sizeof(Real) == 4 || sizeof(Real) == 8, "only f32/f64 tensors are serializable");
    return sizeof(Real) == 4 ? 0 : 1;
}

}  // namespace detail

struct CheckpointEntry {
    std::string name;
    std::uint8_t dtype = 0;
    Shape shape;
    std::string raw;  // little-endian element bytes
};

struct CheckpointFile {
    std::vector<CheckpointEntry> entries;
    std::string config_json;
};

template <class Real>
void write_checkpoint(const std::string& path, const std::vector<std::pair<std::string, Tensor<Real>>>& entries,
                      const std::string& config_json) {
    std::string out;
    out += "URWK";
    detail::put_u32(out, 1u);
    detail::put_u32(out, static_cast<std::uint32_t>(entries.size()));
    for (const auto& [name, t] : entries) {
        check(name.size() <= 0xffff, "checkpoint: entry name too long");
        detail::put_u16(out, static_cast<std::uint16_t>(name.size()));
        out += name;
        out.push_back(static_cast<char>(detail::dtype_tag<Real>()));
        out.push_back(static_cast<char>(t.shape().size()));
        for (auto e : t.shape()) detail::put_u64(out, static_cast<std::uint64_t>(e));
        const auto bytes = static_cast<std::size_t>(t.size()) * sizeof(Real);
        const auto off = out.size();
        out.resize(off + bytes);
        std::memcpy(out.data() + off, t.data().data(), bytes);
    }
    detail::put_u32(out, static_cast<std::uint32_t>(config_json.size()));
    out += config_json;

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    check(f.good(), "checkpoint: cannot open '" + path + "' for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    check(f.good(), "checkpoint: write to '" + path + "' failed");
}

inline CheckpointFile read_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    check(f.good(), "checkpoint: cannot open '" + path + "'");
    std::string blob((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    detail::ByteReader r{reinterpret_cast<const unsigned char*>(blob.data()), blob.size()};

    if (r.bytes(4) != "URWK") fail("checkpoint: bad magic, '" + path + "' is not a checkpoint");
    const auto version = r.u32();
    if (version != 1) fail("checkpoint: unsupported format version " + std::to_string(version));
    const auto count = r.u32();
    if (count > (1u << 20)) fail("checkpoint: implausible entry count " + std::to_string(count));

    CheckpointFile ck;
    ck.entries.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        CheckpointEntry e;
        const auto name_len = r.u16();
        e.name = r.bytes(name_len);
        e.dtype = static_cast<std::uint8_t>(r.bytes(1)[0]);
        if (e.dtype > 1) fail("checkpoint: unknown dtype tag for entry '" + e.name + "'");
        const auto rank = static_cast<std::uint8_t>(r.bytes(1)[0]);
        if (rank > 8) fail("checkpoint: implausible rank for entry '" + e.name + "'");
        std::int64_t elems = 1;
        for (std::uint8_t d = 0; d < rank; ++d) {
            const auto extent = r.u64();
            if (extent == 0 || extent > (1ull << 32)) fail("checkpoint: implausible extent in entry '" + e.name + "'");
            e.shape.push_back(static_cast<std::int64_t>(extent));
            elems *= static_cast<std::int64_t>(extent);
        }
        const std::size_t elem_size = e.dtype == 0 ? 4 : 8;
        e.raw = r.bytes(static_cast<std::size_t>(elems) * elem_size);
        ck.entries.push_back(std::move(e));
    }
    const auto cfg_len = r.u32();
    ck.config_json = r.bytes(cfg_len);
    if (r.pos != r.len) fail("checkpoint: trailing bytes after config blob");
    return ck;
}

// Fill an already-built model from checkpoint entries; the name sets must
// match exactly and dtypes must match Real.
template <class Real>
void load_state(Model<Real>& m, const CheckpointFile& ck) {
    check(ck.entries.size() == m.state.size(),
          "checkpoint: entry count " + std::to_string(ck.entries.size()) + " does not match model state size " +
              std::to_string(m.state.size()));
    for (std::size_t i = 0; i < ck.entries.size(); ++i) {
        const auto& e = ck.entries[i];
        auto& [name, t] = m.state[i];
        check(e.name == name, "checkpoint: entry '" + e.name + "' does not match expected '" + name + "'");
        check(e.dtype == detail::dtype_tag<Real>(), "checkpoint: dtype mismatch for entry '" + e.name + "'");
        check(e.shape == t.shape(), "checkpoint: shape mismatch for entry '" + e.name + "': file has " +
                                        shape_str(e.shape) + ", model has " + shape_str(t.shape()));
        std::memcpy(t.data().data(), e.raw.data(), e.raw.size());
    }
}

}  // namespace urwkv
