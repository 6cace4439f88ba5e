#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "robox/model.hpp"

namespace robox {

/// Binary weight snapshot.
///
/// Layout, all integers little endian:
///   magic "RBXS" | u32 format version | u32 entry count
///   per entry: u32 name length | name bytes | u32 rank | u32 dims[rank]
///              | f32 payload (row major)
///   trailer: u64 FNV-1a hash of every preceding byte
///
/// Parameters are stored as f32, so a save/load round trip perturbs weights
/// at the 1e-7 relative level; downstream outputs are expected to stay
/// within 1e-5. A "__config__" entry carries the architecture so a loader
/// can rebuild the model without outside information.

namespace detail {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kMagic[4] = {'R', 'B', 'X', 'S'};
inline constexpr const char* kConfigEntry = "__config__";

inline std::uint64_t fnv1a(const std::vector<unsigned char>& bytes, std::size_t n) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::vector<unsigned char>& out, float f) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    put_u32(out, u);
}

/// Cursor over a byte buffer that throws on truncation.
struct Reader {
    const std::vector<unsigned char>& b;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > b.size()) throw IoError("checkpoint: truncated file");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    float f32() {
        std::uint32_t u = u32();
        float f;
        std::memcpy(&f, &u, 4);
        return f;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(b.data() + pos), n);
        pos += n;
        return s;
    }
};

inline std::vector<double> config_fields(const ModelConfig& c) {
    return {static_cast<double>(c.image_size),    static_cast<double>(c.patch),
            static_cast<double>(c.d_model),       static_cast<double>(c.n_heads),
            static_cast<double>(c.enc_blocks),    static_cast<double>(c.dec_layers),
            static_cast<double>(c.n_mask_tokens), static_cast<double>(c.n_points),
            static_cast<double>(c.refine_iters),  c.refine_stop_eps};
}

inline ModelConfig config_from_fields(const std::vector<double>& v) {
    if (v.size() != 10) throw IoError("checkpoint: malformed config entry");
    ModelConfig c;
    c.image_size = static_cast<std::size_t>(v[0]);
    c.patch = static_cast<std::size_t>(v[1]);
    c.d_model = static_cast<std::size_t>(v[2]);
    c.n_heads = static_cast<std::size_t>(v[3]);
    c.enc_blocks = static_cast<std::size_t>(v[4]);
    c.dec_layers = static_cast<std::size_t>(v[5]);
    c.n_mask_tokens = static_cast<std::size_t>(v[6]);
    c.n_points = static_cast<std::size_t>(v[7]);
    c.refine_iters = static_cast<int>(v[8]);
    c.refine_stop_eps = v[9];
    return c;
}

inline void append_entry(std::vector<unsigned char>& out, const std::string& name,
                         const nn::Shape& shape, const std::vector<double>& data) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, static_cast<std::uint32_t>(shape.size()));
    for (std::size_t d : shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : data) put_f32(out, static_cast<float>(v));
}

}  // namespace detail

/// Serialize all weights plus the architecture entry.
inline std::vector<unsigned char> checkpoint_bytes(const Model& m) {
    std::vector<unsigned char> out;
    out.insert(out.end(), detail::kMagic, detail::kMagic + 4);
    detail::put_u32(out, detail::kCheckpointVersion);
    const auto& params = m.named_params();
    detail::put_u32(out, static_cast<std::uint32_t>(params.size() + 1));
    detail::append_entry(out, detail::kConfigEntry, {10},
                         detail::config_fields(m.config()));
    for (const auto& [name, t] : params) detail::append_entry(out, name, t.shape(), t.data());
    detail::put_u64(out, detail::fnv1a(out, out.size()));
    return out;
}

inline void save_checkpoint(const Model& m, const std::string& path) {
    const std::vector<unsigned char> bytes = checkpoint_bytes(m);
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("checkpoint: cannot open " + path + " for writing");
    const std::size_t n = std::fwrite(bytes.data(), 1, bytes.size(), f);
    std::fclose(f);
    if (n != bytes.size()) throw IoError("checkpoint: short write to " + path);
}

/// Rebuild a model from checkpoint bytes. Every parameter the architecture
/// defines must be present with the right shape; anything else is a
/// corrupt or mismatched file.
inline Model load_checkpoint_bytes(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < 20) throw IoError("checkpoint: file too small");
    if (std::memcmp(bytes.data(), detail::kMagic, 4) != 0)
        throw IoError("checkpoint: bad magic");
    const std::uint64_t want = detail::fnv1a(bytes, bytes.size() - 8);
    detail::Reader tail{bytes, bytes.size() - 8};
    if (tail.u64() != want) throw IoError("checkpoint: checksum mismatch");

    detail::Reader r{bytes, 4};
    if (r.u32() != detail::kCheckpointVersion)
        throw IoError("checkpoint: unsupported format version");
    const std::uint32_t count = r.u32();
    if (count == 0) throw IoError("checkpoint: no entries");

    struct RawEntry {
        nn::Shape shape;
        std::vector<double> data;
    };
    std::vector<std::pair<std::string, RawEntry>> entries;
    const std::size_t body_end = bytes.size() - 8;
    for (std::uint32_t e = 0; e < count; ++e) {
        const std::uint32_t name_len = r.u32();
        if (name_len == 0 || name_len > 512) throw IoError("checkpoint: bad entry name");
        const std::string name = r.str(name_len);
        const std::uint32_t rank = r.u32();
        if (rank > 8) throw IoError("checkpoint: bad entry rank");
        nn::Shape shape(rank);
        for (std::uint32_t i = 0; i < rank; ++i) shape[i] = r.u32();
        const std::size_t numel = nn::shape_numel(shape);
        if (numel == 0 || numel > (1u << 26)) throw IoError("checkpoint: bad entry size");
        std::vector<double> data(numel);
        for (std::size_t i = 0; i < numel; ++i) data[i] = r.f32();
        entries.emplace_back(name, RawEntry{std::move(shape), std::move(data)});
    }
    if (r.pos != body_end) throw IoError("checkpoint: trailing bytes after entries");

    const ModelConfig cfg = [&] {
        for (const auto& [name, e] : entries)
            if (name == detail::kConfigEntry) return detail::config_from_fields(e.data);
        throw IoError("checkpoint: missing config entry");
    }();
    cfg.validate();

    Model m(cfg, 0);
    std::size_t applied = 0;
    for (const auto& [name, e] : entries) {
        if (name == detail::kConfigEntry) continue;
        nn::Tensor t = [&] {
            try {
                return m.p(name);
            } catch (const ParamError&) {
                throw IoError("checkpoint: unknown parameter " + name);
            }
        }();
        if (t.shape() != e.shape)
            throw IoError("checkpoint: shape mismatch for " + name);
        t.leaf_data() = e.data;
        ++applied;
    }
    if (applied != m.named_params().size())
        throw IoError("checkpoint: missing parameters");
    return m;
}

inline Model load_checkpoint(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw IoError("checkpoint: cannot open " + path);
    std::fseek(f, 0, SEEK_END);
    const long sz = std::ftell(f);
    std::fseek(f, 0, SEEK_SET);
    std::vector<unsigned char> bytes(sz > 0 ? static_cast<std::size_t>(sz) : 0);
    const std::size_t n = bytes.empty() ? 0 : std::fread(bytes.data(), 1, bytes.size(), f);
    std::fclose(f);
    if (n != bytes.size()) throw IoError("checkpoint: short read from " + path);
    return load_checkpoint_bytes(bytes);
}

}  // namespace robox
