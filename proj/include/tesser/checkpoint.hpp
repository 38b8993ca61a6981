#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "tesser/cnn.hpp"
#include "tesser/errors.hpp"
#include "tesser/vit.hpp"

namespace tesser {

// Checkpoint layout, all little-endian:
//   magic "TSRC" (4 bytes)
//   format version u32 (currently 1)
//   architecture tag u8 (0 = ViT, 1 = CNN)
//   arch fields as u32, in order:
//     ViT: image_side, channels, patch_size, embed_dim, heads, depth,
//          mlp_ratio, classes
//     CNN: image_side, channels, conv1_out, conv2_out, classes
//   then every weight tensor in vit_for_each_tensor / cnn_for_each_tensor
//   order, each as: rank u8, dims u32 x rank, payload f32 row-major.
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline void put_f32(std::string& out, float f) {
    std::uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32(out, v);
}

struct ByteReader {
    const std::string& buf;
    std::size_t pos = 0;

    std::uint8_t u8(const std::string& field) {
        if (pos + 1 > buf.size())
            throw FormatError("checkpoint truncated reading " + field);
        return static_cast<std::uint8_t>(buf[pos++]);
    }
    std::uint32_t u32(const std::string& field) {
        if (pos + 4 > buf.size())
            throw FormatError("checkpoint truncated reading " + field);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    float f32(const std::string& field) {
        std::uint32_t v = u32(field);
        float f;
        std::memcpy(&f, &v, 4);
        return f;
    }
};

inline void put_tensor(std::string& out, const Tensor& t) {
    out.push_back(static_cast<char>(t.rank()));
    for (auto d : t.shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.data) put_f32(out, static_cast<float>(v));
}

inline void read_tensor(ByteReader& r, Tensor& t, const std::string& name) {
    std::uint8_t rank = r.u8("tensor " + name + " rank");
    if (rank != t.rank())
        throw FormatError("tensor " + name + ": rank " + std::to_string(rank) +
                          " does not match expected " + std::to_string(t.rank()));
    for (int i = 0; i < t.rank(); ++i) {
        std::uint32_t d = r.u32("tensor " + name + " dims");
        if (static_cast<std::int64_t>(d) != t.dim(i))
            throw FormatError("tensor " + name + ": dimension " + std::to_string(i) +
                              " is " + std::to_string(d) + ", expected " +
                              std::to_string(t.dim(i)));
    }
    for (auto& v : t.data) v = static_cast<double>(r.f32("tensor " + name + " payload"));
}

inline void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + path);
}

inline std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for reading: " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return bytes;
}

inline void check_header(ByteReader& r, std::uint8_t expect_tag) {
    if (r.buf.size() < 4 || r.buf.compare(0, 4, "TSRC") != 0)
        throw FormatError("checkpoint magic: expected TSRC");
    r.pos = 4;
    std::uint32_t ver = r.u32("format version");
    if (ver != kCheckpointVersion)
        throw FormatError("format version: got " + std::to_string(ver) + ", expected " +
                          std::to_string(kCheckpointVersion));
    std::uint8_t tag = r.u8("architecture tag");
    if (tag != expect_tag)
        throw FormatError("architecture tag: got " + std::to_string(tag) + ", expected " +
                          std::to_string(expect_tag));
}

}  // namespace detail

inline void save_checkpoint(const ViTParams& p, const std::string& path) {
    std::string out;
    out += "TSRC";
    detail::put_u32(out, kCheckpointVersion);
    out.push_back(static_cast<char>(0));
    const ViTArch& a = p.arch;
    for (int v : {a.image_side, a.channels, a.patch_size, a.embed_dim, a.heads, a.depth,
                  a.mlp_ratio, a.classes})
        detail::put_u32(out, static_cast<std::uint32_t>(v));
    vit_for_each_tensor(p, [&out](const std::string&, const Tensor& t) {
        detail::put_tensor(out, t);
    });
    detail::write_file(path, out);
}

inline void save_checkpoint(const CnnParams& p, const std::string& path) {
    std::string out;
    out += "TSRC";
    detail::put_u32(out, kCheckpointVersion);
    out.push_back(static_cast<char>(1));
    const CnnArch& a = p.arch;
    for (int v : {a.image_side, a.channels, a.conv1_out, a.conv2_out, a.classes})
        detail::put_u32(out, static_cast<std::uint32_t>(v));
    cnn_for_each_tensor(p, [&out](const std::string&, const Tensor& t) {
        detail::put_tensor(out, t);
    });
    detail::write_file(path, out);
}

inline ViTParams load_vit_checkpoint(const std::string& path, const ViTArch& expect) {
    std::string bytes = detail::read_file(path);
    detail::ByteReader r{bytes};
    detail::check_header(r, 0);
    const char* names[] = {"image_side", "channels", "patch_size", "embed_dim",
                           "heads",      "depth",    "mlp_ratio",  "classes"};
    int got[8];
    for (int i = 0; i < 8; ++i)
        got[i] = static_cast<int>(r.u32(std::string("arch field ") + names[i]));
    int want[8] = {expect.image_side, expect.channels, expect.patch_size, expect.embed_dim,
                   expect.heads,      expect.depth,    expect.mlp_ratio,  expect.classes};
    for (int i = 0; i < 8; ++i)
        if (got[i] != want[i])
            throw FormatError(std::string("arch field ") + names[i] + ": got " +
                              std::to_string(got[i]) + ", expected " + std::to_string(want[i]));
    ViTParams p = vit_zero_params(expect);
    vit_for_each_tensor(p, [&r](const std::string& name, Tensor& t) {
        detail::read_tensor(r, t, name);
    });
    if (r.pos != bytes.size())
        throw FormatError("checkpoint has " + std::to_string(bytes.size() - r.pos) +
                          " trailing bytes");
    return p;
}

inline CnnParams load_cnn_checkpoint(const std::string& path, const CnnArch& expect) {
    std::string bytes = detail::read_file(path);
    detail::ByteReader r{bytes};
    detail::check_header(r, 1);
    const char* names[] = {"image_side", "channels", "conv1_out", "conv2_out", "classes"};
    int got[5];
    for (int i = 0; i < 5; ++i)
        got[i] = static_cast<int>(r.u32(std::string("arch field ") + names[i]));
    int want[5] = {expect.image_side, expect.channels, expect.conv1_out, expect.conv2_out,
                   expect.classes};
    for (int i = 0; i < 5; ++i)
        if (got[i] != want[i])
            throw FormatError(std::string("arch field ") + names[i] + ": got " +
                              std::to_string(got[i]) + ", expected " + std::to_string(want[i]));
    CnnParams p = cnn_zero_params(expect);
    cnn_for_each_tensor(p, [&r](const std::string& name, Tensor& t) {
        detail::read_tensor(r, t, name);
    });
    if (r.pos != bytes.size())
        throw FormatError("checkpoint has " + std::to_string(bytes.size() - r.pos) +
                          " trailing bytes");
    return p;
}

// Round-trips parameters through the 32-bit on-disk precision in memory.
// Used so downstream results are identical whether a model was just trained
// or reloaded from its checkpoint.
inline void quantize_f32(Tensor& t) {
    for (auto& v : t.data) v = static_cast<double>(static_cast<float>(v));
}

inline void quantize_f32(ViTParams& p) {
    vit_for_each_tensor(p, [](const std::string&, Tensor& t) { quantize_f32(t); });
}

inline void quantize_f32(CnnParams& p) {
    cnn_for_each_tensor(p, [](const std::string&, Tensor& t) { quantize_f32(t); });
}

}  // namespace tesser
