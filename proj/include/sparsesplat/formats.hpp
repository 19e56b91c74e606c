#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>

#include "binary_io.hpp"
#include "image.hpp"
#include "scene_model.hpp"

namespace sparsesplat {

// ---------------------------------------------------------------------------
// PFM grayscale ("Pf"). Rows are stored bottom-to-top as the format requires.

inline Bytes encode_pfm(const DepthMap& map) {
    const Image& v = map.values;
    if (v.channels != 1) throw InvalidInputError("write_pfm: depth map must be single channel");
    for (double d : v.data) {
        if (!std::isfinite(d)) throw InvalidInputError("write_pfm: depth map has non-finite values");
    }
    Bytes out;
    put_bytes(out, "Pf\n" + std::to_string(v.width) + " " + std::to_string(v.height) + "\n-1.0\n");
    out.reserve(out.size() + v.size() * 4);
    for (int y = v.height - 1; y >= 0; --y) {
        for (int x = 0; x < v.width; ++x) put_f32(out, static_cast<float>(v.at(x, y)));
    }
    return out;
}

inline DepthMap decode_pfm(const Bytes& data, const std::string& what = "pfm") {
    // header: three whitespace-separated tokens after the magic, then one whitespace byte
    std::size_t pos = 0;
    auto token = [&]() {
        while (pos < data.size() && std::isspace(data[pos])) ++pos;
        const std::size_t start = pos;
        while (pos < data.size() && !std::isspace(data[pos])) ++pos;
        if (start == pos) throw FormatError(what + ": malformed header");
        return std::string(reinterpret_cast<const char*>(data.data() + start), pos - start);
    };
    const std::string magic = token();
    if (magic == "PF") throw FormatError(what + ": color PFM is not a depth map (expected \"Pf\")");
    if (magic != "Pf") throw FormatError(what + ": malformed header (bad magic \"" + magic + "\")");
    int width = 0, height = 0;
    double scale = 0.0;
    try {
        std::size_t used = 0;
        const std::string ws = token(), hs = token(), ss = token();
        width = std::stoi(ws, &used);
        if (used != ws.size()) throw FormatError("");
        height = std::stoi(hs, &used);
        if (used != hs.size()) throw FormatError("");
        scale = std::stod(ss, &used);
        if (used != ss.size()) throw FormatError("");
    } catch (const std::exception&) {
        throw FormatError(what + ": malformed header");
    }
    if (width <= 0 || height <= 0 || scale == 0.0 || !std::isfinite(scale)) {
        throw FormatError(what + ": malformed header (bad size or scale)");
    }
    if (pos >= data.size() || !std::isspace(data[pos])) throw FormatError(what + ": malformed header");
    ++pos;
    const std::size_t expected = static_cast<std::size_t>(width) * height * 4;
    const std::size_t actual = data.size() - pos;
    if (actual != expected) {
        throw FormatError(what + ": payload byte count mismatch (expected " + std::to_string(expected) + ", got " +
                          std::to_string(actual) + ")");
    }
    const bool big_endian = scale > 0.0;
    DepthMap map(Image(width, height, 1));
    for (int y = height - 1; y >= 0; --y) {
        for (int x = 0; x < width; ++x) {
            std::uint32_t bits = 0;
            for (int i = 0; i < 4; ++i) {
                const int shift = big_endian ? 8 * (3 - i) : 8 * i;
                bits |= static_cast<std::uint32_t>(data[pos + i]) << shift;
            }
            pos += 4;
            const double v = std::bit_cast<float>(bits);
            map.values.at(x, y) = v;
            map.valid[static_cast<std::size_t>(y) * width + x] = std::isfinite(v) ? 1 : 0;
        }
    }
    return map;
}

inline void write_pfm(const std::filesystem::path& path, const DepthMap& map) {
    write_file_bytes(path, encode_pfm(map));
}

inline DepthMap read_pfm(const std::filesystem::path& path) {
    return decode_pfm(read_file_bytes(path), path.string());
}

// ---------------------------------------------------------------------------
// Feature embeddings: "FEMB" + u32 dim + f32 x dim.

inline Bytes encode_femb(const FeatureEmbedding& e) {
    Bytes out;
    put_bytes(out, "FEMB");
    put_u32(out, static_cast<std::uint32_t>(e.dim()));
    for (double v : e.values) put_f32(out, static_cast<float>(v));
    return out;
}

inline FeatureEmbedding decode_femb(const Bytes& data, const std::string& what = "femb") {
    ByteReader r(data, what);
    if (r.str(4) != "FEMB") throw FormatError(what + ": bad magic");
    const std::uint32_t dim = r.u32();
    if (r.remaining() != static_cast<std::size_t>(dim) * 4) {
        throw FormatError(what + ": payload byte count mismatch (expected " + std::to_string(dim * 4ull) +
                          ", got " + std::to_string(r.remaining()) + ")");
    }
    FeatureEmbedding e;
    e.values.resize(dim);
    for (auto& v : e.values) v = r.f32();
    return e;
}

inline void write_femb(const std::filesystem::path& path, const FeatureEmbedding& e) {
    write_file_bytes(path, encode_femb(e));
}

inline FeatureEmbedding read_femb(const std::filesystem::path& path) {
    return decode_femb(read_file_bytes(path), path.string());
}

// ---------------------------------------------------------------------------
// Cloud checkpoint: "SIDG1" + u32 count + 14 f32 per Gaussian in field order.

inline Bytes encode_checkpoint(const GaussianCloud& cloud) {
    Bytes out;
    put_bytes(out, "SIDG1");
    put_u32(out, static_cast<std::uint32_t>(cloud.size()));
    for (Gaussian3D g : cloud.gaussians) {
        for_each_param(g, [&](double& v, ParamGroup) { put_f32(out, static_cast<float>(v)); });
    }
    return out;
}

inline GaussianCloud decode_checkpoint(const Bytes& data, const std::string& what = "checkpoint") {
    ByteReader r(data, what);
    if (r.str(5) != "SIDG1") throw FormatError(what + ": bad magic");
    const std::uint32_t count = r.u32();
    const std::size_t expected = static_cast<std::size_t>(count) * kParamsPerGaussian * 4;
    if (r.remaining() != expected) {
        throw FormatError(what + ": payload byte count mismatch (expected " + std::to_string(expected) + ", got " +
                          std::to_string(r.remaining()) + ")");
    }
    GaussianCloud cloud;
    cloud.gaussians.resize(count);
    for (auto& g : cloud.gaussians) {
        for_each_param(g, [&](double& v, ParamGroup) { v = r.f32(); });
    }
    return cloud;
}

inline void save_checkpoint(const std::filesystem::path& path, const GaussianCloud& cloud) {
    write_file_bytes(path, encode_checkpoint(cloud));
}

inline GaussianCloud load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(read_file_bytes(path), path.string());
}

// Rounds every parameter to float, matching what a checkpoint stores.
inline GaussianCloud quantize_to_f32(GaussianCloud cloud) {
    for (auto& g : cloud.gaussians) {
        for_each_param(g, [](double& v, ParamGroup) { v = static_cast<float>(v); });
    }
    return cloud;
}

} // namespace sparsesplat
