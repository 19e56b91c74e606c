#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "errors.hpp"
#include "image.hpp"

namespace sparsesplat {

inline std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

// Snaps every value to the nearest 8-bit level, as a PNG round trip would.
inline Image quantize_8bit(Image img) {
    for (auto& v : img.data) v = to_byte(v) / 255.0;
    return img;
}

// Reads any PNG as 8-bit RGB, normalized to [0,1].
inline Image read_png(const std::filesystem::path& path) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str())) {
        throw IoError("cannot read PNG " + path.string() + ": " + img.message);
    }
    img.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&img);
        throw IoError("cannot decode PNG " + path.string() + ": " + img.message);
    }
    Image out(static_cast<int>(img.width), static_cast<int>(img.height), 3);
    for (std::size_t i = 0; i < buf.size(); ++i) out.data[i] = buf[i] / 255.0;
    return out;
}

// Writes an RGB (or gray) image as 8-bit PNG; values are clamped to [0,1].
inline void write_png(const std::filesystem::path& path, const Image& image) {
    if (image.channels != 3 && image.channels != 1) throw InvalidInputError("write_png: need 1 or 3 channels");
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width);
    img.height = static_cast<png_uint_32>(image.height);
    img.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    std::vector<std::uint8_t> buf(image.size());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = to_byte(image.data[i]);
    if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr)) {
        throw IoError("cannot write PNG " + path.string() + ": " + img.message);
    }
}

} // namespace sparsesplat
