#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "errors.hpp"

namespace sparsesplat {

// Row-major, channel-interleaved image of doubles. Color images hold RGB in [0,1];
// single-channel images carry depth, accumulated alpha and gradient maps.
struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, int c, double fill = 0.0)
        : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }

    double& at(int x, int y, int c = 0) {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    double at(int x, int y, int c = 0) const {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }

    bool same_shape(const Image& o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }

    // Sub-rectangle copy; caller guarantees bounds.
    Image crop(int x0, int y0, int w, int h) const {
        Image out(w, h, channels);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                for (int c = 0; c < channels; ++c) {
                    out.at(x, y, c) = at(x0 + x, y0 + y, c);
                }
            }
        }
        return out;
    }
};

inline void require_same_shape(const Image& a, const Image& b, const std::string& what) {
    if (!a.same_shape(b)) {
        throw DimensionMismatchError(what + ": shape " + std::to_string(a.width) + "x" + std::to_string(a.height) +
                                     "x" + std::to_string(a.channels) + " vs " + std::to_string(b.width) + "x" +
                                     std::to_string(b.height) + "x" + std::to_string(b.channels));
    }
}

// Relative depth prior for one view. `valid` is per-pixel (1 = usable).
struct DepthMap {
    Image values; // single channel
    std::vector<std::uint8_t> valid;

    DepthMap() = default;
    explicit DepthMap(Image v) : values(std::move(v)), valid(values.pixel_count(), 1) {}

    int width() const { return values.width; }
    int height() const { return values.height; }
};

struct FeatureEmbedding {
    std::vector<double> values;

    std::size_t dim() const { return values.size(); }
};

} // namespace sparsesplat
