#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "errors.hpp"
#include "image.hpp"

namespace sparsesplat {

// Deterministic stand-in for a learned patch encoder: per-channel mean removal
// followed by average pooling on 2x2, 4x4 and 8x8 cell grids, flattened
// level-major, then cell row-major, then channel, and scaled by 1/sqrt(dim) so a
// squared embedding distance is a mean over features. The map is linear, so its
// vector-Jacobian product is exact.
class ToyExtractor {
public:
    static constexpr std::array<int, 3> kGrids = {2, 4, 8};
    static constexpr int kMinPatch = 8;

    static std::size_t dim(int channels = 3) {
        std::size_t d = 0;
        for (int g : kGrids) d += static_cast<std::size_t>(g) * g * channels;
        return d;
    }

    FeatureEmbedding embed(const Image& patch) const {
        check(patch);
        const Image centered = center(patch);
        FeatureEmbedding out;
        const double norm = 1.0 / std::sqrt(static_cast<double>(dim(patch.channels)));
        out.values.reserve(dim(patch.channels));
        for (int g : kGrids) {
            for (int cy = 0; cy < g; ++cy) {
                for (int cx = 0; cx < g; ++cx) {
                    const Cell cell = cell_of(patch, g, cx, cy);
                    for (int c = 0; c < patch.channels; ++c) {
                        double s = 0.0;
                        for (int y = cell.y0; y < cell.y1; ++y) {
                            for (int x = cell.x0; x < cell.x1; ++x) s += centered.at(x, y, c);
                        }
                        out.values.push_back(norm * (s / cell.count()));
                    }
                }
            }
        }
        return out;
    }

    // Gradient of <g, embed(patch)> with respect to the patch.
    Image vjp(int width, int height, int channels, const std::vector<double>& g) const {
        Image shape(width, height, channels);
        check(shape);
        if (g.size() != dim(channels)) throw DimensionMismatchError("ToyExtractor::vjp: gradient length mismatch");
        Image u(width, height, channels);
        const double norm = 1.0 / std::sqrt(static_cast<double>(dim(channels)));
        std::size_t k = 0;
        for (int grid : kGrids) {
            for (int cy = 0; cy < grid; ++cy) {
                for (int cx = 0; cx < grid; ++cx) {
                    const Cell cell = cell_of(shape, grid, cx, cy);
                    for (int c = 0; c < channels; ++c, ++k) {
                        const double w = norm * g[k] / cell.count();
                        for (int y = cell.y0; y < cell.y1; ++y) {
                            for (int x = cell.x0; x < cell.x1; ++x) u.at(x, y, c) += w;
                        }
                    }
                }
            }
        }
        // mean removal is an orthogonal projection, hence self-adjoint
        return center(u);
    }

    // Bound K with |embed(p) - embed(q)| <= K |p - q| for patches of this size.
    static double lipschitz_bound(int width, int height, int channels = 3) {
        double s = 0.0;
        for (int g : kGrids) {
            const double min_cell = std::floor(static_cast<double>(width) / g) * std::floor(static_cast<double>(height) / g);
            s += 1.0 / min_cell;
        }
        return std::sqrt(s / static_cast<double>(dim(channels)));
    }

private:
    struct Cell {
        int x0, x1, y0, y1;
        double count() const { return static_cast<double>(x1 - x0) * (y1 - y0); }
    };

    static Cell cell_of(const Image& p, int g, int cx, int cy) {
        return Cell{cx * p.width / g, (cx + 1) * p.width / g, cy * p.height / g, (cy + 1) * p.height / g};
    }

    static void check(const Image& patch) {
        if (patch.width < kMinPatch || patch.height < kMinPatch) {
            throw InvalidInputError("ToyExtractor: patch must be at least 8x8, got " + std::to_string(patch.width) +
                                    "x" + std::to_string(patch.height));
        }
        if (patch.channels < 1) throw InvalidInputError("ToyExtractor: patch has no channels");
    }

    static Image center(const Image& p) {
        Image out = p;
        const double n = static_cast<double>(p.pixel_count());
        for (int c = 0; c < p.channels; ++c) {
            // shifted accumulation keeps constant channels exactly zero after centering
            const double ref = p.data[c];
            double shift = 0.0;
            for (std::size_t i = 0; i < p.pixel_count(); ++i) shift += p.data[i * p.channels + c] - ref;
            const double mean = ref + shift / n;
            for (std::size_t i = 0; i < p.pixel_count(); ++i) out.data[i * p.channels + c] -= mean;
        }
        return out;
    }
};

} // namespace sparsesplat
