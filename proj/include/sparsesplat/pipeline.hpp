#pragma once

#include <fstream>
#include <utility>
#include <vector>

#include "colmap.hpp"
#include "config.hpp"
#include "formats.hpp"
#include "priors.hpp"
#include "split.hpp"

namespace sparsesplat {

struct PreparedRun {
    LoadedScene loaded;
    PriorSource priors;
};

inline PriorSource make_prior_source(const RunConfig& c) {
    if (c.prior_backend == "file") return PriorSource::from_directory(c.resolved_prior_dir());
    if (c.prior_backend == "service") return PriorSource::from_service(c.prior_endpoint, c.prior_timeout);
    return PriorSource::from_oracle(load_checkpoint(c.resolved_gt_cloud()));
}

// Loads the scene, applies the optional LLFF split and opens the prior backend.
inline PreparedRun prepare_run(const RunConfig& c) {
    c.validate(true);
    LoadedScene loaded = load_colmap_scene(c.scene_dir);
    if (c.train_views > 0) {
        const Split s = make_llff_split(static_cast<int>(loaded.scene.view_count()), c.train_views);
        loaded.scene.train = s.train;
        loaded.scene.test = s.test;
    }
    PriorSource priors = make_prior_source(c);
    return {std::move(loaded), std::move(priors)};
}

struct CropRect {
    int id = 0;
    int x = 0, y = 0, size = 0;
};

// Non-overlapping square crops in row-major order, anchored at the top-left corner.
inline std::vector<CropRect> crop_grid(int width, int height, int size) {
    if (size < ToyExtractor::kMinPatch) throw InvalidInputError("crop size must be at least 8");
    std::vector<CropRect> out;
    for (int y = 0; y + size <= height; y += size) {
        for (int x = 0; x + size <= width; x += size) out.push_back({static_cast<int>(out.size()), x, y, size});
    }
    return out;
}

inline constexpr const char* kCropManifest = "crops.txt";

// Writes <stem>.pfm and <stem>.<crop>.femb for every view plus a crop manifest.
inline void precompute_priors(const Scene& scene, const PriorSource& priors, const std::filesystem::path& out_dir,
                              int crop_size) {
    std::filesystem::create_directories(out_dir);
    std::ofstream manifest(out_dir / kCropManifest);
    if (!manifest) throw IoError("cannot write " + (out_dir / kCropManifest).string());
    manifest << "# stem crop_id x y size\n";
    for (std::size_t v = 0; v < scene.view_count(); ++v) {
        const std::string& stem = scene.names.at(v);
        const Image& img = scene.images[v];
        write_pfm(out_dir / (stem + ".pfm"), priors.get_depth(scene.cameras[v], stem, &img));
        for (const CropRect& c : crop_grid(img.width, img.height, crop_size)) {
            const Image patch = img.crop(c.x, c.y, c.size, c.size);
            write_femb(out_dir / (stem + "." + std::to_string(c.id) + ".femb"), priors.get_features(patch, stem, c.id));
            manifest << stem << ' ' << c.id << ' ' << c.x << ' ' << c.y << ' ' << c.size << '\n';
        }
    }
    if (!manifest) throw IoError("failed writing " + (out_dir / kCropManifest).string());
}

} // namespace sparsesplat
