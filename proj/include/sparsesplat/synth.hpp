#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "colmap.hpp"
#include "formats.hpp"
#include "png_io.hpp"
#include "rasterizer.hpp"
#include "split.hpp"

namespace sparsesplat {

struct SynthSpec {
    int gaussians = 200;
    int views = 8;
    int width = 64;
    int height = 64;
    std::uint64_t seed = 0;
    int train_views = 3;
    double radius = 2.5;         // camera distance from the origin
    double arc_degrees = 40.0;   // total sweep of the camera arc
    double elevation = 0.6;      // camera height above the arc plane
    double fov_degrees = 45.0;   // horizontal field of view
    double point_jitter = 0.02;  // std-dev of the noise on the exported SfM points
};

inline constexpr const char* kSynthCloudFile = "gt_cloud.sidg";
inline constexpr const char* kSynthDepthDir = "depth";

inline std::string synth_view_name(int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "view_%03d", i);
    return buf;
}

// Random ground-truth cloud inside the unit box centred at the origin.
inline GaussianCloud synth_cloud(int count, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> box(-0.5, 0.5);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    GaussianCloud cloud;
    for (int i = 0; i < count; ++i) {
        Gaussian3D g;
        g.position = Vec3(box(rng), box(rng), box(rng));
        for (int k = 0; k < 3; ++k) g.log_scale[k] = std::log(0.03 + 0.07 * u01(rng));
        Vec4 q(normal(rng), normal(rng), normal(rng), normal(rng));
        g.rotation = q.norm() > 1e-6 ? Vec4(q.normalized()) : Vec4(1, 0, 0, 0);
        g.opacity_logit = logit(0.5 + 0.45 * u01(rng));
        g.color = Vec3(u01(rng), u01(rng), u01(rng));
        cloud.gaussians.push_back(g);
    }
    return quantize_to_f32(std::move(cloud));
}

inline std::vector<Camera> synth_cameras(const SynthSpec& spec) {
    std::vector<Camera> cams;
    const double pi = std::acos(-1.0);
    const double f = 0.5 * spec.width / std::tan(0.5 * spec.fov_degrees * pi / 180.0);
    for (int i = 0; i < spec.views; ++i) {
        const double frac = spec.views == 1 ? 0.5 : static_cast<double>(i) / (spec.views - 1);
        const double angle = (frac - 0.5) * spec.arc_degrees * pi / 180.0;
        const Vec3 eye(spec.radius * std::sin(angle), -spec.elevation, -spec.radius * std::cos(angle));
        Camera c;
        c.fx = c.fy = f;
        c.cx = 0.5 * (spec.width - 1);
        c.cy = 0.5 * (spec.height - 1);
        c.width = spec.width;
        c.height = spec.height;
        c.world_to_camera = Camera::look_at(eye, Vec3::Zero(), Vec3(0, -1, 0));
        cams.push_back(c);
    }
    return cams;
}

struct SynthResult {
    Scene scene;
    GaussianCloud ground_truth;
    std::vector<SfMPoint> points;
};

// Builds the scene in memory. Images are snapped to 8 bits, as stored on disk.
inline SynthResult make_synth_scene(const SynthSpec& spec) {
    if (spec.gaussians < 1 || spec.views < 1 || spec.width < 1 || spec.height < 1) {
        throw InvalidInputError("synth: counts and sizes must be >= 1");
    }
    if (spec.train_views < 1 || spec.train_views > spec.views) {
        throw InvalidInputError("synth: train_views must be in [1, views]");
    }
    std::mt19937_64 rng(spec.seed);
    SynthResult out;
    out.ground_truth = synth_cloud(spec.gaussians, rng);
    out.scene.cameras = synth_cameras(spec);
    for (int i = 0; i < spec.views; ++i) {
        const RenderOutput r = render(out.ground_truth, out.scene.cameras[i]);
        out.scene.images.push_back(quantize_8bit(r.color));
        out.scene.names.push_back(synth_view_name(i));
        out.scene.depth_priors.emplace_back(DepthMap(r.depth));
    }
    out.scene.feature_priors.resize(spec.views);
    out.scene.train = even_spacing(spec.views, spec.train_views);
    for (int i = 0; i < spec.views; ++i) {
        if (std::find(out.scene.train.begin(), out.scene.train.end(), i) == out.scene.train.end()) {
            out.scene.test.push_back(i);
        }
    }
    std::normal_distribution<double> jitter(0.0, spec.point_jitter);
    for (const auto& g : out.ground_truth.gaussians) {
        SfMPoint p;
        p.position = g.position + Vec3(jitter(rng), jitter(rng), jitter(rng));
        for (int c = 0; c < 3; ++c) p.color[c] = to_byte(g.color[c]) / 255.0;
        out.points.push_back(p);
    }
    return out;
}

// Writes the ingestible layout plus depth/<stem>.pfm and the ground-truth cloud.
inline SynthResult synth_scene(const SynthSpec& spec, const std::filesystem::path& dir) {
    SynthResult res = make_synth_scene(spec);
    save_colmap_scene(dir, res.scene, res.points);
    std::filesystem::create_directories(dir / kSynthDepthDir);
    for (std::size_t v = 0; v < res.scene.view_count(); ++v) {
        write_pfm(dir / kSynthDepthDir / (res.scene.names[v] + ".pfm"), *res.scene.depth_priors[v]);
    }
    save_checkpoint(dir / kSynthCloudFile, res.ground_truth);
    return res;
}

} // namespace sparsesplat
