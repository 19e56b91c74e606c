#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "image.hpp"
#include "math.hpp"

namespace sparsesplat {

// Activated scales never drop below this (world units).
inline constexpr double kMinScale = 1e-7;

struct Gaussian3D {
    Vec3 position = Vec3::Zero();
    Vec3 log_scale = Vec3::Zero();      // log of per-axis std-dev
    Vec4 rotation = Vec4(1, 0, 0, 0);   // (w, x, y, z), not necessarily unit
    double opacity_logit = 0.0;
    Vec3 color = Vec3::Zero();          // RGB, used as-is by the renderer

    Vec3 scale() const {
        return log_scale.array().exp().max(kMinScale).matrix();
    }
    double opacity() const { return sigmoid(opacity_logit); }
};

// Number of scalars in one Gaussian3D and how they are grouped for optimization.
inline constexpr int kParamsPerGaussian = 14;

enum class ParamGroup { position = 0, log_scale, rotation, opacity, color };
inline constexpr int kParamGroupCount = 5;

// Visits every scalar of a Gaussian in declaration order:
// fn(double& value, ParamGroup group).
template <typename G, typename Fn>
void for_each_param(G& g, Fn&& fn) {
    for (int k = 0; k < 3; ++k) fn(g.position[k], ParamGroup::position);
    for (int k = 0; k < 3; ++k) fn(g.log_scale[k], ParamGroup::log_scale);
    for (int k = 0; k < 4; ++k) fn(g.rotation[k], ParamGroup::rotation);
    fn(g.opacity_logit, ParamGroup::opacity);
    for (int k = 0; k < 3; ++k) fn(g.color[k], ParamGroup::color);
}

using ParamArray = std::array<double, kParamsPerGaussian>;

inline ParamArray param_array(Gaussian3D g) {
    ParamArray a{};
    int k = 0;
    for_each_param(g, [&](double& v, ParamGroup) { a[k++] = v; });
    return a;
}

inline void set_params(Gaussian3D& g, const ParamArray& a) {
    int k = 0;
    for_each_param(g, [&](double& v, ParamGroup) { v = a[k++]; });
}

// Group of each flat parameter index.
inline const std::array<ParamGroup, kParamsPerGaussian>& param_groups() {
    static const auto groups = [] {
        std::array<ParamGroup, kParamsPerGaussian> out{};
        Gaussian3D g;
        int k = 0;
        for_each_param(g, [&](double&, ParamGroup grp) { out[k++] = grp; });
        return out;
    }();
    return groups;
}

inline Gaussian3D zero_gaussian() {
    Gaussian3D g;
    for_each_param(g, [](double& v, ParamGroup) { v = 0.0; });
    return g;
}

struct GaussianCloud {
    std::vector<Gaussian3D> gaussians;
    std::uint64_t generation = 0; // bumped by every densify/prune pass

    std::size_t size() const { return gaussians.size(); }
    bool empty() const { return gaussians.empty(); }
};

// Sigma = R diag(s^2) R^T with s = max(exp(log_scale), kMinScale).
inline Mat3 covariance_from_params(const Vec3& log_scale, const Vec4& rotation) {
    const Mat3 r = rotation_from_quaternion(rotation);
    const Vec3 s = log_scale.array().exp().max(kMinScale).matrix();
    const Mat3 m = r * s.asDiagonal();
    Mat3 sigma = m * m.transpose();
    sigma = 0.5 * (sigma + sigma.transpose()).eval();
    return sigma;
}

// Rigid world-to-camera transform, x_cam = R(q) x_world + t.
struct Pose {
    Vec4 rotation = Vec4(1, 0, 0, 0);
    Vec3 translation = Vec3::Zero();

    Mat3 rotation_matrix() const { return rotation_from_quaternion(rotation); }
    Vec3 center() const { return -(rotation_matrix().transpose() * translation); }
};

struct Camera {
    double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
    int width = 0, height = 0;
    Pose world_to_camera;
    double near = 0.01;
    double far = 100.0;

    Vec3 center() const { return world_to_camera.center(); }

    static Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
        // camera looks down +z, y points down in the image
        const Vec3 forward = (target - eye).normalized();
        const Vec3 right = forward.cross(up).normalized();
        const Vec3 down = forward.cross(right);
        Mat3 r;
        r.row(0) = right.transpose();
        r.row(1) = down.transpose();
        r.row(2) = forward.transpose();
        Pose p;
        p.rotation = quaternion_from_rotation(r);
        const Mat3 rq = rotation_from_quaternion(p.rotation);
        p.translation = -(rq * eye);
        return p;
    }
};

// Returns a list of problems with a camera; empty when valid.
inline std::vector<std::string> camera_violations(const Camera& cam) {
    std::vector<std::string> out;
    if (!(cam.fx > 0) || !(cam.fy > 0)) out.push_back("focal lengths must be positive");
    if (!(cam.near > 0) || !(cam.far > cam.near)) out.push_back("clip planes need 0 < near < far");
    if (cam.width <= 0 || cam.height <= 0) out.push_back("image size must be positive");
    const double n = cam.world_to_camera.rotation.norm();
    if (!(n > 1e-12) || !std::isfinite(n)) {
        out.push_back("rotation quaternion is degenerate");
    } else {
        const Mat3 r = cam.world_to_camera.rotation_matrix();
        if (((r.transpose() * r) - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6) {
            out.push_back("rotation is not orthonormal");
        }
    }
    if (!cam.world_to_camera.translation.allFinite()) out.push_back("translation is not finite");
    return out;
}

struct Scene {
    std::vector<Camera> cameras;
    std::vector<Image> images;      // ground truth RGB in [0,1]
    std::vector<std::string> names; // image stems, used to locate prior files
    std::vector<std::optional<DepthMap>> depth_priors;
    // per view: crop id -> embedding
    std::vector<std::map<int, FeatureEmbedding>> feature_priors;
    std::vector<int> train;
    std::vector<int> test;

    std::size_t view_count() const { return cameras.size(); }
};

struct Violation {
    int view = -1; // -1 when the violation is not tied to a single view
    std::string field;
    std::string message;
};

inline std::vector<Violation> validate_scene(const Scene& scene) {
    std::vector<Violation> report;
    const int n = static_cast<int>(scene.cameras.size());
    if (static_cast<int>(scene.images.size()) != n) {
        report.push_back({-1, "images", "image count differs from camera count"});
    }
    for (int v = 0; v < n; ++v) {
        for (const auto& msg : camera_violations(scene.cameras[v])) {
            report.push_back({v, "camera", msg});
        }
        if (v < static_cast<int>(scene.images.size())) {
            const Image& img = scene.images[v];
            if (img.width != scene.cameras[v].width || img.height != scene.cameras[v].height) {
                report.push_back({v, "image", "image size " + std::to_string(img.width) + "x" +
                                                  std::to_string(img.height) + " does not match camera " +
                                                  std::to_string(scene.cameras[v].width) + "x" +
                                                  std::to_string(scene.cameras[v].height)});
            }
            if (img.channels != 3) report.push_back({v, "image", "image must have 3 channels"});
        }
        if (v < static_cast<int>(scene.depth_priors.size()) && scene.depth_priors[v]) {
            const DepthMap& d = *scene.depth_priors[v];
            if (d.width() != scene.cameras[v].width || d.height() != scene.cameras[v].height) {
                report.push_back({v, "depth_prior", "depth prior size does not match camera"});
            }
        }
    }
    std::set<int> train(scene.train.begin(), scene.train.end());
    for (int t : scene.test) {
        if (train.count(t)) report.push_back({t, "split", "view is in both train and test sets"});
    }
    for (int t : scene.train) {
        if (t < 0 || t >= n) report.push_back({t, "split", "train index out of range"});
    }
    for (int t : scene.test) {
        if (t < 0 || t >= n) report.push_back({t, "split", "test index out of range"});
    }
    return report;
}

} // namespace sparsesplat
