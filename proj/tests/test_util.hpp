#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "sparsesplat/rasterizer.hpp"
#include "sparsesplat/scene_model.hpp"

namespace sparsesplat::test {

inline Camera axis_camera(int w, int h, double f) {
    Camera cam;
    cam.fx = cam.fy = f;
    cam.cx = 0.5 * (w - 1);
    cam.cy = 0.5 * (h - 1);
    cam.width = w;
    cam.height = h;
    return cam;
}

// Camera at `eye` looking at the origin.
inline Camera looking_camera(int w, int h, double f, const Vec3& eye) {
    Camera cam = axis_camera(w, h, f);
    cam.world_to_camera = Camera::look_at(eye, Vec3::Zero(), Vec3(0, -1, 0));
    return cam;
}

// Identity-rotation camera three units behind the origin.
inline Camera front_camera(int w, int h, double f) {
    Camera cam = axis_camera(w, h, f);
    cam.world_to_camera.translation = Vec3(0, 0, 3);
    return cam;
}

// Random Gaussians in a box around the origin (in view of front_camera).
inline GaussianCloud random_cloud(std::mt19937_64& rng, int n, double opacity_max = 0.9) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    GaussianCloud cloud;
    for (int i = 0; i < n; ++i) {
        Gaussian3D g;
        g.position = Vec3(0.5 * u(rng), 0.5 * u(rng), 0.5 * u(rng));
        g.log_scale = Vec3(std::log(0.08 + 0.15 * u01(rng)), std::log(0.08 + 0.15 * u01(rng)),
                           std::log(0.08 + 0.15 * u01(rng)));
        g.rotation = Vec4(u(rng), u(rng), u(rng), u(rng));
        if (g.rotation.norm() < 0.2) g.rotation = Vec4(1, 0, 0, 0);
        const double a = 0.1 + (opacity_max - 0.1) * u01(rng);
        g.opacity_logit = logit(a);
        g.color = Vec3(u01(rng), u01(rng), u01(rng));
        cloud.gaussians.push_back(g);
    }
    return cloud;
}

// Relative error with a small absolute floor in the denominator.
inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradCheckResult {
    int total = 0;
    int passed = 0;
    double worst = 0.0;
    double pass_fraction() const { return total ? static_cast<double>(passed) / total : 1.0; }
};

// Compares analytic gradients against central differences of `loss` over every
// scalar of the cloud.
inline GradCheckResult check_cloud_gradient(GaussianCloud cloud, const ParamGrads& analytic,
                                            const std::function<double(const GaussianCloud&)>& loss,
                                            double h, double tol) {
    GradCheckResult res;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        std::vector<double*> params;
        for_each_param(cloud.gaussians[i], [&](double& v, ParamGroup) { params.push_back(&v); });
        std::vector<double> grads;
        Gaussian3D ga = analytic.grads[i];
        for_each_param(ga, [&](double& v, ParamGroup) { grads.push_back(v); });
        for (std::size_t k = 0; k < params.size(); ++k) {
            const double saved = *params[k];
            *params[k] = saved + h;
            const double lp = loss(cloud);
            *params[k] = saved - h;
            const double lm = loss(cloud);
            *params[k] = saved;
            const double numeric = (lp - lm) / (2.0 * h);
            const double err = rel_error(grads[k], numeric);
            ++res.total;
            if (err < tol) ++res.passed;
            res.worst = std::max(res.worst, err);
        }
    }
    return res;
}

} // namespace sparsesplat::test
