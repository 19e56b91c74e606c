#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <vector>

#include "image.hpp"
#include "math.hpp"
#include "scene_model.hpp"

namespace sparsesplat {

// Isotropic low-pass floor added to every projected covariance (pixels^2).
inline constexpr double kCov2Floor = 0.3;
inline constexpr double kAlphaMax = 0.99;
inline constexpr double kAlphaMin = 1.0 / 255.0;
// Below this accumulated weight a pixel reports the far plane as its depth.
inline constexpr double kDepthAlphaEps = 1e-6;
// Mahalanobis radius beyond which even an opaque splat falls below kAlphaMin.
inline const double kMaxExtentSigma = std::sqrt(2.0 * std::log(255.0));

struct Projected2D {
    Vec2 mean2 = Vec2::Zero();
    Mat2 cov2 = Mat2::Identity();
    double view_depth = 0.0;
    std::size_t gaussian_index = 0;
};

// Pinhole projection of a Gaussian (EWA splatting). Returns std::nullopt when the
// splat lies at or in front of the near plane, or when its footprint (extent_sigma
// Mahalanobis radius) misses every pixel.
inline std::optional<Projected2D> project(const Camera& cam, const Vec3& position, const Mat3& cov3,
                                          double extent_sigma = kMaxExtentSigma) {
    if (!position.allFinite() || !cov3.allFinite()) {
        throw InvalidInputError("project: non-finite position or covariance");
    }
    const Mat3 w = cam.world_to_camera.rotation_matrix();
    const Vec3 t = w * position + cam.world_to_camera.translation;
    if (!(t.z() > cam.near)) return std::nullopt;

    const double inv_z = 1.0 / t.z();
    Mat23 j;
    j << cam.fx * inv_z, 0.0, -cam.fx * t.x() * inv_z * inv_z, 0.0, cam.fy * inv_z, -cam.fy * t.y() * inv_z * inv_z;
    const Mat23 tm = j * w;
    Mat2 cov2 = tm * cov3 * tm.transpose();
    cov2(0, 1) = cov2(1, 0) = 0.5 * (cov2(0, 1) + cov2(1, 0));
    cov2(0, 0) += kCov2Floor;
    cov2(1, 1) += kCov2Floor;

    Projected2D out;
    out.mean2 = Vec2(cam.fx * t.x() * inv_z + cam.cx, cam.fy * t.y() * inv_z + cam.cy);
    out.cov2 = cov2;
    out.view_depth = t.z();

    const double ex = extent_sigma * std::sqrt(cov2(0, 0));
    const double ey = extent_sigma * std::sqrt(cov2(1, 1));
    if (std::floor(out.mean2.x() + ex) < 0 || std::ceil(out.mean2.x() - ex) > cam.width - 1 ||
        std::floor(out.mean2.y() + ey) < 0 || std::ceil(out.mean2.y() - ey) > cam.height - 1) {
        return std::nullopt;
    }
    return out;
}

// One splat that survived projection, with everything compositing needs.
struct SplatRecord {
    std::size_t gaussian_index = 0;
    Vec2 mean2 = Vec2::Zero();
    Mat2 conic = Mat2::Identity(); // inverse of the regularized cov2
    double opacity = 0.0;          // activated
    double depth = 0.0;
    Vec3 color = Vec3::Zero();
    int x0 = 0, x1 = -1, y0 = 0, y1 = -1; // inclusive pixel bounds
};

// One non-skipped blending event at a pixel.
struct BlendRecord {
    std::uint32_t splat = 0;
    double alpha = 0.0;
    double transmittance = 1.0; // before this splat
    bool clipped = false;       // alpha was clamped to kAlphaMax
};

struct RenderContext {
    Camera camera;
    GaussianCloud cloud;
    Vec3 background = Vec3::Zero();
    std::vector<SplatRecord> splats;          // sorted front to back
    std::vector<std::size_t> pixel_offsets;   // CSR into blends, size pixels + 1
    std::vector<BlendRecord> blends;
    std::vector<double> final_transmittance;  // per pixel
    std::vector<double> weighted_depth;       // sum_i w_i z_i, before normalization
};

struct RenderOutput {
    Image color;     // W x H x 3
    Image depth;     // W x H x 1, weight-normalized
    Image alpha_acc; // W x H x 1
    RenderContext ctx;
};

// Per-Gaussian gradients, laid out like the cloud.
struct ParamGrads {
    std::vector<Gaussian3D> grads;

    std::size_t size() const { return grads.size(); }
};

namespace detail {

inline constexpr int kTileSize = 16;

inline Mat2 inverse2(const Mat2& m) {
    const double det = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
    if (!(det > 0.0) || !std::isfinite(det)) {
        throw Error("render: singular projected covariance");
    }
    Mat2 inv;
    inv << m(1, 1) / det, -m(0, 1) / det, -m(1, 0) / det, m(0, 0) / det;
    return inv;
}

} // namespace detail

inline RenderOutput render(const GaussianCloud& cloud, const Camera& cam, const Vec3& background = Vec3::Zero()) {
    if (cloud.empty()) throw InvalidInputError("render: empty cloud");
    if (const auto bad = camera_violations(cam); !bad.empty()) {
        throw InvalidInputError("render: invalid camera: " + bad.front());
    }
    const int width = cam.width;
    const int height = cam.height;

    RenderOutput out;
    RenderContext& ctx = out.ctx;
    ctx.camera = cam;
    ctx.cloud = cloud;
    ctx.background = background;

    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Gaussian3D& g = cloud.gaussians[i];
        const double a = g.opacity();
        if (!(a >= kAlphaMin)) continue;
        const Mat3 cov3 = covariance_from_params(g.log_scale, g.rotation);
        const auto proj = project(cam, g.position, cov3);
        if (!proj) continue;
        // exact footprint of alpha >= kAlphaMin for this opacity
        const double radius = std::sqrt(std::max(0.0, 2.0 * std::log(255.0 * a)));
        const double ex = radius * std::sqrt(proj->cov2(0, 0));
        const double ey = radius * std::sqrt(proj->cov2(1, 1));
        SplatRecord s;
        s.gaussian_index = i;
        s.mean2 = proj->mean2;
        s.conic = detail::inverse2(proj->cov2);
        s.opacity = a;
        s.depth = proj->view_depth;
        s.color = g.color;
        s.x0 = std::max(0, static_cast<int>(std::ceil(s.mean2.x() - ex)));
        s.x1 = std::min(width - 1, static_cast<int>(std::floor(s.mean2.x() + ex)));
        s.y0 = std::max(0, static_cast<int>(std::ceil(s.mean2.y() - ey)));
        s.y1 = std::min(height - 1, static_cast<int>(std::floor(s.mean2.y() + ey)));
        if (s.x0 > s.x1 || s.y0 > s.y1) continue;
        ctx.splats.push_back(s);
    }
    std::stable_sort(ctx.splats.begin(), ctx.splats.end(), [](const SplatRecord& a, const SplatRecord& b) {
        if (a.depth != b.depth) return a.depth < b.depth;
        return a.gaussian_index < b.gaussian_index;
    });

    // bin splats into tiles; each tile list stays in depth order
    const int tiles_x = (width + detail::kTileSize - 1) / detail::kTileSize;
    const int tiles_y = (height + detail::kTileSize - 1) / detail::kTileSize;
    std::vector<std::vector<std::uint32_t>> tiles(static_cast<std::size_t>(tiles_x) * tiles_y);
    for (std::uint32_t k = 0; k < ctx.splats.size(); ++k) {
        const SplatRecord& s = ctx.splats[k];
        for (int ty = s.y0 / detail::kTileSize; ty <= s.y1 / detail::kTileSize; ++ty) {
            for (int tx = s.x0 / detail::kTileSize; tx <= s.x1 / detail::kTileSize; ++tx) {
                tiles[static_cast<std::size_t>(ty) * tiles_x + tx].push_back(k);
            }
        }
    }

    out.color = Image(width, height, 3);
    out.depth = Image(width, height, 1);
    out.alpha_acc = Image(width, height, 1);
    const std::size_t pixels = static_cast<std::size_t>(width) * height;
    ctx.pixel_offsets.assign(pixels + 1, 0);
    ctx.final_transmittance.assign(pixels, 1.0);
    ctx.weighted_depth.assign(pixels, 0.0);

    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * width + x;
            ctx.pixel_offsets[p] = ctx.blends.size();
            const auto& list = tiles[static_cast<std::size_t>(y / detail::kTileSize) * tiles_x + x / detail::kTileSize];
            double transmittance = 1.0;
            Vec3 c = Vec3::Zero();
            double d = 0.0;
            double acc = 0.0;
            for (std::uint32_t k : list) {
                const SplatRecord& s = ctx.splats[k];
                if (x < s.x0 || x > s.x1 || y < s.y0 || y > s.y1) continue;
                const double dx = x - s.mean2.x();
                const double dy = y - s.mean2.y();
                const double power =
                    -0.5 * (s.conic(0, 0) * dx * dx + 2.0 * s.conic(0, 1) * dx * dy + s.conic(1, 1) * dy * dy);
                double alpha = s.opacity * std::exp(power);
                if (alpha < kAlphaMin) continue;
                bool clipped = false;
                if (alpha > kAlphaMax) {
                    alpha = kAlphaMax;
                    clipped = true;
                }
                const double w = alpha * transmittance;
                c += w * s.color;
                d += w * s.depth;
                acc += w;
                ctx.blends.push_back({k, alpha, transmittance, clipped});
                transmittance *= 1.0 - alpha;
            }
            c += transmittance * background;
            out.color.at(x, y, 0) = c.x();
            out.color.at(x, y, 1) = c.y();
            out.color.at(x, y, 2) = c.z();
            out.alpha_acc.at(x, y) = acc;
            out.depth.at(x, y) = acc > kDepthAlphaEps ? d / acc : cam.far;
            ctx.final_transmittance[p] = transmittance;
            ctx.weighted_depth[p] = d;
        }
    }
    ctx.pixel_offsets[pixels] = ctx.blends.size();
    return out;
}

// Reverse-mode pass through compositing and projection. `dl_dcolor` is W x H x 3 and
// `dl_ddepth` W x H x 1 (gradients w.r.t. the color and normalized depth outputs).
inline ParamGrads render_backward(const RenderOutput& fwd, const Image& dl_dcolor, const Image& dl_ddepth) {
    const RenderContext& ctx = fwd.ctx;
    const Camera& cam = ctx.camera;
    const int width = cam.width;
    const int height = cam.height;
    if (dl_dcolor.width != width || dl_dcolor.height != height || dl_dcolor.channels != 3) {
        throw DimensionMismatchError("render_backward: color gradient map has the wrong shape");
    }
    if (dl_ddepth.width != width || dl_ddepth.height != height || dl_ddepth.channels != 1) {
        throw DimensionMismatchError("render_backward: depth gradient map has the wrong shape");
    }

    // screen-space accumulators per retained splat
    struct ScreenGrad {
        Vec2 mean2 = Vec2::Zero();
        Mat2 conic = Mat2::Zero();
        double opacity = 0.0;
        Vec3 color = Vec3::Zero();
        double depth = 0.0;
    };
    std::vector<ScreenGrad> sg(ctx.splats.size());

    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * width + x;
            const Vec3 g_color(dl_dcolor.at(x, y, 0), dl_dcolor.at(x, y, 1), dl_dcolor.at(x, y, 2));
            const double g_depth_out = dl_ddepth.at(x, y);
            const double acc = fwd.alpha_acc.at(x, y);
            double g_d = 0.0; // w.r.t. the unnormalized weighted depth sum
            double g_acc = 0.0;
            if (acc > kDepthAlphaEps) {
                g_d = g_depth_out / acc;
                g_acc = -g_depth_out * fwd.depth.at(x, y) / acc;
            }
            const double t_final = ctx.final_transmittance[p];
            Vec3 suffix_c = t_final * ctx.background;
            double suffix_d = 0.0;
            const std::size_t begin = ctx.pixel_offsets[p];
            const std::size_t end = ctx.pixel_offsets[p + 1];
            for (std::size_t r = end; r-- > begin;) {
                const BlendRecord& b = ctx.blends[r];
                const SplatRecord& s = ctx.splats[b.splat];
                ScreenGrad& g = sg[b.splat];
                const double w = b.alpha * b.transmittance;
                const double one_minus = 1.0 - b.alpha;
                g.color += g_color * w;
                g.depth += g_d * w;
                const double g_alpha = g_color.dot(s.color * b.transmittance - suffix_c / one_minus) +
                                       g_d * (s.depth * b.transmittance - suffix_d / one_minus) +
                                       g_acc * t_final / one_minus;
                suffix_c += s.color * w;
                suffix_d += s.depth * w;
                if (b.clipped) continue;
                const double dx = x - s.mean2.x();
                const double dy = y - s.mean2.y();
                const double gauss = b.alpha / s.opacity;
                g.opacity += g_alpha * gauss;
                const double g_power = g_alpha * b.alpha;
                // power = -1/2 d^T C d with d = pixel - mean2
                g.mean2.x() += g_power * (s.conic(0, 0) * dx + s.conic(0, 1) * dy);
                g.mean2.y() += g_power * (s.conic(1, 0) * dx + s.conic(1, 1) * dy);
                g.conic(0, 0) += -0.5 * dx * dx * g_power;
                g.conic(0, 1) += -0.5 * dx * dy * g_power;
                g.conic(1, 0) += -0.5 * dx * dy * g_power;
                g.conic(1, 1) += -0.5 * dy * dy * g_power;
            }
        }
    }

    ParamGrads out;
    out.grads.assign(ctx.cloud.size(), zero_gaussian());
    const Mat3 w = cam.world_to_camera.rotation_matrix();
    for (std::size_t k = 0; k < ctx.splats.size(); ++k) {
        const SplatRecord& s = ctx.splats[k];
        const ScreenGrad& g = sg[k];
        const Gaussian3D& gauss = ctx.cloud.gaussians[s.gaussian_index];
        Gaussian3D& dst = out.grads[s.gaussian_index];

        dst.color = g.color;
        dst.opacity_logit = g.opacity * s.opacity * (1.0 - s.opacity);

        // conic = cov2^-1  =>  dL/dcov2 = -C G C
        const Mat2 g_cov2 = -(s.conic * g.conic * s.conic);

        const Vec3 t = w * gauss.position + cam.world_to_camera.translation;
        const double iz = 1.0 / t.z();
        const double iz2 = iz * iz;
        Mat23 j;
        j << cam.fx * iz, 0.0, -cam.fx * t.x() * iz2, 0.0, cam.fy * iz, -cam.fy * t.y() * iz2;
        const Mat23 tm = j * w;

        const Mat3 rot = rotation_from_quaternion(gauss.rotation);
        const Vec3 raw_scale = gauss.log_scale.array().exp().matrix();
        const Vec3 scale = raw_scale.array().max(kMinScale).matrix();
        const Mat3 m = rot * scale.asDiagonal();
        const Mat3 cov3 = m * m.transpose();

        const Mat3 g_cov3 = tm.transpose() * g_cov2 * tm;
        const Mat23 g_tm = 2.0 * g_cov2 * tm * cov3;
        const Mat23 g_j = g_tm * w.transpose();

        Vec3 g_t = Vec3::Zero();
        g_t.x() += g.mean2.x() * cam.fx * iz;
        g_t.y() += g.mean2.y() * cam.fy * iz;
        g_t.z() += -g.mean2.x() * cam.fx * t.x() * iz2 - g.mean2.y() * cam.fy * t.y() * iz2;
        g_t.z() += g.depth;
        g_t.x() += g_j(0, 2) * (-cam.fx * iz2);
        g_t.y() += g_j(1, 2) * (-cam.fy * iz2);
        g_t.z() += g_j(0, 0) * (-cam.fx * iz2) + g_j(0, 2) * (2.0 * cam.fx * t.x() * iz2 * iz) +
                   g_j(1, 1) * (-cam.fy * iz2) + g_j(1, 2) * (2.0 * cam.fy * t.y() * iz2 * iz);
        dst.position = w.transpose() * g_t;

        // Sigma = M M^T, M = R S
        const Mat3 g_m = 2.0 * g_cov3 * m;
        const Mat3 g_s = rot.transpose() * g_m;
        for (int a = 0; a < 3; ++a) {
            dst.log_scale[a] = raw_scale[a] > kMinScale ? g_s(a, a) * scale[a] : 0.0;
        }
        const Mat3 g_rot = g_m * scale.asDiagonal();
        dst.rotation = rotation_vjp(gauss.rotation, g_rot);
    }
    return out;
}

} // namespace sparsesplat
