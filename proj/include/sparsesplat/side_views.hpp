#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "math.hpp"
#include "scene_model.hpp"

namespace sparsesplat {

struct SideViewSpec {
    int parent_a = 0;
    int parent_b = 1;
    double t = 0.5;      // 0 -> parent_a, 1 -> parent_b
    double jitter = 0.0; // fraction of the parent baseline
    std::uint64_t seed = 0;

    void validate() const {
        if (parent_a == parent_b) throw InvalidInputError("side view parents must be distinct");
        if (!(t >= 0.0 && t <= 1.0)) throw InvalidInputError("side view t must lie in [0, 1]");
        if (!(jitter >= 0.0)) throw InvalidInputError("side view jitter must be >= 0");
    }
};

struct SidePose {
    Camera camera;
    bool degenerate = false; // parents share a center and no jitter was requested
};

// Camera between two parents: centers interpolated linearly (plus a seeded offset of
// length jitter * baseline in a random direction), rotations by slerp. Intrinsics come
// from cam_a.
inline SidePose sample_side_pose(const Camera& cam_a, const Camera& cam_b, const SideViewSpec& spec) {
    spec.validate();
    SidePose out;
    out.camera = cam_a;
    const Vec3 ca = cam_a.center();
    const Vec3 cb = cam_b.center();
    const double baseline = (cb - ca).norm();
    if (baseline < 1e-12 && spec.jitter == 0.0) {
        out.degenerate = true;
        return out;
    }
    if (spec.jitter == 0.0 && spec.t == 0.0) return out;
    if (spec.jitter == 0.0 && spec.t == 1.0) {
        out.camera.world_to_camera = cam_b.world_to_camera;
        return out;
    }

    const Vec4 qa = normalized_quaternion(cam_a.world_to_camera.rotation);
    const Vec4 qb = normalized_quaternion(cam_b.world_to_camera.rotation);
    const Vec4 q = slerp(qa, qb, spec.t);

    Vec3 center = (1.0 - spec.t) * ca + spec.t * cb;
    if (spec.jitter > 0.0 && baseline > 0.0) {
        std::mt19937_64 rng(spec.seed);
        std::normal_distribution<double> n01;
        Vec3 dir;
        do {
            dir = Vec3(n01(rng), n01(rng), n01(rng));
        } while (dir.norm() < 1e-9);
        center += spec.jitter * baseline * dir.normalized();
    }
    out.camera.world_to_camera.rotation = q;
    out.camera.world_to_camera.translation = -(rotation_from_unit_quaternion(q) * center);
    return out;
}

// Closest other camera (by center distance) among `candidates`; -1 if none.
inline int nearest_view(const std::vector<Camera>& cameras, const std::vector<int>& candidates, int view) {
    const Vec3 c = cameras.at(view).center();
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (int k : candidates) {
        if (k == view) continue;
        const double d = (cameras.at(k).center() - c).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = k;
        }
    }
    return best;
}

// Per-iteration side-view sampling: a random training camera, its nearest training
// neighbour, t uniform in [t_min, t_max].
struct SideViewSampler {
    double t_min = 0.2;
    double t_max = 0.8;
    double jitter = 0.05;

    std::vector<SideViewSpec> sample(const std::vector<Camera>& cameras, const std::vector<int>& train, int count,
                                     std::mt19937_64& rng) const {
        std::vector<SideViewSpec> out;
        if (train.size() < 2) return out;
        std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
        std::uniform_real_distribution<double> ut(t_min, t_max);
        for (int i = 0; i < count; ++i) {
            SideViewSpec s;
            s.parent_a = train[pick(rng)];
            s.parent_b = nearest_view(cameras, train, s.parent_a);
            s.t = ut(rng);
            s.jitter = jitter;
            s.seed = rng();
            out.push_back(s);
        }
        return out;
    }
};

} // namespace sparsesplat
