#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "math.hpp"
#include "png_io.hpp"
#include "scene_model.hpp"

namespace sparsesplat {

// Sparse reconstruction point with RGB in [0,1].
struct SfMPoint {
    Vec3 position = Vec3::Zero();
    Vec3 color = Vec3::Zero();
};

struct LoadedScene {
    Scene scene;
    std::vector<SfMPoint> points;
    GaussianCloud cloud; // initial Gaussians, one per point
};

inline constexpr double kInitOpacity = 0.1;
inline constexpr int kInitNeighbors = 3;
// Scale used when a point has no neighbours at all.
inline constexpr double kIsolatedPointScale = 0.01;

// Mean distance from each point to its (up to) three nearest neighbours.
inline std::vector<double> mean_neighbor_distance(const std::vector<Vec3>& pts, int k = kInitNeighbors) {
    const std::size_t n = pts.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return pts[a].x() != pts[b].x() ? pts[a].x() < pts[b].x() : a < b;
    });
    std::vector<std::size_t> rank(n);
    for (std::size_t r = 0; r < n; ++r) rank[order[r]] = r;

    std::vector<double> out(n, kIsolatedPointScale);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> best; // ascending squared distances, at most k
        auto consider = [&](std::size_t j) {
            const double d2 = (pts[i] - pts[j]).squaredNorm();
            if (static_cast<int>(best.size()) < k || d2 < best.back()) {
                best.insert(std::upper_bound(best.begin(), best.end(), d2), d2);
                if (static_cast<int>(best.size()) > k) best.pop_back();
            }
        };
        auto bound = [&](std::size_t j) {
            const double dx = pts[j].x() - pts[i].x();
            return static_cast<int>(best.size()) == k && dx * dx > best.back();
        };
        for (std::size_t r = rank[i] + 1; r < n && !bound(order[r]); ++r) consider(order[r]);
        for (std::size_t r = rank[i]; r-- > 0 && !bound(order[r]);) consider(order[r]);
        if (!best.empty()) {
            double s = 0.0;
            for (double d2 : best) s += std::sqrt(d2);
            out[i] = std::max(s / best.size(), kMinScale);
        }
    }
    return out;
}

inline GaussianCloud init_cloud_from_points(const std::vector<SfMPoint>& points) {
    if (points.empty()) throw EmptyCloudError("cannot initialize Gaussians from an empty point set");
    std::vector<Vec3> pos;
    pos.reserve(points.size());
    for (const auto& p : points) pos.push_back(p.position);
    const std::vector<double> dist = mean_neighbor_distance(pos);
    GaussianCloud cloud;
    cloud.gaussians.reserve(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        Gaussian3D g;
        g.position = points[i].position;
        g.log_scale = Vec3::Constant(std::log(dist[i]));
        g.rotation = Vec4(1, 0, 0, 0);
        g.opacity_logit = logit(kInitOpacity);
        g.color = points[i].color;
        cloud.gaussians.push_back(g);
    }
    return cloud;
}

namespace detail {

// Lines of a COLMAP text file with their 1-based numbers; comments dropped,
// blank lines kept (an image's point list may be empty).
struct NumberedLine {
    int number;
    std::string text;
};

inline std::vector<NumberedLine> read_lines(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<NumberedLine> out;
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty() && line[0] == '#') continue;
        out.push_back({n, line});
    }
    return out;
}

inline bool blank(const std::string& s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

[[noreturn]] inline void malformed(const std::filesystem::path& file, int line, const std::string& why) {
    throw FormatError(file.filename().string() + ":" + std::to_string(line) + ": " + why);
}

template <typename... T>
void parse_fields(std::istringstream& ss, const std::filesystem::path& file, int line, T&... fields) {
    if (!(ss >> ... >> fields)) malformed(file, line, "malformed line");
}

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct Intrinsics {
    int width = 0, height = 0;
    double fx = 0, fy = 0, cx = 0, cy = 0;
};

} // namespace detail

// Reads split.txt lines "train i j k" / "test a b"; absent file => all views train.
inline void read_split(const std::filesystem::path& path, Scene& scene) {
    scene.train.clear();
    scene.test.clear();
    if (!std::filesystem::exists(path)) {
        for (std::size_t i = 0; i < scene.view_count(); ++i) scene.train.push_back(static_cast<int>(i));
        return;
    }
    for (const auto& [number, text] : detail::read_lines(path)) {
        if (detail::blank(text)) continue;
        std::istringstream ss(text);
        std::string key;
        ss >> key;
        std::vector<int>* dst = key == "train" ? &scene.train : key == "test" ? &scene.test : nullptr;
        if (dst == nullptr) detail::malformed(path, number, "expected 'train' or 'test'");
        int idx = 0;
        while (ss >> idx) {
            if (idx < 0 || idx >= static_cast<int>(scene.view_count())) {
                detail::malformed(path, number, "view index " + std::to_string(idx) + " out of range");
            }
            dst->push_back(idx);
        }
        if (!ss.eof()) detail::malformed(path, number, "malformed view index");
    }
}

inline void write_split(const std::filesystem::path& path, const Scene& scene) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "train";
    for (int i : scene.train) out << ' ' << i;
    out << "\ntest";
    for (int i : scene.test) out << ' ' << i;
    out << '\n';
}

// Loads cameras.txt, images.txt, points3D.txt, images/<name> and optional split.txt.
// Views are ordered by image name.
inline LoadedScene load_colmap_scene(const std::filesystem::path& dir) {
    using detail::malformed;
    const auto cam_path = dir / "cameras.txt";
    std::map<int, detail::Intrinsics> intrinsics;
    for (const auto& [number, text] : detail::read_lines(cam_path)) {
        if (detail::blank(text)) continue;
        std::istringstream ss(text);
        int id = 0;
        std::string model;
        detail::Intrinsics k;
        detail::parse_fields(ss, cam_path, number, id, model, k.width, k.height);
        if (model == "PINHOLE") {
            detail::parse_fields(ss, cam_path, number, k.fx, k.fy, k.cx, k.cy);
        } else if (model == "SIMPLE_PINHOLE") {
            detail::parse_fields(ss, cam_path, number, k.fx, k.cx, k.cy);
            k.fy = k.fx;
        } else {
            throw FormatError("cameras.txt:" + std::to_string(number) + ": unsupported camera model " + model);
        }
        if (intrinsics.count(id)) malformed(cam_path, number, "duplicate camera id " + std::to_string(id));
        intrinsics[id] = k;
    }

    struct ImageRecord {
        std::string name;
        Camera camera;
    };
    std::vector<ImageRecord> records;
    const auto img_path = dir / "images.txt";
    const auto lines = detail::read_lines(img_path);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const auto& [number, text] = lines[i];
        if (detail::blank(text)) continue;
        std::istringstream ss(text);
        int id = 0, cam_id = 0;
        Vec4 q;
        Vec3 t;
        std::string name;
        detail::parse_fields(ss, img_path, number, id, q[0], q[1], q[2], q[3], t[0], t[1], t[2], cam_id, name);
        const auto it = intrinsics.find(cam_id);
        if (it == intrinsics.end()) malformed(img_path, number, "unknown camera id " + std::to_string(cam_id));
        if (!q.allFinite() || !t.allFinite()) malformed(img_path, number, "non-finite pose");
        ++i; // the following line lists 2D observations and is ignored
        ImageRecord rec;
        rec.name = name;
        const auto& k = it->second;
        rec.camera.fx = k.fx;
        rec.camera.fy = k.fy;
        rec.camera.cx = k.cx;
        rec.camera.cy = k.cy;
        rec.camera.width = k.width;
        rec.camera.height = k.height;
        rec.camera.world_to_camera.rotation = q;
        rec.camera.world_to_camera.translation = t;
        records.push_back(std::move(rec));
    }
    std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) { return a.name < b.name; });

    LoadedScene out;
    for (const auto& rec : records) {
        out.scene.cameras.push_back(rec.camera);
        out.scene.names.push_back(std::filesystem::path(rec.name).stem().string());
        out.scene.images.push_back(read_png(dir / "images" / rec.name));
    }
    out.scene.depth_priors.resize(records.size());
    out.scene.feature_priors.resize(records.size());

    const auto pts_path = dir / "points3D.txt";
    for (const auto& [number, text] : detail::read_lines(pts_path)) {
        if (detail::blank(text)) continue;
        std::istringstream ss(text);
        long long id = 0;
        SfMPoint p;
        int r = 0, g = 0, b = 0;
        detail::parse_fields(ss, pts_path, number, id, p.position[0], p.position[1], p.position[2], r, g, b);
        if (!p.position.allFinite()) malformed(pts_path, number, "non-finite point");
        if (r < 0 || r > 255 || g < 0 || g > 255 || b < 0 || b > 255) malformed(pts_path, number, "color out of range");
        p.color = Vec3(r, g, b) / 255.0;
        out.points.push_back(p);
    }
    if (out.points.empty()) throw EmptyCloudError("points3D.txt: empty point set");
    read_split(dir / "split.txt", out.scene);
    out.cloud = init_cloud_from_points(out.points);
    return out;
}

// Writes the layout load_colmap_scene reads: one PINHOLE camera per view,
// images as <stem>.png, numbers at full double precision.
inline void save_colmap_scene(const std::filesystem::path& dir, const Scene& scene,
                              const std::vector<SfMPoint>& points) {
    using detail::fmt;
    std::filesystem::create_directories(dir / "images");
    std::ofstream cams(dir / "cameras.txt"), imgs(dir / "images.txt"), pts(dir / "points3D.txt");
    if (!cams || !imgs || !pts) throw IoError("cannot write scene files in " + dir.string());
    cams << "# CAMERA_ID MODEL WIDTH HEIGHT PARAMS[]\n";
    imgs << "# IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME\n# POINTS2D[] as (X, Y, POINT3D_ID)\n";
    for (std::size_t v = 0; v < scene.view_count(); ++v) {
        const Camera& c = scene.cameras[v];
        const int id = static_cast<int>(v) + 1;
        cams << id << " PINHOLE " << c.width << ' ' << c.height << ' ' << fmt(c.fx) << ' ' << fmt(c.fy) << ' '
             << fmt(c.cx) << ' ' << fmt(c.cy) << '\n';
        const Vec4& q = c.world_to_camera.rotation;
        const Vec3& t = c.world_to_camera.translation;
        const std::string file = scene.names[v] + ".png";
        imgs << id << ' ' << fmt(q[0]) << ' ' << fmt(q[1]) << ' ' << fmt(q[2]) << ' ' << fmt(q[3]) << ' '
             << fmt(t[0]) << ' ' << fmt(t[1]) << ' ' << fmt(t[2]) << ' ' << id << ' ' << file << "\n\n";
        write_png(dir / "images" / file, scene.images[v]);
    }
    pts << "# POINT3D_ID X Y Z R G B ERROR TRACK[]\n";
    for (std::size_t i = 0; i < points.size(); ++i) {
        const Vec3& p = points[i].position;
        pts << i + 1 << ' ' << fmt(p[0]) << ' ' << fmt(p[1]) << ' ' << fmt(p[2]);
        for (int c = 0; c < 3; ++c) pts << ' ' << static_cast<int>(to_byte(points[i].color[c]));
        pts << " 0\n";
    }
    write_split(dir / "split.txt", scene);
    if (!cams || !imgs || !pts) throw IoError("write failed in " + dir.string());
}

} // namespace sparsesplat
