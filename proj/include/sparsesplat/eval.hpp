#pragma once

#include <cstdint>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "metrics.hpp"
#include "rasterizer.hpp"
#include "scene_model.hpp"

namespace sparsesplat {

struct ViewMetrics {
    int view = -1;
    std::string name;
    double psnr = 0.0;
    double ssim = 0.0;
};

struct EvalReport {
    std::vector<ViewMetrics> views;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
    std::uint64_t config_hash = 0;
    std::uint64_t seed = 0;
    int iteration = 0;

    // Aligned table for humans.
    std::string table() const {
        std::ostringstream os;
        char line[256];
        std::snprintf(line, sizeof line, "%-24s %10s %8s\n", "view", "psnr", "ssim");
        os << line;
        for (const auto& v : views) {
            std::snprintf(line, sizeof line, "%-24s %10.4f %8.5f\n", v.name.c_str(), v.psnr, v.ssim);
            os << line;
        }
        std::snprintf(line, sizeof line, "%-24s %10.4f %8.5f\n", "mean", mean_psnr, mean_ssim);
        os << line;
        return os.str();
    }

    // One key=value pair per line.
    std::string key_values() const {
        std::ostringstream os;
        char line[256];
        std::snprintf(line, sizeof line, "config_hash=%016llx\n", static_cast<unsigned long long>(config_hash));
        os << line;
        os << "seed=" << seed << "\n";
        os << "iteration=" << iteration << "\n";
        os << "views=" << views.size() << "\n";
        std::snprintf(line, sizeof line, "mean_psnr=%.17g\nmean_ssim=%.17g\n", mean_psnr, mean_ssim);
        os << line;
        for (const auto& v : views) {
            std::snprintf(line, sizeof line, "psnr.%s=%.17g\nssim.%s=%.17g\n", v.name.c_str(), v.psnr, v.name.c_str(),
                          v.ssim);
            os << line;
        }
        return os.str();
    }
};

// Renders `cloud` at every listed view and scores it against the scene images.
inline EvalReport evaluate(const GaussianCloud& cloud, const Scene& scene, const std::vector<int>& views) {
    if (views.empty()) throw InvalidInputError("evaluate: no views to score");
    EvalReport r;
    for (int v : views) {
        if (v < 0 || v >= static_cast<int>(scene.view_count())) {
            throw InvalidInputError("evaluate: view index " + std::to_string(v) + " out of range");
        }
        const Image img = render(cloud, scene.cameras[v]).color;
        ViewMetrics m;
        m.view = v;
        m.name = v < static_cast<int>(scene.names.size()) ? scene.names[v] : "view_" + std::to_string(v);
        m.psnr = psnr(img, scene.images[v]);
        m.ssim = ssim(img, scene.images[v]);
        r.mean_psnr += m.psnr;
        r.mean_ssim += m.ssim;
        r.views.push_back(std::move(m));
    }
    r.mean_psnr /= static_cast<double>(views.size());
    r.mean_ssim /= static_cast<double>(views.size());
    return r;
}

struct SweepPoint {
    double weight = 0.0;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
};

struct SweepResult {
    std::string axis;
    std::vector<SweepPoint> points;

    std::string table() const {
        std::ostringstream os;
        char line[128];
        std::snprintf(line, sizeof line, "%-12s %10s %8s\n", axis.c_str(), "psnr", "ssim");
        os << line;
        for (const auto& p : points) {
            std::snprintf(line, sizeof line, "%-12g %10.4f %8.5f\n", p.weight, p.mean_psnr, p.mean_ssim);
            os << line;
        }
        return os.str();
    }

    // Two whitespace-separated columns, ready for plotting.
    std::string data() const {
        std::ostringstream os;
        os << "# weight psnr\n";
        char line[64];
        for (const auto& p : points) {
            std::snprintf(line, sizeof line, "%g %.17g\n", p.weight, p.mean_psnr);
            os << line;
        }
        return os.str();
    }
};

// Runs `run_at(weight)` for each value and records the held-out metrics it returns.
inline SweepResult sweep(const std::string& axis, const std::vector<double>& values,
                         const std::function<EvalReport(double)>& run_at) {
    if (axis != "omega_sem" && axis != "omega_depth") {
        throw ConfigError("sweep axis must be omega_sem or omega_depth, got \"" + axis + "\"");
    }
    if (values.empty()) throw ConfigError("sweep needs at least one value");
    SweepResult s;
    s.axis = axis;
    for (double w : values) {
        if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("sweep weights must be finite and >= 0");
        const EvalReport r = run_at(w);
        s.points.push_back({w, r.mean_psnr, r.mean_ssim});
    }
    return s;
}

} // namespace sparsesplat
