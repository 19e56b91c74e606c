#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>

#include "json.hpp"
#include "losses.hpp"
#include "trainer.hpp"

namespace sparsesplat {

// Everything a training run needs, serialized as one flat JSON object.
struct RunConfig {
    LossWeights weights;
    TrainConfig train;
    std::string scene_dir;
    std::string prior_backend = "oracle"; // file | oracle | service
    std::string prior_dir;                // file backend; defaults to <scene_dir>/depth
    std::string prior_endpoint;           // service backend
    double prior_timeout = 30.0;          // seconds
    std::string gt_cloud;                 // oracle backend; defaults to <scene_dir>/gt_cloud.sidg
    std::string output_dir;
    int train_views = 0;                  // > 0: replace the scene split with the LLFF protocol

    // Calls fn(key, field&) for every serialized field.
    template <typename Self, typename Fn>
    static void visit(Self& c, Fn&& fn) {
        fn("lambda_l1", c.weights.lambda_l1);
        fn("gamma_dssim", c.weights.gamma_dssim);
        fn("beta_gdepth", c.weights.beta_gdepth);
        fn("omega_0", c.weights.omega_0);
        fn("omega_sem", c.weights.omega_sem);
        fn("omega_depth", c.weights.omega_depth);
        fn("epsilon", c.weights.epsilon);
        fn("patch_size", c.weights.patch_size);
        fn("depth_form", c.weights.depth_form);
        fn("iterations", c.train.iterations);
        fn("lr_position", c.train.lr_position);
        fn("lr_position_final", c.train.lr_position_final);
        fn("lr_scale", c.train.lr_scale);
        fn("lr_rotation", c.train.lr_rotation);
        fn("lr_opacity", c.train.lr_opacity);
        fn("lr_color", c.train.lr_color);
        fn("adam_beta1", c.train.adam_beta1);
        fn("adam_beta2", c.train.adam_beta2);
        fn("adam_epsilon", c.train.adam_epsilon);
        fn("warmup", c.train.warmup);
        fn("densify_interval", c.train.densify_interval);
        fn("densify_from", c.train.densify_from);
        fn("densify_until", c.train.densify_until);
        fn("densify_grad_threshold", c.train.densify_grad_threshold);
        fn("percent_dense", c.train.percent_dense);
        fn("prune_opacity", c.train.prune_opacity);
        fn("side_views", c.train.side_views);
        fn("semantic_crop", c.train.semantic_crop);
        fn("side_t_min", c.train.side_t_min);
        fn("side_t_max", c.train.side_t_max);
        fn("side_jitter", c.train.side_jitter);
        fn("seed", c.train.seed);
        fn("deterministic", c.train.deterministic);
        fn("eval_interval", c.train.eval_interval);
        fn("scene_dir", c.scene_dir);
        fn("prior_backend", c.prior_backend);
        fn("prior_dir", c.prior_dir);
        fn("prior_endpoint", c.prior_endpoint);
        fn("prior_timeout", c.prior_timeout);
        fn("gt_cloud", c.gt_cloud);
        fn("output_dir", c.output_dir);
        fn("train_views", c.train_views);
    }

    std::vector<std::string> keys() const {
        std::vector<std::string> out;
        visit(*this, [&](const char* key, const auto&) { out.emplace_back(key); });
        return out;
    }

    std::string resolved_prior_dir() const {
        if (!prior_dir.empty() || scene_dir.empty()) return prior_dir;
        return (std::filesystem::path(scene_dir) / "depth").string();
    }

    std::string resolved_gt_cloud() const {
        if (!gt_cloud.empty() || scene_dir.empty()) return gt_cloud;
        return (std::filesystem::path(scene_dir) / "gt_cloud.sidg").string();
    }

    // Numeric ranges; paths are checked only when `check_paths` is set.
    void validate(bool check_paths) const {
        weights.validate();
        train.validate();
        if (prior_backend != "file" && prior_backend != "oracle" && prior_backend != "service") {
            throw ConfigError("prior_backend must be file, oracle or service, got \"" + prior_backend + "\"");
        }
        if (!(prior_timeout > 0.0)) throw ConfigError("prior_timeout must be > 0");
        if (train_views < 0) throw ConfigError("train_views must be >= 0");
        if (prior_backend == "service" && prior_endpoint.empty() && std::getenv(kEndpointEnv) == nullptr) {
            throw ConfigError("service prior backend needs prior_endpoint or " + std::string(kEndpointEnv));
        }
        if (!check_paths) return;
        namespace fs = std::filesystem;
        if (scene_dir.empty()) throw ConfigError("scene_dir is required");
        if (!fs::is_directory(scene_dir)) throw ConfigError("scene_dir does not exist: " + scene_dir);
        if (prior_backend == "file" && !fs::is_directory(resolved_prior_dir())) {
            throw ConfigError("prior_dir does not exist: " + resolved_prior_dir());
        }
        if (prior_backend == "oracle" && !fs::is_regular_file(resolved_gt_cloud())) {
            throw ConfigError("gt_cloud does not exist: " + resolved_gt_cloud());
        }
        if (!output_dir.empty() && fs::exists(output_dir) && !fs::is_directory(output_dir)) {
            throw ConfigError("output_dir exists and is not a directory: " + output_dir);
        }
    }
};

inline std::string to_string(DepthLossForm f) { return f == DepthLossForm::abs_corr ? "abs_corr" : "one_minus_corr"; }

inline DepthLossForm depth_form_from_string(const std::string& s) {
    if (s == "one_minus_corr") return DepthLossForm::one_minus_corr;
    if (s == "abs_corr") return DepthLossForm::abs_corr;
    throw ConfigError("depth_form must be one_minus_corr or abs_corr, got \"" + s + "\"");
}

inline nlohmann::json to_json(const RunConfig& c) {
    nlohmann::json j = nlohmann::json::object();
    RunConfig::visit(c, [&](const char* key, const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, DepthLossForm>) {
            j[key] = to_string(v);
        } else {
            j[key] = v;
        }
    });
    return j;
}

// Applies the keys present in `j` on top of `base`. Unknown keys and
// mistyped values are rejected before anything else happens.
inline RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {}) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    const auto known = base.keys();
    for (const auto& [key, value] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) throw ConfigError("unknown config key \"" + key + "\"");
    }
    RunConfig::visit(base, [&](const char* key, auto& field) {
        if (!j.contains(key)) return;
        const auto& v = j.at(key);
        using T = std::decay_t<decltype(field)>;
        auto mistyped = [&](const char* want) {
            return ConfigError("config key \"" + std::string(key) + "\" must be " + want);
        };
        if constexpr (std::is_same_v<T, DepthLossForm>) {
            if (!v.is_string()) throw mistyped("a string");
            field = depth_form_from_string(v.get<std::string>());
        } else if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw mistyped("a boolean");
            field = v.get<bool>();
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw mistyped("a string");
            field = v.get<std::string>();
        } else if constexpr (std::is_same_v<T, std::uint64_t>) {
            if (!v.is_number_unsigned()) throw mistyped("a non-negative integer");
            field = v.get<std::uint64_t>();
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) throw mistyped("an integer");
            field = v.get<T>();
        } else {
            if (!v.is_number()) throw mistyped("a number");
            field = v.get<T>();
        }
    });
    return base;
}

inline RunConfig load_run_config(const std::filesystem::path& path, bool check_paths = true) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    RunConfig c = run_config_from_json(j);
    c.validate(check_paths);
    return c;
}

// Parses a command-line value for `key` using the type of its default.
inline nlohmann::json parse_override(const std::string& key, const std::string& text) {
    RunConfig probe;
    nlohmann::json out;
    bool found = false;
    RunConfig::visit(probe, [&](const char* k, const auto& field) {
        if (key != k) return;
        found = true;
        using T = std::decay_t<decltype(field)>;
        if constexpr (std::is_same_v<T, std::string> || std::is_same_v<T, DepthLossForm>) {
            out = text;
        } else {
            try {
                out = nlohmann::json::parse(text);
            } catch (const nlohmann::json::parse_error&) {
                throw ConfigError("value for " + key + " is not a valid literal: " + text);
            }
        }
    });
    if (!found) throw ConfigError("unknown config key \"" + key + "\"");
    return out;
}

// One metrics-trace line: iteration, every loss term and any PSNR snapshot.
inline nlohmann::json to_json(const TraceRecord& r) {
    nlohmann::json j{{"iteration", r.iteration},         {"total", r.terms.total},
                     {"l1", r.terms.l1},                 {"dssim", r.terms.dssim},
                     {"global_depth", r.terms.global_depth}, {"semantic", r.terms.semantic},
                     {"local_depth", r.terms.local_depth}, {"gaussians", r.gaussians}};
    if (r.train_psnr) j["train_psnr"] = *r.train_psnr;
    if (r.test_psnr) j["test_psnr"] = *r.test_psnr;
    return j;
}

// Stable 64-bit FNV-1a hash of the serialized config.
inline std::uint64_t config_hash(const RunConfig& c) {
    const std::string s = to_json(c).dump();
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

} // namespace sparsesplat
