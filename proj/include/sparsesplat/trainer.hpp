#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "losses.hpp"
#include "metrics.hpp"
#include "priors.hpp"
#include "rasterizer.hpp"
#include "side_views.hpp"
#include "toy_extractor.hpp"

namespace sparsesplat {

struct TrainConfig {
    int iterations = 12000;
    // per-group Adam step sizes; position is scaled by the scene extent and
    // decays exponentially from lr_position to lr_position_final
    double lr_position = 1.6e-4;
    double lr_position_final = 1.6e-6;
    double lr_scale = 5e-3;
    double lr_rotation = 1e-3;
    double lr_opacity = 5e-2;
    double lr_color = 2.5e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-15;

    int warmup = 500; // semantic and local depth terms are off before this iteration

    int densify_interval = 100; // 0 disables densification and pruning
    int densify_from = 500;
    int densify_until = 6000;
    double densify_grad_threshold = 2e-3; // mean world-position gradient norm
    double percent_dense = 0.01;          // clone/split boundary as a fraction of the extent
    double prune_opacity = 0.005;

    int side_views = 1;
    int semantic_crop = 32;
    double side_t_min = 0.2;
    double side_t_max = 0.8;
    double side_jitter = 0.05;

    std::uint64_t seed = 0;
    bool deterministic = true;
    int eval_interval = 0; // held-out snapshots every N iterations (0: only at the end)

    void validate() const {
        if (iterations <= 0) throw ConfigError("iterations must be > 0");
        const std::pair<const char*, double> lrs[] = {{"lr_position", lr_position},
                                                      {"lr_position_final", lr_position_final},
                                                      {"lr_scale", lr_scale},
                                                      {"lr_rotation", lr_rotation},
                                                      {"lr_opacity", lr_opacity},
                                                      {"lr_color", lr_color}};
        for (const auto& [name, v] : lrs) {
            if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(std::string(name) + " must be >= 0");
        }
        if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw ConfigError("adam_beta1 must be in [0, 1)");
        if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw ConfigError("adam_beta2 must be in [0, 1)");
        if (!(adam_epsilon > 0.0)) throw ConfigError("adam_epsilon must be > 0");
        if (warmup < 0) throw ConfigError("warmup must be >= 0");
        if (densify_interval < 0) throw ConfigError("densify_interval must be >= 0");
        if (!(densify_grad_threshold >= 0.0)) throw ConfigError("densify_grad_threshold must be >= 0");
        if (!(percent_dense >= 0.0)) throw ConfigError("percent_dense must be >= 0");
        if (!(prune_opacity >= 0.0 && prune_opacity < 1.0)) throw ConfigError("prune_opacity must be in [0, 1)");
        if (side_views < 0) throw ConfigError("side_views must be >= 0");
        if (semantic_crop < ToyExtractor::kMinPatch) throw ConfigError("semantic_crop must be >= 8");
        if (!(side_t_min >= 0.0 && side_t_min <= side_t_max && side_t_max <= 1.0)) {
            throw ConfigError("side view t range must satisfy 0 <= t_min <= t_max <= 1");
        }
        if (!(side_jitter >= 0.0)) throw ConfigError("side_jitter must be >= 0");
        if (eval_interval < 0) throw ConfigError("eval_interval must be >= 0");
    }
};

// Scalar loss terms of one step.
struct LossTerms {
    double total = 0.0;
    double l1 = 0.0;
    double dssim = 0.0;
    double global_depth = 0.0;
    double semantic = 0.0;
    double local_depth = 0.0;

    static LossTerms from(const LossBreakdown& b) {
        return {b.total, b.l1, b.dssim, b.global_depth, b.semantic, b.local_depth};
    }
};

struct TrainState {
    GaussianCloud cloud;
    std::vector<Gaussian3D> adam_m; // first moments, same layout as the cloud
    std::vector<Gaussian3D> adam_v; // second moments
    int iteration = 0;
    std::vector<LossTerms> history;
    std::vector<double> grad_accum; // summed position-gradient norms since the last densify
    std::vector<int> grad_count;
    std::mt19937_64 rng;

    static TrainState start(GaussianCloud cloud, std::uint64_t seed) {
        if (cloud.empty()) throw EmptyCloudError("cannot train an empty cloud");
        TrainState s;
        const std::size_t n = cloud.size();
        s.cloud = std::move(cloud);
        s.adam_m.assign(n, zero_gaussian());
        s.adam_v.assign(n, zero_gaussian());
        s.grad_accum.assign(n, 0.0);
        s.grad_count.assign(n, 0);
        s.rng.seed(seed);
        return s;
    }

    bool consistent() const {
        const std::size_t n = cloud.size();
        return adam_m.size() == n && adam_v.size() == n && grad_accum.size() == n && grad_count.size() == n &&
               history.size() == static_cast<std::size_t>(iteration);
    }
};

struct DensifyReport {
    int cloned = 0;
    int split = 0;
    int pruned = 0;

    bool empty() const { return cloned == 0 && split == 0 && pruned == 0; }
};

inline constexpr double kSplitShrink = 1.6;

// 1.1 x the largest distance of a camera centre from their mean (1 for a single view).
inline double camera_extent(const std::vector<Camera>& cams, const std::vector<int>& views) {
    if (views.empty()) return 1.0;
    Vec3 mean = Vec3::Zero();
    for (int v : views) mean += cams[v].center();
    mean /= static_cast<double>(views.size());
    double r = 0.0;
    for (int v : views) r = std::max(r, (cams[v].center() - mean).norm());
    return r > 0.0 ? 1.1 * r : 1.0;
}

// Step size for the position group at `iteration`.
inline double position_lr(const TrainConfig& c, int iteration, double extent) {
    const double r = c.iterations <= 1 ? 1.0 : std::clamp(static_cast<double>(iteration) / (c.iterations - 1), 0.0, 1.0);
    double lr;
    if (c.lr_position > 0.0 && c.lr_position_final > 0.0) {
        lr = std::exp((1.0 - r) * std::log(c.lr_position) + r * std::log(c.lr_position_final));
    } else {
        lr = (1.0 - r) * c.lr_position + r * c.lr_position_final;
    }
    return lr * extent;
}

// Clone small / split large Gaussians with a high mean position gradient, then
// drop nearly transparent ones. Moments of new Gaussians start at zero.
inline DensifyReport densify_prune(TrainState& state, const TrainConfig& config, double extent) {
    DensifyReport report;
    const std::size_t n = state.cloud.size();
    std::vector<Gaussian3D> g_out, m_out, v_out;
    std::vector<Gaussian3D> born;
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<char> keep(n, 1);

    for (std::size_t i = 0; i < n; ++i) {
        if (state.grad_count[i] == 0) continue;
        const double mean_grad = state.grad_accum[i] / state.grad_count[i];
        if (!(mean_grad > config.densify_grad_threshold)) continue;
        const Gaussian3D& g = state.cloud.gaussians[i];
        if (g.scale().maxCoeff() <= config.percent_dense * extent) {
            born.push_back(g);
            ++report.cloned;
        } else {
            const Mat3 rs = rotation_from_quaternion(g.rotation) * g.scale().asDiagonal();
            for (int k = 0; k < 2; ++k) {
                Gaussian3D child = g;
                const Vec3 z(normal(state.rng), normal(state.rng), normal(state.rng));
                child.position = g.position + rs * z;
                child.log_scale = g.log_scale - Vec3::Constant(std::log(kSplitShrink));
                born.push_back(child);
            }
            keep[i] = 0;
            ++report.split;
        }
    }

    for (std::size_t i = 0; i < n; ++i) {
        if (!keep[i]) continue;
        if (state.cloud.gaussians[i].opacity() < config.prune_opacity) {
            ++report.pruned;
            continue;
        }
        g_out.push_back(state.cloud.gaussians[i]);
        m_out.push_back(state.adam_m[i]);
        v_out.push_back(state.adam_v[i]);
    }
    for (const Gaussian3D& g : born) {
        if (g.opacity() < config.prune_opacity) {
            ++report.pruned;
            continue;
        }
        g_out.push_back(g);
        m_out.push_back(zero_gaussian());
        v_out.push_back(zero_gaussian());
    }
    if (g_out.empty()) throw EmptyCloudError("densify_prune removed every Gaussian");

    std::fill(state.grad_accum.begin(), state.grad_accum.end(), 0.0);
    std::fill(state.grad_count.begin(), state.grad_count.end(), 0);
    if (report.empty()) return report;
    state.cloud.gaussians = std::move(g_out);
    state.adam_m = std::move(m_out);
    state.adam_v = std::move(v_out);
    state.grad_accum.assign(state.cloud.size(), 0.0);
    state.grad_count.assign(state.cloud.size(), 0);
    ++state.cloud.generation;
    return report;
}

// One Adam update over every parameter; colours are then projected onto [0,1].
inline void adam_update(TrainState& state, const std::vector<Gaussian3D>& grads, const TrainConfig& c,
                        double lr_pos) {
    const int t = state.iteration + 1;
    const double bc1 = 1.0 - std::pow(c.adam_beta1, t);
    const double bc2 = 1.0 - std::pow(c.adam_beta2, t);
    const double lr[kParamGroupCount] = {lr_pos, c.lr_scale, c.lr_rotation, c.lr_opacity, c.lr_color};
    const auto& groups = param_groups();
    for (std::size_t i = 0; i < state.cloud.size(); ++i) {
        Gaussian3D& g = state.cloud.gaussians[i];
        const ParamArray grad = param_array(grads[i]);
        ParamArray p = param_array(g), m = param_array(state.adam_m[i]), v = param_array(state.adam_v[i]);
        for (int k = 0; k < kParamsPerGaussian; ++k) {
            m[k] = c.adam_beta1 * m[k] + (1.0 - c.adam_beta1) * grad[k];
            v[k] = c.adam_beta2 * v[k] + (1.0 - c.adam_beta2) * grad[k] * grad[k];
            const double step = lr[static_cast<int>(groups[k])];
            if (step != 0.0) p[k] -= step * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + c.adam_epsilon);
        }
        set_params(g, p);
        set_params(state.adam_m[i], m);
        set_params(state.adam_v[i], v);
        for (int ch = 0; ch < 3; ++ch) g.color[ch] = std::clamp(g.color[ch], 0.0, 1.0);
    }
}

struct StepReport {
    LossTerms terms;
    int view = -1;
    int side_views = 0;
    int depth_views_used = 0;
    int depth_views_skipped = 0;
};

struct TraceRecord {
    int iteration = 0;
    LossTerms terms;
    std::size_t gaussians = 0;
    std::optional<double> train_psnr;
    std::optional<double> test_psnr;
};

struct TrainResult {
    GaussianCloud cloud;
    std::vector<TraceRecord> trace;
};

// Per-scene optimizer. Holds borrowed references to the scene and prior source.
class Trainer {
public:
    Trainer(const Scene& scene, const PriorSource& priors, LossWeights weights, TrainConfig config)
        : scene_(scene), priors_(priors), weights_(weights), config_(config) {
        weights_.validate();
        config_.validate();
        if (scene_.train.empty()) throw ConfigError("scene has no training views");
        const auto problems = validate_scene(scene_);
        if (!problems.empty()) {
            const auto& p = problems.front();
            throw InvalidInputError("invalid scene: view " + std::to_string(p.view) + " " + p.field + ": " + p.message);
        }
        extent_ = camera_extent(scene_.cameras, scene_.train);
        sampler_.t_min = config_.side_t_min;
        sampler_.t_max = config_.side_t_max;
        sampler_.jitter = config_.side_jitter;
    }

    double extent() const { return extent_; }
    const TrainConfig& config() const { return config_; }

    TrainState start(GaussianCloud init) const { return TrainState::start(std::move(init), config_.seed); }

    // One side view of a step. `crop` is 0 when the semantic term is off.
    struct SideSample {
        Camera camera;
        int paired_view = -1;
        int crop_x = 0, crop_y = 0, crop = 0;
    };

    struct Objective {
        LossBreakdown breakdown;
        std::vector<Gaussian3D> grads;
    };

    // Loss of `cloud` at a training view plus fixed side samples, and its gradient
    // with respect to every Gaussian parameter.
    Objective objective(const GaussianCloud& cloud, int view, const std::vector<SideSample>& samples,
                        const LossWeights& w) {
        const Camera& cam = scene_.cameras[view];
        const RenderOutput fwd = render(cloud, cam);
        const bool need_train_depth = w.beta_gdepth > 0.0 || w.omega_depth > 0.0;
        const DepthMap* train_prior = need_train_depth ? &train_depth(view) : nullptr;

        struct Side {
            RenderOutput fwd;
            std::optional<DepthMap> prior;
            FeatureEmbedding side_emb, train_emb;
        };
        std::vector<Side> sides(samples.size());
        std::vector<SideTerm> terms(samples.size());
        for (std::size_t k = 0; k < samples.size(); ++k) {
            const SideSample& ss = samples[k];
            Side& s = sides[k];
            s.fwd = render(cloud, ss.camera);
            if (w.omega_sem > 0.0 && ss.crop > 0) {
                const Image& gt = scene_.images.at(ss.paired_view);
                s.side_emb = extractor_.embed(s.fwd.color.crop(ss.crop_x, ss.crop_y, ss.crop, ss.crop));
                s.train_emb = extractor_.embed(gt.crop(ss.crop_x, ss.crop_y, ss.crop, ss.crop));
                terms[k].side_embedding = &s.side_emb;
                terms[k].train_embedding = &s.train_emb;
            }
            if (w.omega_depth > 0.0 && priors_.depth_for_novel_views()) {
                s.prior = priors_.get_depth(ss.camera, std::string{}, &s.fwd.color);
            }
            terms[k].rendered_depth = &s.fwd.depth;
            terms[k].prior_depth = s.prior ? &*s.prior : nullptr;
        }

        Objective out;
        out.breakdown = total_loss(fwd, scene_.images[view], train_prior, terms, w);
        const LossBreakdown& b = out.breakdown;
        check_finite(b);

        out.grads = render_backward(fwd, b.grad_color, b.grad_depth).grads;
        for (std::size_t k = 0; k < sides.size(); ++k) {
            const SideSample& ss = samples[k];
            const Side& s = sides[k];
            Image gc(s.fwd.color.width, s.fwd.color.height, 3);
            if (!b.grad_side_embedding[k].empty()) {
                const Image gp = extractor_.vjp(ss.crop, ss.crop, 3, b.grad_side_embedding[k]);
                for (int y = 0; y < ss.crop; ++y) {
                    for (int x = 0; x < ss.crop; ++x) {
                        for (int c = 0; c < 3; ++c) gc.at(ss.crop_x + x, ss.crop_y + y, c) = gp.at(x, y, c);
                    }
                }
            }
            const Image gd = b.grad_side_depth[k].empty() ? Image(s.fwd.depth.width, s.fwd.depth.height, 1)
                                                          : b.grad_side_depth[k];
            const auto side_grads = render_backward(s.fwd, gc, gd).grads;
            for (std::size_t i = 0; i < out.grads.size(); ++i) {
                ParamArray a = param_array(out.grads[i]);
                const ParamArray sg = param_array(side_grads[i]);
                for (int j = 0; j < kParamsPerGaussian; ++j) a[j] += sg[j];
                set_params(out.grads[i], a);
            }
        }
        return out;
    }

    // Draws the side cameras and semantic crops for one step.
    std::vector<SideSample> sample_sides(TrainState& state, const LossWeights& w) const {
        std::vector<SideSample> out;
        for (const SideViewSpec& spec : sampler_.sample(scene_.cameras, scene_.train, config_.side_views, state.rng)) {
            SideSample s;
            s.camera = sample_side_pose(scene_.cameras[spec.parent_a], scene_.cameras[spec.parent_b], spec).camera;
            if (w.omega_sem > 0.0) {
                s.paired_view = spec.t < 0.5 ? spec.parent_a : spec.parent_b;
                const Image& gt = scene_.images[s.paired_view];
                const int wmax = std::min(gt.width, s.camera.width);
                const int hmax = std::min(gt.height, s.camera.height);
                s.crop = std::min({config_.semantic_crop, wmax, hmax});
                if (s.crop < ToyExtractor::kMinPatch) throw ConfigError("images are too small for semantic crops");
                std::uniform_int_distribution<int> ux(0, wmax - s.crop);
                std::uniform_int_distribution<int> uy(0, hmax - s.crop);
                s.crop_x = ux(state.rng);
                s.crop_y = uy(state.rng);
            }
            out.push_back(std::move(s));
        }
        return out;
    }

    StepReport step(TrainState& state) {
        if (!state.consistent()) throw InvalidInputError("train state buffers do not match the cloud");
        const bool active = state.iteration >= config_.warmup;
        LossWeights w = weights_;
        if (!active) w.omega_sem = w.omega_depth = 0.0;

        StepReport report;
        report.view = scene_.train[static_cast<std::size_t>(state.iteration) % scene_.train.size()];
        const bool want_sides = active && config_.side_views > 0 && (w.omega_sem > 0.0 || w.omega_depth > 0.0);
        const std::vector<SideSample> samples = want_sides ? sample_sides(state, w) : std::vector<SideSample>{};
        const Objective obj = objective(state.cloud, report.view, samples, w);
        const LossBreakdown& b = obj.breakdown;
        const std::vector<Gaussian3D>& grads = obj.grads;
        report.terms = LossTerms::from(b);
        report.side_views = static_cast<int>(samples.size());
        report.depth_views_used = b.depth_views_used;
        report.depth_views_skipped = b.depth_views_skipped;

        for (std::size_t i = 0; i < grads.size(); ++i) {
            const double gn = grads[i].position.norm();
            if (gn > 0.0) {
                state.grad_accum[i] += gn;
                ++state.grad_count[i];
            }
        }
        adam_update(state, grads, config_, position_lr(config_, state.iteration, extent_));
        for (const auto& g : state.cloud.gaussians) {
            if (!g.position.allFinite() || !g.log_scale.allFinite() || !g.rotation.allFinite() ||
                !std::isfinite(g.opacity_logit) || !g.color.allFinite()) {
                throw NonFiniteLossError("non-finite Gaussian parameter after iteration " +
                                         std::to_string(state.iteration));
            }
        }
        ++state.iteration;
        state.history.push_back(report.terms);

        const int it = state.iteration;
        if (config_.densify_interval > 0 && it >= config_.densify_from && it <= config_.densify_until &&
            it % config_.densify_interval == 0) {
            last_densify_ = densify_prune(state, config_, extent_);
        }
        return report;
    }

    // Mean PSNR of the current cloud over a set of views.
    double mean_psnr(const GaussianCloud& cloud, const std::vector<int>& views) const {
        double s = 0.0;
        for (int v : views) s += psnr(render(cloud, scene_.cameras[v]).color, scene_.images[v]);
        return s / static_cast<double>(views.size());
    }

    using SnapshotFn = std::function<void(const TrainState&, const TraceRecord&)>;

    TrainResult run(GaussianCloud init, const SnapshotFn& on_snapshot = {}) {
        TrainState state = start(std::move(init));
        TrainResult result;
        for (int i = 0; i < config_.iterations; ++i) {
            const StepReport r = step(state);
            const bool last = state.iteration == config_.iterations;
            const bool snap = last || (config_.eval_interval > 0 && state.iteration % config_.eval_interval == 0);
            TraceRecord rec{state.iteration, r.terms, state.cloud.size(), std::nullopt, std::nullopt};
            if (snap) {
                rec.train_psnr = mean_psnr(state.cloud, scene_.train);
                if (!scene_.test.empty()) rec.test_psnr = mean_psnr(state.cloud, scene_.test);
                if (on_snapshot) on_snapshot(state, rec);
            }
            result.trace.push_back(rec);
        }
        result.cloud = std::move(state.cloud);
        return result;
    }

    const DensifyReport& last_densify() const { return last_densify_; }

private:
    const DepthMap& train_depth(int view) {
        auto it = depth_cache_.find(view);
        if (it == depth_cache_.end()) {
            it = depth_cache_
                     .emplace(view, priors_.get_depth(scene_.cameras[view], view_name(view), &scene_.images[view]))
                     .first;
        }
        return it->second;
    }

    std::string view_name(int view) const {
        return view < static_cast<int>(scene_.names.size()) ? scene_.names[view] : std::string{};
    }

    static void check_finite(const LossBreakdown& b) {
        const std::pair<const char*, double> terms[] = {{"l1", b.l1},
                                                        {"dssim", b.dssim},
                                                        {"global_depth", b.global_depth},
                                                        {"semantic", b.semantic},
                                                        {"local_depth", b.local_depth},
                                                        {"total", b.total}};
        for (const auto& [name, v] : terms) {
            if (!std::isfinite(v)) throw NonFiniteLossError(std::string("non-finite loss term: ") + name);
        }
    }

    const Scene& scene_;
    const PriorSource& priors_;
    LossWeights weights_;
    TrainConfig config_;
    double extent_ = 1.0;
    SideViewSampler sampler_;
    ToyExtractor extractor_;
    std::map<int, DepthMap> depth_cache_;
    DensifyReport last_densify_;
};

inline TrainResult train(const Scene& scene, GaussianCloud init, const PriorSource& priors, const LossWeights& weights,
                         const TrainConfig& config, const Trainer::SnapshotFn& on_snapshot = {}) {
    Trainer t(scene, priors, weights, config);
    return t.run(std::move(init), on_snapshot);
}

} // namespace sparsesplat
