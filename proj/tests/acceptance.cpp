// Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fail.
// Usage: acceptance [name ...] to run a subset.

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "sparsesplat/sparsesplat.hpp"
#include "test_util.hpp"

using namespace sparsesplat;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(const char* name, bool pass, const std::string& detail) {
    std::printf("%s %-22s %s\n", pass ? "PASS" : "FAIL", name, detail.c_str());
    std::fflush(stdout);
    if (!pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// ---------------------------------------------------------------------------

struct GradStats {
    int total = 0;
    int passed = 0;
    std::array<int, kParamGroupCount> group_total{};
    std::array<int, kParamGroupCount> group_passed{};
    double worst = 0.0;
    int resolved = 0; // mismatches at h = 1e-4 that agree at both h = 1e-5 and h = 1e-6
    double fraction() const { return total ? static_cast<double>(passed) / total : 0.0; }
};

// Full objective on a random scene of `size` x `size` pixels, two training views and
// one side view, checked against central differences at h = 1e-4.
GradStats gradient_check(int size, bool with_dssim, std::uint64_t seed, LossBreakdown* terms) {
    std::mt19937_64 rng(seed);
    const double f = 2.0 * size;
    Scene scene;
    scene.cameras = {test::looking_camera(size, size, f, Vec3(-0.6, 0.2, -3.0)),
                     test::looking_camera(size, size, f, Vec3(0.6, -0.1, -3.0))};
    const GaussianCloud reference = test::random_cloud(rng, 10);
    for (const auto& cam : scene.cameras) scene.images.push_back(render(reference, cam).color);
    scene.names = {"a", "b"};
    scene.train = {0, 1};
    const PriorSource priors = PriorSource::from_oracle(reference);

    LossWeights w;
    w.patch_size = size / 2;
    if (!with_dssim) w.gamma_dssim = 0.0;
    Trainer trainer(scene, priors, w, TrainConfig{});

    SideViewSpec spec;
    spec.parent_a = 0;
    spec.parent_b = 1;
    spec.t = 0.4;
    Trainer::SideSample side;
    side.camera = sample_side_pose(scene.cameras[0], scene.cameras[1], spec).camera;
    side.paired_view = 0;
    side.crop = ToyExtractor::kMinPatch;
    side.crop_x = size - side.crop;
    side.crop_y = 0;
    const std::vector<Trainer::SideSample> sides{side};

    GaussianCloud cloud = test::random_cloud(rng, 10);
    const auto obj = trainer.objective(cloud, 0, sides, w);
    *terms = obj.breakdown;
    GradStats st;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        std::vector<std::pair<double*, ParamGroup>> params;
        for_each_param(cloud.gaussians[i], [&](double& v, ParamGroup g) { params.emplace_back(&v, g); });
        const ParamArray analytic = param_array(obj.grads[i]);
        for (std::size_t k = 0; k < params.size(); ++k) {
            double* v = params[k].first;
            const double saved = *v;
            auto central = [&](double h) {
                *v = saved + h;
                const double lp = trainer.objective(cloud, 0, sides, w).breakdown.total;
                *v = saved - h;
                const double lm = trainer.objective(cloud, 0, sides, w).breakdown.total;
                *v = saved;
                return (lp - lm) / (2.0 * h);
            };
            const double err = test::rel_error(analytic[k], central(1e-4));
            const int g = static_cast<int>(params[k].second);
            ++st.total;
            ++st.group_total[g];
            if (err < 1e-3) {
                ++st.passed;
                ++st.group_passed[g];
            } else if (test::rel_error(analytic[k], central(1e-5)) < 1e-3 &&
                       test::rel_error(analytic[k], central(1e-6)) < 1e-3) {
                ++st.resolved;
            }
            st.worst = std::max(st.worst, err);
        }
    }
    return st;
}

void gradient_oracle() {
    const auto t0 = Clock::now();
    LossBreakdown t8, t16;
    const GradStats a = gradient_check(8, false, 7, &t8);
    const GradStats b = gradient_check(16, true, 7, &t16);
    const double secs = seconds_since(t0);
    const bool active8 = t8.semantic > 0 && t8.local_depth > 0 && t8.global_depth > 0 && t8.l1 > 0;
    const bool active16 = active8 && t16.semantic > 0 && t16.local_depth > 0 && t16.dssim > 0;
    std::string groups;
    for (int g = 0; g < kParamGroupCount; ++g) {
        groups += fmt(" %d/%d", a.group_passed[g] + b.group_passed[g], a.group_total[g] + b.group_total[g]);
    }
    report("gradient_oracle",
           a.fraction() >= 0.99 && b.fraction() >= 0.99 && active8 && active16 && secs < 60.0,
           fmt("h=1e-4, rel err < 1e-3: 8x8 (no D-SSIM, window is 11) %d/%d = %.4f; 16x16 all terms %d/%d = %.4f; "
               "per group%s; mismatches that agree at h=1e-5 and 1e-6: %d of %d; %.1fs",
               a.passed, a.total, a.fraction(), b.passed, b.total, b.fraction(), groups.c_str(),
               a.resolved + b.resolved, a.total - a.passed + b.total - b.passed, secs));
}

// ---------------------------------------------------------------------------

void compositing_conservation() {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> count(1, 16);
    int bad_alpha = 0, bad_trans = 0, bad_perm = 0;
    for (int s = 0; s < 1000; ++s) {
        const Camera cam = test::looking_camera(12, 12, 24.0, Vec3(0.3, -0.2, -3.0));
        const GaussianCloud cloud = test::random_cloud(rng, count(rng), 1.0);
        const RenderOutput r = render(cloud, cam);
        const auto& ctx = r.ctx;
        for (std::size_t p = 0; p < r.alpha_acc.pixel_count(); ++p) {
            const double acc = r.alpha_acc.data[p];
            if (!(acc >= 0.0 && acc <= 1.0)) ++bad_alpha;
            double prev = 1.0;
            bool ok = true;
            for (std::size_t b = ctx.pixel_offsets[p]; b < ctx.pixel_offsets[p + 1]; ++b) {
                ok &= ctx.blends[b].transmittance <= prev;
                prev = ctx.blends[b].transmittance;
            }
            ok &= ctx.final_transmittance[p] <= prev;
            if (!ok) ++bad_trans;
        }
        GaussianCloud shuffled = cloud;
        std::shuffle(shuffled.gaussians.begin(), shuffled.gaussians.end(), rng);
        const RenderOutput q = render(shuffled, cam);
        if (q.color.data != r.color.data || q.depth.data != r.depth.data || q.alpha_acc.data != r.alpha_acc.data) {
            ++bad_perm;
        }
    }
    report("compositing", bad_alpha == 0 && bad_trans == 0 && bad_perm == 0,
           fmt("1000 scenes: alpha_acc out of [0,1] at %d px, transmittance increases at %d px, "
               "%d permutations not bit-identical",
               bad_alpha, bad_trans, bad_perm));
}

// ---------------------------------------------------------------------------

DepthMap random_depth(std::mt19937_64& rng, int w, int h) {
    std::uniform_real_distribution<double> u(1.0, 5.0);
    Image img(w, h, 1);
    for (auto& v : img.data) v = u(rng);
    return DepthMap(img);
}

void pearson_suite() {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_int_distribution<int> len(2, 64);
    double max_corr = 0.0;
    double worst_norm = 0.0;
    for (int t = 0; t < 20000; ++t) {
        const int n = len(rng);
        std::vector<double> a(n), b(n);
        const double k = 3.0 * u(rng);
        const double noise = t % 3 == 0 ? 0.0 : std::pow(10.0, -8.0 * std::abs(u(rng)));
        for (int i = 0; i < n; ++i) {
            a[i] = 1e3 * u(rng);
            b[i] = t % 2 ? u(rng) : k * a[i] + noise * u(rng) + 7.0;
        }
        max_corr = std::max(max_corr, std::abs(pearson(a, b)));
        if (n >= 3 && t % 2) {
            const double lhs = pearson(local_normalize(a, 1e-8), local_normalize(b, 1e-8));
            worst_norm = std::max(worst_norm, std::abs(lhs - pearson(a, b)));
        }
    }
    double worst_affine = 0.0, worst_self = 0.0, worst_neg = 0.0;
    std::uniform_real_distribution<double> scale(0.01, 100.0);
    for (int t = 0; t < 200; ++t) {
        const DepthMap r = random_depth(rng, 16, 16);
        const DepthMap d = random_depth(rng, 16, 16);
        DepthMap ad = d;
        const double s = scale(rng), off = 10.0 * u(rng);
        for (auto& v : ad.values.data) v = s * v + off;
        Image ar = r.values;
        for (auto& v : ar.data) v = s * v + off;
        worst_affine = std::max({worst_affine,
                                 std::abs(local_depth_loss(r.values, d, 4).value - local_depth_loss(r.values, ad, 4).value),
                                 std::abs(local_depth_loss(r.values, d, 4).value - local_depth_loss(ar, d, 4).value),
                                 std::abs(global_depth_loss(r.values, d).value - global_depth_loss(r.values, ad).value),
                                 std::abs(global_depth_loss(r.values, d).value - global_depth_loss(ar, d).value)});
        DepthMap neg = d;
        for (auto& v : neg.values.data) v = -v;
        worst_self = std::max(worst_self, std::abs(local_depth_loss(d.values, d, 4).value));
        worst_neg = std::max(worst_neg, std::abs(local_depth_loss(d.values, neg, 4).value - 2.0));
    }
    report("pearson_suite",
           max_corr <= 1.0 + 1e-9 && worst_affine <= 1e-6 && worst_norm <= 1e-6 && worst_self <= 1e-9 &&
               worst_neg <= 1e-9,
           fmt("max |Corr| %.17g; affine gap %.2e; localnorm gap %.2e; L(D,D) %.2e; |L(D,-D)-2| %.2e", max_corr,
               worst_affine, worst_norm, worst_self, worst_neg));
}

// ---------------------------------------------------------------------------

// Direct per-window SSIM over valid 11x11 windows.
double brute_ssim(const Image& x, const Image& y) {
    const int win = 11;
    double kernel[win][win];
    double ksum = 0.0;
    for (int i = 0; i < win; ++i) {
        for (int j = 0; j < win; ++j) {
            const double di = i - 5, dj = j - 5;
            kernel[i][j] = std::exp(-(di * di + dj * dj) / (2.0 * 1.5 * 1.5));
            ksum += kernel[i][j];
        }
    }
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double total = 0.0;
    int count = 0;
    for (int c = 0; c < x.channels; ++c) {
        for (int y0 = 0; y0 + win <= x.height; ++y0) {
            for (int x0 = 0; x0 + win <= x.width; ++x0) {
                double mx = 0, my = 0;
                for (int i = 0; i < win; ++i) {
                    for (int j = 0; j < win; ++j) {
                        const double k = kernel[i][j] / ksum;
                        mx += k * x.at(x0 + j, y0 + i, c);
                        my += k * y.at(x0 + j, y0 + i, c);
                    }
                }
                double vx = 0, vy = 0, cxy = 0;
                for (int i = 0; i < win; ++i) {
                    for (int j = 0; j < win; ++j) {
                        const double k = kernel[i][j] / ksum;
                        const double dx = x.at(x0 + j, y0 + i, c) - mx;
                        const double dy = y.at(x0 + j, y0 + i, c) - my;
                        vx += k * dx * dx;
                        vy += k * dy * dy;
                        cxy += k * dx * dy;
                    }
                }
                total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                ++count;
            }
        }
    }
    return total / count;
}

void ssim_oracle() {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
        Image a(16, 16, 3), b(16, 16, 3);
        for (auto& v : a.data) v = u(rng);
        for (std::size_t i = 0; i < b.size(); ++i) b.data[i] = std::clamp(a.data[i] + 0.3 * (u(rng) - 0.5), 0.0, 1.0);
        if (t % 4 == 0) {
            for (auto& v : b.data) v = u(rng);
        }
        worst = std::max(worst, std::abs(ssim(a, b) - brute_ssim(a, b)));
    }
    Image ref(10, 10, 1), one_off(10, 10, 1);
    one_off.data[42] = 1.0;
    const double p_direct = psnr_from_mse(0.01);
    const double p_images = psnr(one_off, ref);
    report("ssim_oracle", worst <= 1e-6 && p_direct == 20.0 && p_images == 20.0,
           fmt("20 pairs 16x16: max |ssim - brute force| %.2e; psnr(MSE=0.01) = %.17g (from images %.17g)", worst,
               p_direct, p_images));
}

// ---------------------------------------------------------------------------

bool same_scene(const Scene& a, const Scene& b) {
    if (a.view_count() != b.view_count() || a.names != b.names || a.train != b.train || a.test != b.test) return false;
    for (std::size_t v = 0; v < a.view_count(); ++v) {
        const Camera &ca = a.cameras[v], &cb = b.cameras[v];
        if (ca.fx != cb.fx || ca.fy != cb.fy || ca.cx != cb.cx || ca.cy != cb.cy || ca.width != cb.width ||
            ca.height != cb.height || ca.world_to_camera.rotation != cb.world_to_camera.rotation ||
            ca.world_to_camera.translation != cb.world_to_camera.translation) {
            return false;
        }
        if (a.images[v].data != b.images[v].data) return false;
    }
    return true;
}

bool same_cloud(const GaussianCloud& a, const GaussianCloud& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (param_array(a.gaussians[i]) != param_array(b.gaussians[i])) return false;
    }
    return true;
}

void format_round_trips() {
    const fs::path dir = fs::temp_directory_path() / "sparsesplat_acceptance_formats";
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::mt19937_64 rng(31);
    std::normal_distribution<float> n(0.0f, 10.0f);

    Image depth(8, 6, 1);
    for (auto& v : depth.data) v = n(rng);
    write_pfm(dir / "d.pfm", DepthMap(depth));
    const bool pfm = read_pfm(dir / "d.pfm").values.data == depth.data;

    FeatureEmbedding e;
    for (int i = 0; i < 384; ++i) e.values.push_back(n(rng));
    write_femb(dir / "e.femb", e);
    const bool femb = read_femb(dir / "e.femb").values == e.values;

    const GaussianCloud cloud = quantize_to_f32(test::random_cloud(rng, 50));
    save_checkpoint(dir / "c.sidg", cloud);
    const GaussianCloud back = load_checkpoint(dir / "c.sidg");
    const bool ckpt = same_cloud(back, cloud) && encode_checkpoint(back) == read_file_bytes(dir / "c.sidg");

    SynthSpec spec;
    spec.gaussians = 30;
    spec.views = 5;
    spec.width = spec.height = 20;
    spec.train_views = 2;
    synth_scene(spec, dir / "a");
    const LoadedScene la = load_colmap_scene(dir / "a");
    save_colmap_scene(dir / "b", la.scene, la.points);
    const LoadedScene lb = load_colmap_scene(dir / "b");
    bool colmap = same_scene(la.scene, lb.scene) && same_cloud(la.cloud, lb.cloud);
    for (const char* f : {"cameras.txt", "images.txt", "points3D.txt", "split.txt"}) {
        colmap &= read_file_bytes(dir / "a" / f) == read_file_bytes(dir / "b" / f);
    }
    report("format_round_trips", pfm && femb && ckpt && colmap,
           fmt("pfm %s, femb %s, checkpoint %s, colmap load/save/load %s", pfm ? "exact" : "DIFFERS",
               femb ? "exact" : "DIFFERS", ckpt ? "exact" : "DIFFERS", colmap ? "exact" : "DIFFERS"));
}

// ---------------------------------------------------------------------------

struct AblationRun {
    double test_psnr = 0.0;
    double train_psnr = 0.0;
    std::size_t gaussians = 0;
    Bytes checkpoint;
};

constexpr int kAblationIterations = 2000;

AblationRun ablation_run(const SynthResult& s, const PriorSource& priors, std::uint64_t seed, int config) {
    LossWeights w;
    w.patch_size = 16;
    w.omega_sem = config >= 1 ? w.omega_sem : 0.0;
    w.omega_depth = config >= 2 ? w.omega_depth : 0.0;
    TrainConfig c;
    c.iterations = kAblationIterations;
    c.densify_until = kAblationIterations / 2;
    c.seed = seed;
    c.side_views = config == 0 ? 0 : 1;
    const TrainResult r = train(s.scene, init_cloud_from_points(s.points), priors, w, c);
    return {*r.trace.back().test_psnr, *r.trace.back().train_psnr, r.cloud.size(), encode_checkpoint(r.cloud)};
}

void ablation_overfit_determinism(bool ablation, bool overfit, bool determinism) {
    const auto t0 = Clock::now();
    const char* names[3] = {"L0", "L0+sem", "L0+sem+depth"};
    double mean[3] = {0, 0, 0};
    double min_train = 1e9;
    Bytes first_full;
    SynthResult first_scene;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        SynthSpec spec; // 64x64, 200 Gaussians, 3 training + 5 held-out views
        spec.seed = seed;
        const SynthResult s = make_synth_scene(spec);
        const PriorSource priors = PriorSource::from_oracle(s.ground_truth);
        for (int cfg = 0; cfg < 3; ++cfg) {
            const AblationRun r = ablation_run(s, priors, seed, cfg);
            mean[cfg] += r.test_psnr / 3.0;
            min_train = std::min(min_train, r.train_psnr);
            std::printf("     seed %llu %-13s held-out %.3f dB  train %.3f dB  %zu Gaussians\n",
                        static_cast<unsigned long long>(seed), names[cfg], r.test_psnr, r.train_psnr, r.gaussians);
            std::fflush(stdout);
            if (seed == 0 && cfg == 2) {
                first_full = r.checkpoint;
                first_scene = s;
            }
        }
    }
    const double secs = seconds_since(t0);
    if (ablation) {
        report("regularizer_ablation",
               mean[1] >= mean[0] && mean[2] >= mean[1] - 0.1 && secs < 1800.0,
               fmt("mean held-out PSNR over 3 seeds: L0 %.3f, +sem %.3f, +sem+depth %.3f (need %.3f >= %.3f and "
                   "%.3f >= %.3f); %.0fs",
                   mean[0], mean[1], mean[2], mean[1], mean[0], mean[2], mean[1] - 0.1, secs));
    }
    if (overfit) {
        report("overfit_smoke", min_train > 30.0,
               fmt("lowest training-view PSNR after %d iterations across the 9 runs: %.3f dB", kAblationIterations,
                   min_train));
    }
    if (determinism) {
        const PriorSource priors = PriorSource::from_oracle(first_scene.ground_truth);
        const Bytes again = ablation_run(first_scene, priors, 0, 2).checkpoint;
        report("determinism", again == first_full,
               fmt("two full-objective runs, seed 0: checkpoints of %zu bytes %s", again.size(),
                   again == first_full ? "bit-identical" : "DIFFER"));
    }
}

} // namespace

int main(int argc, char** argv) {
    std::set<std::string> only(argv + 1, argv + argc);
    auto want = [&](const char* n) { return only.empty() || only.count(n) > 0; };
    try {
        if (want("gradient_oracle")) gradient_oracle();
        if (want("compositing")) compositing_conservation();
        if (want("pearson_suite")) pearson_suite();
        if (want("ssim_oracle")) ssim_oracle();
        if (want("format_round_trips")) format_round_trips();
        const bool a = want("regularizer_ablation"), o = want("overfit_smoke"), d = want("determinism");
        if (a || o || d) ablation_overfit_determinism(a, o, d);
    } catch (const std::exception& e) {
        std::printf("FAIL %-22s unexpected exception: %s\n", "harness", e.what());
        return 1;
    }
    std::printf("%s: %d criteria failed\n", failures ? "FAIL" : "PASS", failures);
    return failures ? 1 : 0;
}
