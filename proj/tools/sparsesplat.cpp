#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sparsesplat/sparsesplat.hpp"

using namespace sparsesplat;
namespace fs = std::filesystem;

namespace {

// --<key> for every RunConfig field plus --config; file values sit under flags.
struct ConfigFlags {
    std::string config_path;
    std::map<std::string, std::string> values;

    void attach(CLI::App* app) {
        app->add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
        for (const auto& key : RunConfig{}.keys()) app->add_option("--" + key, values[key]);
    }

    RunConfig resolve(CLI::App* app) const {
        nlohmann::json j = nlohmann::json::object();
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            try {
                in >> j;
            } catch (const nlohmann::json::parse_error& e) {
                throw ConfigError("config " + config_path + " is not valid JSON: " + e.what());
            }
            if (!j.is_object()) throw ConfigError("config must be a JSON object");
        }
        for (const auto& [key, text] : values) {
            if (app->count("--" + key) > 0) j[key] = parse_override(key, text);
        }
        return run_config_from_json(j);
    }
};

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    out << text;
    if (!out) throw IoError("cannot write " + path.string());
}

std::vector<int> pick_views(const Scene& scene, const std::string& which) {
    if (which == "train") return scene.train;
    if (which == "test") return scene.test;
    if (which == "all") {
        std::vector<int> all(scene.view_count());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
        return all;
    }
    throw ConfigError("--views must be train, test or all");
}

Camera camera_from_json(const nlohmann::json& j) {
    Camera cam;
    cam.fx = j.at("fx").get<double>();
    cam.fy = j.at("fy").get<double>();
    cam.cx = j.at("cx").get<double>();
    cam.cy = j.at("cy").get<double>();
    cam.width = j.at("width").get<int>();
    cam.height = j.at("height").get<int>();
    const auto q = j.at("rotation").get<std::vector<double>>();
    const auto t = j.at("translation").get<std::vector<double>>();
    if (q.size() != 4 || t.size() != 3) throw ConfigError("pose file needs rotation[4] and translation[3]");
    cam.world_to_camera.rotation = Vec4(q[0], q[1], q[2], q[3]);
    cam.world_to_camera.translation = Vec3(t[0], t[1], t[2]);
    if (j.contains("near")) cam.near = j.at("near").get<double>();
    if (j.contains("far")) cam.far = j.at("far").get<double>();
    const auto bad = camera_violations(cam);
    if (!bad.empty()) throw InvalidInputError("pose file: " + bad.front());
    return cam;
}

int run_train(const RunConfig& c) {
    if (c.output_dir.empty()) throw ConfigError("train needs output_dir");
    PreparedRun run = prepare_run(c);
    const fs::path out = c.output_dir;
    fs::create_directories(out);
    write_text(out / "config.json", to_json(c).dump(2) + "\n");
    std::ofstream trace(out / "metrics.jsonl");
    const Scene& scene = run.loaded.scene;
    const auto on_snapshot = [&](const TrainState& state, const TraceRecord& rec) {
        char name[64];
        std::snprintf(name, sizeof name, "checkpoint_%06d.sidg", rec.iteration);
        save_checkpoint(out / name, state.cloud);
        std::fprintf(stderr, "iter %d  loss %.5f  gaussians %zu  train psnr %.3f", rec.iteration, rec.terms.total,
                     rec.gaussians, rec.train_psnr.value_or(0.0));
        if (rec.test_psnr) std::fprintf(stderr, "  test psnr %.3f", *rec.test_psnr);
        std::fprintf(stderr, "\n");
    };
    const TrainResult result = train(scene, run.loaded.cloud, run.priors, c.weights, c.train, on_snapshot);
    for (const auto& rec : result.trace) trace << to_json(rec).dump() << '\n';
    if (!trace) throw IoError("cannot write " + (out / "metrics.jsonl").string());
    save_checkpoint(out / "cloud.sidg", result.cloud);
    if (!scene.test.empty()) {
        EvalReport report = evaluate(quantize_to_f32(result.cloud), scene, scene.test);
        report.config_hash = config_hash(c);
        report.seed = c.train.seed;
        report.iteration = c.train.iterations;
        write_text(out / "eval.txt", report.table());
        write_text(out / "eval.kv", report.key_values());
        std::cout << report.table();
    }
    return 0;
}

int run_sweep(const RunConfig& c, const std::string& axis, const std::vector<double>& values, const std::string& out) {
    PreparedRun run = prepare_run(c);
    const Scene& scene = run.loaded.scene;
    if (scene.test.empty()) throw ConfigError("sweep needs held-out views");
    const SweepResult s = sweep(axis, values, [&](double w) {
        LossWeights lw = c.weights;
        (axis == "omega_sem" ? lw.omega_sem : lw.omega_depth) = w;
        const TrainResult r = train(scene, run.loaded.cloud, run.priors, lw, c.train);
        std::fprintf(stderr, "%s=%g done\n", axis.c_str(), w);
        return evaluate(r.cloud, scene, scene.test);
    });
    std::cout << s.table();
    if (!out.empty()) write_text(out, s.data());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sparse-view Gaussian splatting with semantic and local depth regularization"};
    app.require_subcommand(1);

    ConfigFlags train_flags;
    auto* train_cmd = app.add_subcommand("train", "optimize a Gaussian cloud for a scene");
    train_flags.attach(train_cmd);

    std::string checkpoint, scene_dir, out_path, pose_path, depth_out;
    int view = -1;
    auto* render_cmd = app.add_subcommand("render", "render a checkpoint from a scene view or a pose file");
    render_cmd->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
    render_cmd->add_option("--out", out_path, "output PNG")->required();
    auto* view_opt = render_cmd->add_option("--view", view, "scene view index");
    render_cmd->add_option("--scene_dir", scene_dir)->check(CLI::ExistingDirectory);
    auto* pose_opt = render_cmd->add_option("--pose", pose_path, "JSON camera")->check(CLI::ExistingFile);
    render_cmd->add_option("--depth_out", depth_out, "also write the rendered depth as PFM");
    view_opt->excludes(pose_opt);

    std::string report_path, which = "test", eval_config;
    int eval_train_views = 0;
    auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint on scene views");
    eval_cmd->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--scene_dir", scene_dir)->required()->check(CLI::ExistingDirectory);
    eval_cmd->add_option("--report", report_path, "key=value report file");
    eval_cmd->add_option("--views", which, "train, test or all");
    eval_cmd->add_option("--train_views", eval_train_views, "apply the every-eighth-view split");
    eval_cmd->add_option("--config", eval_config, "run config recorded in the report")->check(CLI::ExistingFile);

    SynthSpec spec;
    std::string synth_out;
    auto* synth_cmd = app.add_subcommand("synth", "write a random synthetic scene");
    synth_cmd->add_option("--out", synth_out)->required();
    synth_cmd->add_option("--gaussians", spec.gaussians);
    synth_cmd->add_option("--views", spec.views);
    synth_cmd->add_option("--width", spec.width);
    synth_cmd->add_option("--height", spec.height);
    synth_cmd->add_option("--seed", spec.seed);
    synth_cmd->add_option("--train_views", spec.train_views);
    synth_cmd->add_option("--radius", spec.radius);
    synth_cmd->add_option("--arc_degrees", spec.arc_degrees);
    synth_cmd->add_option("--elevation", spec.elevation);
    synth_cmd->add_option("--fov_degrees", spec.fov_degrees);
    synth_cmd->add_option("--point_jitter", spec.point_jitter);

    ConfigFlags pre_flags;
    std::string pre_out;
    auto* pre_cmd = app.add_subcommand("precompute-priors", "write depth and feature prior files for a scene");
    pre_flags.attach(pre_cmd);
    pre_cmd->add_option("--out", pre_out, "output directory (default: prior_dir)");

    ConfigFlags sweep_flags;
    std::string axis, sweep_out;
    std::vector<double> values;
    auto* sweep_cmd = app.add_subcommand("sweep", "train and evaluate once per regularizer weight");
    sweep_flags.attach(sweep_cmd);
    sweep_cmd->add_option("--axis", axis, "omega_sem or omega_depth")->required();
    sweep_cmd->add_option("--values", values)->required()->delimiter(',');
    sweep_cmd->add_option("--data", sweep_out, "two-column weight/PSNR file");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train_cmd) {
            RunConfig c = train_flags.resolve(train_cmd);
            c.validate(true);
            return run_train(c);
        }
        if (*render_cmd) {
            const GaussianCloud cloud = load_checkpoint(checkpoint);
            Camera cam;
            if (!pose_path.empty()) {
                std::ifstream in(pose_path);
                nlohmann::json j;
                in >> j;
                cam = camera_from_json(j);
            } else {
                if (view < 0 || scene_dir.empty()) throw ConfigError("render needs --pose or --scene_dir with --view");
                const LoadedScene s = load_colmap_scene(scene_dir);
                if (view >= static_cast<int>(s.scene.view_count())) throw InvalidInputError("--view out of range");
                cam = s.scene.cameras[view];
            }
            const RenderOutput r = render(cloud, cam);
            write_png(out_path, r.color);
            if (!depth_out.empty()) write_pfm(depth_out, DepthMap(r.depth));
            return 0;
        }
        if (*eval_cmd) {
            LoadedScene s = load_colmap_scene(scene_dir);
            if (eval_train_views > 0) {
                const Split split = make_llff_split(static_cast<int>(s.scene.view_count()), eval_train_views);
                s.scene.train = split.train;
                s.scene.test = split.test;
            }
            EvalReport report = evaluate(load_checkpoint(checkpoint), s.scene, pick_views(s.scene, which));
            if (!eval_config.empty()) {
                const RunConfig c = load_run_config(eval_config, false);
                report.config_hash = config_hash(c);
                report.seed = c.train.seed;
                report.iteration = c.train.iterations;
            }
            std::cout << report.table();
            if (!report_path.empty()) write_text(report_path, report.key_values());
            return 0;
        }
        if (*synth_cmd) {
            synth_scene(spec, synth_out);
            return 0;
        }
        if (*pre_cmd) {
            RunConfig c = pre_flags.resolve(pre_cmd);
            if (pre_cmd->count("--prior_backend") == 0 && c.prior_backend == "oracle" && !c.prior_endpoint.empty()) {
                c.prior_backend = "service";
            }
            if (c.prior_backend == "file") throw ConfigError("precompute-priors needs the oracle or service backend");
            c.validate(true);
            const LoadedScene s = load_colmap_scene(c.scene_dir);
            const fs::path out = pre_out.empty() ? fs::path(c.resolved_prior_dir()) : fs::path(pre_out);
            precompute_priors(s.scene, make_prior_source(c), out, c.train.semantic_crop);
            return 0;
        }
        if (*sweep_cmd) {
            RunConfig c = sweep_flags.resolve(sweep_cmd);
            c.validate(true);
            return run_sweep(c, axis, values, sweep_out);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
