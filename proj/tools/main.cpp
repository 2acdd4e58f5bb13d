#include <omp.h>

#include <algorithm>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "l2s/harness/plot.hpp"
#include "l2s/harness/runner.hpp"
#include "l2s/meta/trainer.hpp"
#include "l2s/scene/scene_gen.hpp"
#include "l2s/scene/scene_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace l2s;

namespace {

json load_config(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError("config " + path + ": " + e.what(), (long long)e.byte);
    }
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

void apply(const json& cfg, meta::MetaConfig& m) {
    if (!cfg.contains("meta")) return;
    const json& j = cfg["meta"];
    get_if(j, "tau_max", m.tau_max);
    get_if(j, "p_buffer", m.p_buffer);
    get_if(j, "p_push", m.p_push);
    get_if(j, "p_push_back", m.p_push_back);
    get_if(j, "buffer_capacity", m.buffer_capacity);
    get_if(j, "rollout_max", m.rollout_max);
    get_if(j, "rollout_ramp_iters", m.rollout_ramp_iters);
    get_if(j, "meta_lr", m.meta_lr);
    get_if(j, "gamma", m.gamma);
    get_if(j, "lvs_epsilon", m.lvs_epsilon);
    get_if(j, "context_batch", m.context_batch);
    get_if(j, "target_views", m.target_views);
    get_if(j, "total_iters", m.total_iters);
    get_if(j, "use_lvs", m.use_lvs);
    get_if(j, "use_stability", m.use_stability);
    get_if(j, "dense_context", m.dense_context);
    get_if(j, "meta_update_per_inner_step", m.meta_update_per_inner_step);
    get_if(j, "lo_total_steps", m.lo_total_steps);
    get_if(j, "checkpoint_every", m.checkpoint_every);
}

void apply(const json& cfg, model::L2SConfig& m) {
    if (!cfg.contains("model")) return;
    const json& j = cfg["model"];
    get_if(j, "d_state", m.d_state);
    get_if(j, "n_blocks", m.n_blocks);
    get_if(j, "attn_dim", m.attn_dim);
    get_if(j, "mlp_hidden", m.mlp_hidden);
    get_if(j, "k_neighbors", m.k_neighbors);
    get_if(j, "knn_refresh", m.knn_refresh);
    get_if(j, "scale_hidden", m.scale_hidden);
    get_if(j, "attend_self", m.attend_self);
    get_if(j, "time_enc_L", m.time_enc_L);
}

void apply(const json& cfg, scene::SceneSpec& s) {
    if (!cfg.contains("scene")) return;
    const json& j = cfg["scene"];
    get_if(j, "n_gaussians", s.n_gaussians);
    get_if(j, "n_context", s.n_context);
    get_if(j, "n_target", s.n_target);
    get_if(j, "width", s.width);
    get_if(j, "height", s.height);
    get_if(j, "arc_radius", s.arc_radius);
    get_if(j, "arc_span_deg", s.arc_span_deg);
    get_if(j, "arc_elevation_deg", s.arc_elevation_deg);
    get_if(j, "focal_px", s.focal_px);
    get_if(j, "perturbation", s.perturbation);
}

void apply(const json& cfg, harness::RunConfig& r) {
    if (!cfg.contains("run")) return;
    const json& j = cfg["run"];
    get_if(j, "iterations", r.iterations);
    get_if(j, "eval_cadence", r.eval_cadence);
    get_if(j, "psnr_cap", r.psnr_cap);
    if (j.contains("views"))
        r.views = j["views"].get<std::string>() == "fps-8" ? harness::ViewPolicy::Fps8
                                                           : harness::ViewPolicy::FixedAll;
}

std::vector<int> parse_int_list(const std::string& s, const char* what) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            std::size_t pos = 0;
            out.push_back(std::stoi(tok, &pos));
            if (pos != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            throw ConfigError(std::string("bad ") + what + " entry '" + tok + "'");
        }
    }
    return out;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ','))
        if (!tok.empty()) out.push_back(tok);
    return out;
}

// A scene directory, or a directory of scene directories.
std::vector<std::string> scene_dirs_under(const std::string& root) {
    if (fs::exists(fs::path(root) / "scene.json")) return {root};
    std::vector<std::string> dirs;
    if (!fs::is_directory(root)) throw ConfigError("no such scene directory: " + root);
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory() && fs::exists(e.path() / "scene.json"))
            dirs.push_back(e.path().string());
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) throw ConfigError("no scenes found under " + root);
    return dirs;
}

std::ofstream open_out(const std::string& path, const char* what) {
    if (const fs::path dir = fs::path(path).parent_path(); !dir.empty())
        fs::create_directories(dir);
    std::ofstream out(path);
    if (!out) throw ConfigError(std::string("cannot write ") + what + " " + path);
    return out;
}

struct GlobalArgs {
    std::uint64_t seed = 0;
    std::string config;
    int threads = 0;
    bool deterministic = false;
};

void setup_threads(const GlobalArgs& g) {
    if (g.threads > 0) omp_set_num_threads(g.threads);
    // All reductions are fixed-order by construction; pinning the team size
    // keeps even scheduling identical across reruns.
    if (g.deterministic) omp_set_dynamic(0);
}

int cmd_gen(const GlobalArgs& g, const std::string& out_dir, int count,
            const scene::SceneSpec& spec) {
    fs::create_directories(out_dir);
    for (int i = 0; i < count; ++i) {
        const SceneDataset ds = scene::generate_scene(g.seed + (std::uint64_t)i, spec);
        char name[32];
        std::snprintf(name, sizeof name, "scene_%03d", i);
        const std::string dir = (fs::path(out_dir) / name).string();
        scene::save_scene(dir, ds);
        std::cout << dir << "\n";
    }
    return 0;
}

int cmd_meta_train(const GlobalArgs& g, const meta::MetaConfig& mcfg,
                   const model::L2SConfig& model_cfg, const std::string& scene_root,
                   int gen_scenes, const scene::SceneSpec& spec, const std::string& out_path,
                   const std::string& metrics_path, const std::string& resume_path) {
    std::vector<SceneDataset> scenes;
    if (gen_scenes > 0) {
        for (int i = 0; i < gen_scenes; ++i)
            scenes.push_back(scene::generate_scene(g.seed + 1000003ULL * (std::uint64_t)(i + 1), spec));
    } else if (!scene_root.empty()) {
        for (const std::string& dir : scene_dirs_under(scene_root))
            scenes.push_back(scene::load_scene(dir));
    } else {
        throw ConfigError("meta-train needs --scenes or --gen-scenes");
    }

    meta::MetaTrainer trainer(mcfg, model_cfg, std::move(scenes), g.seed);
    if (!resume_path.empty()) {
        nn::ParamStore<float> params;
        nn::ParamAdamState<float> adam;
        const auto counters = nn::load_model(resume_path, params, &adam);
        trainer.restore(std::move(params), std::move(adam), counters);
    }

    std::ofstream csv;
    if (!metrics_path.empty()) csv = open_out(metrics_path, "metrics CSV");
    trainer.train(metrics_path.empty() ? nullptr : &csv, out_path);
    trainer.save(out_path);
    std::cout << "model: " << out_path << " (meta step " << trainer.meta_step() << ")\n";
    return 0;
}

int cmd_optimize(const harness::RunConfig& cfg, const std::string& scene_dir,
                 const std::string& csv_path) {
    const SceneDataset ds = scene::load_scene(scene_dir);
    if (csv_path.empty()) {
        harness::run_optimize(ds, cfg, &std::cout);
    } else {
        std::ofstream csv = open_out(csv_path, "CSV");
        harness::run_optimize(ds, cfg, &csv);
    }
    return 0;
}

int cmd_compare(const GlobalArgs& g, const harness::RunConfig& base,
                const std::vector<std::string>& scene_dirs,
                const std::vector<harness::OptimizerKind>& methods, const std::string& csv_path,
                const std::string& plot_path) {
    std::vector<SceneDataset> scenes;
    for (const std::string& dir : scene_dirs) scenes.push_back(scene::load_scene(dir));

    // rows[m][s]: each worker thread owns one scene's runs end to end.
    std::vector<std::vector<std::vector<harness::OptimizeRow>>> rows(
        methods.size(), std::vector<std::vector<harness::OptimizeRow>>(scenes.size()));
    std::exception_ptr failure;
    std::mutex mu;
    const int workers = std::max(
        1, std::min<int>(g.threads > 0 ? g.threads : (int)std::thread::hardware_concurrency(),
                         (int)scenes.size()));
    std::vector<std::thread> pool;
    std::size_t next = 0;
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (;;) {
                std::size_t s;
                {
                    std::lock_guard<std::mutex> lock(mu);
                    if (failure || next >= scenes.size()) return;
                    s = next++;
                }
                try {
                    for (std::size_t m = 0; m < methods.size(); ++m) {
                        harness::RunConfig cfg = base;
                        cfg.optimizer = methods[m];
                        cfg.snapshot_dir.clear();
                        auto result = harness::run_optimize(scenes[s], cfg);
                        std::lock_guard<std::mutex> lock(mu);
                        rows[m][s] = std::move(result.rows);
                    }
                } catch (...) {
                    std::lock_guard<std::mutex> lock(mu);
                    if (!failure) failure = std::current_exception();
                    return;
                }
            }
        });
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);

    std::vector<std::vector<harness::OptimizeRow>> means;
    for (std::size_t m = 0; m < methods.size(); ++m) means.push_back(harness::mean_rows(rows[m]));

    if (!csv_path.empty()) {
        std::ofstream csv = open_out(csv_path, "CSV");
        csv << "method," << harness::optimize_csv_header() << "\n";
        for (std::size_t m = 0; m < methods.size(); ++m)
            for (const auto& row : means[m]) {
                csv << harness::optimizer_name(methods[m]) << ",";
                harness::write_csv_row(csv, row);
            }
    }

    const double base_psnr = means[0].front().psnr_target;
    const double gain = means[0].back().psnr_target - base_psnr;
    std::printf("reference %s: mean target psnr %.3f -> %.3f dB over %zu scene(s)\n",
                harness::optimizer_name(methods[0]), base_psnr, base_psnr + gain, scenes.size());
    for (std::size_t m = 0; m < methods.size(); ++m) {
        std::printf("%s:\n", harness::optimizer_name(methods[m]));
        for (const auto& tc : harness::threshold_crossings(means[m], means[0])) {
            if (tc.reached)
                std::printf("  %3d%% (%.3f dB): iter %.1f\n", tc.percent, tc.level_db, tc.iter);
            else
                std::printf("  %3d%% (%.3f dB): never reached\n", tc.percent, tc.level_db);
        }
    }

    if (!plot_path.empty()) {
        static const float palette[][3] = {{0.85f, 0.33f, 0.10f}, {0.00f, 0.45f, 0.74f},
                                           {0.47f, 0.67f, 0.19f}, {0.49f, 0.18f, 0.56f},
                                           {0.93f, 0.69f, 0.13f}};
        std::vector<harness::Series> series;
        for (std::size_t m = 0; m < methods.size(); ++m) {
            harness::Series s;
            s.label = harness::optimizer_name(methods[m]);
            for (const auto& row : means[m]) {
                s.x.push_back(row.iter);
                s.y.push_back(row.psnr_target);
            }
            const float* c = palette[m % 5];
            s.rgb[0] = c[0];
            s.rgb[1] = c[1];
            s.rgb[2] = c[2];
            series.push_back(std::move(s));
        }
        harness::plot_lines(plot_path, series, "TARGET PSNR VS ITERATION");
        std::printf("plot: %s\n", plot_path.c_str());
    }
    return 0;
}

int cmd_swap_study(const harness::RunConfig& target, harness::OptimizerKind source,
                   const std::string& scene_dir, const std::string& csv_path) {
    const SceneDataset ds = scene::load_scene(scene_dir);
    const auto runs = harness::run_swap_study(ds, target, source, &std::cout);
    if (!csv_path.empty()) {
        std::ofstream csv = open_out(csv_path, "CSV");
        csv << "group," << harness::optimize_csv_header() << "\n";
        for (const auto& run : runs)
            for (const auto& row : run.rows) {
                csv << run.group << ",";
                harness::write_csv_row(csv, row);
            }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"learn2splat: learned optimizers for 3D Gaussian splatting"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the verb

    GlobalArgs g;
    app.add_option("--seed", g.seed, "master RNG seed");
    app.add_option("--config", g.config, "JSON config file (sections: meta, model, scene, run)");
    app.add_option("--threads", g.threads, "OpenMP / worker thread count");
    app.add_flag("--deterministic", g.deterministic, "pin thread teams for bit-stable reruns");

    // gen
    auto* gen = app.add_subcommand("gen", "generate synthetic scenes");
    std::string gen_out;
    int gen_count = 1;
    scene::SceneSpec spec;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--count", gen_count, "number of scenes");
    gen->add_option("--gaussians", spec.n_gaussians, "gaussians per scene");
    gen->add_option("--context", spec.n_context, "context views");
    gen->add_option("--target", spec.n_target, "target views");
    gen->add_option("--width", spec.width, "image width");
    gen->add_option("--height", spec.height, "image height");
    gen->add_option("--perturbation", spec.perturbation, "initial cloud perturbation scale");

    // meta-train
    auto* mt = app.add_subcommand("meta-train", "meta-train the learned optimizer");
    std::string mt_scenes, mt_out, mt_metrics, mt_resume, mt_preset = "desk";
    int mt_gen_scenes = 0, mt_iters = -1;
    bool mt_lo = false;
    mt->add_option("--scenes", mt_scenes, "scene directory (or directory of scenes)");
    mt->add_option("--gen-scenes", mt_gen_scenes, "generate this many scenes instead");
    mt->add_option("--out", mt_out, "output model checkpoint")->required();
    mt->add_option("--metrics", mt_metrics, "metrics CSV path");
    mt->add_option("--resume", mt_resume, "checkpoint to resume from");
    mt->add_option("--preset", mt_preset, "model preset: desk | paper");
    mt->add_option("--iters", mt_iters, "total meta-iterations");
    mt->add_flag("--lo-baseline", mt_lo, "train the LO baseline head instead");

    // optimize
    auto* op = app.add_subcommand("optimize", "optimize one scene with a chosen optimizer");
    std::string op_scene, op_optimizer = "adam-3dgs", op_model, op_preset = "desk";
    std::string op_cadence, op_views = "fixed-all", op_freeze, op_csv, op_snapshots;
    int op_iters = 100;
    op->add_option("--scene", op_scene, "scene directory")->required();
    op->add_option("--optimizer", op_optimizer, "sgd | adam-3dgs | adam-3dgs-star | l2s | lo-baseline");
    op->add_option("--model", op_model, "model checkpoint for l2s / lo-baseline");
    op->add_option("--preset", op_preset, "model preset: desk | paper");
    op->add_option("--iters", op_iters, "iteration budget");
    op->add_option("--cadence", op_cadence, "eval iterations, e.g. 1,4,10,100");
    op->add_option("--views", op_views, "fixed-all | fps-8");
    op->add_option("--freeze", op_freeze, "parameter groups to freeze, e.g. means,shN");
    op->add_option("--csv", op_csv, "metrics CSV path (default stdout)");
    op->add_option("--snapshots", op_snapshots, "snapshot image directory");

    // compare
    auto* cp = app.add_subcommand("compare", "compare optimizers across scenes");
    std::vector<std::string> cp_scenes;
    std::string cp_methods = "adam-3dgs,l2s", cp_model, cp_preset = "desk";
    std::string cp_cadence, cp_views = "fixed-all", cp_csv, cp_plot;
    int cp_iters = 100;
    cp->add_option("--scene", cp_scenes, "scene directory (repeatable, or a directory of scenes)")
        ->required();
    cp->add_option("--methods", cp_methods, "comma list; first is the reference");
    cp->add_option("--model", cp_model, "model checkpoint for l2s / lo-baseline");
    cp->add_option("--preset", cp_preset, "model preset: desk | paper");
    cp->add_option("--iters", cp_iters, "iteration budget");
    cp->add_option("--cadence", cp_cadence, "eval iterations");
    cp->add_option("--views", cp_views, "fixed-all | fps-8");
    cp->add_option("--csv", cp_csv, "aggregate CSV path");
    cp->add_option("--plot", cp_plot, "curve plot PNG path");

    // swap-study
    auto* sw = app.add_subcommand("swap-study", "swap per-group updates between optimizers");
    std::string sw_scene, sw_source = "l2s", sw_target = "adam-3dgs", sw_model,
                sw_preset = "desk", sw_cadence, sw_csv;
    int sw_iters = 100;
    sw->add_option("--scene", sw_scene, "scene directory")->required();
    sw->add_option("--source", sw_source, "optimizer supplying the swapped group");
    sw->add_option("--target", sw_target, "optimizer driving the remaining groups");
    sw->add_option("--model", sw_model, "model checkpoint for l2s / lo-baseline");
    sw->add_option("--preset", sw_preset, "model preset: desk | paper");
    sw->add_option("--iters", sw_iters, "iteration budget");
    sw->add_option("--cadence", sw_cadence, "eval iterations");
    sw->add_option("--csv", sw_csv, "per-group CSV path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        setup_threads(g);
        const json cfg_json = load_config(g.config);
        apply(cfg_json, spec);

        if (gen->parsed()) return cmd_gen(g, gen_out, gen_count, spec);

        if (mt->parsed()) {
            meta::MetaConfig mcfg;
            apply(cfg_json, mcfg);
            if (mt_iters >= 0) mcfg.total_iters = mt_iters;
            model::L2SConfig model_cfg = model::config_preset(mt_preset);
            apply(cfg_json, model_cfg);
            if (mt_lo) {
                model_cfg.lo_baseline = true;
                mcfg.use_lvs = false;
                mcfg.use_stability = false;
                mcfg.meta_update_per_inner_step = true;
            }
            return cmd_meta_train(g, mcfg, model_cfg, mt_scenes, mt_gen_scenes, spec, mt_out,
                                  mt_metrics, mt_resume);
        }

        auto fill_run = [&](harness::RunConfig& cfg, const std::string& preset, int iters,
                            const std::string& cadence, const std::string& views,
                            const std::string& model_path) {
            cfg.model_cfg = model::config_preset(preset);
            apply(cfg_json, cfg.model_cfg);
            cfg.iterations = iters;
            apply(cfg_json, cfg);
            if (!cadence.empty()) cfg.eval_cadence = parse_int_list(cadence, "cadence");
            cfg.views = views == "fps-8" ? harness::ViewPolicy::Fps8
                                         : harness::ViewPolicy::FixedAll;
            cfg.model_path = model_path;
            cfg.seed = g.seed;
        };

        if (op->parsed()) {
            harness::RunConfig cfg;
            cfg.optimizer = harness::optimizer_from_name(op_optimizer);
            fill_run(cfg, op_preset, op_iters, op_cadence, op_views, op_model);
            for (const std::string& name : split_list(op_freeze))
                cfg.freeze[(std::size_t)param_group_index(name)] = true;
            cfg.snapshot_dir = op_snapshots;
            return cmd_optimize(cfg, op_scene, op_csv);
        }

        if (cp->parsed()) {
            harness::RunConfig cfg;
            fill_run(cfg, cp_preset, cp_iters, cp_cadence, cp_views, cp_model);
            std::vector<harness::OptimizerKind> methods;
            for (const std::string& name : split_list(cp_methods))
                methods.push_back(harness::optimizer_from_name(name));
            if (methods.empty()) throw ConfigError("compare: --methods is empty");
            std::vector<std::string> dirs;
            for (const std::string& s : cp_scenes)
                for (const std::string& d : scene_dirs_under(s)) dirs.push_back(d);
            return cmd_compare(g, cfg, dirs, methods, cp_csv, cp_plot);
        }

        if (sw->parsed()) {
            harness::RunConfig cfg;
            cfg.optimizer = harness::optimizer_from_name(sw_target);
            fill_run(cfg, sw_preset, sw_iters, sw_cadence, "fixed-all", sw_model);
            return cmd_swap_study(cfg, harness::optimizer_from_name(sw_source), sw_scene, sw_csv);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return 2;
    } catch (const ShapeError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numerical abort: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
