#include "l2s/harness/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>

#include "l2s/io/image_io.hpp"
#include "l2s/knn/knn.hpp"
#include "l2s/loss/image_loss.hpp"
#include "l2s/meta/rollout.hpp"
#include "l2s/nn/params.hpp"
#include "l2s/opt/adam.hpp"
#include "l2s/render/renderer.hpp"
#include "l2s/scene/pointops.hpp"

namespace l2s::harness {
namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

MatrixF means_of(const MatrixF& params) {
    MatrixF m(params.rows, 3);
    for (std::size_t g = 0; g < params.rows; ++g)
        for (int c = 0; c < 3; ++c) m.at(g, (std::size_t)c) = params.at(g, (std::size_t)c);
    return m;
}

class SgdStepper final : public Stepper {
  public:
    explicit SgdStepper(const opt::ParamGroupConfig& cfg) : cfg_(cfg) {}

    MatrixF displacement(const MatrixF&, const MatrixF& raw_grads, int iter) override {
        MatrixF d(raw_grads.rows, raw_grads.cols);
        for (std::size_t col = 0; col < raw_grads.cols; ++col) {
            const float lr = (float)opt::column_lr(cfg_, col, iter - 1);
            for (std::size_t r = 0; r < raw_grads.rows; ++r)
                d.at(r, col) = lr * raw_grads.at(r, col);
        }
        return d;
    }

  private:
    opt::ParamGroupConfig cfg_;
};

class AdamStepper final : public Stepper {
  public:
    AdamStepper(const opt::ParamGroupConfig& cfg, std::size_t G)
        : cfg_(cfg), st_(G, kParamDim) {}

    MatrixF displacement(const MatrixF&, const MatrixF& raw_grads, int) override {
        // Same pre-increment step index and kernel as adam_step, so the
        // resulting trajectory matches an in-place adam_step bit for bit.
        const std::int64_t t = st_.step;
        MatrixF n = opt::adam_normalize(raw_grads, st_, (float)cfg_.beta1, (float)cfg_.beta2,
                                        (float)cfg_.eps);
        for (std::size_t col = 0; col < n.cols; ++col) {
            const float lr = (float)opt::column_lr(cfg_, col, t);
            for (std::size_t r = 0; r < n.rows; ++r) n.at(r, col) *= lr;
        }
        return n;
    }

  private:
    opt::ParamGroupConfig cfg_;
    opt::AdamState st_;
};

class L2sStepper final : public Stepper {
  public:
    L2sStepper(model::L2SModel<float> mdl, const MatrixF& initial_params, std::uint64_t seed,
               int total_iters)
        : mdl_(std::move(mdl)), shadow_(initial_params.rows, kParamDim), total_(total_iters) {
        Rng rng(seed);
        nn::NoGradGuard ng;
        states_ = model::init_latents<float>(initial_params.rows, mdl_.cfg.d_state, rng);
    }

    MatrixF displacement(const MatrixF& params, const MatrixF& raw_grads, int iter) override {
        nn::NoGradGuard ng;
        const MatrixF adam_grads = opt::adam_normalize(raw_grads, shadow_);
        if (last_knn_iter_ < 0 || iter - last_knn_iter_ >= mdl_.cfg.knn_refresh) {
            nbrs_ = knn::build_knn(means_of(params), mdl_.cfg.k_neighbors, mdl_.cfg.attend_self);
            last_knn_iter_ = iter;
        }
        auto step = mdl_.step(params, adam_grads, states_, nbrs_, iter - 1, total_);
        states_ = step.new_states;
        return step.delta->matrix();
    }

  private:
    model::L2SModel<float> mdl_;
    nn::Tensor<float> states_;
    opt::AdamState shadow_;
    knn::NeighborTable nbrs_;
    int total_ = 0;
    int last_knn_iter_ = -1;
};

void apply_freeze(MatrixF& d, const std::array<bool, kNumParamGroups>& freeze) {
    for (int g = 0; g < kNumParamGroups; ++g) {
        if (!freeze[(std::size_t)g]) continue;
        const auto& grp = kParamGroups[(std::size_t)g];
        for (std::size_t r = 0; r < d.rows; ++r)
            for (std::size_t c = (std::size_t)grp.begin; c < (std::size_t)grp.end; ++c)
                d.at(r, c) = 0.f;
    }
}

// Raw inner-loss gradient averaged over the batch views (same recipe as the
// inner rollout).
MatrixF batch_gradient(const meta::RolloutProblem<float>& prob, const MatrixF& params,
                       const std::vector<int>& batch) {
    MatrixF raw(params.rows, kParamDim);
    const float inv_b = 1.f / (float)batch.size();
    for (int vid : batch) {
        const auto& cam = prob.cameras[(std::size_t)vid];
        Image rendered(cam.width, cam.height);
        render_tiled(params, cam, prob.opts, rendered.rgb.data());
        Image up(cam.width, cam.height);
        inner_loss_backward(prob.images[(std::size_t)vid], rendered, inv_b, up);
        render_backward_tiled(params, cam, prob.opts, up.rgb.data(), raw);
    }
    if (!all_finite(raw.data.data(), raw.size()))
        throw NumericError("scene " + prob.scene_id + ": non-finite inner gradient");
    return raw;
}

std::vector<int> pick_views(const meta::RolloutProblem<float>& prob, ViewPolicy policy,
                            Rng& rng) {
    const auto& ids = prob.context_ids;
    if (policy == ViewPolicy::FixedAll || (int)ids.size() <= 8) return ids;
    std::vector<Vec3<float>> centers(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto& t = prob.cameras[(std::size_t)ids[i]].t;
        centers[i] = {t.x, t.y, t.z};
    }
    const int first = (int)rng.uniform_int(0, (std::int64_t)ids.size() - 1);
    std::vector<int> out;
    for (int pick : scene::fps_indices(centers, 8, first)) out.push_back(ids[(std::size_t)pick]);
    return out;
}

OptimizeRow eval_row(const meta::RolloutProblem<float>& prob, const MatrixF& params, int iter,
                     double wall_ms, double cap) {
    OptimizeRow row;
    row.iter = iter;
    row.wall_ms = wall_ms;
    auto eval_set = [&](const std::vector<int>& ids, double& out_psnr, double& out_ssim) {
        if (ids.empty()) {
            out_psnr = out_ssim = std::numeric_limits<double>::quiet_NaN();
            return;
        }
        double p = 0, s = 0;
        for (int vid : ids) {
            const auto& cam = prob.cameras[(std::size_t)vid];
            Image rendered(cam.width, cam.height);
            render_tiled(params, cam, prob.opts, rendered.rgb.data());
            p += psnr(prob.images[(std::size_t)vid], rendered, cap);
            s += ssim(prob.images[(std::size_t)vid], rendered);
        }
        out_psnr = p / (double)ids.size();
        out_ssim = s / (double)ids.size();
    };
    eval_set(prob.context_ids, row.psnr_context, row.ssim_context);
    eval_set(prob.target_ids, row.psnr_target, row.ssim_target);
    return row;
}

void save_snapshots(const meta::RolloutProblem<float>& prob,
                    const std::vector<std::string>& view_names, const MatrixF& params, int iter,
                    const std::string& dir) {
    std::filesystem::create_directories(dir);
    for (std::size_t v = 0; v < prob.cameras.size(); ++v) {
        const auto& cam = prob.cameras[v];
        Image rendered(cam.width, cam.height);
        render_tiled(params, cam, prob.opts, rendered.rgb.data());
        char suffix[16];
        std::snprintf(suffix, sizeof suffix, "_%06d.png", iter);
        io::save_png((std::filesystem::path(dir) / (view_names[v] + suffix)).string(), rendered);
    }
}

struct MixSpec {
    Stepper* source = nullptr;  // null: no mixing
    int group = -1;             // columns taken from source
};

std::vector<OptimizeRow> drive(const SceneDataset& scene, const RunConfig& cfg,
                               Stepper& stepper, const MixSpec& mix, GaussianCloud* out_cloud,
                               std::ostream* csv) {
    auto prob = meta::make_problem<float>(scene);
    if (prob.context_ids.empty()) throw ConfigError("optimize: scene has no context views");
    GaussianCloud cloud = scene.initial_cloud;
    if (cloud.size() == 0) throw ConfigError("optimize: scene has an empty initial cloud");
    validate_cloud_finite(cloud.params);

    const std::vector<int> cadence = cfg.cadence();
    std::vector<int> snaps = cfg.snapshot_iters.empty() ? cadence : cfg.snapshot_iters;
    std::vector<std::string> view_names;
    for (const auto& v : scene.views) view_names.push_back(v.name);

    if (csv) *csv << optimize_csv_header() << "\n";
    std::vector<OptimizeRow> rows;
    auto emit = [&](int iter, double wall) {
        rows.push_back(eval_row(prob, cloud.params, iter, wall, cfg.psnr_cap));
        if (csv) write_csv_row(*csv, rows.back());
        if (!cfg.snapshot_dir.empty() &&
            std::binary_search(snaps.begin(), snaps.end(), iter))
            save_snapshots(prob, view_names, cloud.params, iter, cfg.snapshot_dir);
    };
    emit(0, 0.0);

    Rng view_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    double wall_ms = 0;
    for (int iter = 1; iter <= cfg.iterations; ++iter) {
        const auto t0 = Clock::now();
        const auto batch = pick_views(prob, cfg.views, view_rng);
        const MatrixF raw = batch_gradient(prob, cloud.params, batch);

        MatrixF d = stepper.displacement(cloud.params, raw, iter);
        if (mix.source) {
            MatrixF ds = mix.source->displacement(cloud.params, raw, iter);
            const auto& grp = kParamGroups[(std::size_t)mix.group];
            for (std::size_t r = 0; r < d.rows; ++r)
                for (std::size_t c = (std::size_t)grp.begin; c < (std::size_t)grp.end; ++c)
                    d.at(r, c) = ds.at(r, c);
        }
        apply_freeze(d, cfg.freeze);
        for (std::size_t i = 0; i < cloud.params.size(); ++i) cloud.params.data[i] -= d.data[i];
        if (!all_finite(cloud.params.data.data(), cloud.params.size()))
            throw NumericError("optimize: non-finite parameters at iteration " +
                               std::to_string(iter));
        wall_ms += ms_since(t0);

        if (std::binary_search(cadence.begin(), cadence.end(), iter)) emit(iter, wall_ms);
    }
    if (out_cloud) *out_cloud = std::move(cloud);
    return rows;
}

}  // namespace

OptimizerKind optimizer_from_name(const std::string& name) {
    if (name == "sgd") return OptimizerKind::Sgd;
    if (name == "adam-3dgs") return OptimizerKind::Adam3dgs;
    if (name == "adam-3dgs-star") return OptimizerKind::Adam3dgsStar;
    if (name == "l2s") return OptimizerKind::L2s;
    if (name == "lo-baseline") return OptimizerKind::LoBaseline;
    throw ConfigError("unknown optimizer '" + name +
                      "' (expected sgd, adam-3dgs, adam-3dgs-star, l2s, lo-baseline)");
}

const char* optimizer_name(OptimizerKind kind) {
    switch (kind) {
        case OptimizerKind::Sgd: return "sgd";
        case OptimizerKind::Adam3dgs: return "adam-3dgs";
        case OptimizerKind::Adam3dgsStar: return "adam-3dgs-star";
        case OptimizerKind::L2s: return "l2s";
        case OptimizerKind::LoBaseline: return "lo-baseline";
    }
    return "?";
}

void RunConfig::validate() const {
    // iterations == 0 is a legal edge: the run emits only the initialization row.
    if (iterations < 0) throw ConfigError("run config: iterations must be >= 0");
    if (!(psnr_cap > 0)) throw ConfigError("run config: psnr cap must be positive");
    for (int e : eval_cadence)
        if (e < 0 || e > iterations)
            throw ConfigError("run config: eval iteration " + std::to_string(e) +
                              " outside [0, iterations]");
    for (int s : snapshot_iters)
        if (s < 0 || s > iterations)
            throw ConfigError("run config: snapshot iteration " + std::to_string(s) +
                              " outside [0, iterations]");
    model_cfg.validate();
}

std::vector<int> RunConfig::cadence() const {
    std::vector<int> out = eval_cadence;
    if (out.empty()) {
        const int step = std::max(1, iterations / 10);
        for (int i = step; i < iterations; i += step) out.push_back(i);
    }
    out.push_back(0);
    out.push_back(iterations);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

std::string optimize_csv_header() {
    return "iter,wall_ms,psnr_context,psnr_target,ssim_context,ssim_target";
}

void write_csv_row(std::ostream& os, const OptimizeRow& row) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%d,%.3f,%.6f,%.6f,%.6f,%.6f\n", row.iter, row.wall_ms,
                  row.psnr_context, row.psnr_target, row.ssim_context, row.ssim_target);
    os << buf;
}

std::unique_ptr<Stepper> make_stepper(OptimizerKind kind, const RunConfig& cfg,
                                      const MatrixF& initial_params) {
    switch (kind) {
        case OptimizerKind::Sgd:
            return std::make_unique<SgdStepper>(opt::param_groups_3dgs(cfg.iterations));
        case OptimizerKind::Adam3dgs:
            return std::make_unique<AdamStepper>(opt::param_groups_3dgs(cfg.iterations),
                                                 initial_params.rows);
        case OptimizerKind::Adam3dgsStar:
            return std::make_unique<AdamStepper>(opt::param_groups_3dgs_star(cfg.iterations),
                                                 initial_params.rows);
        case OptimizerKind::L2s:
        case OptimizerKind::LoBaseline: {
            model::L2SConfig mc = cfg.model_cfg;
            mc.lo_baseline = kind == OptimizerKind::LoBaseline;
            model::L2SModel<float> mdl;
            if (cfg.model_path.empty()) {
                mdl = model::L2SModel<float>(mc, cfg.seed);
            } else {
                nn::ParamStore<float> ps;
                nn::load_model(cfg.model_path, ps, nullptr);
                mdl = model::L2SModel<float>(mc, std::move(ps));
                const auto& in_w = mdl.params.at("input.w");
                if (in_w->rows != (std::size_t)mc.input_dim() ||
                    in_w->cols != (std::size_t)mc.d_state)
                    throw ConfigError("model checkpoint does not match the configured preset");
            }
            return std::make_unique<L2sStepper>(std::move(mdl), initial_params, cfg.seed,
                                                cfg.iterations);
        }
    }
    throw ConfigError("make_stepper: unknown optimizer kind");
}

OptimizeResult run_optimize(const SceneDataset& scene, const RunConfig& cfg, std::ostream* csv) {
    cfg.validate();
    OptimizeResult result;
    auto stepper = make_stepper(cfg.optimizer, cfg, scene.initial_cloud.params);
    result.rows = drive(scene, cfg, *stepper, MixSpec{}, &result.cloud, csv);
    return result;
}

std::vector<ThresholdCrossing> threshold_crossings(const std::vector<OptimizeRow>& rows,
                                                   const std::vector<OptimizeRow>& reference) {
    if (rows.empty() || reference.empty())
        throw ConfigError("threshold_crossings: empty run");
    const double base = reference.front().psnr_target;
    const double gain = reference.back().psnr_target - base;
    std::vector<ThresholdCrossing> out;
    for (int pct : {25, 50, 75, 90, 100}) {
        ThresholdCrossing tc;
        tc.percent = pct;
        tc.level_db = base + gain * pct / 100.0;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].psnr_target < tc.level_db) continue;
            tc.reached = true;
            if (i == 0) {
                tc.iter = rows[0].iter;
            } else {
                const double p0 = rows[i - 1].psnr_target, p1 = rows[i].psnr_target;
                const double frac = (tc.level_db - p0) / (p1 - p0);
                tc.iter = rows[i - 1].iter + frac * (rows[i].iter - rows[i - 1].iter);
            }
            break;
        }
        out.push_back(tc);
    }
    return out;
}

std::vector<OptimizeRow> mean_rows(const std::vector<std::vector<OptimizeRow>>& runs) {
    if (runs.empty()) throw ConfigError("mean_rows: no runs");
    const std::size_t n = runs.front().size();
    for (const auto& r : runs)
        if (r.size() != n || (n && r.back().iter != runs.front().back().iter))
            throw ConfigError("mean_rows: runs do not share a cadence");
    std::vector<OptimizeRow> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i].iter = runs.front()[i].iter;
        for (const auto& r : runs) {
            out[i].wall_ms += r[i].wall_ms / (double)runs.size();
            out[i].psnr_context += r[i].psnr_context / (double)runs.size();
            out[i].psnr_target += r[i].psnr_target / (double)runs.size();
            out[i].ssim_context += r[i].ssim_context / (double)runs.size();
            out[i].ssim_target += r[i].ssim_target / (double)runs.size();
        }
    }
    return out;
}

CompareResult run_compare(const SceneDataset& scene, const RunConfig& base,
                          const std::vector<OptimizerKind>& methods, std::ostream* out) {
    if (methods.empty()) throw ConfigError("compare: need at least one method");
    CompareResult result;
    result.methods = methods;
    for (OptimizerKind kind : methods) {
        RunConfig cfg = base;
        cfg.optimizer = kind;
        cfg.snapshot_dir.clear();  // compare never writes snapshots
        result.rows.push_back(run_optimize(scene, cfg).rows);
    }
    for (const auto& rows : result.rows)
        result.crossings.push_back(threshold_crossings(rows, result.rows.front()));

    if (out) {
        const auto& ref = result.rows.front();
        char buf[160];
        std::snprintf(buf, sizeof buf, "reference %s: target psnr %.3f -> %.3f dB\n",
                      optimizer_name(methods.front()), ref.front().psnr_target,
                      ref.back().psnr_target);
        *out << buf;
        for (std::size_t m = 0; m < methods.size(); ++m) {
            *out << optimizer_name(methods[m]) << ":\n";
            for (const auto& tc : result.crossings[m]) {
                if (tc.reached)
                    std::snprintf(buf, sizeof buf, "  %3d%% (%.3f dB): iter %.1f\n", tc.percent,
                                  tc.level_db, tc.iter);
                else
                    std::snprintf(buf, sizeof buf, "  %3d%% (%.3f dB): never reached\n",
                                  tc.percent, tc.level_db);
                *out << buf;
            }
        }
    }
    return result;
}

std::vector<SwapRun> run_swap_study(const SceneDataset& scene, const RunConfig& target,
                                    OptimizerKind source, std::ostream* out) {
    target.validate();
    std::vector<SwapRun> runs;
    {
        SwapRun base;
        base.group = "baseline";
        base.rows = run_optimize(scene, target).rows;
        runs.push_back(std::move(base));
    }
    for (int g = 0; g < kNumParamGroups; ++g) {
        RunConfig cfg = target;
        cfg.snapshot_dir.clear();
        auto tgt = make_stepper(cfg.optimizer, cfg, scene.initial_cloud.params);
        auto src = make_stepper(source, cfg, scene.initial_cloud.params);
        MixSpec mix;
        mix.source = src.get();
        mix.group = g;
        SwapRun run;
        run.group = kParamGroups[(std::size_t)g].name;
        run.rows = drive(scene, cfg, *tgt, mix, nullptr, nullptr);
        runs.push_back(std::move(run));
    }
    if (out) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "swap study: %s updates into %s, per group\n",
                      optimizer_name(source), optimizer_name(target.optimizer));
        *out << buf;
        for (const auto& run : runs) {
            std::snprintf(buf, sizeof buf, "  %-10s final target psnr %.3f dB (context %.3f)\n",
                          run.group.c_str(), run.rows.back().psnr_target,
                          run.rows.back().psnr_context);
            *out << buf;
        }
    }
    return runs;
}

}  // namespace l2s::harness
