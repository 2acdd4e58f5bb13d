#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "l2s/meta/buffer.hpp"
#include "l2s/meta/rollout.hpp"
#include "l2s/nn/params.hpp"

namespace l2s::meta {

struct MetricsRow {
    std::int64_t meta_iter = 0;
    std::string scene_id;
    std::int64_t start_inner_step = 0;
    int tau = 0;
    int rollout_len = 0;
    double l_render = 0, l_lvs = 0, l_stab = 0, l_meta = 0;
    double wall_ms = 0;
};

inline const char* metrics_csv_header() {
    return "meta_iter,scene_id,start_inner_step,tau,rollout_len,l_render,l_lvs,l_stab,l_meta,wall_ms";
}

inline void write_csv_row(std::ostream& os, const MetricsRow& r) {
    os << r.meta_iter << ',' << r.scene_id << ',' << r.start_inner_step << ',' << r.tau << ','
       << r.rollout_len << ',' << r.l_render << ',' << r.l_lvs << ',' << r.l_stab << ','
       << r.l_meta << ',' << r.wall_ms << '\n';
}

// Computes the meta loss over a train-mode trajectory and back-propagates it
// into the model parameters. The render and stability terms reach the tape by
// seeding each step's delta with the negated image-space cloud gradient
// (G_{t+1} = detach(G_t) - delta_t); the lvs term is differentiated on the
// tape directly. Parameter grads must be zeroed by the caller beforehand.
template <typename T>
LossReport meta_loss_backward(const RolloutProblem<T>& prob, const std::vector<StepRecord<T>>& steps,
                              const MetaConfig& cfg) {
    const int tau = (int)steps.size();
    if (tau == 0) throw ConfigError("meta_loss_backward: empty trajectory");

    // Forward values through the same scalar functions the tests pin down.
    std::vector<TrajectoryStep<T>> traj(steps.size());
    std::vector<Matrix<T>> updates, raws, adams;
    std::vector<double> target_l1;
    for (int t = 0; t < tau; ++t) {
        const auto& rec = steps[(std::size_t)t];
        for (std::size_t j = 0; j < rec.view_ids.size(); ++j) {
            traj[(std::size_t)t].refs.push_back(&prob.images[(std::size_t)rec.view_ids[j]]);
            traj[(std::size_t)t].renders.push_back(&rec.renders[j]);
        }
        updates.push_back(rec.delta->matrix());
        raws.push_back(rec.raw_grads);
        adams.push_back(rec.adam_grads);
        target_l1.push_back(rec.target_l1);
    }
    LossReport report = meta_loss(traj, cfg.gamma, updates, raws, adams, T(cfg.lvs_epsilon),
                                  target_l1);
    if (!cfg.use_lvs) {
        report.value -= report.term("lvs");
        report.set_term("lvs", 0.0);
    }
    if (!cfg.use_stability) {
        report.value -= report.term("stability");
        report.set_term("stability", 0.0);
    }
    if (!std::isfinite(report.value))
        throw NumericError("scene " + prob.scene_id + ": non-finite meta loss");

    // Image-space gradients per (step, view). The step-t render sees
    // params_{t+1} = params_0 - sum_{s<=t} delta_s, so its gradient lands on
    // every delta up to t; walking back to front lets one buffer accumulate
    // the triangular sum.
    std::vector<nn::Tensor<T>> seeds;
    Matrix<T> dG(steps[0].cloud_after.rows, kParamDim);
    for (int t = tau - 1; t >= 0; --t) {
        const auto& rec = steps[(std::size_t)t];
        const double coef = std::pow(cfg.gamma, double(tau - 1 - t)) / double(rec.view_ids.size());
        const bool hinge = cfg.use_stability && t >= 1 && target_l1[(std::size_t)t] > target_l1[(std::size_t)t - 1];
        const std::size_t n_targets = rec.view_ids.size() - rec.n_context;
        for (std::size_t j = 0; j < rec.view_ids.size(); ++j) {
            const int vid = rec.view_ids[j];
            const auto& cam = prob.cameras[(std::size_t)vid];
            const auto& ref = prob.images[(std::size_t)vid];
            ImageT<T> up(cam.width, cam.height);
            l1_backward(ref, rec.renders[j], T(coef), up);
            d_ssim_backward(ref, rec.renders[j], T(0.5 * coef), up);
            if (hinge && j >= rec.n_context)
                l1_backward(ref, rec.renders[j], T(1.0 / double(n_targets)), up);
            render_backward_tiled(rec.cloud_after, cam, prob.opts, up.rgb.data(), dG);
        }
        rec.delta->ensure_grad();
        for (std::size_t i = 0; i < dG.data.size(); ++i) rec.delta->grad[i] -= dG.data[i];
        seeds.push_back(rec.delta);
    }

    if (cfg.use_lvs) {
        nn::Tensor<T> lvs_total;
        for (int t = 0; t < tau; ++t) {
            const auto& rec = steps[(std::size_t)t];
            auto masked = nn::mul(nn::abs_t(rec.delta), nn::from_matrix(rec.mask));
            auto s = nn::sum_all(masked);
            lvs_total = lvs_total ? nn::add(lvs_total, s) : s;
        }
        lvs_total->ensure_grad();
        lvs_total->grad[0] += T(1);
        seeds.push_back(lvs_total);
    }
    nn::backward_multi(seeds);
    return report;
}

// Owns the buffer, the model and the RNG streams of one training run.
class MetaTrainer {
public:
    MetaTrainer(MetaConfig cfg, model::L2SConfig model_cfg, std::vector<SceneDataset> scenes,
                std::uint64_t seed)
        : cfg_(cfg),
          buffer_(cfg.buffer_capacity),
          master_(seed),
          sampler_rng_(master_.fork()),
          scene_rng_(master_.fork()),
          model_(model_cfg, master_.raw()) {
        cfg_.validate();
        if (scenes.empty()) throw ConfigError("meta training needs a non-empty scene pool");
        datasets_ = std::move(scenes);
        for (std::size_t i = 0; i < datasets_.size(); ++i)
            problems_.push_back(make_problem<float>(datasets_[i], (int)i));
    }

    const MetaConfig& config() const { return cfg_; }
    model::L2SModel<float>& model() { return model_; }
    const model::L2SModel<float>& model() const { return model_; }
    nn::ParamAdamState<float>& meta_adam() { return meta_adam_; }
    CheckpointBuffer& buffer() { return buffer_; }
    std::int64_t meta_step() const { return t_meta_; }

    void restore(nn::ParamStore<float> params, nn::ParamAdamState<float> adam,
                 const nn::CheckpointCounters& counters) {
        model_.params = std::move(params);
        meta_adam_ = std::move(adam);
        t_meta_ = counters.meta_step;
    }

    MetricsRow iteration() {
        const auto t0 = std::chrono::steady_clock::now();
        const IterationPlan plan = plan_iteration(buffer_.size(), t_meta_, cfg_, sampler_rng_);

        int scene_index;
        MatrixF cloud;
        nn::Tensor<float> states;
        opt::AdamState shadow;
        std::int64_t start = 0;
        if (plan.from_buffer) {
            Checkpoint ck = buffer_.pop_sample(plan.slot);
            scene_index = ck.scene_index;
            cloud = std::move(ck.cloud);
            states = nn::from_matrix(ck.latents, true);
            shadow = std::move(ck.shadow_adam);
            start = ck.inner_step_count;
        } else {
            scene_index = (int)scene_rng_.uniform_int(0, (std::int64_t)problems_.size() - 1);
            cloud = datasets_[(std::size_t)scene_index].initial_cloud.params;
            states = model::init_latents<float>(cloud.rows, model_.cfg.d_state, scene_rng_);
            shadow = opt::AdamState(cloud.rows, kParamDim);
        }
        const RolloutProblem<float>& prob = problems_[(std::size_t)scene_index];

        const std::vector<int> targets = sample_targets(prob);
        Rng rollout_rng = scene_rng_.fork();

        MetricsRow row;
        row.meta_iter = t_meta_;
        row.scene_id = prob.scene_id;
        row.start_inner_step = start;
        row.tau = plan.tau;
        row.rollout_len = plan.rollout_len;

        RolloutResult<float> trained;
        if (cfg_.meta_update_per_inner_step) {
            // LO-style schedule: tau truncated one-step windows, each followed
            // by its own meta step; states are severed between windows.
            trained.cloud = std::move(cloud);
            trained.states = states;
            trained.shadow_adam = std::move(shadow);
            trained.inner_step_count = start;
            for (int t = 0; t < plan.tau; ++t) {
                auto one = inner_rollout(prob, model_, std::move(trained.cloud),
                                         nn::stop_gradient(trained.states),
                                         std::move(trained.shadow_adam), targets, 1,
                                         RolloutMode::Train, trained.inner_step_count, cfg_,
                                         rollout_rng);
                model_.params.zero_grads();
                const LossReport rep = meta_loss_backward(prob, one.steps, cfg_);
                nn::adam_step_params(model_.params, meta_adam_, (float)cfg_.meta_lr);
                row.l_render += rep.term("render");
                row.l_lvs += rep.term("lvs");
                row.l_stab += rep.term("stability");
                row.l_meta += rep.value;
                trained.cloud = std::move(one.cloud);
                trained.states = one.states;
                trained.shadow_adam = std::move(one.shadow_adam);
                trained.inner_step_count = one.inner_step_count;
            }
        } else {
            trained = inner_rollout(prob, model_, std::move(cloud), states, std::move(shadow),
                                    targets, plan.tau, RolloutMode::Train, start, cfg_,
                                    rollout_rng);

            model_.params.zero_grads();
            const LossReport rep = meta_loss_backward(prob, trained.steps, cfg_);
            nn::adam_step_params(model_.params, meta_adam_, (float)cfg_.meta_lr);
            row.l_render = rep.term("render");
            row.l_lvs = rep.term("lvs");
            row.l_stab = rep.term("stability");
            row.l_meta = rep.value;
        }

        auto frozen = inner_rollout(prob, model_, std::move(trained.cloud),
                                    nn::stop_gradient(trained.states), std::move(trained.shadow_adam),
                                    targets, plan.rollout_len, RolloutMode::Frozen,
                                    trained.inner_step_count, cfg_, rollout_rng);

        const double p = plan.from_buffer ? cfg_.p_push_back : cfg_.p_push;
        if (plan.push_coin < p) {
            Checkpoint ck;
            ck.scene_index = scene_index;
            ck.scene_id = prob.scene_id;
            ck.cloud = std::move(frozen.cloud);
            ck.latents = frozen.states->matrix();
            ck.shadow_adam = std::move(frozen.shadow_adam);
            ck.inner_step_count = frozen.inner_step_count;
            buffer_.push(std::move(ck));
        }

        ++t_meta_;
        row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        return row;
    }

    // Runs to total_iters. Non-finite iterations are logged and skipped; the
    // scene involved is dropped (not pushed back), training continues.
    void train(std::ostream* csv, const std::string& checkpoint_path) {
        if (csv && t_meta_ == 0) *csv << metrics_csv_header() << '\n';
        while (t_meta_ < cfg_.total_iters) {
            MetricsRow row;
            try {
                row = iteration();
            } catch (const NumericError& e) {
                row.meta_iter = t_meta_;
                row.scene_id = std::string("ABORT:") + e.what();
                row.l_render = row.l_lvs = row.l_stab = row.l_meta =
                    std::numeric_limits<double>::quiet_NaN();
                ++t_meta_;
            }
            if (csv) write_csv_row(*csv, row);
            if (!checkpoint_path.empty() &&
                (t_meta_ % cfg_.checkpoint_every == 0 || t_meta_ == cfg_.total_iters))
                save(checkpoint_path);
        }
    }

    void save(const std::string& path) const {
        nn::save_model(path, model_.params, &meta_adam_, {t_meta_, tau_a(t_meta_, cfg_)});
    }

private:
    std::vector<int> sample_targets(const RolloutProblem<float>& prob) {
        const auto& pool = prob.target_ids;
        if ((int)pool.size() <= cfg_.target_views) return pool;
        std::vector<int> idx(pool.begin(), pool.end());
        for (int i = 0; i < cfg_.target_views; ++i)
            std::swap(idx[(std::size_t)i],
                      idx[(std::size_t)scene_rng_.uniform_int(i, (std::int64_t)idx.size() - 1)]);
        idx.resize((std::size_t)cfg_.target_views);
        std::sort(idx.begin(), idx.end());
        return idx;
    }

    MetaConfig cfg_;
    CheckpointBuffer buffer_;
    Rng master_, sampler_rng_, scene_rng_;
    model::L2SModel<float> model_;
    nn::ParamAdamState<float> meta_adam_;
    std::vector<SceneDataset> datasets_;
    std::vector<RolloutProblem<float>> problems_;
    std::int64_t t_meta_ = 0;
};

// Buffer dynamics with stub rollouts: exactly the production scheduling code
// (plan_iteration + CheckpointBuffer) minus rendering and learning. Used by
// the visit-histogram property test.
struct BufferSimStats {
    std::vector<std::int64_t> visits;  // visits[s] = supervised visits of inner step s
    std::int64_t fresh = 0, resumed = 0;
    std::int64_t max_step = 0;
};

inline BufferSimStats simulate_buffer_dynamics(const MetaConfig& cfg, std::int64_t iters,
                                               std::uint64_t seed) {
    BufferSimStats stats;
    CheckpointBuffer buffer(cfg.buffer_capacity);
    Rng rng(seed);
    auto visit = [&stats](std::int64_t s) {
        if ((std::int64_t)stats.visits.size() <= s) stats.visits.resize((std::size_t)s + 1, 0);
        stats.visits[(std::size_t)s]++;
    };
    for (std::int64_t t = 0; t < iters; ++t) {
        const IterationPlan plan = plan_iteration(buffer.size(), t, cfg, rng);
        std::int64_t count = 0;
        if (plan.from_buffer) {
            count = buffer.pop_sample(plan.slot).inner_step_count;
            stats.resumed++;
        } else {
            stats.fresh++;
        }
        for (int k = 1; k <= plan.tau; ++k) visit(count + k);
        count += plan.tau + plan.rollout_len;
        stats.max_step = std::max(stats.max_step, count);
        if (plan.push_coin < (plan.from_buffer ? cfg.p_push_back : cfg.p_push)) {
            Checkpoint ck;
            ck.inner_step_count = count;
            buffer.push(std::move(ck));
        }
    }
    return stats;
}

}  // namespace l2s::meta
