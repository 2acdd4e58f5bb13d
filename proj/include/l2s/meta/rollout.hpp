#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "l2s/knn/knn.hpp"
#include "l2s/loss/image_loss.hpp"
#include "l2s/loss/meta_loss.hpp"
#include "l2s/meta/buffer.hpp"
#include "l2s/model/l2s_model.hpp"
#include "l2s/render/rasterize.hpp"
#include "l2s/scene/pointops.hpp"

namespace l2s::meta {

// A scene lifted to the rollout's scalar type (double for gradient checks,
// float in production).
template <typename T>
struct RolloutProblem {
    std::string scene_id;
    int scene_index = -1;
    std::vector<CameraT<T>> cameras;
    std::vector<ImageT<T>> images;
    std::vector<int> context_ids, target_ids;
    RenderOptionsT<T> opts;
};

template <typename T>
RolloutProblem<T> make_problem(const SceneDataset& ds, int scene_index = -1) {
    RolloutProblem<T> p;
    p.scene_id = ds.scene_id;
    p.scene_index = scene_index;
    for (const auto& v : ds.views) {
        p.cameras.push_back(camera_from_view<T>(v));
        p.images.push_back(v.image.template cast<T>());
    }
    p.context_ids = ds.context_indices();
    p.target_ids = ds.target_indices();
    return p;
}

enum class RolloutMode { Train, Frozen };

template <typename T>
struct StepRecord {
    std::int64_t inner_step = 0;  // 1-based absolute index of this update
    Matrix<T> cloud_after;
    std::vector<int> view_ids;  // context batch first, then the target views
    std::size_t n_context = 0;
    std::vector<ImageT<T>> renders;  // post-step renders, parallel to view_ids
    nn::Tensor<T> delta;
    Matrix<T> raw_grads, adam_grads, mask;
    double target_l1 = 0.0;
    double context_inner_loss = 0.0;
};

template <typename T>
struct RolloutResult {
    std::vector<StepRecord<T>> steps;  // filled in train mode only
    Matrix<T> cloud;
    nn::Tensor<T> states;
    opt::AdamStateT<T> shadow_adam;
    std::int64_t inner_step_count = 0;
};

namespace detail {

template <typename T>
ImageT<T> render_view(const RolloutProblem<T>& p, int view_id, const Matrix<T>& params) {
    const auto& cam = p.cameras[(std::size_t)view_id];
    ImageT<T> img(cam.width, cam.height);
    render_tiled(params, cam, p.opts, img.rgb.data());
    return img;
}

template <typename T>
void check_cloud(const Matrix<T>& params, const std::string& scene_id, std::int64_t step) {
    for (std::size_t i = 0; i < params.data.size(); ++i)
        if (!std::isfinite((double)params.data[i]))
            throw NumericError("scene " + scene_id + " inner step " + std::to_string(step) +
                               ": non-finite Gaussian parameters");
}

template <typename T>
Matrix<T> means_of(const Matrix<T>& params) {
    Matrix<T> m(params.rows, 3);
    for (std::size_t g = 0; g < params.rows; ++g)
        for (int c = 0; c < 3; ++c) m.at(g, (std::size_t)c) = params.at(g, (std::size_t)c);
    return m;
}

// Context batch for one inner step: the fixed leading views, or a fresh FPS
// subset in the dense setting.
template <typename T>
std::vector<int> context_batch(const RolloutProblem<T>& p, const MetaConfig& cfg, Rng& rng) {
    const auto& ids = p.context_ids;
    if ((int)ids.size() <= cfg.context_batch) return ids;
    if (!cfg.dense_context) return {ids.begin(), ids.begin() + cfg.context_batch};
    std::vector<Vec3<float>> centers(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto& t = p.cameras[(std::size_t)ids[i]].t;
        centers[i] = {(float)t.x, (float)t.y, (float)t.z};
    }
    const int first = (int)rng.uniform_int(0, (std::int64_t)ids.size() - 1);
    std::vector<int> out;
    for (int pick : scene::fps_indices(centers, cfg.context_batch, first))
        out.push_back(ids[(std::size_t)pick]);
    return out;
}

}  // namespace detail

// Rolls the learned optimizer for tau steps. In train mode the returned
// records and the live tape (rooted at each step's delta and the states
// chain) carry everything the meta loss needs; in frozen mode no graph is
// built and the records stay empty.
template <typename T>
RolloutResult<T> inner_rollout(const RolloutProblem<T>& prob, const model::L2SModel<T>& mdl,
                               Matrix<T> cloud, nn::Tensor<T> states, opt::AdamStateT<T> shadow_adam,
                               const std::vector<int>& target_ids, int tau, RolloutMode mode,
                               std::int64_t start_step, const MetaConfig& cfg, Rng& rng) {
    if (tau < 1) throw ConfigError("inner_rollout: tau must be >= 1");
    const bool train = mode == RolloutMode::Train;
    std::optional<nn::NoGradGuard> frozen_guard;
    if (!train) frozen_guard.emplace();

    RolloutResult<T> out;
    out.cloud = std::move(cloud);
    out.states = std::move(states);
    out.shadow_adam = std::move(shadow_adam);
    out.inner_step_count = start_step;

    const std::size_t G = out.cloud.rows;
    {
        for (int t = 0; t < tau; ++t) {
            const std::int64_t abs_step = start_step + t;
            detail::check_cloud(out.cloud, prob.scene_id, abs_step);
            const auto batch = detail::context_batch(prob, cfg, rng);

            // Inner-loss gradient on the current cloud, averaged over the batch.
            Matrix<T> raw(G, kParamDim);
            double inner_val = 0.0;
            const T inv_b = T(1) / T(batch.size());
            for (int vid : batch) {
                const auto& cam = prob.cameras[(std::size_t)vid];
                ImageT<T> rendered(cam.width, cam.height);
                render_tiled(out.cloud, cam, prob.opts, rendered.rgb.data());
                const auto& ref = prob.images[(std::size_t)vid];
                inner_val += inner_loss(ref, rendered).value / double(batch.size());
                ImageT<T> up(cam.width, cam.height);
                inner_loss_backward(ref, rendered, inv_b, up);
                render_backward_tiled(out.cloud, cam, prob.opts, up.rgb.data(), raw);
            }
            if (!std::isfinite(inner_val))
                throw NumericError("scene " + prob.scene_id + " inner step " +
                                   std::to_string(abs_step + 1) + ": non-finite inner loss");

            const Matrix<T> adam_grads = opt::adam_normalize(
                raw, out.shadow_adam, T(0.9), T(0.999), T(1e-8));

            const auto nbrs = knn::build_knn(detail::means_of(out.cloud), mdl.cfg.k_neighbors,
                                             mdl.cfg.attend_self);
            // The LO baseline's schedule horizon stays fixed during training;
            // inference stretches it to the actual budget instead.
            const std::int64_t total =
                mdl.cfg.lo_baseline ? cfg.lo_total_steps : start_step + tau;
            auto step = mdl.step(out.cloud, adam_grads, out.states, nbrs, abs_step, total);
            detail::check_cloud(step.new_params, prob.scene_id, abs_step + 1);

            if (train) {
                StepRecord<T> rec;
                rec.inner_step = abs_step + 1;
                rec.cloud_after = step.new_params;
                rec.view_ids = batch;
                rec.n_context = batch.size();
                rec.view_ids.insert(rec.view_ids.end(), target_ids.begin(), target_ids.end());
                for (int vid : rec.view_ids)
                    rec.renders.push_back(detail::render_view(prob, vid, step.new_params));
                double tl1 = 0.0;
                for (std::size_t j = 0; j < target_ids.size(); ++j)
                    tl1 += l1_loss(prob.images[(std::size_t)target_ids[j]],
                                   rec.renders[rec.n_context + j]);
                rec.target_l1 = target_ids.empty() ? 0.0 : tl1 / double(target_ids.size());
                rec.delta = step.delta;
                rec.raw_grads = raw;
                rec.adam_grads = adam_grads;
                rec.mask = lvs_mask(step.delta->matrix(), raw, adam_grads, T(cfg.lvs_epsilon));
                rec.context_inner_loss = inner_val;
                out.steps.push_back(std::move(rec));
            }

            out.cloud = std::move(step.new_params);
            out.states = train ? step.new_states : nn::stop_gradient(step.new_states);
            out.inner_step_count = abs_step + 1;
        }
    }
    return out;
}

}  // namespace l2s::meta
