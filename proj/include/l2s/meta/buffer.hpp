#pragma once

#include <cstdint>
#include <deque>
#include <string>

#include "l2s/common.hpp"
#include "l2s/opt/adam.hpp"

namespace l2s::meta {

struct MetaConfig {
    int tau_max = 6;
    double p_buffer = 0.7;
    double p_push = 0.99;       // fresh scenes
    double p_push_back = 0.99;  // resampled scenes
    std::size_t buffer_capacity = 20;
    int rollout_max = 50;                    // tau_a endpoint
    std::int64_t rollout_ramp_iters = 10000;  // meta-iterations to reach it
    double meta_lr = 1e-4;
    double gamma = 0.9;
    double lvs_epsilon = 1e-8;
    int context_batch = 8;
    int target_views = 6;
    std::int64_t total_iters = 3000;
    bool use_lvs = true;
    bool use_stability = true;
    bool dense_context = false;  // FPS-resample the context batch each step
    // LO-style training: a meta-Adam step after every inner step (truncated
    // single-step windows) instead of one step per tau-step trajectory.
    bool meta_update_per_inner_step = false;
    std::int64_t lo_total_steps = 100;  // fixed schedule horizon T while meta-training the LO
    std::int64_t checkpoint_every = 500;

    void validate() const {
        auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
        if (!prob(p_buffer) || !prob(p_push) || !prob(p_push_back))
            throw ConfigError("meta probabilities must lie in [0,1]");
        if (tau_max < 1) throw ConfigError("tau_max must be >= 1");
        if (buffer_capacity < 1) throw ConfigError("buffer capacity must be >= 1");
        if (rollout_max < 1 || rollout_ramp_iters < 1) throw ConfigError("bad rollout schedule");
        if (context_batch < 1 || target_views < 1) throw ConfigError("bad view counts");
        if (lo_total_steps < 1) throw ConfigError("lo_total_steps must be >= 1");
    }
};

// Linear 1 -> rollout_max ramp over the first rollout_ramp_iters, floored.
inline int tau_a(std::int64_t t_meta, const MetaConfig& cfg) {
    const std::int64_t t = std::min(std::max<std::int64_t>(t_meta, 0), cfg.rollout_ramp_iters);
    return 1 + (int)((std::int64_t)(cfg.rollout_max - 1) * t / cfg.rollout_ramp_iters);
}

// A partially optimized scene parked between meta-iterations.
struct Checkpoint {
    int scene_index = -1;
    std::string scene_id;
    MatrixF cloud;
    MatrixF latents;
    opt::AdamState shadow_adam;
    std::int64_t inner_step_count = 0;
};

// Bounded FIFO; push evicts the oldest, sampling removes the entry.
class CheckpointBuffer {
public:
    explicit CheckpointBuffer(std::size_t capacity) : capacity_(capacity) {
        if (capacity < 1) throw ConfigError("buffer capacity must be >= 1");
    }
    std::size_t size() const { return entries_.size(); }
    std::size_t capacity() const { return capacity_; }
    bool empty() const { return entries_.empty(); }
    void push(Checkpoint ck) {
        if (entries_.size() == capacity_) entries_.pop_front();
        entries_.push_back(std::move(ck));
    }
    Checkpoint pop_sample(std::size_t slot) {
        if (slot >= entries_.size()) throw ConfigError("buffer slot out of range");
        Checkpoint ck = std::move(entries_[slot]);
        entries_.erase(entries_.begin() + (std::ptrdiff_t)slot);
        return ck;
    }
    const Checkpoint& peek(std::size_t i) const { return entries_.at(i); }

private:
    std::size_t capacity_;
    std::deque<Checkpoint> entries_;
};

// The per-iteration scheduling draws, in a fixed order so the buffer-dynamics
// property test exercises exactly the code training runs. Draws: buffer coin,
// slot (only when resampling), tau, rollout length, push coin.
struct IterationPlan {
    bool from_buffer = false;
    std::size_t slot = 0;
    int tau = 1;
    int rollout_len = 1;
    double push_coin = 1.0;
};

inline IterationPlan plan_iteration(std::size_t buffer_size, std::int64_t t_meta,
                                    const MetaConfig& cfg, Rng& rng) {
    IterationPlan plan;
    const double coin = rng.uniform();
    plan.from_buffer = coin < cfg.p_buffer && buffer_size > 0;
    if (plan.from_buffer) plan.slot = (std::size_t)rng.uniform_int(0, (std::int64_t)buffer_size - 1);
    plan.tau = (int)rng.uniform_int(1, cfg.tau_max);
    plan.rollout_len = (int)rng.uniform_int(1, tau_a(t_meta, cfg));
    plan.push_coin = rng.uniform();
    return plan;
}

}  // namespace l2s::meta
