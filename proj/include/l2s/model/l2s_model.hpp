#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "l2s/core/gaussian.hpp"
#include "l2s/knn/knn.hpp"
#include "l2s/nn/params.hpp"
#include "l2s/nn/tensor.hpp"
#include "l2s/opt/schedule.hpp"

namespace l2s::model {

struct L2SConfig {
    int d_state = 256;
    int n_blocks = 4;
    int attn_dim = 192;  // split into q/k/v of attn_dim/3 each
    int mlp_hidden = 1024;
    int k_neighbors = 4;
    int knn_refresh = 100;   // inference-time rebuild cadence, iterations
    int scale_hidden = 0;    // 0 means input_dim / 2
    bool attend_self = false;
    bool lo_baseline = false;  // time-encoded input, plain linear head, cosine LR on delta
    int time_enc_L = 6;

    int input_dim() const { return 2 * kParamDim + d_state + (lo_baseline ? 2 * time_enc_L : 0); }
    int head_dim() const { return attn_dim / 3; }
    int scale_hidden_dim() const { return scale_hidden > 0 ? scale_hidden : input_dim() / 2; }

    void validate() const {
        if (attn_dim % 3 != 0) throw ConfigError("attn_dim must be divisible by 3");
        if (d_state < 1 || n_blocks < 0 || mlp_hidden < 1 || k_neighbors < 1)
            throw ConfigError("invalid model dimensions");
    }

    static L2SConfig paper() { return L2SConfig{}; }
    static L2SConfig desk() {
        L2SConfig c;
        c.d_state = 32;
        c.n_blocks = 2;
        c.attn_dim = 24;
        c.mlp_hidden = 128;
        return c;
    }
};

inline L2SConfig config_preset(const std::string& name) {
    if (name == "paper") return L2SConfig::paper();
    if (name == "desk") return L2SConfig::desk();
    throw ConfigError("unknown model preset '" + name + "' (expected 'paper' or 'desk')");
}

// Per-step outputs. new_params and the reporting fields are detached; delta
// and new_states stay on the tape (gradients cross steps only through
// new_states, and the meta loss seeds delta directly).
template <typename T>
struct StepResult {
    Matrix<T> new_params;
    nn::Tensor<T> new_states;
    nn::Tensor<T> delta;
    Matrix<T> direction;         // unit rows (zero rows where raw was ~0)
    std::vector<T> magnitude;    // >= 0, forced 0 on zero-direction rows
    std::vector<T> state_scale;  // rho_s >= 0 (empty for the LO baseline)
};

template <typename T>
nn::Tensor<T> init_latents(std::size_t G, int d_state, Rng& rng) {
    auto s = nn::make_tensor<T>(G, (std::size_t)d_state, true);
    for (auto& v : s->val) v = (T)rng.normal();
    return s;
}

// Features path: rows projected by W (features.cols x d_state).
template <typename T>
nn::Tensor<T> init_latents(const Matrix<T>& features, const Matrix<T>& W) {
    if (features.cols != W.rows)
        throw ShapeError("init_latents", features.rows, features.cols, W.rows, W.cols);
    Matrix<T> s(features.rows, W.cols);
    for (std::size_t r = 0; r < features.rows; ++r)
        for (std::size_t k = 0; k < features.cols; ++k) {
            const T f = features.at(r, k);
            for (std::size_t c = 0; c < W.cols; ++c) s.at(r, c) += f * W.at(k, c);
        }
    return nn::from_matrix(s, true);
}

template <typename T>
class L2SModel {
public:
    L2SConfig cfg;
    nn::ParamStore<T> params;

    L2SModel() = default;
    L2SModel(const L2SConfig& c, std::uint64_t seed) : cfg(c) {
        cfg.validate();
        Rng rng(seed);
        auto linear = [&](const std::string& name, std::size_t in, std::size_t out) {
            nn::init_kaiming(params.add(name + ".w", in, out), rng, in);
            params.add(name + ".b", 1, out);
        };
        // Output layers that emit parameter deltas start small so a fresh
        // model is a near-no-op optimizer: with O(1) deltas the updated
        // params feed back into the next step's input and the rollout
        // diverges within a handful of inner steps.
        auto delta_linear = [&](const std::string& name, std::size_t in, std::size_t out) {
            nn::init_normal(params.add(name + ".w", in, out), rng, 1e-3);
            params.add(name + ".b", 1, out);
        };
        auto ln = [&](const std::string& name, std::size_t dim) {
            nn::fill(params.add(name + ".g", 1, dim), T(1));
            params.add(name + ".b", 1, dim);
        };
        const auto in = (std::size_t)cfg.input_dim();
        const auto D = (std::size_t)cfg.d_state;
        linear("input", in, D);
        for (int b = 0; b < cfg.n_blocks; ++b) {
            const std::string p = "block" + std::to_string(b) + ".";
            ln(p + "ln1", D);
            linear(p + "attn.qkv", D, (std::size_t)cfg.attn_dim);
            linear(p + "attn.proj", (std::size_t)cfg.head_dim(), D);
            ln(p + "ln2", D);
            linear(p + "mlp.fc1", D, (std::size_t)cfg.mlp_hidden);
            linear(p + "mlp.fc2", (std::size_t)cfg.mlp_hidden, D);
        }
        if (cfg.lo_baseline) {
            delta_linear("head.out", D, kParamDim);
        } else {
            linear("scale.fc1", in, (std::size_t)cfg.scale_hidden_dim());
            linear("scale.fc2", (std::size_t)cfg.scale_hidden_dim(), 1);
            linear("head.fc1", D, kParamDim + 1);
            delta_linear("head.fc2", kParamDim + 1, kParamDim + 1);
            // The update-magnitude slot is ReLU-gated: rows driven negative
            // for every Gaussian emit zero updates and zero gradients. A
            // shared positive bias is an absorbing coordinate (one momentum
            // overshoot closes every gate at once), so the magnitude keeps
            // the tiny symmetric init: preactivations straddle zero
            // per-Gaussian and some rows always sit at the boundary where
            // gradient still flows. The state-scale gate has no such
            // feedback loop and just starts open.
            params.at("scale.fc2.b")->val[0] = T(0.5);
        }
    }

    // From a float checkpoint store (e.g. after load_model).
    L2SModel(const L2SConfig& c, nn::ParamStore<T> loaded) : cfg(c), params(std::move(loaded)) {
        cfg.validate();
    }

    nn::Tensor<T> lin(const nn::Tensor<T>& x, const std::string& name) const {
        return nn::add(nn::matmul(x, params.at(name + ".w")), params.at(name + ".b"));
    }
    nn::Tensor<T> ln_affine(const nn::Tensor<T>& x, const std::string& name) const {
        return nn::add(nn::mul(nn::layer_norm(x), params.at(name + ".g")), params.at(name + ".b"));
    }

    // Grads and params enter detached (plain constants); states keep history.
    nn::Tensor<T> assemble_input(const Matrix<T>& adam_grads, const Matrix<T>& cloud_params,
                                 const nn::Tensor<T>& states,
                                 const std::vector<double>& time_enc = {}) const {
        if (adam_grads.rows == 0) throw ConfigError("assemble_input: zero Gaussians");
        if (adam_grads.rows != cloud_params.rows || adam_grads.cols != kParamDim ||
            cloud_params.cols != kParamDim)
            throw ShapeError("assemble_input", adam_grads.rows, adam_grads.cols, cloud_params.rows,
                             cloud_params.cols);
        if (states->rows != adam_grads.rows || states->cols != (std::size_t)cfg.d_state)
            throw ShapeError("assemble_input", adam_grads.rows, (std::size_t)cfg.d_state,
                             states->rows, states->cols);
        auto x = nn::concat_cols(
            nn::concat_cols(nn::from_matrix(adam_grads), nn::from_matrix(cloud_params)), states);
        if (cfg.lo_baseline) {
            if ((int)time_enc.size() != 2 * cfg.time_enc_L)
                throw ConfigError("assemble_input: LO baseline needs a time encoding");
            auto te = nn::make_tensor<T>(adam_grads.rows, time_enc.size());
            for (std::size_t r = 0; r < adam_grads.rows; ++r)
                for (std::size_t c = 0; c < time_enc.size(); ++c)
                    te->val[r * time_enc.size() + c] = (T)time_enc[c];
            x = nn::concat_cols(x, te);
        } else if (!time_enc.empty()) {
            throw ConfigError("assemble_input: time encoding only applies to the LO baseline");
        }
        return x;
    }

    // Input linear plus pre-LN transformer blocks with kNN attention over
    // each point's k neighbors; returns the unscaled next states.
    nn::Tensor<T> point_transformer_forward(const nn::Tensor<T>& x,
                                            const knn::NeighborTable& neighbors) const {
        const std::size_t G = x->rows;
        if (neighbors.indices.rows != G)
            throw ShapeError("point_transformer_forward", G, x->cols, neighbors.indices.rows,
                             (std::size_t)neighbors.k);
        const auto k = (std::size_t)neighbors.k;
        const auto hd = (std::size_t)cfg.head_dim();
        std::vector<int> nbr_idx(G * k), rep_idx(G * k);
        for (std::size_t g = 0; g < G; ++g)
            for (std::size_t j = 0; j < k; ++j) {
                nbr_idx[g * k + j] = neighbors.indices.at(g, j);
                rep_idx[g * k + j] = (int)g;
            }
        auto h = lin(x, "input");
        const T inv_sqrt_hd = T(1) / std::sqrt(T(hd));
        for (int b = 0; b < cfg.n_blocks; ++b) {
            const std::string p = "block" + std::to_string(b) + ".";
            auto n1 = ln_affine(h, p + "ln1");
            auto qkv = lin(n1, p + "attn.qkv");
            auto q = nn::slice_cols(qkv, 0, hd);
            auto keys = nn::gather_rows(nn::slice_cols(qkv, hd, 2 * hd), nbr_idx);
            auto vals = nn::gather_rows(nn::slice_cols(qkv, 2 * hd, 3 * hd), nbr_idx);
            auto qrep = nn::gather_rows(q, rep_idx);
            auto logits =
                nn::reshape(nn::scale(nn::row_sum(nn::mul(qrep, keys)), inv_sqrt_hd), G, k);
            auto att = nn::reshape(nn::softmax_rows(logits), G * k, 1);
            auto pooled = nn::sum_row_blocks(nn::scale_rows(vals, att), k);
            h = nn::add(h, lin(pooled, p + "attn.proj"));
            auto n2 = ln_affine(h, p + "ln2");
            auto mlp = lin(nn::gelu(lin(n2, p + "mlp.fc1")), p + "mlp.fc2");
            h = nn::add(h, mlp);
        }
        return h;
    }

    // MLP [input -> hidden -> 1] with ReLU after each layer; the final ReLU
    // makes rho_s non-negative.
    nn::Tensor<T> state_scale_forward(const nn::Tensor<T>& x) const {
        return nn::relu(lin(nn::relu(lin(x, "scale.fc1")), "scale.fc2"));
    }

    // MLP [D -> 60 -> 60], GeLU between; first 59 outputs are row-normalized
    // into the direction, the last passes through ReLU as the magnitude.
    nn::Tensor<T> update_mlp_forward(const nn::Tensor<T>& s_tilde, nn::Tensor<T>* out_direction,
                                     nn::Tensor<T>* out_magnitude) const {
        auto o = lin(nn::gelu(lin(s_tilde, "head.fc1")), "head.fc2");
        auto dir = nn::unit_normalize_rows(nn::slice_cols(o, 0, kParamDim));
        auto mag = nn::relu(nn::slice_cols(o, kParamDim, kParamDim + 1));
        if (out_direction) *out_direction = dir;
        if (out_magnitude) *out_magnitude = mag;
        return nn::scale_rows(dir, mag);
    }

    // One learned-optimizer step. t/T only matter for the LO baseline.
    StepResult<T> step(const Matrix<T>& cloud_params, const Matrix<T>& adam_grads,
                       const nn::Tensor<T>& states, const knn::NeighborTable& neighbors,
                       std::int64_t t = 0, std::int64_t total_steps = 1) const {
        StepResult<T> out;
        if (cfg.lo_baseline) {
            const auto enc = opt::time_encoding((double)t, (double)total_steps, cfg.time_enc_L);
            auto x = assemble_input(adam_grads, cloud_params, states, enc);
            out.new_states = point_transformer_forward(x, neighbors);
            const T lr = (T)opt::cosine_lr((double)t, (double)total_steps);
            out.delta = nn::scale(lin(out.new_states, "head.out"), lr);
        } else {
            auto x = assemble_input(adam_grads, cloud_params, states);
            out.new_states = point_transformer_forward(x, neighbors);
            auto rho = state_scale_forward(x);
            auto s_tilde = nn::scale_rows(out.new_states, rho);
            nn::Tensor<T> dir, mag;
            out.delta = update_mlp_forward(s_tilde, &dir, &mag);
            out.direction = dir->matrix();
            out.magnitude.resize(mag->rows);
            for (std::size_t g = 0; g < mag->rows; ++g) {
                bool zero_row = true;
                for (std::size_t c = 0; c < dir->cols && zero_row; ++c)
                    if (dir->at(g, c) != T(0)) zero_row = false;
                out.magnitude[g] = zero_row ? T(0) : mag->val[g];
            }
            out.state_scale.assign(rho->val.begin(), rho->val.end());
        }
        out.new_params = cloud_params;
        for (std::size_t i = 0; i < out.new_params.data.size(); ++i)
            out.new_params.data[i] -= out.delta->val[i];
        return out;
    }
};

}  // namespace l2s::model
