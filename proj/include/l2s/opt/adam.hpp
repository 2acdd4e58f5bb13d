#pragma once

#include <array>
#include <cmath>
#include <cstdint>

#include "l2s/common.hpp"
#include "l2s/core/gaussian.hpp"

namespace l2s::opt {

template <typename T>
struct AdamStateT {
    Matrix<T> m, v;
    std::int64_t step = 0;

    AdamStateT() = default;
    AdamStateT(std::size_t rows, std::size_t cols) : m(rows, cols), v(rows, cols) {}
};
using AdamState = AdamStateT<float>;

// Advances moments in place and writes the bias-corrected normalized
// direction m_hat / (sqrt(v_hat) + eps). Both adam_step and adam_normalize
// go through this one kernel so the two paths agree bitwise.
template <typename T>
void adam_advance(const Matrix<T>& grads, AdamStateT<T>& st, T beta1, T beta2, T eps,
                  Matrix<T>& out_normalized) {
    if (st.m.rows != grads.rows || st.m.cols != grads.cols)
        throw ShapeError("adam_advance", st.m.rows, st.m.cols, grads.rows, grads.cols);
    st.step += 1;
    const T bc1 = T(1) - std::pow(beta1, T(st.step));
    const T bc2 = T(1) - std::pow(beta2, T(st.step));
    out_normalized = Matrix<T>(grads.rows, grads.cols);
    for (std::size_t i = 0; i < grads.data.size(); ++i) {
        const T g = grads.data[i];
        const T m = beta1 * st.m.data[i] + (T(1) - beta1) * g;
        const T v = beta2 * st.v.data[i] + (T(1) - beta2) * g * g;
        st.m.data[i] = m;
        st.v.data[i] = v;
        out_normalized.data[i] = (m / bc1) / (std::sqrt(v / bc2) + eps);
    }
}

struct ParamGroupConfig {
    // Indexed by kParamGroups order: means, rotations, scales,
    // opacities, sh0, shN.
    double lr[kNumParamGroups] = {};
    double means_lr_init = 1.6e-4;
    double means_lr_final = 1e-5;
    std::int64_t means_lr_steps = 30000;
    bool means_decay = true;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

inline ParamGroupConfig param_groups_3dgs(std::int64_t total_steps = 30000) {
    ParamGroupConfig c;
    c.lr[0] = 1.6e-4;   // means (schedule start)
    c.lr[1] = 1e-3;     // rotations
    c.lr[2] = 5e-3;     // scales
    c.lr[3] = 5e-2;     // opacities
    c.lr[4] = 2.5e-3;   // sh0
    c.lr[5] = 1.25e-4;  // shN
    c.means_lr_steps = total_steps;
    return c;
}

// 3DGS*: every LR 5x, beta1 = 0.99, no decay on the means LR.
inline ParamGroupConfig param_groups_3dgs_star(std::int64_t total_steps = 30000) {
    ParamGroupConfig c = param_groups_3dgs(total_steps);
    for (int g = 0; g < kNumParamGroups; ++g) c.lr[g] *= 5.0;
    c.means_lr_init *= 5.0;
    c.means_lr_final *= 5.0;
    c.beta1 = 0.99;
    c.means_decay = false;
    return c;
}

// Log-linear interpolation between init and final over the configured steps.
inline double means_lr(const ParamGroupConfig& c, std::int64_t t) {
    if (!c.means_decay) return c.means_lr_init;
    const double frac = c.means_lr_steps > 0
                            ? std::min(1.0, std::max(0.0, double(t) / double(c.means_lr_steps)))
                            : 1.0;
    return std::exp(std::log(c.means_lr_init) +
                    frac * (std::log(c.means_lr_final) - std::log(c.means_lr_init)));
}

// LR for a parameter column at optimizer step t (0-based, pre-increment).
inline double column_lr(const ParamGroupConfig& c, std::size_t col, std::int64_t t) {
    const int g = param_group_of_column(col);
    if (g == 0) return c.means_decay ? means_lr(c, t) : c.lr[0];
    return c.lr[g];
}

template <typename T>
void adam_step(Matrix<T>& params, const Matrix<T>& grads, AdamStateT<T>& st,
               const ParamGroupConfig& c) {
    const std::int64_t t = st.step;
    Matrix<T> n;
    adam_advance<T>(grads, st, T(c.beta1), T(c.beta2), T(c.eps), n);
    std::array<T, kParamDim> lr_col;
    for (std::size_t col = 0; col < kParamDim; ++col) lr_col[col] = T(column_lr(c, col, t));
    for (std::size_t r = 0; r < params.rows; ++r)
        for (std::size_t col = 0; col < params.cols; ++col)
            params.data[r * params.cols + col] -= lr_col[col] * n.data[r * params.cols + col];
}

// The Adam direction without any learning rate; advances the shadow state.
template <typename T>
Matrix<T> adam_normalize(const Matrix<T>& grads, AdamStateT<T>& st, T beta1 = T(0.9),
                         T beta2 = T(0.999), T eps = T(1e-8)) {
    Matrix<T> n;
    adam_advance<T>(grads, st, beta1, beta2, eps, n);
    return n;
}

template <typename T>
void sgd_step(Matrix<T>& params, const Matrix<T>& grads, T lr) {
    if (params.rows != grads.rows || params.cols != grads.cols)
        throw ShapeError("sgd_step", params.rows, params.cols, grads.rows, grads.cols);
    for (std::size_t i = 0; i < params.data.size(); ++i) params.data[i] -= lr * grads.data[i];
}

// Per-column normalization by the max absolute value within the scene.
template <typename T>
Matrix<T> g3r_normalize(const Matrix<T>& grads) {
    Matrix<T> out(grads.rows, grads.cols);
    for (std::size_t col = 0; col < grads.cols; ++col) {
        T mx = 0;
        for (std::size_t r = 0; r < grads.rows; ++r)
            mx = std::max(mx, std::fabs(grads.data[r * grads.cols + col]));
        if (mx == T(0)) continue;
        for (std::size_t r = 0; r < grads.rows; ++r)
            out.data[r * grads.cols + col] = grads.data[r * grads.cols + col] / mx;
    }
    return out;
}

}  // namespace l2s::opt
