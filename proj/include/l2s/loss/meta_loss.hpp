#pragma once

#include <vector>

#include "l2s/loss/image_loss.hpp"

namespace l2s {

// One inner step's supervision images: refs[v] is ground truth, renders[v]
// the render of the post-step cloud for the same view.
template <typename T>
struct TrajectoryStep {
    std::vector<const ImageT<T>*> refs;
    std::vector<const ImageT<T>*> renders;
};

// sum_t gamma^{tau-1-t} * mean_v [ l1 + 0.5 * perceptual ], perceptual = D-SSIM.
template <typename T>
LossReport render_loss(const std::vector<TrajectoryStep<T>>& steps, double gamma) {
    LossReport rep;
    const int tau = (int)steps.size();
    double total = 0.0;
    for (int t = 0; t < tau; ++t) {
        const auto& st = steps[t];
        double step_term = 0.0;
        for (std::size_t v = 0; v < st.refs.size(); ++v)
            step_term += l1_loss(*st.refs[v], *st.renders[v]) + 0.5 * d_ssim(*st.refs[v], *st.renders[v]);
        if (!st.refs.empty()) step_term /= double(st.refs.size());
        total += std::pow(gamma, double(tau - 1 - t)) * step_term;
    }
    rep.value = total;
    rep.terms = {{"render", total}};
    return rep;
}

// Mask of entries penalized by the low-visibility loss: raw gradient below
// epsilon in magnitude, or update direction disagreeing with the normalized
// Adam gradient. sign(0) agrees with everything.
template <typename T>
Matrix<T> lvs_mask(const Matrix<T>& updates, const Matrix<T>& raw_grads, const Matrix<T>& adam_grads,
                   T epsilon) {
    if (updates.rows != raw_grads.rows || updates.cols != raw_grads.cols)
        throw ShapeError("lvs_mask", updates.rows, updates.cols, raw_grads.rows, raw_grads.cols);
    if (updates.rows != adam_grads.rows || updates.cols != adam_grads.cols)
        throw ShapeError("lvs_mask", updates.rows, updates.cols, adam_grads.rows, adam_grads.cols);
    Matrix<T> mask(updates.rows, updates.cols);
    for (std::size_t i = 0; i < updates.size(); ++i) {
        const T u = updates.data[i], r = raw_grads.data[i], a = adam_grads.data[i];
        const bool vanishing = std::fabs(double(r)) < double(epsilon);
        const bool disagree = (u > T(0) && a < T(0)) || (u < T(0) && a > T(0));
        mask.data[i] = (vanishing || disagree) ? T(1) : T(0);
    }
    return mask;
}

// sum over all entries of mask * |update|.
template <typename T>
double low_visibility_loss(const Matrix<T>& updates, const Matrix<T>& raw_grads,
                           const Matrix<T>& adam_grads, T epsilon) {
    const Matrix<T> mask = lvs_mask(updates, raw_grads, adam_grads, epsilon);
    double s = 0.0;
    for (std::size_t i = 0; i < updates.size(); ++i)
        s += double(mask.data[i]) * std::fabs(double(updates.data[i]));
    return s;
}

// sum_{t>=1} max(0, e_t - stop_grad(e_{t-1})) over the target-view l1 series.
inline double stability_loss(const std::vector<double>& target_l1_per_step) {
    double s = 0.0;
    for (std::size_t t = 1; t < target_l1_per_step.size(); ++t)
        s += std::max(0.0, target_l1_per_step[t] - target_l1_per_step[t - 1]);
    return s;
}

// Unweighted sum of the three meta-loss terms (Eq. 8 shape).
template <typename T>
LossReport meta_loss(const std::vector<TrajectoryStep<T>>& steps, double gamma,
                     const std::vector<Matrix<T>>& updates, const std::vector<Matrix<T>>& raw_grads,
                     const std::vector<Matrix<T>>& adam_grads, T epsilon,
                     const std::vector<double>& target_l1_per_step) {
    LossReport rep;
    const double lr = render_loss(steps, gamma).value;
    double lvs = 0.0;
    for (std::size_t t = 0; t < updates.size(); ++t)
        lvs += low_visibility_loss(updates[t], raw_grads[t], adam_grads[t], epsilon);
    const double ls = stability_loss(target_l1_per_step);
    rep.terms = {{"render", lr}, {"lvs", lvs}, {"stability", ls}};
    rep.value = lr + lvs + ls;
    return rep;
}

}  // namespace l2s
