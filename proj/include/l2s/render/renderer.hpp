#pragma once

#include <string>
#include <vector>

#include "l2s/render/rasterize.hpp"

namespace l2s {

struct Rendered {
    Image rgb;
    std::vector<float> alpha;  // H*W, 1 - final transmittance
};

inline void validate_cloud_finite(const MatrixF& params) {
    for (std::size_t i = 0; i < params.rows; ++i)
        if (!all_finite(params.row(i), params.cols))
            throw NumericError("gaussian " + std::to_string(i) + " has non-finite parameters");
}

// Production forward render (tiled, OpenMP over tiles).
inline Rendered render(const GaussianCloud& cloud, const View& view,
                       const RenderOptions& opts = {}, ProjectStats* stats = nullptr) {
    validate_cloud_finite(cloud.params);
    Rendered out;
    out.rgb = Image(view.image.width, view.image.height);
    out.alpha.assign((std::size_t)view.image.width * view.image.height, 0.f);
    render_tiled(cloud.params, camera_from_view<float>(view), opts, out.rgb.rgb.data(),
                 out.alpha.data(), stats);
    return out;
}

// dL/d(cloud params) for a given dL/d(rgb image). Returns a G x 59 matrix;
// Gaussians that touched no pixel get zero rows.
inline MatrixF render_backward(const GaussianCloud& cloud, const View& view, const Image& upstream,
                               const RenderOptions& opts = {}) {
    validate_cloud_finite(cloud.params);
    if (upstream.width != view.image.width || upstream.height != view.image.height)
        throw ShapeError("render_backward upstream", upstream.height, upstream.width,
                         view.image.height, view.image.width);
    MatrixF grad(cloud.size(), kParamDim);
    render_backward_tiled(cloud.params, camera_from_view<float>(view), opts, upstream.rgb.data(), grad);
    return grad;
}

inline std::vector<Rendered> render_batch(const GaussianCloud& cloud, const std::vector<View>& views,
                                          const RenderOptions& opts = {}) {
    std::vector<Rendered> out(views.size());
    for (std::size_t i = 0; i < views.size(); ++i) out[i] = render(cloud, views[i], opts);
    return out;
}

// Batched backward: accumulates per-view gradients and divides by the view
// count, matching a loss averaged over views.
inline MatrixF render_backward_batch(const GaussianCloud& cloud, const std::vector<View>& views,
                                     const std::vector<Image>& upstreams,
                                     const RenderOptions& opts = {}) {
    if (views.empty() || views.size() != upstreams.size())
        throw ShapeError("render_backward_batch", views.size(), 1, upstreams.size(), 1);
    validate_cloud_finite(cloud.params);
    MatrixF grad(cloud.size(), kParamDim);
    for (std::size_t i = 0; i < views.size(); ++i) {
        const auto& v = views[i];
        const auto& up = upstreams[i];
        if (up.width != v.image.width || up.height != v.image.height)
            throw ShapeError("render_backward_batch upstream", up.height, up.width,
                             v.image.height, v.image.width);
        render_backward_tiled(cloud.params, camera_from_view<float>(v), opts, up.rgb.data(), grad);
    }
    const float inv = 1.f / (float)views.size();
    for (auto& g : grad.data) g *= inv;
    return grad;
}

}  // namespace l2s
