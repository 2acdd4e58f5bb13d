#pragma once

#include <algorithm>
#include <cstring>
#include <vector>

#include "l2s/render/project.hpp"

namespace l2s {
namespace detail {

// Depth sort with a stable tie-break on source index.
template <typename T>
inline void depth_sort(std::vector<ProjectedGaussian<T>>& v) {
    std::sort(v.begin(), v.end(), [](const ProjectedGaussian<T>& a, const ProjectedGaussian<T>& b) {
        if (a.depth != b.depth) return a.depth < b.depth;
        return a.source_index < b.source_index;
    });
}

template <typename T>
struct PixelState {
    T r = 0, g = 0, b = 0;
    T trans = 1;
    bool done = false;
};

// One front-to-back blend step. Both render paths funnel every contribution
// through this single function so their arithmetic is identical.
template <typename T>
inline void blend_one(PixelState<T>& st, const ProjectedGaussian<T>& pg, T px, T py,
                      const RenderOptionsT<T>& opts) {
    const T dx = px - pg.mean2d.x;
    const T dy = py - pg.mean2d.y;
    const T sigma = T(0.5) * (pg.conic[0] * dx * dx + pg.conic[2] * dy * dy) + pg.conic[1] * dx * dy;
    if (sigma < T(0)) return;
    T w = pg.opacity * std::exp(-sigma);
    if (w > opts.max_weight) w = opts.max_weight;
    if (w < opts.skip_weight) return;
    const T vis = w * st.trans;
    st.r += pg.color.x * vis;
    st.g += pg.color.y * vis;
    st.b += pg.color.z * vis;
    st.trans *= (T(1) - w);
    if (st.trans < opts.term_transmittance) st.done = true;
}

template <typename T>
inline void finish_pixel(const PixelState<T>& st, const RenderOptionsT<T>& opts, T* rgb, T* alpha) {
    rgb[0] = st.r + st.trans * opts.background.x;
    rgb[1] = st.g + st.trans * opts.background.y;
    rgb[2] = st.b + st.trans * opts.background.z;
    if (alpha) *alpha = T(1) - st.trans;
}

// A contribution that was actually composited, recorded during the backward
// replay. `trans` is the transmittance in front of it.
template <typename T>
struct Applied {
    int list_index;
    T w, trans, expsig, dx, dy;
    bool clamped;
};

// Replays the forward pass at one pixel, then walks it back to front,
// accumulating rasterizer adjoints into `grads[list_index]`.
template <typename T>
inline void backward_pixel(const std::vector<ProjectedGaussian<T>>& list, T px, T py,
                           const RenderOptionsT<T>& opts, const T* upstream,
                           std::vector<Applied<T>>& scratch, RasterGrad<T>* grads) {
    scratch.clear();
    PixelState<T> st;
    for (int k = 0; k < (int)list.size() && !st.done; ++k) {
        const ProjectedGaussian<T>& pg = list[k];
        const T dx = px - pg.mean2d.x;
        const T dy = py - pg.mean2d.y;
        const T sigma =
            T(0.5) * (pg.conic[0] * dx * dx + pg.conic[2] * dy * dy) + pg.conic[1] * dx * dy;
        if (sigma < T(0)) continue;
        const T e = std::exp(-sigma);
        T w = pg.opacity * e;
        const bool clamped = w > opts.max_weight;
        if (clamped) w = opts.max_weight;
        if (w < opts.skip_weight) continue;
        scratch.push_back({k, w, st.trans, e, dx, dy, clamped});
        st.trans *= (T(1) - w);
        if (st.trans < opts.term_transmittance) st.done = true;
    }

    // B = color composited behind the current contribution, incl. background.
    T Br = st.trans * opts.background.x;
    T Bg = st.trans * opts.background.y;
    T Bb = st.trans * opts.background.z;
    for (int i = (int)scratch.size() - 1; i >= 0; --i) {
        const Applied<T>& ap = scratch[i];
        const ProjectedGaussian<T>& pg = list[ap.list_index];
        RasterGrad<T>& g = grads[ap.list_index];
        const T vis = ap.w * ap.trans;
        g.d_color[0] += upstream[0] * vis;
        g.d_color[1] += upstream[1] * vis;
        g.d_color[2] += upstream[2] * vis;
        const T inv1w = T(1) / (T(1) - ap.w);
        const T dw = upstream[0] * (pg.color.x * ap.trans - Br * inv1w) +
                     upstream[1] * (pg.color.y * ap.trans - Bg * inv1w) +
                     upstream[2] * (pg.color.z * ap.trans - Bb * inv1w);
        Br += pg.color.x * vis;
        Bg += pg.color.y * vis;
        Bb += pg.color.z * vis;
        if (ap.clamped) continue;  // clamp subgradient is 0
        g.d_opacity += dw * ap.expsig;
        const T dsigma = -dw * ap.w;
        const T sx = pg.conic[0] * ap.dx + pg.conic[1] * ap.dy;
        const T sy = pg.conic[2] * ap.dy + pg.conic[1] * ap.dx;
        g.d_mean2d[0] -= dsigma * sx;
        g.d_mean2d[1] -= dsigma * sy;
        g.d_conic[0] += dsigma * T(0.5) * ap.dx * ap.dx;
        g.d_conic[1] += dsigma * ap.dx * ap.dy;
        g.d_conic[2] += dsigma * T(0.5) * ap.dy * ap.dy;
    }
}

// Tile index lists in depth-sorted order. A Gaussian enters every tile whose
// rectangle intersects its cull disc; outside that disc a contribution is
// provably below skip_weight, so tiling never changes a pixel's blend
// sequence relative to the naive loop.
template <typename T>
struct TileGrid {
    int tiles_x = 0, tiles_y = 0, tile = 16;
    std::vector<std::vector<int>> lists;  // indices into the sorted projected list

    void build(const std::vector<ProjectedGaussian<T>>& sorted, int width, int height, int tile_size) {
        tile = tile_size;
        tiles_x = (width + tile - 1) / tile;
        tiles_y = (height + tile - 1) / tile;
        lists.assign((std::size_t)tiles_x * tiles_y, {});
        for (int k = 0; k < (int)sorted.size(); ++k) {
            const ProjectedGaussian<T>& pg = sorted[k];
            const T r = pg.radius;
            int tx0 = std::max(0, (int)std::floor((pg.mean2d.x - r) / tile));
            int tx1 = std::min(tiles_x - 1, (int)std::floor((pg.mean2d.x + r) / tile));
            int ty0 = std::max(0, (int)std::floor((pg.mean2d.y - r) / tile));
            int ty1 = std::min(tiles_y - 1, (int)std::floor((pg.mean2d.y + r) / tile));
            for (int ty = ty0; ty <= ty1; ++ty)
                for (int tx = tx0; tx <= tx1; ++tx) {
                    const T x0 = T(tx * tile), x1 = T(std::min((tx + 1) * tile, width));
                    const T y0 = T(ty * tile), y1 = T(std::min((ty + 1) * tile, height));
                    const T cdx = std::max({x0 - pg.mean2d.x, pg.mean2d.x - x1, T(0)});
                    const T cdy = std::max({y0 - pg.mean2d.y, pg.mean2d.y - y1, T(0)});
                    if (cdx * cdx + cdy * cdy <= r * r)
                        lists[(std::size_t)ty * tiles_x + tx].push_back(k);
                }
        }
    }
};

}  // namespace detail

// Naive serial reference: every pixel walks the full depth-sorted list.
// Kept as the oracle for the tiled path; also the fp64 gradient-check path.
template <typename T>
void render_reference(const Matrix<T>& params, const CameraT<T>& cam, const RenderOptionsT<T>& opts,
                      T* out_rgb, T* out_alpha = nullptr, ProjectStats* stats = nullptr) {
    auto proj = project_gaussians(params, cam, opts, stats);
    detail::depth_sort(proj);
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) {
            detail::PixelState<T> st;
            const T px = T(x) + T(0.5), py = T(y) + T(0.5);
            for (std::size_t k = 0; k < proj.size() && !st.done; ++k)
                detail::blend_one(st, proj[k], px, py, opts);
            const std::size_t idx = (std::size_t)y * cam.width + x;
            detail::finish_pixel(st, opts, out_rgb + idx * 3, out_alpha ? out_alpha + idx : nullptr);
        }
}

// Tile-parallel production path; bit-identical to render_reference.
template <typename T>
void render_tiled(const Matrix<T>& params, const CameraT<T>& cam, const RenderOptionsT<T>& opts,
                  T* out_rgb, T* out_alpha = nullptr, ProjectStats* stats = nullptr) {
    auto proj = project_gaussians(params, cam, opts, stats);
    detail::depth_sort(proj);
    detail::TileGrid<T> grid;
    grid.build(proj, cam.width, cam.height, opts.tile_size);

    const int n_tiles = grid.tiles_x * grid.tiles_y;
#pragma omp parallel for schedule(dynamic)
    for (int tid = 0; tid < n_tiles; ++tid) {
        const int tx = tid % grid.tiles_x, ty = tid / grid.tiles_x;
        const auto& list = grid.lists[tid];
        const int x0 = tx * grid.tile, x1 = std::min((tx + 1) * grid.tile, cam.width);
        const int y0 = ty * grid.tile, y1 = std::min((ty + 1) * grid.tile, cam.height);
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) {
                detail::PixelState<T> st;
                const T px = T(x) + T(0.5), py = T(y) + T(0.5);
                for (std::size_t k = 0; k < list.size() && !st.done; ++k)
                    detail::blend_one(st, proj[list[k]], px, py, opts);
                const std::size_t idx = (std::size_t)y * cam.width + x;
                detail::finish_pixel(st, opts, out_rgb + idx * 3, out_alpha ? out_alpha + idx : nullptr);
            }
    }
}

// Exact adjoint of the render under the same sort, clamps and termination.
// upstream_rgb is dL/d(image), H*W*3. Adds into grad (G x 59).
template <typename T>
void render_backward_reference(const Matrix<T>& params, const CameraT<T>& cam,
                               const RenderOptionsT<T>& opts, const T* upstream_rgb, Matrix<T>& grad) {
    auto proj = project_gaussians(params, cam, opts);
    detail::depth_sort(proj);
    std::vector<detail::RasterGrad<T>> rg(proj.size());
    std::vector<detail::Applied<T>> scratch;
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) {
            const std::size_t idx = (std::size_t)y * cam.width + x;
            detail::backward_pixel(proj, T(x) + T(0.5), T(y) + T(0.5), opts, upstream_rgb + idx * 3,
                                   scratch, rg.data());
        }
    for (std::size_t k = 0; k < proj.size(); ++k)
        detail::project_one_backward(params.row(proj[k].source_index), cam, opts, rg[k],
                                     grad.row(proj[k].source_index));
}

// Tile-parallel adjoint. Per-tile partial sums are reduced in fixed tile
// order, so results are bitwise reproducible for any thread count.
template <typename T>
void render_backward_tiled(const Matrix<T>& params, const CameraT<T>& cam,
                           const RenderOptionsT<T>& opts, const T* upstream_rgb, Matrix<T>& grad) {
    auto proj = project_gaussians(params, cam, opts);
    detail::depth_sort(proj);
    detail::TileGrid<T> grid;
    grid.build(proj, cam.width, cam.height, opts.tile_size);

    const int n_tiles = grid.tiles_x * grid.tiles_y;
    std::vector<std::vector<detail::RasterGrad<T>>> partial(n_tiles);
#pragma omp parallel
    {
        std::vector<detail::Applied<T>> scratch;
        std::vector<ProjectedGaussian<T>> tile_list;
#pragma omp for schedule(dynamic)
        for (int tid = 0; tid < n_tiles; ++tid) {
            const auto& list = grid.lists[tid];
            if (list.empty()) continue;
            partial[tid].resize(list.size());
            tile_list.clear();
            for (int k : list) tile_list.push_back(proj[k]);
            const int tx = tid % grid.tiles_x, ty = tid / grid.tiles_x;
            const int x0 = tx * grid.tile, x1 = std::min((tx + 1) * grid.tile, cam.width);
            const int y0 = ty * grid.tile, y1 = std::min((ty + 1) * grid.tile, cam.height);
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) {
                    const std::size_t idx = (std::size_t)y * cam.width + x;
                    detail::backward_pixel(tile_list, T(x) + T(0.5), T(y) + T(0.5), opts,
                                           upstream_rgb + idx * 3, scratch, partial[tid].data());
                }
        }
    }

    std::vector<detail::RasterGrad<T>> rg(proj.size());
    for (int tid = 0; tid < n_tiles; ++tid) {
        const auto& list = grid.lists[tid];
        for (std::size_t j = 0; j < list.size(); ++j) {
            detail::RasterGrad<T>& dst = rg[list[j]];
            const detail::RasterGrad<T>& src = partial[tid][j];
            dst.d_mean2d[0] += src.d_mean2d[0];
            dst.d_mean2d[1] += src.d_mean2d[1];
            for (int i = 0; i < 3; ++i) {
                dst.d_conic[i] += src.d_conic[i];
                dst.d_color[i] += src.d_color[i];
            }
            dst.d_opacity += src.d_opacity;
        }
    }

#pragma omp parallel for schedule(static)
    for (long long k = 0; k < (long long)proj.size(); ++k)
        detail::project_one_backward(params.row(proj[k].source_index), cam, opts, rg[k],
                                     grad.row(proj[k].source_index));
}

}  // namespace l2s
