#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "l2s/common.hpp"
#include "l2s/core/gaussian.hpp"
#include "l2s/core/view.hpp"
#include "l2s/render/sh.hpp"

namespace l2s {

template <typename T>
struct CameraT {
    Mat3<T> K;
    Mat3<T> R;
    Vec3<T> t;
    int width = 0, height = 0;
};

template <typename T>
CameraT<T> camera_from_view(const View& v) {
    return {v.K.template cast<T>(), v.R.template cast<T>(),
            {T(v.t.x), T(v.t.y), T(v.t.z)}, v.image.width, v.image.height};
}

template <typename T>
struct RenderOptionsT {
    T near_plane = T(0.1);
    Vec3<T> background{0, 0, 0};
    T lowpass = T(0.3);             // screen-space covariance floor, px^2
    T cull_sigmas = T(3.5);         // cull radius in units of sqrt(lambda_max)
    T max_weight = T(0.999);        // per-contribution alpha clamp
    T skip_weight = T(1) / T(255);  // contributions below this are skipped
    T term_transmittance = T(1e-4); // stop compositing once T drops below
    int tile_size = 16;
};
using RenderOptions = RenderOptionsT<float>;

template <typename T>
struct ProjectedGaussian {
    int source_index = 0;
    Vec2<T> mean2d;
    T depth = 0;
    T conic[3] = {0, 0, 0};  // inverse 2D covariance [a b; b c]
    T radius = 0;            // conservative cull radius, px
    Vec3<T> color;
    T opacity = 0;
};

struct ProjectStats {
    int projected = 0;
    int culled_near = 0;
    int culled_guard = 0;
};

namespace detail {

// Everything the backward pass needs to replay one Gaussian's projection.
template <typename T>
struct ProjIntermediates {
    Vec3<T> mu;          // camera-space mean
    Vec4<T> nq;          // normalized quaternion
    T qnorm = 0;
    Vec3<T> s;           // exp(log_scale)
    Mat3<T> Rq;          // rotation of nq
    Mat3<T> sigma_cam;   // camera-space 3D covariance
    T J[6] = {0};        // 2x3 projection Jacobian, row-major
    T cov2d[3] = {0};    // [a b; b c] after low-pass floor
    T det = 0;
    Vec3<T> dir;         // SH view direction, -mu/|mu|
};

template <typename T>
inline bool project_one(const T* row, const CameraT<T>& cam, const RenderOptionsT<T>& opts,
                        ProjIntermediates<T>& w, ProjectedGaussian<T>& out, ProjectStats* stats) {
    const Vec3<T> p{row[kMeanOff], row[kMeanOff + 1], row[kMeanOff + 2]};
    w.mu = cam.R * (p - cam.t);
    if (!(w.mu.z >= opts.near_plane)) {
        if (stats) stats->culled_near++;
        return false;
    }

    Vec4<T> q{row[kQuatOff], row[kQuatOff + 1], row[kQuatOff + 2], row[kQuatOff + 3]};
    w.qnorm = q.norm();
    if (!(w.qnorm > T(1e-12)))
        throw NumericError("gaussian has zero-norm quaternion");
    w.nq = {q.w / w.qnorm, q.x / w.qnorm, q.y / w.qnorm, q.z / w.qnorm};
    w.Rq = quat_to_rot(w.nq);
    w.s = {std::exp(row[kScaleOff]), std::exp(row[kScaleOff + 1]), std::exp(row[kScaleOff + 2])};

    // sigma_world = (Rq S)(Rq S)^T, then rotate into the camera frame.
    Mat3<T> M = w.Rq;
    for (int r = 0; r < 3; ++r) {
        M(r, 0) *= w.s.x;
        M(r, 1) *= w.s.y;
        M(r, 2) *= w.s.z;
    }
    Mat3<T> sigma_world;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
            sigma_world(r, c) = M(r, 0) * M(c, 0) + M(r, 1) * M(c, 1) + M(r, 2) * M(c, 2);
    w.sigma_cam = cam.R * sigma_world * cam.R.transposed();

    const T fx = cam.K(0, 0), fy = cam.K(1, 1), cx = cam.K(0, 2), cy = cam.K(1, 2);
    const T iz = T(1) / w.mu.z;
    w.J[0] = fx * iz;
    w.J[1] = T(0);
    w.J[2] = -fx * w.mu.x * iz * iz;
    w.J[3] = T(0);
    w.J[4] = fy * iz;
    w.J[5] = -fy * w.mu.y * iz * iz;

    // cov2d = J sigma_cam J^T + lowpass I
    T JS[6];  // J * sigma_cam, 2x3
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 3; ++c)
            JS[r * 3 + c] = w.J[r * 3 + 0] * w.sigma_cam(0, c) + w.J[r * 3 + 1] * w.sigma_cam(1, c) +
                            w.J[r * 3 + 2] * w.sigma_cam(2, c);
    w.cov2d[0] = JS[0] * w.J[0] + JS[1] * w.J[1] + JS[2] * w.J[2] + opts.lowpass;
    w.cov2d[1] = JS[0] * w.J[3] + JS[1] * w.J[4] + JS[2] * w.J[5];
    w.cov2d[2] = JS[3] * w.J[3] + JS[4] * w.J[4] + JS[5] * w.J[5] + opts.lowpass;

    w.det = w.cov2d[0] * w.cov2d[2] - w.cov2d[1] * w.cov2d[1];
    if (!(w.det > T(0)) || !std::isfinite(w.det)) {
        if (stats) stats->culled_guard++;
        return false;
    }

    out.mean2d = {fx * w.mu.x * iz + cx, fy * w.mu.y * iz + cy};
    out.depth = w.mu.z;
    const T inv_det = T(1) / w.det;
    out.conic[0] = w.cov2d[2] * inv_det;
    out.conic[1] = -w.cov2d[1] * inv_det;
    out.conic[2] = w.cov2d[0] * inv_det;

    const T mid = T(0.5) * (w.cov2d[0] + w.cov2d[2]);
    const T disc = std::sqrt(std::max(T(0), mid * mid - w.det));
    const T lambda_max = mid + disc;
    out.radius = opts.cull_sigmas * std::sqrt(lambda_max);

    // Guard-band cull: skip if the cull disc misses the image rectangle.
    const T ddx = std::max({T(0) - out.mean2d.x, out.mean2d.x - T(cam.width), T(0)});
    const T ddy = std::max({T(0) - out.mean2d.y, out.mean2d.y - T(cam.height), T(0)});
    if (ddx * ddx + ddy * ddy > out.radius * out.radius) {
        if (stats) stats->culled_guard++;
        return false;
    }

    const T mu_norm = w.mu.norm();
    w.dir = {-w.mu.x / mu_norm, -w.mu.y / mu_norm, -w.mu.z / mu_norm};
    out.color = evaluate_sh(row + kShOff, w.dir);
    out.opacity = T(1) / (T(1) + std::exp(-row[kOpacityOff]));
    return true;
}

}  // namespace detail

// Projects every Gaussian, silently dropping culled ones. Output order is
// input order; the rasterizer depth-sorts afterwards.
template <typename T>
std::vector<ProjectedGaussian<T>> project_gaussians(const Matrix<T>& params, const CameraT<T>& cam,
                                                    const RenderOptionsT<T>& opts,
                                                    ProjectStats* stats = nullptr) {
    std::vector<ProjectedGaussian<T>> out;
    out.reserve(params.rows);
    for (std::size_t i = 0; i < params.rows; ++i) {
        detail::ProjIntermediates<T> w;
        ProjectedGaussian<T> pg;
        pg.source_index = (int)i;
        try {
            if (detail::project_one(params.row(i), cam, opts, w, pg, stats)) {
                out.push_back(pg);
                if (stats) stats->projected++;
            }
        } catch (const NumericError&) {
            throw NumericError("gaussian " + std::to_string(i) + " has zero-norm quaternion");
        }
    }
    return out;
}

namespace detail {

// Per-Gaussian rasterizer adjoints, accumulated across pixels.
template <typename T>
struct RasterGrad {
    T d_mean2d[2] = {0, 0};
    T d_conic[3] = {0, 0, 0};  // dL/d[L00, L01+L10, L11] of the conic matrix
    T d_color[3] = {0, 0, 0};
    T d_opacity = 0;
};

// Chains rasterizer adjoints through projection, SH and activations into the
// 59 raw parameters. grad_row must hold 59 zeros on entry for accumulation.
template <typename T>
inline void project_one_backward(const T* row, const CameraT<T>& cam, const RenderOptionsT<T>& opts,
                                 const RasterGrad<T>& g, T* grad_row) {
    ProjIntermediates<T> w;
    ProjectedGaussian<T> pg;
    if (!project_one<T>(row, cam, opts, w, pg, nullptr)) return;

    const T fx = cam.K(0, 0), fy = cam.K(1, 1);
    const T iz = T(1) / w.mu.z;

    // conic = cov2d^{-1}: dL/dCov = -Conic G Conic with G the full-matrix grad.
    const T G00 = g.d_conic[0], G01 = T(0.5) * g.d_conic[1], G11 = g.d_conic[2];
    const T A = pg.conic[0], B = pg.conic[1], C = pg.conic[2];
    // P = Conic * G
    const T P00 = A * G00 + B * G01, P01 = A * G01 + B * G11;
    const T P10 = B * G00 + C * G01, P11 = B * G01 + C * G11;
    // dCov = -(P * Conic)
    const T dC00 = -(P00 * A + P01 * B);
    const T dC01 = -(P00 * B + P01 * C);
    const T dC10 = -(P10 * A + P11 * B);
    const T dC11 = -(P10 * B + P11 * C);

    // cov2d = J sigma_cam J^T + lowpass I
    // dSigma_cam = J^T dCov J ; dJ = dCov J Sigma + dCov^T J Sigma (= 2 dCov J Sigma, sym dCov)
    T dSig[9];
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) {
            dSig[a * 3 + b] = w.J[a] * (dC00 * w.J[b] + dC01 * w.J[3 + b]) +
                              w.J[3 + a] * (dC10 * w.J[b] + dC11 * w.J[3 + b]);
        }
    T JSig[6];
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 3; ++c)
            JSig[r * 3 + c] = w.J[r * 3 + 0] * w.sigma_cam(0, c) + w.J[r * 3 + 1] * w.sigma_cam(1, c) +
                              w.J[r * 3 + 2] * w.sigma_cam(2, c);
    T dJ[6];
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 3; ++c)
            dJ[r * 3 + c] = T(2) * ((r == 0 ? dC00 : dC10) * JSig[c] + (r == 0 ? dC01 : dC11) * JSig[3 + c]);

    // Jacobian entries depend on mu.
    Vec3<T> dmu{0, 0, 0};
    dmu.x += dJ[2] * (-fx * iz * iz);
    dmu.y += dJ[5] * (-fy * iz * iz);
    dmu.z += dJ[0] * (-fx * iz * iz) + dJ[2] * (T(2) * fx * w.mu.x * iz * iz * iz) +
             dJ[4] * (-fy * iz * iz) + dJ[5] * (T(2) * fy * w.mu.y * iz * iz * iz);

    // Pinhole mean2d shares the Jacobian J.
    dmu.x += w.J[0] * g.d_mean2d[0];
    dmu.y += w.J[4] * g.d_mean2d[1];
    dmu.z += w.J[2] * g.d_mean2d[0] + w.J[5] * g.d_mean2d[1];

    // SH color and the view direction dir = -mu/|mu|.
    T dsh[48];
    Vec3<T> dcol{g.d_color[0], g.d_color[1], g.d_color[2]};
    Vec3<T> ddir = evaluate_sh_backward(row + kShOff, w.dir, dcol, dsh);
    for (int i = 0; i < 48; ++i) grad_row[kShOff + i] += dsh[i];
    const T n = w.mu.norm();
    const T mdotd = w.mu.dot(ddir);
    dmu.x += -ddir.x / n + w.mu.x * mdotd / (n * n * n);
    dmu.y += -ddir.y / n + w.mu.y * mdotd / (n * n * n);
    dmu.z += -ddir.z / n + w.mu.z * mdotd / (n * n * n);

    // sigma_cam = R sigma_world R^T
    Mat3<T> dSigM;
    for (int i = 0; i < 9; ++i) dSigM.m[i] = dSig[i];
    Mat3<T> dSigWorld = cam.R.transposed() * dSigM * cam.R;

    // sigma_world = M M^T with M = Rq diag(s): dM = (dSig + dSig^T) M
    Mat3<T> M = w.Rq;
    for (int r = 0; r < 3; ++r) {
        M(r, 0) *= w.s.x;
        M(r, 1) *= w.s.y;
        M(r, 2) *= w.s.z;
    }
    Mat3<T> dM;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) {
            T v = 0;
            for (int k = 0; k < 3; ++k) v += (dSigWorld(r, k) + dSigWorld(k, r)) * M(k, c);
            dM(r, c) = v;
        }

    // M = Rq S: dRq = dM S, ds_i = (Rq^T dM)_{ii}, dlog_scale = ds * s
    Mat3<T> dRq;
    for (int r = 0; r < 3; ++r) {
        dRq(r, 0) = dM(r, 0) * w.s.x;
        dRq(r, 1) = dM(r, 1) * w.s.y;
        dRq(r, 2) = dM(r, 2) * w.s.z;
    }
    for (int i = 0; i < 3; ++i) {
        T ds = w.Rq(0, i) * dM(0, i) + w.Rq(1, i) * dM(1, i) + w.Rq(2, i) * dM(2, i);
        T sv = i == 0 ? w.s.x : (i == 1 ? w.s.y : w.s.z);
        grad_row[kScaleOff + i] += ds * sv;
    }

    // Quaternion normalization: dq = (dnq - nq (nq . dnq)) / |q|
    Vec4<T> dnq = quat_to_rot_backward(w.nq, dRq);
    const T dd = w.nq.w * dnq.w + w.nq.x * dnq.x + w.nq.y * dnq.y + w.nq.z * dnq.z;
    grad_row[kQuatOff + 0] += (dnq.w - w.nq.w * dd) / w.qnorm;
    grad_row[kQuatOff + 1] += (dnq.x - w.nq.x * dd) / w.qnorm;
    grad_row[kQuatOff + 2] += (dnq.y - w.nq.y * dd) / w.qnorm;
    grad_row[kQuatOff + 3] += (dnq.z - w.nq.z * dd) / w.qnorm;

    // mu = R (p - t)
    Vec3<T> dp = cam.R.transposed() * dmu;
    grad_row[kMeanOff + 0] += dp.x;
    grad_row[kMeanOff + 1] += dp.y;
    grad_row[kMeanOff + 2] += dp.z;

    // opacity = sigmoid(logit)
    grad_row[kOpacityOff] += g.d_opacity * pg.opacity * (T(1) - pg.opacity);
}

}  // namespace detail
}  // namespace l2s
