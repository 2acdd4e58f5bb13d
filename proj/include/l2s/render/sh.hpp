#pragma once

#include <cmath>

#include "l2s/core/gaussian.hpp"
#include "l2s/core/vecmat.hpp"

namespace l2s {

// Real spherical harmonics basis up to degree 3, 3DGS sign convention.
template <typename T>
inline void sh_basis(const Vec3<T>& d, T* B) {
    const T x = d.x, y = d.y, z = d.z;
    const T xx = x * x, yy = y * y, zz = z * z;
    B[0] = T(0.28209479177387814);
    B[1] = T(-0.4886025119029199) * y;
    B[2] = T(0.4886025119029199) * z;
    B[3] = T(-0.4886025119029199) * x;
    B[4] = T(1.0925484305920792) * x * y;
    B[5] = T(-1.0925484305920792) * y * z;
    B[6] = T(0.31539156525252005) * (T(2) * zz - xx - yy);
    B[7] = T(-1.0925484305920792) * x * z;
    B[8] = T(0.5462742152960396) * (xx - yy);
    B[9] = T(-0.5900435899266435) * y * (T(3) * xx - yy);
    B[10] = T(2.890611442640554) * x * y * z;
    B[11] = T(-0.4570457994644658) * y * (T(4) * zz - xx - yy);
    B[12] = T(0.3731763325901154) * z * (T(2) * zz - T(3) * xx - T(3) * yy);
    B[13] = T(-0.4570457994644658) * x * (T(4) * zz - xx - yy);
    B[14] = T(1.445305721320277) * z * (xx - yy);
    B[15] = T(-0.5900435899266435) * x * (xx - yy);
}

// d/d(direction) of each basis function, same layout as sh_basis.
template <typename T>
inline void sh_basis_grad(const Vec3<T>& d, Vec3<T>* dB) {
    const T x = d.x, y = d.y, z = d.z;
    const T xx = x * x, yy = y * y, zz = z * z;
    dB[0] = {0, 0, 0};
    dB[1] = {0, T(-0.4886025119029199), 0};
    dB[2] = {0, 0, T(0.4886025119029199)};
    dB[3] = {T(-0.4886025119029199), 0, 0};
    dB[4] = {T(1.0925484305920792) * y, T(1.0925484305920792) * x, 0};
    dB[5] = {0, T(-1.0925484305920792) * z, T(-1.0925484305920792) * y};
    dB[6] = {T(0.31539156525252005) * T(-2) * x, T(0.31539156525252005) * T(-2) * y,
             T(0.31539156525252005) * T(4) * z};
    dB[7] = {T(-1.0925484305920792) * z, 0, T(-1.0925484305920792) * x};
    dB[8] = {T(0.5462742152960396) * T(2) * x, T(0.5462742152960396) * T(-2) * y, 0};
    dB[9] = {T(-0.5900435899266435) * T(6) * x * y, T(-0.5900435899266435) * (T(3) * xx - T(3) * yy), 0};
    dB[10] = {T(2.890611442640554) * y * z, T(2.890611442640554) * x * z, T(2.890611442640554) * x * y};
    dB[11] = {T(-0.4570457994644658) * T(-2) * x * y,
              T(-0.4570457994644658) * (T(4) * zz - xx - T(3) * yy),
              T(-0.4570457994644658) * T(8) * y * z};
    dB[12] = {T(0.3731763325901154) * T(-6) * x * z, T(0.3731763325901154) * T(-6) * y * z,
              T(0.3731763325901154) * (T(6) * zz - T(3) * xx - T(3) * yy)};
    dB[13] = {T(-0.4570457994644658) * (T(4) * zz - T(3) * xx - yy),
              T(-0.4570457994644658) * T(-2) * x * y,
              T(-0.4570457994644658) * T(8) * x * z};
    dB[14] = {T(1.445305721320277) * T(2) * x * z, T(1.445305721320277) * T(-2) * y * z,
              T(1.445305721320277) * (xx - yy)};
    dB[15] = {T(-0.5900435899266435) * (T(3) * xx - yy), T(-0.5900435899266435) * T(-2) * x * y, 0};
}

// View-dependent color: max(0, 0.5 + sum_i B_i(dir) sh[i][ch]).
// sh points at 48 floats, coefficient-major. |dir| must be 1.
template <typename T, typename S>
inline Vec3<T> evaluate_sh(const S* sh, const Vec3<T>& dir) {
    T B[kShCoeffs];
    sh_basis(dir, B);
    Vec3<T> c{T(0.5), T(0.5), T(0.5)};
    for (int i = 0; i < kShCoeffs; ++i) {
        c.x += B[i] * T(sh[i * 3 + 0]);
        c.y += B[i] * T(sh[i * 3 + 1]);
        c.z += B[i] * T(sh[i * 3 + 2]);
    }
    c.x = c.x > T(0) ? c.x : T(0);
    c.y = c.y > T(0) ? c.y : T(0);
    c.z = c.z > T(0) ? c.z : T(0);
    return c;
}

// Adjoint of evaluate_sh. Writes 48 coefficient grads, returns dL/ddir.
// The clamp uses subgradient 0 where the pre-clamp value is negative.
template <typename T, typename S>
inline Vec3<T> evaluate_sh_backward(const S* sh, const Vec3<T>& dir, const Vec3<T>& dcolor, T* dsh) {
    T B[kShCoeffs];
    Vec3<T> dB[kShCoeffs];
    sh_basis(dir, B);
    sh_basis_grad(dir, dB);
    Vec3<T> raw{T(0.5), T(0.5), T(0.5)};
    for (int i = 0; i < kShCoeffs; ++i) {
        raw.x += B[i] * T(sh[i * 3 + 0]);
        raw.y += B[i] * T(sh[i * 3 + 1]);
        raw.z += B[i] * T(sh[i * 3 + 2]);
    }
    const T ux = raw.x > T(0) ? dcolor.x : T(0);
    const T uy = raw.y > T(0) ? dcolor.y : T(0);
    const T uz = raw.z > T(0) ? dcolor.z : T(0);
    Vec3<T> ddir{0, 0, 0};
    for (int i = 0; i < kShCoeffs; ++i) {
        dsh[i * 3 + 0] = ux * B[i];
        dsh[i * 3 + 1] = uy * B[i];
        dsh[i * 3 + 2] = uz * B[i];
        const T coef = ux * T(sh[i * 3 + 0]) + uy * T(sh[i * 3 + 1]) + uz * T(sh[i * 3 + 2]);
        ddir.x += coef * dB[i].x;
        ddir.y += coef * dB[i].y;
        ddir.z += coef * dB[i].z;
    }
    return ddir;
}

}  // namespace l2s
