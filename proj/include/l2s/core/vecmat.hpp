#pragma once

#include <array>
#include <cmath>

namespace l2s {

template <typename T>
struct Vec2 {
    T x = 0, y = 0;
};

template <typename T>
struct Vec3 {
    T x = 0, y = 0, z = 0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(T s) const { return {x * s, y * s, z * s}; }
    T dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    T norm() const { return std::sqrt(dot(*this)); }
};

template <typename T>
struct Vec4 {
    T w = 0, x = 0, y = 0, z = 0;  // quaternion order (w, x, y, z)
    T norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
};

// Row-major 2x2.
template <typename T>
struct Mat2 {
    std::array<T, 4> m{};  // [a b; c d]
    T& operator()(int r, int c) { return m[r * 2 + c]; }
    const T& operator()(int r, int c) const { return m[r * 2 + c]; }
};

// Row-major 3x3.
template <typename T>
struct Mat3 {
    std::array<T, 9> m{};
    T& operator()(int r, int c) { return m[r * 3 + c]; }
    const T& operator()(int r, int c) const { return m[r * 3 + c]; }

    static Mat3 identity() {
        Mat3 I;
        I(0, 0) = I(1, 1) = I(2, 2) = T(1);
        return I;
    }
    Mat3 transposed() const {
        Mat3 t;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) t(r, c) = (*this)(c, r);
        return t;
    }
    Mat3 operator*(const Mat3& o) const {
        Mat3 out;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) {
                T s = 0;
                for (int k = 0; k < 3; ++k) s += (*this)(r, k) * o(k, c);
                out(r, c) = s;
            }
        return out;
    }
    Vec3<T> operator*(const Vec3<T>& v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
                m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }

    template <typename U>
    Mat3<U> cast() const {
        Mat3<U> out;
        for (int i = 0; i < 9; ++i) out.m[i] = static_cast<U>(m[i]);
        return out;
    }
};

// Rotation matrix of a unit quaternion (w, x, y, z).
template <typename T>
Mat3<T> quat_to_rot(const Vec4<T>& q) {
    Mat3<T> R;
    T w = q.w, x = q.x, y = q.y, z = q.z;
    R(0, 0) = 1 - 2 * (y * y + z * z);
    R(0, 1) = 2 * (x * y - w * z);
    R(0, 2) = 2 * (x * z + w * y);
    R(1, 0) = 2 * (x * y + w * z);
    R(1, 1) = 1 - 2 * (x * x + z * z);
    R(1, 2) = 2 * (y * z - w * x);
    R(2, 0) = 2 * (x * z - w * y);
    R(2, 1) = 2 * (y * z + w * x);
    R(2, 2) = 1 - 2 * (x * x + y * y);
    return R;
}

// Adjoint of quat_to_rot: given dL/dR, accumulate dL/dq for a unit q.
template <typename T>
Vec4<T> quat_to_rot_backward(const Vec4<T>& q, const Mat3<T>& dR) {
    T w = q.w, x = q.x, y = q.y, z = q.z;
    Vec4<T> g;
    g.w = 2 * (-z * dR(0, 1) + y * dR(0, 2) + z * dR(1, 0) - x * dR(1, 2) - y * dR(2, 0) + x * dR(2, 1));
    g.x = 2 * (y * dR(0, 1) + z * dR(0, 2) + y * dR(1, 0) - 2 * x * dR(1, 1) - w * dR(1, 2) + z * dR(2, 0) +
               w * dR(2, 1) - 2 * x * dR(2, 2));
    g.y = 2 * (-2 * y * dR(0, 0) + x * dR(0, 1) + w * dR(0, 2) + x * dR(1, 0) + z * dR(1, 2) - w * dR(2, 0) +
               z * dR(2, 1) - 2 * y * dR(2, 2));
    g.z = 2 * (-2 * z * dR(0, 0) - w * dR(0, 1) + x * dR(0, 2) + w * dR(1, 0) - 2 * z * dR(1, 1) + y * dR(1, 2) +
               x * dR(2, 0) + y * dR(2, 1));
    return g;
}

}  // namespace l2s
