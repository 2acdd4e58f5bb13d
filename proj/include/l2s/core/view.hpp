#pragma once

#include <string>
#include <vector>

#include "l2s/common.hpp"
#include "l2s/core/gaussian.hpp"
#include "l2s/core/vecmat.hpp"

namespace l2s {

// H x W x 3 image, row-major, values nominally in [0,1].
template <typename T>
struct ImageT {
    int width = 0, height = 0;
    std::vector<T> rgb;  // (y * width + x) * 3 + c

    ImageT() = default;
    ImageT(int w, int h, T fill = T(0)) : width(w), height(h), rgb((std::size_t)w * h * 3, fill) {}
    T* px(int x, int y) { return rgb.data() + ((std::size_t)y * width + x) * 3; }
    const T* px(int x, int y) const { return rgb.data() + ((std::size_t)y * width + x) * 3; }
    std::size_t size() const { return rgb.size(); }

    template <typename U>
    ImageT<U> cast() const {
        ImageT<U> out(width, height);
        for (std::size_t i = 0; i < rgb.size(); ++i) out.rgb[i] = static_cast<U>(rgb[i]);
        return out;
    }
};
using Image = ImageT<float>;

enum class ViewRole { Context, Target };

// Pinhole camera: world point p maps to pixel coords via mu = R (p - t),
// uv = (fx mu.x / mu.z + cx, fy mu.y / mu.z + cy). t is the camera center.
struct View {
    Mat3<float> K;
    Mat3<float> R;
    Vec3<float> t;
    Image image;
    ViewRole role = ViewRole::Context;
    std::string name;
};

// Throws ParseError if R is not a proper rotation or K is not an upright
// pinhole intrinsic matrix (positive focals, zero skew, last row [0 0 1]).
inline void validate_view(const View& v, const std::string& where) {
    const float tol = 1e-5f;  // 1e-6 spec tolerance leaves no room for fp32 storage noise
    Mat3<float> RtR = v.R.transposed() * v.R;
    Mat3<float> I = Mat3<float>::identity();
    for (int i = 0; i < 9; ++i)
        if (std::fabs(RtR.m[i] - I.m[i]) > tol)
            throw ParseError(where + ": camera rotation is not orthonormal");
    float det = v.R(0, 0) * (v.R(1, 1) * v.R(2, 2) - v.R(1, 2) * v.R(2, 1)) -
                v.R(0, 1) * (v.R(1, 0) * v.R(2, 2) - v.R(1, 2) * v.R(2, 0)) +
                v.R(0, 2) * (v.R(1, 0) * v.R(2, 1) - v.R(1, 1) * v.R(2, 0));
    if (std::fabs(det - 1.f) > 1e-4f)
        throw ParseError(where + ": camera rotation determinant is not +1");
    if (!(v.K(0, 0) > 0.f) || !(v.K(1, 1) > 0.f))
        throw ParseError(where + ": intrinsics need positive focal lengths");
    if (v.K(0, 1) != 0.f || v.K(1, 0) != 0.f || v.K(2, 0) != 0.f || v.K(2, 1) != 0.f || v.K(2, 2) != 1.f)
        throw ParseError(where + ": intrinsics must be skew-free pinhole");
}

struct SceneDataset {
    std::string scene_id;
    std::vector<View> views;
    GaussianCloud initial_cloud;
    GaussianCloud gt_cloud;  // empty for file-loaded scenes without ground truth
    bool has_gt = false;

    std::vector<int> context_indices() const {
        std::vector<int> out;
        for (int i = 0; i < (int)views.size(); ++i)
            if (views[i].role == ViewRole::Context) out.push_back(i);
        return out;
    }
    std::vector<int> target_indices() const {
        std::vector<int> out;
        for (int i = 0; i < (int)views.size(); ++i)
            if (views[i].role == ViewRole::Target) out.push_back(i);
        return out;
    }
};

// Snap to the 8-bit grid used by the on-disk image formats.
inline float quantize8(float v) {
    float c = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
    return std::round(c * 255.f) / 255.f;
}
inline void quantize8(Image& img) {
    for (float& v : img.rgb) v = quantize8(v);
}

}  // namespace l2s
