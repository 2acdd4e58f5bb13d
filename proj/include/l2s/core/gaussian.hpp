#pragma once

#include <array>
#include <cstring>

#include "l2s/common.hpp"
#include "l2s/core/vecmat.hpp"

namespace l2s {

// Flattened per-Gaussian parameter layout, 59 floats per row:
//   [0,3)   mean xyz
//   [3,7)   quaternion wxyz (stored unnormalized, renormalized at use)
//   [7,10)  log_scale xyz
//   [10]    opacity_logit
//   [11,59) sh, 16 coefficients x 3 channels, coefficient-major
inline constexpr int kMeanOff = 0;
inline constexpr int kQuatOff = 3;
inline constexpr int kScaleOff = 7;
inline constexpr int kOpacityOff = 10;
inline constexpr int kShOff = 11;
inline constexpr int kShCoeffs = 16;
inline constexpr int kParamDim = 59;

// Column ranges of the named parameter groups, [begin, end).
struct ParamGroup {
    const char* name;
    int begin;
    int end;
};
inline constexpr std::array<ParamGroup, 6> kParamGroups = {{
    {"means", 0, 3},
    {"rotations", 3, 7},
    {"scales", 7, 10},
    {"opacities", 10, 11},
    {"sh0", 11, 14},
    {"shN", 14, 59},
}};

inline constexpr int kNumParamGroups = (int)kParamGroups.size();

inline int param_group_index(const std::string& name) {
    for (int i = 0; i < kNumParamGroups; ++i)
        if (name == kParamGroups[i].name) return i;
    throw ConfigError("unknown parameter group '" + name + "'");
}

inline constexpr int param_group_of_column(std::size_t col) {
    for (int i = 0; i < kNumParamGroups; ++i)
        if ((int)col >= kParamGroups[i].begin && (int)col < kParamGroups[i].end) return i;
    return -1;
}

struct Gaussian {
    Vec3<float> mean;
    Vec4<float> quaternion{1.f, 0.f, 0.f, 0.f};
    Vec3<float> log_scale;
    float opacity_logit = 0.f;
    std::array<float, 48> sh{};  // sh[coeff * 3 + channel]

    void flatten(float* row) const {
        row[0] = mean.x;
        row[1] = mean.y;
        row[2] = mean.z;
        row[3] = quaternion.w;
        row[4] = quaternion.x;
        row[5] = quaternion.y;
        row[6] = quaternion.z;
        row[7] = log_scale.x;
        row[8] = log_scale.y;
        row[9] = log_scale.z;
        row[10] = opacity_logit;
        std::memcpy(row + kShOff, sh.data(), sizeof(float) * 48);
    }
    static Gaussian unflatten(const float* row) {
        Gaussian g;
        g.mean = {row[0], row[1], row[2]};
        g.quaternion = {row[3], row[4], row[5], row[6]};
        g.log_scale = {row[7], row[8], row[9]};
        g.opacity_logit = row[10];
        std::memcpy(g.sh.data(), row + kShOff, sizeof(float) * 48);
        return g;
    }
};

// A scene's Gaussians as a G x 59 matrix; the per-Gaussian view and the
// matrix view are the same bytes.
struct GaussianCloud {
    MatrixF params;

    GaussianCloud() : params(0, kParamDim) {}
    explicit GaussianCloud(std::size_t count) : params(count, kParamDim) {}

    std::size_t size() const { return params.rows; }
    Gaussian get(std::size_t i) const { return Gaussian::unflatten(params.row(i)); }
    void set(std::size_t i, const Gaussian& g) { g.flatten(params.row(i)); }
    float* row(std::size_t i) { return params.row(i); }
    const float* row(std::size_t i) const { return params.row(i); }
};

inline constexpr float kShC0 = 0.28209479177387814f;  // Y_0^0

// Rendered base color of the DC term: C0 * sh0 + 0.5 per channel.
inline Vec3<float> dc_color(const float* row) {
    return {kShC0 * row[kShOff + 0] + 0.5f,
            kShC0 * row[kShOff + 1] + 0.5f,
            kShC0 * row[kShOff + 2] + 0.5f};
}
inline void set_dc_color(float* row, const Vec3<float>& rgb) {
    row[kShOff + 0] = (rgb.x - 0.5f) / kShC0;
    row[kShOff + 1] = (rgb.y - 0.5f) / kShC0;
    row[kShOff + 2] = (rgb.z - 0.5f) / kShC0;
}

}  // namespace l2s
