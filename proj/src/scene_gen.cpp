#include "l2s/scene/scene_gen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "l2s/core/gaussian.hpp"
#include "l2s/render/renderer.hpp"

namespace l2s::scene {
namespace {

constexpr double kPi = 3.14159265358979323846;

float logit(float p) { return std::log(p / (1.f - p)); }

// Hamilton product dq * q, both (w, x, y, z).
void quat_compose(const float dq[4], float q[4]) {
    float w = dq[0] * q[0] - dq[1] * q[1] - dq[2] * q[2] - dq[3] * q[3];
    float x = dq[0] * q[1] + dq[1] * q[0] + dq[2] * q[3] - dq[3] * q[2];
    float y = dq[0] * q[2] - dq[1] * q[3] + dq[2] * q[0] + dq[3] * q[1];
    float z = dq[0] * q[3] + dq[1] * q[2] - dq[2] * q[1] + dq[3] * q[0];
    float n = std::sqrt(w * w + x * x + y * y + z * z);
    q[0] = w / n;
    q[1] = x / n;
    q[2] = y / n;
    q[3] = z / n;
}

GaussianCloud sample_gt_cloud(int count, Rng& rng) {
    GaussianCloud cloud((std::size_t)count);
    for (int i = 0; i < count; ++i) {
        float* row = cloud.row(i);
        for (int c = 0; c < 3; ++c) row[kMeanOff + c] = (float)rng.uniform(-0.8, 0.8);

        float q[4], n2 = 0;
        do {
            n2 = 0;
            for (float& v : q) {
                v = (float)rng.normal();
                n2 += v * v;
            }
        } while (n2 < 1e-8f);
        float inv = 1.f / std::sqrt(n2);
        for (int c = 0; c < 4; ++c) row[kQuatOff + c] = q[c] * inv;

        for (int c = 0; c < 3; ++c)
            row[kScaleOff + c] = (float)rng.uniform(std::log(0.06), std::log(0.22));
        row[kOpacityOff] = (float)rng.uniform(logit(0.35f), logit(0.92f));

        set_dc_color(row, {(float)rng.uniform(0.15, 0.9), (float)rng.uniform(0.15, 0.9),
                           (float)rng.uniform(0.15, 0.9)});
        // Mild view dependence from the higher orders.
        for (int c = 3 * 1; c < 3 * kShCoeffs; ++c)
            row[kShOff + c] = (float)(0.05 * rng.normal());
    }
    return cloud;
}

}  // namespace

void SceneSpec::validate() const {
    if (n_gaussians < 1) throw ConfigError("scene spec: n_gaussians must be >= 1");
    if (n_context < 1) throw ConfigError("scene spec: need at least one context view");
    if (n_target < 0) throw ConfigError("scene spec: n_target must be >= 0");
    if (width < 8 || height < 8) throw ConfigError("scene spec: images must be at least 8x8");
    if (!(arc_radius > 0) || !(focal_px > 0))
        throw ConfigError("scene spec: arc_radius and focal_px must be positive");
    if (!(arc_span_deg > 0) || arc_span_deg > 360)
        throw ConfigError("scene spec: degenerate camera arc");
    if (std::fabs(arc_elevation_deg) >= 80)
        throw ConfigError("scene spec: elevation too close to the pole");
    if (perturbation < 0) throw ConfigError("scene spec: perturbation must be >= 0");
}

void look_at(const float c[3], const float target[3], float R[9]) {
    float f[3] = {target[0] - c[0], target[1] - c[1], target[2] - c[2]};
    float fn = std::sqrt(f[0] * f[0] + f[1] * f[1] + f[2] * f[2]);
    if (fn < 1e-12f) throw ConfigError("look_at: camera sits on the target");
    for (float& v : f) v /= fn;

    // right = forward x up, down = forward x right (world up +y, image y down)
    float rx[3] = {f[1] * 0.f - f[2] * 1.f, f[2] * 0.f - f[0] * 0.f, f[0] * 1.f - f[1] * 0.f};
    float rn = std::sqrt(rx[0] * rx[0] + rx[1] * rx[1] + rx[2] * rx[2]);
    if (rn < 1e-6f) throw ConfigError("look_at: view direction parallel to world up");
    for (float& v : rx) v /= rn;
    float ry[3] = {f[1] * rx[2] - f[2] * rx[1], f[2] * rx[0] - f[0] * rx[2],
                   f[0] * rx[1] - f[1] * rx[0]};

    for (int i = 0; i < 3; ++i) {
        R[0 + i] = rx[i];
        R[3 + i] = ry[i];
        R[6 + i] = f[i];
    }
}

void perturb_cloud(GaussianCloud& cloud, double amount, Rng& rng) {
    if (amount == 0 || cloud.size() == 0) return;

    float lo[3], hi[3];
    for (int c = 0; c < 3; ++c) lo[c] = hi[c] = cloud.row(0)[kMeanOff + c];
    for (std::size_t i = 1; i < cloud.size(); ++i)
        for (int c = 0; c < 3; ++c) {
            lo[c] = std::min(lo[c], cloud.row(i)[kMeanOff + c]);
            hi[c] = std::max(hi[c], cloud.row(i)[kMeanOff + c]);
        }
    double diag2 = 0;
    for (int c = 0; c < 3; ++c) diag2 += (double)(hi[c] - lo[c]) * (hi[c] - lo[c]);
    const double mean_sigma = 0.02 * std::sqrt(diag2) * amount;

    const double max_angle = amount * 10.0 * kPi / 180.0;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        float* row = cloud.row(i);
        for (int c = 0; c < 3; ++c) row[kMeanOff + c] += (float)(mean_sigma * rng.normal());

        float axis[3], n2;
        do {
            n2 = 0;
            for (float& v : axis) {
                v = (float)rng.normal();
                n2 += v * v;
            }
        } while (n2 < 1e-8f);
        float inv = 1.f / std::sqrt(n2);
        double angle = rng.uniform(0.0, max_angle);
        float s = (float)std::sin(angle / 2);
        float dq[4] = {(float)std::cos(angle / 2), s * axis[0] * inv, s * axis[1] * inv,
                       s * axis[2] * inv};
        quat_compose(dq, row + kQuatOff);

        for (int c = 0; c < 3; ++c)
            row[kScaleOff + c] += (float)rng.uniform(-0.2 * amount, 0.2 * amount);

        Vec3<float> rgb = dc_color(row);
        rgb.x += (float)rng.uniform(-0.1 * amount, 0.1 * amount);
        rgb.y += (float)rng.uniform(-0.1 * amount, 0.1 * amount);
        rgb.z += (float)rng.uniform(-0.1 * amount, 0.1 * amount);
        set_dc_color(row, rgb);
        // Opacity is kept: visibility structure stays intact, which is what
        // the low-visibility loss term is meant to probe.
    }
}

SceneDataset generate_scene(std::uint64_t seed, const SceneSpec& spec) {
    spec.validate();
    Rng rng(seed);

    SceneDataset scene;
    {
        char buf[32];
        std::snprintf(buf, sizeof buf, "scene_%016llx", (unsigned long long)seed);
        scene.scene_id = buf;
    }
    scene.gt_cloud = sample_gt_cloud(spec.n_gaussians, rng);
    scene.has_gt = true;

    const int total = spec.n_context + spec.n_target;
    std::vector<bool> is_target((std::size_t)total, false);
    for (int j = 0; j < spec.n_target; ++j) {
        int idx = (int)std::lround((j + 0.5) * total / (double)spec.n_target - 0.5);
        idx = std::clamp(idx, 0, total - 1);
        while (is_target[idx]) idx = (idx + 1) % total;  // keep counts exact
        is_target[idx] = true;
    }

    const float target_pt[3] = {0, 0, 0};
    for (int i = 0; i < total; ++i) {
        double frac = total > 1 ? i / (double)(total - 1) - 0.5 : 0.0;
        double az = frac * spec.arc_span_deg * kPi / 180.0;
        double el = (i % 2 == 0 ? 1.0 : -1.0) * spec.arc_elevation_deg * kPi / 180.0;
        float c[3] = {(float)(spec.arc_radius * std::cos(el) * std::sin(az)),
                      (float)(spec.arc_radius * std::sin(el)),
                      (float)(spec.arc_radius * std::cos(el) * std::cos(az))};

        View v;
        v.t = {c[0], c[1], c[2]};
        look_at(c, target_pt, v.R.m.data());
        v.K = Mat3<float>::identity();
        v.K(0, 0) = v.K(1, 1) = (float)spec.focal_px;
        v.K(0, 2) = spec.width / 2.f;
        v.K(1, 2) = spec.height / 2.f;
        v.role = is_target[i] ? ViewRole::Target : ViewRole::Context;
        char buf[16];
        std::snprintf(buf, sizeof buf, "view%02d", i);
        v.name = buf;
        v.image = Image(spec.width, spec.height);
        v.image = render(scene.gt_cloud, v).rgb;
        quantize8(v.image);
        scene.views.push_back(std::move(v));
    }

    scene.initial_cloud = scene.gt_cloud;
    perturb_cloud(scene.initial_cloud, spec.perturbation, rng);
    return scene;
}

}  // namespace l2s::scene
