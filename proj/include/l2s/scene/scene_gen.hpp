#pragma once

#include <cstdint>

#include "l2s/core/view.hpp"

namespace l2s::scene {

// Synthetic desk-scale scene: a ground-truth cloud sampled near the origin,
// cameras on a look-at arc, images rendered from the ground truth and
// quantized to 8 bits, and an initial cloud produced by perturbing the
// ground truth.
struct SceneSpec {
    int n_gaussians = 48;
    int n_context = 8;
    int n_target = 4;
    int width = 32;
    int height = 32;
    double arc_radius = 4.0;        // camera distance from the origin
    double arc_span_deg = 150.0;    // azimuth span covered by the cameras
    double arc_elevation_deg = 18.0;  // elevation band (alternating +/-)
    double focal_px = 40.0;
    // Scales every component of the initial-cloud perturbation; 0 keeps the
    // ground truth (and therefore reproduces the images exactly).
    double perturbation = 1.0;

    void validate() const;  // throws ConfigError
};

SceneDataset generate_scene(std::uint64_t seed, const SceneSpec& spec);

// Perturbation recipe used by generate_scene, exposed for tests:
// means get Gaussian noise with sigma = 2% of the bbox diagonal, rotations a
// small-angle rotation up to 10 degrees, log-scales uniform jitter +-0.2, the
// DC color uniform jitter +-0.1; opacity is kept. `amount` scales all of it.
void perturb_cloud(GaussianCloud& cloud, double amount, Rng& rng);

// Look-at camera: center c looking at `target`, world up +y, image y down.
// Returns R (rows: right, down, forward) with mu_cam = R (p - c).
void look_at(const float c[3], const float target[3], float R[9]);

}  // namespace l2s::scene
