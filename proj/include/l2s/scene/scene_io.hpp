#pragma once

#include <string>

#include "l2s/core/view.hpp"

namespace l2s::scene {

// Scene container: a directory with scene.json (cameras, roles, image file
// names), the image files, and gaussians.bin. If the scene carries only a
// sparse point list instead of a cloud, it is expanded on load via the
// SfM-style init (log-scale = log mean distance to the 3 nearest points,
// opacity logit(0.1), DC SH from the point color, higher orders zero).

// gaussians.bin: magic "GSL2", u32 version, u64 count, count x 59 f32 (LE).
void save_cloud(const std::string& path, const GaussianCloud& cloud);
GaussianCloud load_cloud(const std::string& path);  // ParseError with offset

void save_scene(const std::string& dir, const SceneDataset& scene);
SceneDataset load_scene(const std::string& dir);

// Point list -> cloud via the SfM-style init. points is Nx6 (xyz, rgb).
GaussianCloud cloud_from_points(const MatrixF& points);

}  // namespace l2s::scene
