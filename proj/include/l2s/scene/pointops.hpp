#pragma once

#include <vector>

#include "l2s/core/gaussian.hpp"
#include "l2s/core/view.hpp"

namespace l2s::scene {

// Removes Gaussians whose DC color is below threshold on every channel.
inline GaussianCloud filter_black_points(const GaussianCloud& cloud, float threshold) {
    if (threshold < 0.f) throw ConfigError("filter_black_points: threshold must be >= 0");
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Vec3<float> c = dc_color(cloud.row(i));
        if (c.x >= threshold || c.y >= threshold || c.z >= threshold) keep.push_back(i);
    }
    if (keep.empty()) throw ConfigError("filter_black_points: no Gaussians survive");
    GaussianCloud out(keep.size());
    for (std::size_t i = 0; i < keep.size(); ++i)
        std::copy(cloud.row(keep[i]), cloud.row(keep[i]) + kParamDim, out.row(i));
    return out;
}

// Uniform subset without replacement, order preserved; keeps at least one.
inline GaussianCloud subsample_points(const GaussianCloud& cloud, double keep_fraction,
                                      std::uint64_t seed) {
    if (keep_fraction < 0.1 || keep_fraction > 1.0)
        throw ConfigError("subsample_points: keep_fraction must lie in [0.1, 1.0]");
    if (cloud.size() == 0) throw ConfigError("subsample_points: empty cloud");
    const std::size_t G = cloud.size();
    std::size_t want = (std::size_t)std::llround(keep_fraction * (double)G);
    if (want < 1) want = 1;
    if (want > G) want = G;
    // Partial Fisher-Yates over indices, then restore original order.
    std::vector<std::size_t> idx(G);
    for (std::size_t i = 0; i < G; ++i) idx[i] = i;
    Rng rng(seed);
    for (std::size_t i = 0; i < want; ++i)
        std::swap(idx[i], idx[(std::size_t)rng.uniform_int((std::int64_t)i, (std::int64_t)G - 1)]);
    idx.resize(want);
    std::sort(idx.begin(), idx.end());
    GaussianCloud out(want);
    for (std::size_t i = 0; i < want; ++i)
        std::copy(cloud.row(idx[i]), cloud.row(idx[i]) + kParamDim, out.row(i));
    return out;
}

// Furthest-point sampling over 3-D points starting from `first`; returns
// picks in pick order. Ties go to the smaller index.
inline std::vector<int> fps_indices(const std::vector<Vec3<float>>& points, int count, int first) {
    const int n = (int)points.size();
    if (count < 1 || count > n) throw ConfigError("fps: count out of range");
    if (first < 0 || first >= n) throw ConfigError("fps: bad first pick");
    std::vector<int> picks{first};
    std::vector<double> best(n);
    std::vector<char> picked(n, 0);
    picked[first] = 1;
    auto d2 = [&](int a, int b) {
        const double dx = points[a].x - points[b].x;
        const double dy = points[a].y - points[b].y;
        const double dz = points[a].z - points[b].z;
        return dx * dx + dy * dy + dz * dz;
    };
    for (int i = 0; i < n; ++i) best[i] = d2(i, first);
    while ((int)picks.size() < count) {
        int arg = -1;
        double mx = -1.0;
        for (int i = 0; i < n; ++i)
            if (!picked[i] && best[i] > mx) {
                mx = best[i];
                arg = i;
            }
        picks.push_back(arg);
        picked[arg] = 1;
        for (int i = 0; i < n; ++i) best[i] = std::min(best[i], d2(i, arg));
    }
    return picks;
}

inline std::vector<int> select_views_fps_indices(const std::vector<View>& views, int count,
                                                 std::uint64_t seed) {
    if (count < 1 || count > (int)views.size())
        throw ConfigError("select_views_fps: count out of range");
    std::vector<Vec3<float>> centers(views.size());
    for (std::size_t i = 0; i < views.size(); ++i) centers[i] = views[i].t;
    Rng rng(seed);
    const int first = (int)rng.uniform_int(0, (std::int64_t)views.size() - 1);
    return fps_indices(centers, count, first);
}

inline std::vector<View> select_views_fps(const std::vector<View>& views, int count,
                                          std::uint64_t seed) {
    std::vector<View> out;
    for (int i : select_views_fps_indices(views, count, seed)) out.push_back(views[(std::size_t)i]);
    return out;
}

}  // namespace l2s::scene
