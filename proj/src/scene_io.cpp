#include "l2s/scene/scene_io.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "l2s/core/gaussian.hpp"
#include "l2s/io/binary.hpp"
#include "l2s/io/image_io.hpp"
#include "l2s/knn/knn.hpp"

namespace l2s::scene {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr char kCloudMagic[4] = {'G', 'S', 'L', '2'};
constexpr std::uint32_t kCloudVersion = 1;

json mat3_json(const Mat3<float>& m) {
    json a = json::array();
    for (float v : m.m) a.push_back((double)v);
    return a;
}

Mat3<float> mat3_from_json(const json& a, const std::string& where) {
    if (!a.is_array() || a.size() != 9)
        throw ParseError(where + ": expected 9 row-major entries");
    Mat3<float> m;
    for (int i = 0; i < 9; ++i) {
        double v = a[i].get<double>();
        if (!std::isfinite(v)) throw ParseError(where + ": non-finite entry");
        m.m[i] = (float)v;
    }
    return m;
}

const json& require(const json& j, const char* key, const std::string& where) {
    auto it = j.find(key);
    if (it == j.end()) throw ParseError(where + ": missing field '" + key + "'");
    return *it;
}

}  // namespace

void save_cloud(const std::string& path, const GaussianCloud& cloud) {
    io::BinaryWriter w(path);
    w.bytes(kCloudMagic, 4);
    w.u32(kCloudVersion);
    w.u64(cloud.size());
    w.f32s(cloud.params.data.data(), cloud.params.size());
}

GaussianCloud load_cloud(const std::string& path) {
    io::BinaryReader r(path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kCloudMagic, 4) != 0)
        throw ParseError("'" + path + "' is not a gaussian cloud file", 0);
    std::uint32_t version = r.u32();
    if (version != kCloudVersion)
        throw ParseError("'" + path + "': unsupported version " + std::to_string(version), 4);
    std::uint64_t count = r.u64();
    if (count > (std::uint64_t)1 << 32)
        throw ParseError("'" + path + "': implausible gaussian count", 8);
    GaussianCloud cloud((std::size_t)count);
    const long long data_at = r.offset();
    r.f32s(cloud.params.data.data(), cloud.params.size());
    if (!all_finite(cloud.params.data.data(), cloud.params.size()))
        throw ParseError("'" + path + "': non-finite parameter values", data_at);
    return cloud;
}

GaussianCloud cloud_from_points(const MatrixF& points) {
    if (points.cols != 6) throw ConfigError("cloud_from_points: points must be Nx6");
    if (points.rows == 0) throw ConfigError("cloud_from_points: empty point list");
    const std::size_t n = points.rows;

    MatrixF xyz(n, 3);
    for (std::size_t i = 0; i < n; ++i)
        for (int c = 0; c < 3; ++c) xyz.at(i, c) = points.at(i, c);
    knn::NeighborTable nbr = knn::build_knn(xyz, 3);

    const float opacity_init = std::log(0.1f / 0.9f);  // logit(0.1)
    GaussianCloud cloud(n);  // zero-filled, so higher SH orders stay zero
    for (std::size_t i = 0; i < n; ++i) {
        float* row = cloud.row(i);
        double mean_dist = 0;
        for (int j = 0; j < nbr.k; ++j) {
            int q = nbr.indices.at(i, j);
            double d2 = 0;
            for (int c = 0; c < 3; ++c) {
                double d = (double)xyz.at(i, c) - xyz.at((std::size_t)q, c);
                d2 += d * d;
            }
            mean_dist += std::sqrt(d2);
        }
        mean_dist /= nbr.k;
        // A lone point has no neighbor distance to lean on; fall back to a
        // small fixed footprint rather than log(0).
        float log_scale = mean_dist > 0 ? (float)std::log(mean_dist) : std::log(0.01f);

        for (int c = 0; c < 3; ++c) row[kMeanOff + c] = points.at(i, c);
        row[kQuatOff] = 1.f;  // identity rotation
        for (int c = 0; c < 3; ++c) row[kScaleOff + c] = log_scale;
        row[kOpacityOff] = opacity_init;
        set_dc_color(row, {points.at(i, 3), points.at(i, 4), points.at(i, 5)});
    }
    return cloud;
}

void save_scene(const std::string& dir, const SceneDataset& scene) {
    if (scene.views.empty()) throw ConfigError("save_scene: scene has no views");
    fs::create_directories(dir);

    json views = json::array();
    for (const View& v : scene.views) {
        if (v.name.empty()) throw ConfigError("save_scene: view without a name");
        std::string file = v.name + ".png";
        io::save_png((fs::path(dir) / file).string(), v.image);
        json jv;
        jv["name"] = v.name;
        jv["role"] = v.role == ViewRole::Context ? "context" : "target";
        jv["image"] = file;
        jv["width"] = v.image.width;
        jv["height"] = v.image.height;
        jv["K"] = mat3_json(v.K);
        jv["R"] = mat3_json(v.R);
        jv["t"] = json::array({(double)v.t.x, (double)v.t.y, (double)v.t.z});
        views.push_back(std::move(jv));
    }

    json root;
    root["scene_id"] = scene.scene_id;
    root["views"] = std::move(views);
    root["gaussians"] = "gaussians.bin";
    if (scene.has_gt) root["gaussians_gt"] = "gaussians_gt.bin";

    save_cloud((fs::path(dir) / "gaussians.bin").string(), scene.initial_cloud);
    if (scene.has_gt)
        save_cloud((fs::path(dir) / "gaussians_gt.bin").string(), scene.gt_cloud);

    std::ofstream out(fs::path(dir) / "scene.json");
    if (!out) throw ConfigError("save_scene: cannot write scene.json in " + dir);
    out << root.dump(2) << "\n";
}

SceneDataset load_scene(const std::string& dir) {
    fs::path base(dir);
    std::ifstream in(base / "scene.json");
    if (!in) throw ParseError("load_scene: missing scene.json in " + dir);
    json root;
    try {
        root = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError("load_scene: " + std::string(e.what()), (long long)e.byte);
    }

    SceneDataset scene;
    scene.scene_id = require(root, "scene_id", "scene.json").get<std::string>();
    const json& views = require(root, "views", "scene.json");
    if (!views.is_array() || views.empty())
        throw ParseError("scene.json: 'views' must be a non-empty array");

    for (const json& jv : views) {
        View v;
        v.name = require(jv, "name", "scene.json view").get<std::string>();
        const std::string where = "scene.json view '" + v.name + "'";
        std::string role = require(jv, "role", where).get<std::string>();
        if (role == "context")
            v.role = ViewRole::Context;
        else if (role == "target")
            v.role = ViewRole::Target;
        else
            throw ParseError(where + ": unknown role '" + role + "'");
        v.K = mat3_from_json(require(jv, "K", where), where + " K");
        v.R = mat3_from_json(require(jv, "R", where), where + " R");
        const json& jt = require(jv, "t", where);
        if (!jt.is_array() || jt.size() != 3) throw ParseError(where + ": t must have 3 entries");
        v.t = {(float)jt[0].get<double>(), (float)jt[1].get<double>(),
               (float)jt[2].get<double>()};
        if (!all_finite(&v.t.x, 3)) throw ParseError(where + ": non-finite camera center");

        std::string file = require(jv, "image", where).get<std::string>();
        v.image = io::load_image((base / file).string());
        if (jv.contains("width") && jv["width"].get<int>() != v.image.width)
            throw ParseError(where + ": image width does not match scene.json");
        if (jv.contains("height") && jv["height"].get<int>() != v.image.height)
            throw ParseError(where + ": image height does not match scene.json");
        validate_view(v, where);
        scene.views.push_back(std::move(v));
    }

    if (root.contains("gaussians")) {
        scene.initial_cloud = load_cloud((base / root["gaussians"].get<std::string>()).string());
    } else if (root.contains("points")) {
        const json& pts = root["points"];
        if (!pts.is_array() || pts.empty())
            throw ParseError("scene.json: 'points' must be a non-empty array");
        MatrixF m(pts.size(), 6);
        for (std::size_t i = 0; i < pts.size(); ++i) {
            const json& p = pts[i];
            if (!p.is_array() || p.size() != 6)
                throw ParseError("scene.json: point " + std::to_string(i) +
                                 " must have 6 entries (xyz rgb)");
            for (int c = 0; c < 6; ++c) {
                double v = p[c].get<double>();
                if (!std::isfinite(v))
                    throw ParseError("scene.json: non-finite point " + std::to_string(i));
                m.at(i, c) = (float)v;
            }
        }
        scene.initial_cloud = cloud_from_points(m);
    } else {
        throw ParseError("scene.json: needs either 'gaussians' or 'points'");
    }

    if (root.contains("gaussians_gt")) {
        scene.gt_cloud = load_cloud((base / root["gaussians_gt"].get<std::string>()).string());
        scene.has_gt = true;
    }
    if (scene.context_indices().empty())
        throw ParseError("scene.json: scene has no context views");
    return scene;
}

}  // namespace l2s::scene
